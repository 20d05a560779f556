#include "xbench/model/adapter.hpp"

#include <spdlog/spdlog.h>

#include <cmath>
#include <cstdlib>
#include <json.hpp>

#include "xbench/common/error.hpp"
#include "xbench/common/rng.hpp"
#include "xbench/common/thread_pool.hpp"
#include "xbench/model/optim.hpp"

namespace fs = std::filesystem;

namespace xbench::model {

void init_params(ParamSet& params, uint64_t seed) {
  Rng rng(seed);
  for (auto& p : params.all()) {
    const std::string& n = p.name;
    const bool is_bias = n.size() >= 5 && n.compare(n.size() - 5, 5, ".bias") == 0;
    const bool is_norm_scale = n.find("norm") != std::string::npos && !is_bias;
    if (is_bias) {
      p.value.fill(0.0f);
    } else if (is_norm_scale) {
      p.value.fill(1.0f);
    } else {
      for (auto& v : p.value.values()) v = rng.trunc_normal(0.02f);
    }
  }
}

Adapter::Adapter(BackboneSpec spec, std::unique_ptr<Network> net)
    : spec_(std::move(spec)), net_(std::move(net)) {}

std::string arch_to_json(const ArchConfig& arch) {
  nlohmann::json j;
  if (const auto* v = std::get_if<VitConfig>(&arch)) {
    j = {{"kind", "vit"},       {"image_size", v->image_size}, {"patch", v->patch},
         {"dim", v->dim},       {"depth", v->depth},           {"heads", v->heads},
         {"mlp_hidden", v->mlp_hidden}, {"ln_eps", v->ln_eps}};
  } else {
    const auto& s = std::get<SwinConfig>(arch);
    j = {{"kind", "swin"},     {"image_size", s.image_size}, {"patch", s.patch},
         {"embed_dim", s.embed_dim}, {"depths", s.depths},  {"heads", s.heads},
         {"window", s.window}, {"mlp_ratio", s.mlp_ratio},  {"ln_eps", s.ln_eps}};
  }
  return j.dump();
}

// Missing fields keep the defaults of the config structs.
ArchConfig arch_from_json(const std::string& text) {
  const auto j = nlohmann::json::parse(text);
  if (j.value("kind", "vit") == "vit") {
    VitConfig v;
    v.image_size = j.value("image_size", v.image_size);
    v.patch = j.value("patch", v.patch);
    v.dim = j.value("dim", v.dim);
    v.depth = j.value("depth", v.depth);
    v.heads = j.value("heads", v.heads);
    v.mlp_hidden = j.value("mlp_hidden", 4 * v.dim);
    v.ln_eps = j.value("ln_eps", v.ln_eps);
    return v;
  }
  SwinConfig s;
  s.image_size = j.value("image_size", s.image_size);
  s.patch = j.value("patch", s.patch);
  s.embed_dim = j.value("embed_dim", s.embed_dim);
  s.depths = j.value("depths", s.depths);
  s.heads = j.value("heads", s.heads);
  s.window = j.value("window", s.window);
  s.mlp_ratio = j.value("mlp_ratio", s.mlp_ratio);
  s.ln_eps = j.value("ln_eps", s.ln_eps);
  return s;
}

void Adapter::save(const fs::path& path, const std::map<std::string, std::string>& extra) const {
  SafeTensors st;
  for (const auto& p : net_->params().all()) {
    st.put(p.name, {{p.value.rows(), p.value.cols()},
                    std::vector<float>(p.value.values().begin(), p.value.values().end())});
  }
  for (const auto& [k, v] : extra) st.set_metadata(k, v);
  st.set_metadata("family", std::string(family_name(spec_.family)));
  st.set_metadata("num_classes", std::to_string(num_classes()));
  st.set_metadata("arch", arch_to_json(net_->arch()));
  st.write(path);
}

Adapter Adapter::load(const fs::path& path) {
  const SafeTensors st = SafeTensors::read(path);
  const auto& md = st.metadata();
  for (const char* key : {"family", "num_classes", "arch"}) {
    if (!md.count(key)) throw CheckpointError(path.string() + ": missing metadata '" + key + "'");
  }
  BackboneSpec spec = backbone_spec(parse_family(md.at("family")));
  spec.arch = arch_from_json(md.at("arch"));
  auto net = make_network(spec.arch, std::stoi(md.at("num_classes")));
  for (auto& p : net->params().all()) {
    const StoredTensor& t = st.at(p.name);
    if (t.values.size() != p.value.size()) {
      throw CheckpointError(path.string() + ": size mismatch for " + p.name);
    }
    std::copy(t.values.begin(), t.values.end(), p.value.data());
  }
  return Adapter(std::move(spec), std::move(net));
}

std::optional<fs::path> find_checkpoint(const fs::path& cache_dir, const std::string& checkpoint_id) {
  if (cache_dir.empty()) return std::nullopt;
  const auto slash = checkpoint_id.find('/');
  const std::string org = slash == std::string::npos ? "" : checkpoint_id.substr(0, slash);
  const std::string name = slash == std::string::npos ? checkpoint_id : checkpoint_id.substr(slash + 1);
  for (const fs::path& cand : {cache_dir / checkpoint_id / "model.safetensors",
                               cache_dir / (org + "--" + name) / "model.safetensors"}) {
    if (fs::is_regular_file(cand)) return cand;
  }
  const fs::path hub = cache_dir / ("models--" + org + "--" + name) / "snapshots";
  if (fs::is_directory(hub)) {
    for (const auto& snap : fs::directory_iterator(hub)) {
      if (fs::is_regular_file(snap.path() / "model.safetensors")) return snap.path() / "model.safetensors";
    }
  }
  return std::nullopt;
}

void load_backbone_weights(Network& net, const SafeTensors& weights) {
  const auto head = net.head_params();
  for (size_t i = 0; i < net.params().size(); ++i) {
    if (std::find(head.begin(), head.end(), static_cast<int>(i)) != head.end()) continue;
    Param& p = net.params().at(static_cast<int>(i));
    std::string key = p.name;
    if (!weights.contains(key)) {
      // Bare backbone checkpoints (e.g. DINO) omit the model prefix.
      const auto dot = key.find('.');
      if (dot != std::string::npos && weights.contains(key.substr(dot + 1))) key = key.substr(dot + 1);
    }
    if (!weights.contains(key)) throw CheckpointError("checkpoint lacks tensor " + p.name);
    const StoredTensor& t = weights.at(key);
    if (t.values.size() != p.value.size()) {
      throw CheckpointError("checkpoint tensor " + key + " has " + std::to_string(t.values.size()) +
                            " elements, expected " + std::to_string(p.value.size()));
    }
    std::copy(t.values.begin(), t.values.end(), p.value.data());
  }
}

Adapter build_adapter(const BackboneSpec& spec_in, int num_classes, const BuildOptions& opts) {
  if (num_classes < 1) throw ConfigError("num_classes must be >= 1");
  BackboneSpec spec = spec_in;
  if (opts.arch_override) spec.arch = *opts.arch_override;
  auto net = make_network(spec.arch, num_classes);
  init_params(net->params(), opts.seed);
  if (opts.init == InitMode::Checkpoint) {
    fs::path cache = opts.cache_dir;
    if (cache.empty()) {
      if (const char* env = std::getenv("XBENCH_CACHE")) cache = env;
    }
    const auto path = find_checkpoint(cache, spec.checkpoint_id);
    if (!path) {
      throw CheckpointError("checkpoint '" + spec.checkpoint_id + "' not found under XBENCH_CACHE='" +
                            cache.string() +
                            "'. Download model.safetensors into <cache>/" + spec.checkpoint_id +
                            "/ and retry, or set init to \"random\" for an offline run.");
    }
    spdlog::info("loading {} from {}", spec.checkpoint_id, path->string());
    load_backbone_weights(*net, SafeTensors::read(*path));
  }
  return Adapter(std::move(spec), std::move(net));
}

TrainHistory fine_tune(Adapter& adapter, const data::SampleSource& train, const TrainConfig& config,
                       const ProgressFn& progress) {
  if (config.batch_size < 1 || config.epochs < 1) throw ConfigError("batch_size and epochs must be >= 1");
  if (train.size() == 0) throw ConfigError("fine_tune: empty training set");
  for (size_t i = 0; i < train.size(); ++i) {
    if (train.label(i) < 0 || train.label(i) >= adapter.num_classes()) {
      throw ConfigError("fine_tune: label " + std::to_string(train.label(i)) + " outside head of size " +
                        std::to_string(adapter.num_classes()));
    }
  }
  Network& net = adapter.network();
  AdamW opt(net.params(), {config.learning_rate, 0.9, 0.999, 1e-8, config.weight_decay});
  const unsigned workers = std::max(1u, config.workers);
  std::vector<GradBuffer> grads;
  for (unsigned w = 0; w < workers; ++w) grads.push_back(make_grad_buffer(net.params()));

  std::vector<size_t> order(train.size());
  Rng rng(config.seed ^ 0x5851F42D4C957F2DULL);
  TrainHistory history;
  const size_t steps = (train.size() + config.batch_size - 1) / config.batch_size;
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    rng.shuffle(order);
    double loss_sum = 0.0;
    size_t correct = 0;
    for (size_t step = 0; step < steps; ++step) {
      const size_t begin = step * config.batch_size;
      const size_t end = std::min(order.size(), begin + config.batch_size);
      const size_t n = end - begin;
      for (auto& g : grads) zero(g);
      std::vector<StepResult> results(n);
      // Worker w handles batch items w, w + workers, ... into its own buffer.
      parallel_for(std::min<size_t>(workers, n), workers, [&](size_t w) {
        for (size_t j = w; j < n; j += workers) {
          const size_t idx = order[begin + j];
          results[j] = net.train_step(train.pixels(idx), train.label(idx), grads[w]);
        }
      });
      for (unsigned w = 1; w < workers; ++w) {
        for (size_t p = 0; p < grads[0].size(); ++p) {
          auto dst = grads[0][p].values();
          auto src = grads[w][p].values();
          for (size_t q = 0; q < dst.size(); ++q) dst[q] += src[q];
        }
      }
      double batch_loss = 0.0;
      for (size_t j = 0; j < n; ++j) {
        batch_loss += results[j].loss;
        if (results[j].predicted == train.label(order[begin + j])) ++correct;
      }
      if (!std::isfinite(batch_loss)) {
        throw Error("training diverged: non-finite loss at epoch " + std::to_string(epoch) + ", step " +
                    std::to_string(step) + " (lr " + std::to_string(config.learning_rate) + ")");
      }
      loss_sum += batch_loss;
      opt.step(net.params(), grads[0], 1.0f / static_cast<float>(n));
      if (progress) progress(epoch, step + 1, steps, batch_loss / static_cast<double>(n));
    }
    history.epochs.push_back({epoch, loss_sum / static_cast<double>(train.size()),
                              static_cast<double>(correct) / static_cast<double>(train.size())});
    spdlog::info("epoch {}: loss {:.4f} train acc {:.4f}", epoch, history.epochs.back().loss,
                 history.epochs.back().accuracy);
  }
  return history;
}

std::vector<float> predict_one(const Adapter& adapter, const ImageTensor& image) {
  const std::vector<float> z = adapter.network().logits(image);
  double mx = z[0];
  for (float v : z) mx = std::max(mx, static_cast<double>(v));
  std::vector<double> e(z.size());
  double sum = 0.0;
  for (size_t i = 0; i < z.size(); ++i) sum += e[i] = std::exp(z[i] - mx);
  std::vector<float> p(z.size());
  for (size_t i = 0; i < z.size(); ++i) p[i] = static_cast<float>(e[i] / sum);
  return p;
}

Matrix predict(const Adapter& adapter, std::span<const ImageTensor> images) {
  Matrix out(static_cast<int>(images.size()), adapter.num_classes());
  for (size_t i = 0; i < images.size(); ++i) {
    const auto p = predict_one(adapter, images[i]);
    std::copy(p.begin(), p.end(), out.row(static_cast<int>(i)));
  }
  return out;
}

CaptureBundle forward_with_capture(const Adapter& adapter, const ImageTensor& image, int target_class) {
  CaptureBundle b = adapter.network().capture(image, target_class);
  if (b.attentions.depth() == 0) throw ShapeError("capture: no attention layers recorded");
  for (size_t l = 0; l < b.attentions.depth(); ++l) {
    const auto& a = b.attentions.layers[l];
    const auto& g = b.attention_grads.layers.at(l);
    if (a.blocks.size() != g.blocks.size()) {
      throw ShapeError("capture: gradient missing for attention layer " + std::to_string(l));
    }
  }
  return b;
}

}  // namespace xbench::model
