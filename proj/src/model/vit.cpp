// Plain vision transformer: patch embedding, class token, learned position
// embeddings, pre-norm blocks with global attention, classifier on the final
// class token. Parameter names follow the Hugging Face ViT checkpoints.
#include <cmath>
#include <string>

#include "xbench/common/error.hpp"
#include "xbench/kernels/kernels.hpp"
#include "xbench/model/network.hpp"

namespace xbench::model {
namespace {

namespace k = xbench::kernels;

class VitNetwork final : public Network {
 public:
  VitNetwork(const VitConfig& cfg, int num_classes) : cfg_(cfg), arch_(cfg), num_classes_(num_classes) {
    if (cfg.image_size % cfg.patch != 0) throw ConfigError("ViT: image size not divisible by patch");
    grid_ = cfg.image_size / cfg.patch;
    const int patch_dim = 3 * cfg.patch * cfg.patch;
    const int tokens = grid_ * grid_ + 1;
    cls_ = params_.add("vit.embeddings.cls_token", 1, cfg.dim, false);
    pos_ = params_.add("vit.embeddings.position_embeddings", tokens, cfg.dim, false);
    patch_w_ = params_.add("vit.embeddings.patch_embeddings.projection.weight", cfg.dim, patch_dim, true);
    patch_b_ = params_.add("vit.embeddings.patch_embeddings.projection.bias", 1, cfg.dim, false);
    for (int i = 0; i < cfg.depth; ++i) {
      blocks_.push_back(add_block_params(params_, "vit.encoder.layer." + std::to_string(i) + ".",
                                         "attention.attention", cfg.dim, cfg.mlp_hidden));
    }
    norm_g_ = params_.add("vit.layernorm.weight", 1, cfg.dim, false);
    norm_b_ = params_.add("vit.layernorm.bias", 1, cfg.dim, false);
    head_w_ = params_.add("classifier.weight", num_classes, cfg.dim, true);
    head_b_ = params_.add("classifier.bias", 1, num_classes, false);
    topo_.heads = cfg.heads;
    topo_.group = tokens;
  }

  int num_classes() const override { return num_classes_; }
  const ArchConfig& arch() const override { return arch_; }
  std::vector<int> head_params() const override { return {head_w_, head_b_}; }

  std::vector<float> logits(const ImageTensor& image) const override {
    State s;
    forward(image, s, nullptr);
    return s.logits;
  }

  StepResult train_step(const ImageTensor& image, int label, GradBuffer& grads) const override {
    if (label < 0 || label >= num_classes_) throw ShapeError("label outside classifier head");
    State s;
    forward(image, s, nullptr);
    std::vector<double> p(s.logits.size());
    double mx = s.logits[0];
    for (float v : s.logits) mx = std::max(mx, static_cast<double>(v));
    double sum = 0.0;
    for (size_t i = 0; i < p.size(); ++i) sum += p[i] = std::exp(s.logits[i] - mx);
    std::vector<float> dlogits(p.size());
    int pred = 0;
    for (size_t i = 0; i < p.size(); ++i) {
      p[i] /= sum;
      dlogits[i] = static_cast<float>(p[i] - (static_cast<int>(i) == label ? 1.0 : 0.0));
      if (s.logits[i] > s.logits[static_cast<size_t>(pred)]) pred = static_cast<int>(i);
    }
    backward(s, dlogits, &grads, nullptr);
    return {static_cast<float>(-std::log(std::max(p[static_cast<size_t>(label)], 1e-30))), pred};
  }

  CaptureBundle capture(const ImageTensor& image, int target_class) const override {
    if (target_class < 0 || target_class >= num_classes_) throw ShapeError("target class outside head");
    State s;
    forward(image, s, nullptr);
    CaptureBundle b;
    b.target_class = target_class;
    b.logits = s.logits;
    b.probs = softmax(s.logits);
    std::vector<float> dlogits(s.logits.size(), 0.0f);
    dlogits[static_cast<size_t>(target_class)] = 1.0f;
    Capture cap;
    backward(s, dlogits, nullptr, &cap);
    for (int l = 0; l < cfg_.depth; ++l) {
      b.attentions.layers.push_back(layer(s.blocks[static_cast<size_t>(l)].probs));
      b.attention_grads.layers.push_back(layer(cap.dprobs[static_cast<size_t>(l)]));
    }
    b.target_activations = to_feature_map(s.blocks.back().h1);
    b.target_grads = to_feature_map(cap.dh1_last);
    return b;
  }

  Matrix target_activation(const ImageTensor& image) const override {
    State s;
    forward(image, s, nullptr);
    return s.blocks.back().h1;
  }

  std::vector<float> logits_with_target(const ImageTensor& image, const Matrix& activation) const override {
    State s;
    forward(image, s, &activation);
    return s.logits;
  }

 private:
  struct State {
    Matrix patches;
    std::vector<BlockCache> blocks;
    std::vector<Matrix> block_in;
    Matrix x_final, xf;
    NormCache nf;
    std::vector<float> logits;
  };
  struct Capture {
    std::vector<std::vector<float>> dprobs;
    Matrix dh1_last;
  };

  static std::vector<float> softmax(const std::vector<float>& z) {
    double mx = z[0];
    for (float v : z) mx = std::max(mx, static_cast<double>(v));
    std::vector<double> e(z.size());
    double sum = 0.0;
    for (size_t i = 0; i < z.size(); ++i) sum += e[i] = std::exp(z[i] - mx);
    std::vector<float> p(z.size());
    for (size_t i = 0; i < z.size(); ++i) p[i] = static_cast<float>(e[i] / sum);
    return p;
  }

  void extract_patches(const ImageTensor& image, Matrix& out) const {
    if (image.channels != 3 || image.height != cfg_.image_size || image.width != cfg_.image_size) {
      throw ShapeError("ViT: expected 3x" + std::to_string(cfg_.image_size) + "x" +
                       std::to_string(cfg_.image_size) + " input");
    }
    const int p = cfg_.patch;
    out.reset(grid_ * grid_, 3 * p * p);
    for (int py = 0; py < grid_; ++py) {
      for (int px = 0; px < grid_; ++px) {
        float* row = out.row(py * grid_ + px);
        for (int c = 0; c < 3; ++c) {
          for (int ky = 0; ky < p; ++ky) {
            for (int kx = 0; kx < p; ++kx) {
              *row++ = image.at(c, py * p + ky, px * p + kx);
            }
          }
        }
      }
    }
  }

  void forward(const ImageTensor& image, State& s, const Matrix* last_h1) const {
    extract_patches(image, s.patches);
    Matrix emb;
    linear_forward(s.patches, params_.value(patch_w_), &params_.value(patch_b_), emb);
    const int tokens = grid_ * grid_ + 1;
    Matrix x(tokens, cfg_.dim);
    const Matrix& pos = params_.value(pos_);
    for (int j = 0; j < cfg_.dim; ++j) x(0, j) = params_.value(cls_)(0, j) + pos(0, j);
    for (int t = 1; t < tokens; ++t) {
      for (int j = 0; j < cfg_.dim; ++j) x(t, j) = emb(t - 1, j) + pos(t, j);
    }
    s.blocks.resize(static_cast<size_t>(cfg_.depth));
    for (int l = 0; l < cfg_.depth; ++l) {
      Matrix out;
      auto& cache = s.blocks[static_cast<size_t>(l)];
      if (last_h1 && l == cfg_.depth - 1) {
        if (last_h1->rows() != tokens || last_h1->cols() != cfg_.dim) {
          throw ShapeError("ViT: target activation override has wrong shape");
        }
        block_forward_from_norm1(params_, blocks_[static_cast<size_t>(l)], topo_, cfg_.ln_eps, x,
                                 *last_h1, out, cache);
      } else {
        block_forward(params_, blocks_[static_cast<size_t>(l)], topo_, cfg_.ln_eps, x, out, cache);
      }
      x = std::move(out);
    }
    s.x_final = std::move(x);
    layernorm_forward(s.x_final, params_.value(norm_g_), params_.value(norm_b_), cfg_.ln_eps, s.xf, s.nf);
    s.logits.assign(static_cast<size_t>(num_classes_), 0.0f);
    const Matrix& w = params_.value(head_w_);
    for (int c = 0; c < num_classes_; ++c) {
      s.logits[static_cast<size_t>(c)] =
          k::dot(cfg_.dim, w.row(c), s.xf.row(0)) + params_.value(head_b_)(0, c);
    }
  }

  void backward(const State& s, const std::vector<float>& dlogits, GradBuffer* grads, Capture* cap) const {
    const int tokens = grid_ * grid_ + 1;
    Matrix dxf(tokens, cfg_.dim);
    const Matrix& w = params_.value(head_w_);
    for (int c = 0; c < num_classes_; ++c) {
      const float g = dlogits[static_cast<size_t>(c)];
      if (g == 0.0f) continue;
      k::axpy(cfg_.dim, g, w.row(c), dxf.row(0));
      if (grads) {
        k::axpy(cfg_.dim, g, s.xf.row(0), (*grads)[static_cast<size_t>(head_w_)].row(c));
        (*grads)[static_cast<size_t>(head_b_)](0, c) += g;
      }
    }
    Matrix dx;
    layernorm_backward(s.x_final, params_.value(norm_g_), s.nf, dxf, dx,
                       grads ? &(*grads)[static_cast<size_t>(norm_g_)] : nullptr,
                       grads ? &(*grads)[static_cast<size_t>(norm_b_)] : nullptr);
    if (cap) cap->dprobs.resize(static_cast<size_t>(cfg_.depth));
    for (int l = cfg_.depth - 1; l >= 0; --l) {
      BlockGradSinks sinks;
      sinks.params = grads;
      if (cap) {
        sinks.probs = &cap->dprobs[static_cast<size_t>(l)];
        if (l == cfg_.depth - 1) sinks.h1 = &cap->dh1_last;
      }
      Matrix dprev;
      block_backward(params_, blocks_[static_cast<size_t>(l)], topo_, s.blocks[static_cast<size_t>(l)], dx,
                     dprev, sinks);
      dx = std::move(dprev);
    }
    if (!grads) return;
    k::axpy(cfg_.dim, 1.0f, dx.row(0), (*grads)[static_cast<size_t>(cls_)].data());
    k::axpy(static_cast<int>(dx.size()), 1.0f, dx.data(), (*grads)[static_cast<size_t>(pos_)].data());
    Matrix demb(tokens - 1, cfg_.dim);
    std::copy(dx.row(1), dx.row(1) + demb.size(), demb.data());
    linear_backward(s.patches, params_.value(patch_w_), demb, nullptr, false,
                    &(*grads)[static_cast<size_t>(patch_w_)], &(*grads)[static_cast<size_t>(patch_b_)]);
  }

  AttentionLayer layer(const std::vector<float>& values) const {
    AttentionLayer l;
    l.grid_rows = grid_;
    l.grid_cols = grid_;
    l.has_class_token = true;
    AttentionBlock b;
    b.heads = cfg_.heads;
    b.tokens = grid_ * grid_ + 1;
    b.values = values;
    l.blocks.push_back(std::move(b));
    return l;
  }

  // Drops the class token and lays tokens out on the patch grid.
  FeatureMap to_feature_map(const Matrix& tokens) const {
    FeatureMap f;
    f.channels = tokens.cols();
    f.rows = grid_;
    f.cols = grid_;
    f.values.resize(static_cast<size_t>(f.channels) * grid_ * grid_);
    for (int t = 1; t < tokens.rows(); ++t) {
      const int r = (t - 1) / grid_;
      const int c = (t - 1) % grid_;
      for (int ch = 0; ch < f.channels; ++ch) f.at(ch, r, c) = tokens(t, ch);
    }
    return f;
  }

  VitConfig cfg_;
  ArchConfig arch_;
  int num_classes_;
  int grid_ = 0;
  int cls_, pos_, patch_w_, patch_b_, norm_g_, norm_b_, head_w_, head_b_;
  std::vector<BlockParams> blocks_;
  Topology topo_;
};

}  // namespace

std::unique_ptr<Network> make_vit(const VitConfig& cfg, int num_classes) {
  if (num_classes < 1) throw ConfigError("num_classes must be >= 1");
  return std::make_unique<VitNetwork>(cfg, num_classes);
}

}  // namespace xbench::model
