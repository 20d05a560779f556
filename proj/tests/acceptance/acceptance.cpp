// Acceptance suite: one PASS / FAIL / SKIP line per criterion.
//
// Criteria 6 and 9 use real PBC data and the DeiT-tiny checkpoint when both
// are available ($XBENCH_DATA/pbc, $XBENCH_CACHE); otherwise a synthetic
// PBC-layout fixture and a randomly initialised DeiT-tiny. Criteria 7 and 8
// need full-dataset fine-tuning and run only with XBENCH_ACCEPT_FULL=1.
// Exit status is nonzero when a criterion fails unless its number is listed
// in XBENCH_ACCEPT_KNOWN_FAIL (comma separated). XBENCH_ACCEPT_REPORT names a
// file that receives a copy of the result lines.

#include <spdlog/spdlog.h>

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <fmt/format.h>
#include <fstream>
#include <functional>
#include <iostream>
#include <optional>

#include "xbench/common/error.hpp"
#include "xbench/common/rng.hpp"
#include "xbench/data/synth.hpp"
#include "xbench/runner/experiment.hpp"

namespace fs = std::filesystem;
using namespace xbench;

namespace {

enum class Status { PASS, FAIL, SKIP };

struct Outcome {
  Status status;
  std::string detail;
};

int failures = 0;

// XBENCH_ACCEPT_ONLY="1,5" restricts the run to the listed criteria.
bool listed(const char* env, int id) {
  const char* v = std::getenv(env);
  if (!v) return false;
  const std::string list = std::string(",") + v + ",";
  return list.find("," + std::to_string(id) + ",") != std::string::npos;
}

bool selected(int id) { return !std::getenv("XBENCH_ACCEPT_ONLY") || listed("XBENCH_ACCEPT_ONLY", id); }

// Criteria whose FAIL line is still printed but does not set the exit code.
bool known_failure(int id) { return listed("XBENCH_ACCEPT_KNOWN_FAIL", id); }

void report(int id, const std::string& title, double limit_s, const std::function<Outcome()>& fn) {
  if (!selected(id)) return;
  const auto t0 = std::chrono::steady_clock::now();
  Outcome o;
  try {
    o = fn();
  } catch (const std::exception& e) {
    o = {Status::FAIL, std::string("error: ") + e.what()};
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (o.status == Status::PASS && limit_s > 0 && secs > limit_s) {
    o.status = Status::FAIL;
    o.detail += fmt::format("; exceeded the {:.0f} s budget", limit_s);
  }
  const char* tag = o.status == Status::PASS ? "PASS" : o.status == Status::FAIL ? "FAIL" : "SKIP";
  if (o.status == Status::FAIL) {
    if (known_failure(id))
      o.detail += "; listed in XBENCH_ACCEPT_KNOWN_FAIL";
    else
      ++failures;
  }
  const std::string line = fmt::format("{} criterion {}: {} | {} | {:.1f} s", tag, id, title, o.detail, secs);
  std::cout << line << std::endl;
  if (const char* path = std::getenv("XBENCH_ACCEPT_REPORT")) std::ofstream(path, std::ios::app) << line << "\n";
}

fs::path work_dir() {
  const char* base = std::getenv("XBENCH_TEST_TMP");
  fs::path p = fs::path(base ? base : fs::temp_directory_path().string()) / "acceptance";
  fs::create_directories(p);
  return p;
}

std::vector<float> random_rows(Rng& rng, int heads, int n) {
  std::vector<float> v(static_cast<size_t>(heads) * n * n);
  for (int r = 0; r < heads * n; ++r) {
    double s = 0.0;
    for (int j = 0; j < n; ++j) s += v[static_cast<size_t>(r) * n + j] = static_cast<float>(rng.uniform() + 1e-3);
    for (int j = 0; j < n; ++j) v[static_cast<size_t>(r) * n + j] = static_cast<float>(v[static_cast<size_t>(r) * n + j] / s);
  }
  return v;
}

model::AttentionStack random_stack(Rng& rng) {
  const int layers = 1 + static_cast<int>(rng.below(3));
  const int n = 2 + static_cast<int>(rng.below(7));
  const int heads = 1 + static_cast<int>(rng.below(4));
  model::AttentionStack s;
  for (int l = 0; l < layers; ++l) {
    model::AttentionLayer L{{}, 1, n - 1, true};
    L.blocks.push_back({heads, n, random_rows(rng, heads, n), std::nullopt});
    s.layers.push_back(L);
  }
  return s;
}

// Head mean, 0.5 residual with row renormalisation, explicit product of the
// full matrices, class-token row without the class column.
std::vector<double> chain_oracle(const model::AttentionStack& s) {
  const int n = s.layers[0].blocks[0].tokens;
  std::vector<double> R;
  for (const auto& L : s.layers) {
    const auto& b = L.blocks[0];
    std::vector<double> A(static_cast<size_t>(n * n));
    for (int i = 0; i < n; ++i) {
      double rs = 0.0;
      for (int j = 0; j < n; ++j) {
        double m = 0.0;
        for (int h = 0; h < b.heads; ++h) m += b.at(h, i, j);
        A[static_cast<size_t>(i * n + j)] = 0.5 * m / b.heads + (i == j ? 0.5 : 0.0);
        rs += A[static_cast<size_t>(i * n + j)];
      }
      for (int j = 0; j < n; ++j) A[static_cast<size_t>(i * n + j)] /= rs;
    }
    if (R.empty()) {
      R = A;
      continue;
    }
    std::vector<double> P(static_cast<size_t>(n * n), 0.0);
    for (int i = 0; i < n; ++i)
      for (int k = 0; k < n; ++k)
        for (int j = 0; j < n; ++j) P[static_cast<size_t>(i * n + j)] += R[static_cast<size_t>(i * n + k)] * A[static_cast<size_t>(k * n + j)];
    R = P;
  }
  return std::vector<double>(R.begin() + 1, R.begin() + n);
}

model::Adapter tiny_adapter(const model::ArchConfig& arch, model::Family f, int classes, uint64_t seed) {
  model::BuildOptions o;
  o.init = model::InitMode::Random;
  o.seed = seed;
  o.arch_override = arch;
  return model::build_adapter(model::backbone_spec(f), classes, o);
}

model::SwinConfig tiny_swin() {
  model::SwinConfig s;
  s.patch = 16;
  s.embed_dim = 16;
  s.depths = {2, 2};
  s.heads = {2, 2};
  s.mlp_ratio = 2;
  return s;
}

// ---------------------------------------------------------------------------

Outcome rollout_oracle() {
  Rng rng(101);
  double worst = 0.0;
  for (int t = 0; t < 200; ++t) {
    const auto s = random_stack(rng);
    const auto got = explain::rollout_token_scores(s, explain::plain_rollout_defaults());
    const auto want = chain_oracle(s);
    if (got.size() != want.size()) return {Status::FAIL, "length mismatch"};
    for (size_t i = 0; i < got.size(); ++i) worst = std::max(worst, std::fabs(got[i] - want[i]));
  }
  return {worst <= 1e-6 ? Status::PASS : Status::FAIL, fmt::format("max abs err {:.2e} over 200 stacks (tol 1e-6)", worst)};
}

Outcome grad_cam_oracle() {
  Rng rng(102);
  double worst = 0.0;
  for (int t = 0; t < 200; ++t) {
    const int ch = 1 + static_cast<int>(rng.below(8)), rows = 1 + static_cast<int>(rng.below(7)),
              cols = 1 + static_cast<int>(rng.below(7));
    model::FeatureMap a{ch, rows, cols, std::vector<float>(static_cast<size_t>(ch * rows * cols))};
    model::FeatureMap g = a;
    for (auto& v : a.values) v = static_cast<float>(rng.normal());
    for (auto& v : g.values) v = static_cast<float>(rng.normal());
    const Matrix raw = explain::grad_cam_raw(a, g);
    for (int r = 0; r < rows; ++r)
      for (int c = 0; c < cols; ++c) {
        double s = 0.0;
        for (int k = 0; k < ch; ++k) {
          double w = 0.0;
          for (int y = 0; y < rows; ++y)
            for (int x = 0; x < cols; ++x) w += g.at(k, y, x);
          s += w / (rows * cols) * a.at(k, r, c);
        }
        worst = std::max(worst, std::fabs(raw(r, c) - std::max(0.0, s)));
      }
  }
  return {worst <= 1e-6 ? Status::PASS : Status::FAIL, fmt::format("max abs err {:.2e} over 200 maps (tol 1e-6)", worst)};
}

Outcome gradient_rollout_identity() {
  Rng rng(103);
  int identical = 0;
  for (int t = 0; t < 50; ++t) {
    model::CaptureBundle b;
    b.attentions = random_stack(rng);
    b.attention_grads = b.attentions;
    for (auto& l : b.attention_grads.layers)
      for (auto& blk : l.blocks) std::fill(blk.values.begin(), blk.values.end(), 1.0f);
    const explain::RolloutConfig cfg{explain::HeadFusion::MEAN, 0.0, 0.5};
    const auto plain = explain::attention_rollout(b.attentions, cfg);
    const auto grad = explain::gradient_attention_rollout(b, cfg);
    const bool same = explain::rollout_token_scores(b.attentions, cfg) ==
                          explain::gradient_rollout_token_scores(b.attentions, b.attention_grads, cfg) &&
                      plain.values == grad.values;
    identical += same;
  }
  return {identical == 50 ? Status::PASS : Status::FAIL, fmt::format("{}/50 stacks bit-identical", identical)};
}

Outcome auc_analytics(const fs::path& dir) {
  std::vector<double> f, ramp, flat;
  for (int k = 0; k <= 50; ++k) {
    f.push_back(k / 50.0);
    ramp.push_back(k / 50.0);
    flat.push_back(0.63);
  }
  const double ramp_auc = faith::trapezoid_auc(f, ramp);
  const double flat_err = std::fabs(faith::trapezoid_auc(f, flat) - 0.63);

  const fs::path root = dir / "auc_fixture";
  fs::remove_all(root);
  data::write_synthetic_pbc(root, 3, 11);
  const auto coll = data::load_pbc(root);
  auto adapter = tiny_adapter(model::VitConfig{224, 16, 32, 2, 2, 64, 1e-6f}, model::Family::DEIT_T16, 8, 4);
  const faith::Oracle oracle = [&](std::span<const ImageTensor> b) { return model::predict(adapter, b); };
  int exact = 0;
  for (int i = 0; i < 20; ++i) {
    const ImageTensor img = data::load_sample(coll, coll.samples[static_cast<size_t>(i)]).pixels;
    const auto ev = runner::evaluate_image(adapter, img, explain::Method::GRAD_CAM, {}, {});
    const float p = model::predict_one(adapter, img)[static_cast<size_t>(ev.target_class)];
    exact += ev.deletion.probabilities.front() == p && ev.insertion.probabilities.back() == p;
  }
  const bool ok = ramp_auc == 0.5 && flat_err <= 1e-12 && exact == 20;
  return {ok ? Status::PASS : Status::FAIL,
          fmt::format("ramp AUC {:.17g}, constant AUC err {:.1e}, endpoint identities exact on {}/20 images", ramp_auc,
                      flat_err, exact)};
}

Outcome gradient_check() {
  double worst = 0.0;
  int checked = 0;
  for (bool swin : {false, true}) {
    // Tiny ViT runs on 64 px input (4 x 4 grid), tiny Swin on 224 px (7 x 7).
    auto a = swin ? tiny_adapter(tiny_swin(), model::Family::SWIN_T, 2, 8)
                  : tiny_adapter(model::VitConfig{64, 16, 32, 2, 2, 64, 1e-6f}, model::Family::DEIT_T16, 2, 8);
    const int size = swin ? 224 : 64;
    Rng rng(swin ? 52 : 51);
    ImageTensor img(3, size, size);
    for (auto& v : img.data) v = static_cast<float>(rng.normal());
    const auto b = model::forward_with_capture(a, img, 1);
    const Matrix act = a.network().target_activation(img);
    const int offset = swin ? 0 : 1, grid = b.target_grads.cols;
    // Float logits put a noise floor of a few 1e-6 under every difference
    // quotient, so coordinates whose gradient sits within 100x of that floor
    // are redrawn; they measure rounding, not the backward pass.
    float peak = 0.0f;
    for (float v : b.target_grads.values) peak = std::max(peak, std::fabs(v));
    for (int t = 0; t < 10; ++t) {
      int ch = 0, cell = 0;
      do {
        ch = static_cast<int>(rng.below(static_cast<uint64_t>(b.target_grads.channels)));
        cell = static_cast<int>(rng.below(static_cast<uint64_t>(grid * grid)));
      } while (std::fabs(b.target_grads.at(ch, cell / grid, cell % grid)) < std::max(0.05f * peak, 3e-4f));
      Matrix plus = act, minus = act;
      plus(cell + offset, ch) += 3e-2f;
      minus(cell + offset, ch) -= 3e-2f;
      const double h = static_cast<double>(plus(cell + offset, ch)) - minus(cell + offset, ch);
      const double fd = (a.network().logits_with_target(img, plus)[1] - a.network().logits_with_target(img, minus)[1]) / h;
      const double an = b.target_grads.at(ch, cell / grid, cell % grid);
      worst = std::max(worst, std::fabs(fd - an) / std::max({std::fabs(fd), std::fabs(an), 1e-30}));
      ++checked;
    }
  }
  return {worst < 1e-2 ? Status::PASS : Status::FAIL,
          fmt::format("max relative err {:.2e} on {} coordinates (10 ViT, 10 Swin; tol 1e-2)", worst, checked)};
}

// Criteria 6 and 9 share one fine-tuned DeiT-tiny and its evaluation images.
struct ClassModel {
  std::unique_ptr<model::Adapter> adapter;
  std::vector<ImageTensor> images;
  std::string provenance;
  double val_accuracy = 0.0;
};

std::optional<ClassModel> trained;
std::string trained_error;

ClassModel& class_model(const fs::path& dir) {
  if (trained) return *trained;
  if (!trained_error.empty()) throw Error(trained_error);
  try {
    runner::ExperimentConfig cfg;
    cfg.dataset = runner::DatasetKind::PBC;
    cfg.backbones = {model::Family::DEIT_T16};
    cfg.methods = {explain::Method::GRAD_CAM};
    cfg.train.epochs = 1;
    cfg.train_per_class = 40;  // 8 classes -> 320 images
    cfg.eval_per_class = 5;    // 40 evaluation images
    cfg.seed = 0;
    cfg.output_dir = dir / "class_model";
    fs::remove_all(cfg.output_dir);

    const char* data_env = std::getenv("XBENCH_DATA");
    const bool real_data = data_env && fs::is_directory(fs::path(data_env) / "pbc");
    const char* cache_env = std::getenv("XBENCH_CACHE");
    const bool real_ckpt = cache_env && model::find_checkpoint(cache_env, "facebook/deit-tiny-patch16-224");
    std::string prov;
    if (real_data) {
      cfg.data_root = fs::path(data_env) / "pbc";
      prov = "PBC";
    } else {
      cfg.data_root = dir / "synthetic_pbc";
      fs::remove_all(cfg.data_root);
      data::write_synthetic_pbc(cfg.data_root, 60, 2024);
      prov = "synthetic PBC-layout fixture";
    }
    if (real_ckpt) {
      cfg.init = model::InitMode::Checkpoint;
      prov += ", pretrained DeiT-tiny (lr 5e-5, batch 32)";
    } else {
      // From scratch the default fine-tuning rate barely moves the weights in
      // one epoch; a larger rate and smaller batches give a usable model.
      cfg.init = model::InitMode::Random;
      cfg.train.learning_rate = 5e-4;
      cfg.train.batch_size = 8;
      prov += ", randomly initialised DeiT-tiny (lr 5e-4, batch 8)";
    }
    runner::Experiment e(cfg);
    ClassModel cm;
    auto& a = e.adapter(model::Family::DEIT_T16);
    data::SampleSource eval(e.collection(), e.eval_subset());
    for (size_t i = 0; i < eval.size(); ++i) cm.images.push_back(eval.pixels(i));
    int correct = 0;
    for (size_t i = 0; i < eval.size(); ++i) {
      const auto p = model::predict_one(a, cm.images[i]);
      correct += std::max_element(p.begin(), p.end()) - p.begin() == eval.label(i);
    }
    cm.val_accuracy = static_cast<double>(correct) / eval.size();
    cm.adapter = std::make_unique<model::Adapter>(std::move(a));
    cm.provenance = prov;
    trained = std::move(cm);
    return *trained;
  } catch (const std::exception& e) {
    trained_error = e.what();
    throw;
  }
}

Outcome class_specificity(const fs::path& dir) {
  auto& cm = class_model(dir);
  const auto& a = *cm.adapter;
  int rollout_same = 0, cam_differs = 0, both_constant = 0;
  const int n = static_cast<int>(cm.images.size());
  for (const auto& img : cm.images) {
    const auto p = model::predict_one(a, img);
    std::vector<int> order(p.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](int x, int y) { return p[static_cast<size_t>(x)] > p[static_cast<size_t>(y)]; });
    const auto b0 = model::forward_with_capture(a, img, order[0]);
    const auto b1 = model::forward_with_capture(a, img, order[1]);
    rollout_same += explain::explain(explain::Method::ROLLOUT, b0).values == explain::explain(explain::Method::ROLLOUT, b1).values;
    const auto c0 = explain::grad_cam(b0), c1 = explain::grad_cam(b1);
    const bool differs = max_abs_diff(c0.values.values(), c1.values.values()) > 0.0f;
    cam_differs += differs;
    if (!differs) both_constant += c0.constant && c1.constant;
  }
  const bool ok = rollout_same == n && n == 40 && cam_differs >= static_cast<int>(std::ceil(0.95 * n));
  return {ok ? Status::PASS : Status::FAIL,
          fmt::format("{}; eval accuracy {:.1f}%; rollout identical across top-2 classes on {}/{}, Grad-CAM differs on {}/{} (need >= 95%; {} equal pairs both all-zero)",
                      cm.provenance, 100 * cm.val_accuracy, rollout_same, n, cam_differs, n, both_constant)};
}

Outcome deletion_sanity(const fs::path& dir) {
  auto& cm = class_model(dir);
  const auto& a = *cm.adapter;
  runner::FaithConfig fc;
  double forward = 0.0, reverse = 0.0;
  const faith::Oracle oracle = [&](std::span<const ImageTensor> b) { return model::predict(a, b); };
  for (const auto& img : cm.images) {
    const auto p = model::predict_one(a, img);
    const int target = static_cast<int>(std::max_element(p.begin(), p.end()) - p.begin());
    const auto map = explain::grad_cam(model::forward_with_capture(a, img, target));
    const auto order = faith::rank_pixels(map.values);
    const faith::CurveOptions opts{fc.steps, fc.batch_size};
    forward += faith::faithfulness_curve(oracle, img, order, target, faith::Direction::DELETION, fc.deletion, opts).auc;
    reverse += faith::faithfulness_curve(oracle, img, faith::reversed(order), target, faith::Direction::DELETION,
                                         fc.deletion, opts).auc;
  }
  const double n = static_cast<double>(cm.images.size());
  forward /= n;
  reverse /= n;
  return {forward <= reverse ? Status::PASS : Status::FAIL,
          fmt::format("Grad-CAM deletion AUC {:.4f} (saliency order) vs {:.4f} (reversed) over {} images", forward,
                      reverse, cm.images.size())};
}

// Full-scale checks need the real dataset, all checkpoints and hours of
// compute; opt in with XBENCH_ACCEPT_FULL=1.
std::optional<std::string> full_scale_blocker(const std::vector<model::Family>& families) {
  const char* full = std::getenv("XBENCH_ACCEPT_FULL");
  if (!full || std::string(full) != "1") return "full-dataset fine-tuning; set XBENCH_ACCEPT_FULL=1 to run";
  const char* data_env = std::getenv("XBENCH_DATA");
  if (!data_env || !fs::is_directory(fs::path(data_env) / "pbc")) return "$XBENCH_DATA/pbc not found";
  const char* cache_env = std::getenv("XBENCH_CACHE");
  for (auto f : families)
    if (!cache_env || !model::find_checkpoint(cache_env, model::backbone_spec(f).checkpoint_id))
      return "checkpoint " + model::backbone_spec(f).checkpoint_id + " not in $XBENCH_CACHE";
  return std::nullopt;
}

runner::ExperimentConfig full_pbc_config(const fs::path& dir, std::vector<model::Family> families) {
  runner::ExperimentConfig cfg;
  cfg.dataset = runner::DatasetKind::PBC;
  cfg.data_root = fs::path(std::getenv("XBENCH_DATA")) / "pbc";
  cfg.backbones = std::move(families);
  cfg.methods = {explain::Method::GRAD_CAM, explain::Method::GRAD_ROLLOUT};
  cfg.output_dir = dir / "full_pbc";
  return cfg;
}

Outcome table_accuracy(const fs::path& dir) {
  const std::vector<model::Family> all(std::begin(model::kAllFamilies), std::end(model::kAllFamilies));
  if (auto why = full_scale_blocker(all)) return {Status::SKIP, *why};
  runner::Experiment e(full_pbc_config(dir, all));
  const auto rows = e.run_classification();
  std::string detail;
  bool ok = true;
  for (const auto& r : rows) {
    ok = ok && r.status == "ok" && r.metrics.accuracy >= 0.95;
    detail += fmt::format("{} {:.2f}% ", r.model, 100 * r.metrics.accuracy);
  }
  return {ok ? Status::PASS : Status::FAIL, detail + "(need >= 95% each)"};
}

Outcome table_auc_order(const fs::path& dir) {
  if (auto why = full_scale_blocker({model::Family::DINO_S16})) return {Status::SKIP, *why};
  auto cfg = full_pbc_config(dir, {model::Family::DINO_S16});
  cfg.eval_per_class = 25;  // 200 images
  runner::Experiment e(cfg);
  const auto res = e.run_faithfulness();
  const faith::AucRow *cam = nullptr, *gr = nullptr;
  for (const auto& r : res.auc) (r.method == "GRAD_CAM" ? cam : gr) = &r;
  const bool ok = cam->insertion > gr->insertion && cam->deletion < gr->deletion;
  return {ok ? Status::PASS : Status::FAIL,
          fmt::format("DINO Grad-CAM ins {:.3f} del {:.3f} vs gradient rollout ins {:.3f} del {:.3f} "
                      "(reference 0.75/0.27 vs 0.45/0.36, reported only)",
                      cam->insertion, cam->deletion, gr->insertion, gr->deletion)};
}

}  // namespace

int main() {
  spdlog::set_level(spdlog::level::warn);
  const fs::path dir = work_dir();
  if (const char* path = std::getenv("XBENCH_ACCEPT_REPORT")) std::ofstream(path, std::ios::trunc);
  report(1, "rollout equals the explicit matrix-chain oracle", 10, rollout_oracle);
  report(2, "Grad-CAM equals the weighted-sum-plus-clamp oracle", 10, grad_cam_oracle);
  report(3, "gradient rollout with unit gradients equals rollout", 10, gradient_rollout_identity);
  report(4, "AUC analytics and endpoint identities", 60, [&] { return auc_analytics(dir); });
  report(5, "Grad-CAM layer gradient matches central differences", 120, gradient_check);
  report(6, "class specificity on a one-epoch DeiT-tiny", 30 * 60, [&] { return class_specificity(dir); });
  report(7, "full-PBC accuracy >= 95% for every backbone", 0, [&] { return table_accuracy(dir); });
  report(8, "DINO Grad-CAM beats gradient rollout on both AUCs", 0, [&] { return table_auc_order(dir); });
  report(9, "deletion AUC: saliency order <= reversed order", 20 * 60, [&] { return deletion_sanity(dir); });
  return failures == 0 ? 0 : 1;
}
