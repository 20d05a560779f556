#include <doctest.h>

#include <cmath>
#include <fstream>
#include <json.hpp>

#include "test_support.hpp"
#include "xbench/common/error.hpp"
#include "xbench/common/rng.hpp"
#include "xbench/explain/export.hpp"
#include "xbench/model/adapter.hpp"

using namespace xbench;
using namespace xbench::explain;
using model::AttentionBlock;
using model::AttentionLayer;
using model::AttentionStack;

namespace {

std::vector<float> random_stochastic(Rng& rng, int heads, int n) {
  std::vector<float> v(static_cast<size_t>(heads) * n * n);
  for (int r = 0; r < heads * n; ++r) {
    double s = 0.0;
    for (int j = 0; j < n; ++j) s += v[static_cast<size_t>(r) * n + j] = static_cast<float>(rng.uniform() + 1e-3);
    for (int j = 0; j < n; ++j) v[static_cast<size_t>(r) * n + j] = static_cast<float>(v[static_cast<size_t>(r) * n + j] / s);
  }
  return v;
}

// Class-token stack on a 1 x (n - 1) grid.
AttentionStack cls_stack(Rng& rng, int layers, int n, int heads) {
  AttentionStack s;
  for (int l = 0; l < layers; ++l) {
    AttentionLayer L;
    L.grid_rows = 1;
    L.grid_cols = n - 1;
    L.has_class_token = true;
    L.blocks.push_back({heads, n, random_stochastic(rng, heads, n), std::nullopt});
    s.layers.push_back(L);
  }
  return s;
}

using DMat = std::vector<std::vector<double>>;

DMat mul(const DMat& a, const DMat& b) {
  const size_t n = a.size();
  DMat c(n, std::vector<double>(n, 0.0));
  for (size_t i = 0; i < n; ++i)
    for (size_t k = 0; k < n; ++k)
      for (size_t j = 0; j < n; ++j) c[i][j] += a[i][k] * b[k][j];
  return c;
}

// Straight-line oracle: clamp(A * G) (or A), head mean, optional discard,
// augment, then the full matrix product A1 * ... * AB.
std::vector<double> chain_oracle(const AttentionStack& s, const AttentionStack* g, double discard, double w) {
  const int n = s.layers[0].blocks[0].tokens;
  DMat R;
  for (size_t l = 0; l < s.depth(); ++l) {
    const auto& b = s.layers[l].blocks[0];
    DMat F(static_cast<size_t>(n), std::vector<double>(static_cast<size_t>(n), 0.0));
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) {
        double acc = 0.0;
        for (int h = 0; h < b.heads; ++h) {
          double x = b.at(h, i, j);
          if (g) x = std::max(0.0f, b.at(h, i, j) * g->layers[l].blocks[0].at(h, i, j));
          acc += x;
        }
        F[static_cast<size_t>(i)][static_cast<size_t>(j)] = acc / b.heads;
      }
    if (discard > 0) {
      std::vector<std::pair<double, int>> flat;
      for (int k = 0; k < n * n; ++k) flat.push_back({F[static_cast<size_t>(k / n)][static_cast<size_t>(k % n)], k});
      std::sort(flat.begin(), flat.end());
      const int count = static_cast<int>(std::floor(discard * n * n));
      for (int k = 0; k < count; ++k)
        if (flat[static_cast<size_t>(k)].second != 0)
          F[static_cast<size_t>(flat[static_cast<size_t>(k)].second / n)][static_cast<size_t>(flat[static_cast<size_t>(k)].second % n)] = 0.0;
    }
    for (int i = 0; i < n; ++i) {
      double sum = 0.0;
      for (int j = 0; j < n; ++j) {
        auto& x = F[static_cast<size_t>(i)][static_cast<size_t>(j)];
        x = (1 - w) * x + (i == j ? w : 0.0);
        sum += x;
      }
      for (int j = 0; j < n; ++j) F[static_cast<size_t>(i)][static_cast<size_t>(j)] /= sum;
    }
    R = l == 0 ? F : mul(R, F);
  }
  return std::vector<double>(R[0].begin() + 1, R[0].end());
}

AttentionStack unit_grads(const AttentionStack& s, float value) {
  AttentionStack g = s;
  for (auto& l : g.layers)
    for (auto& b : l.blocks) std::fill(b.values.begin(), b.values.end(), value);
  return g;
}

void check_map_invariants(const SaliencyMap& m) {
  CHECK(m.values.rows() == 224);
  CHECK(m.values.cols() == 224);
  float hi = 0.0f;
  for (float v : m.values.values()) {
    REQUIRE(v >= 0.0f);
    REQUIRE(v <= 1.0f);
    hi = std::max(hi, v);
  }
  CHECK((hi == 1.0f || m.constant));
}

model::Adapter tiny(bool swin, int classes = 3) {
  model::BuildOptions o;
  o.init = model::InitMode::Random;
  o.seed = 12;
  if (swin) o.arch_override = testing::tiny_swin();
  else o.arch_override = testing::tiny_vit();
  return model::build_adapter(model::backbone_spec(swin ? model::Family::SWIN_T : model::Family::DEIT_T16), classes, o);
}

ImageTensor noise_image(uint64_t seed) {
  Rng rng(seed);
  ImageTensor t(3, 224, 224);
  for (auto& v : t.data) v = static_cast<float>(rng.normal());
  return t;
}

}  // namespace

TEST_CASE("normalize_map") {
  Matrix a(2, 2);
  a(0, 0) = 0; a(0, 1) = 2; a(1, 0) = 4; a(1, 1) = 8;
  const Matrix n = normalize_map(a);
  CHECK(n(0, 1) == 0.25f);
  CHECK(n(1, 0) == 0.5f);
  CHECK(n(1, 1) == 1.0f);
  CHECK(normalize_map(Matrix(3, 3, 5.0f)) == Matrix(3, 3, 0.0f));
  Matrix u(1, 3);
  u(0, 1) = 0.3f; u(0, 2) = 1.0f;
  CHECK(normalize_map(u) == u);
  a(0, 0) = std::nanf("");
  CHECK_THROWS_AS(normalize_map(a), Error);
}

TEST_CASE("augment_attention examples and row-stochasticity") {
  Matrix I(3, 3);
  for (int i = 0; i < 3; ++i) I(i, i) = 1.0f;
  CHECK(augment_attention(I, 0.3) == I);
  const Matrix a = augment_attention(Matrix(2, 2, 0.5f), 0.5);
  CHECK(a(0, 0) == doctest::Approx(0.75));
  CHECK(a(0, 1) == doctest::Approx(0.25));
  CHECK(a(1, 0) == doctest::Approx(0.25));
  Rng rng(1);
  for (int trial = 0; trial < 100; ++trial) {
    const int n = 1 + static_cast<int>(rng.below(9));
    Matrix A(n, n);
    auto v = random_stochastic(rng, 1, n);
    std::copy(v.begin(), v.end(), A.data());
    CHECK(max_abs_diff(augment_attention(A, 0.0).values(), A.values()) < 1e-6f);
    const Matrix B = augment_attention(A, rng.uniform());
    for (int i = 0; i < n; ++i) {
      double s = 0.0;
      for (int j = 0; j < n; ++j) s += B(i, j);
      REQUIRE(std::fabs(s - 1.0) < 1e-5);
    }
  }
  CHECK_THROWS_AS(augment_attention(Matrix(2, 3, 0.5f), 0.5), ShapeError);
  CHECK_THROWS_AS(augment_attention(Matrix(2, 2, 0.9f), 0.5), ShapeError);
}

TEST_CASE("rollout matches the explicit matrix chain") {
  Rng rng(2);
  for (int trial = 0; trial < 100; ++trial) {
    const int layers = 1 + static_cast<int>(rng.below(3));
    const int n = 2 + static_cast<int>(rng.below(7));
    const auto s = cls_stack(rng, layers, n, 1 + static_cast<int>(rng.below(3)));
    const auto got = rollout_token_scores(s, {});
    const auto want = chain_oracle(s, nullptr, 0.0, 0.5);
    REQUIRE(got.size() == want.size());
    for (size_t i = 0; i < got.size(); ++i) REQUIRE(std::fabs(got[i] - want[i]) < 1e-6);
  }
}

TEST_CASE("rollout degenerate cases") {
  AttentionStack s;
  AttentionLayer L{{}, 2, 2, true};
  std::vector<float> eye(25, 0.0f);
  for (int i = 0; i < 5; ++i) eye[static_cast<size_t>(i * 6)] = 1.0f;
  L.blocks.push_back({1, 5, eye, std::nullopt});
  s.layers = {L, L};
  const auto m = attention_rollout(s, {});
  CHECK(m.constant);
  for (float v : m.values.values()) REQUIRE(v == 0.0f);

  AttentionStack u;
  L.blocks[0].values.assign(25, 0.2f);
  u.layers = {L};
  const auto mu = attention_rollout(u, {});
  CHECK(mu.constant);
  for (float v : mu.values.values()) REQUIRE(v == 0.0f);

  AttentionLayer other{{}, 3, 1, true};
  other.blocks.push_back({1, 4, std::vector<float>(16, 0.25f), std::nullopt});
  u.layers.push_back(other);
  CHECK_THROWS_AS(attention_rollout(u, {}), ShapeError);
  CHECK_THROWS_AS(attention_rollout(AttentionStack{}, {}), ShapeError);
}

TEST_CASE("gradient rollout with unit gradients equals plain rollout bit for bit") {
  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    const auto s = cls_stack(rng, 1 + static_cast<int>(rng.below(3)), 2 + static_cast<int>(rng.below(7)), 2);
    const auto g = unit_grads(s, 1.0f);
    const RolloutConfig cfg{HeadFusion::MEAN, 0.0, 0.5};
    CHECK(gradient_rollout_token_scores(s, g, cfg) == rollout_token_scores(s, cfg));
  }
}

TEST_CASE("gradient rollout matches a straight-line oracle") {
  Rng rng(4);
  for (int trial = 0; trial < 60; ++trial) {
    const int n = 2 + static_cast<int>(rng.below(7));
    const auto s = cls_stack(rng, 2, n, 3);
    auto g = s;
    for (auto& l : g.layers)
      for (auto& b : l.blocks)
        for (auto& v : b.values) v = static_cast<float>(rng.normal());
    const double discard = trial % 2 ? 0.0 : 0.5;
    const auto got = gradient_rollout_token_scores(s, g, {HeadFusion::MEAN, discard, 0.5});
    const auto want = chain_oracle(s, &g, discard, 0.5);
    for (size_t i = 0; i < got.size(); ++i) REQUIRE(std::fabs(got[i] - want[i]) < 1e-6);
  }
}

TEST_CASE("gradient rollout with negative gradients is all zero") {
  Rng rng(5);
  model::CaptureBundle b;
  b.attentions = cls_stack(rng, 2, 5, 2);
  for (auto& l : b.attentions.layers) l.grid_rows = 2, l.grid_cols = 2;
  b.attention_grads = unit_grads(b.attentions, -1.0f);
  const auto m = gradient_attention_rollout(b, gradient_rollout_defaults());
  for (float v : m.values.values()) REQUIRE(v == 0.0f);
  b.attention_grads.layers.pop_back();
  CHECK_THROWS_AS(gradient_attention_rollout(b, {}), ShapeError);
}

TEST_CASE("windowed attention is scattered to original token positions") {
  // 2 x 2 grid, one 2 x 2 window shifted by 1: window-local token t sits at
  // original cell ((t / 2 + 1) % 2, (t % 2 + 1) % 2), i.e. locals 0..3 are
  // originals 3, 2, 1, 0.
  AttentionLayer L{{}, 2, 2, false};
  std::vector<float> a = {0, 1, 0, 0,  //
                          0, 1, 0, 0,  //
                          0, 0, 1, 0,  //
                          0, 0, 0, 1};
  L.blocks.push_back({1, 4, a, model::WindowTag{0, 0, 2, 1}});
  AttentionStack s{{L}};
  bool approx = false;
  const auto v = rollout_token_scores(s, {HeadFusion::MEAN, 0.0, 0.0}, &approx);
  CHECK(approx);
  REQUIRE(v.size() == 4);
  CHECK(v[0] == doctest::Approx(0.25));
  CHECK(v[1] == doctest::Approx(0.25));
  CHECK(v[2] == doctest::Approx(0.5));
  CHECK(v[3] == doctest::Approx(0.0));
}

TEST_CASE("Grad-CAM matches the weighted-sum oracle") {
  model::FeatureMap act{8, 7, 7, {}}, grad{8, 7, 7, {}};
  Rng rng(6);
  for (int trial = 0; trial < 20; ++trial) {
    act.values.resize(8 * 49);
    grad.values.resize(8 * 49);
    for (auto& v : act.values) v = static_cast<float>(rng.normal());
    for (auto& v : grad.values) v = static_cast<float>(rng.normal());
    const Matrix raw = grad_cam_raw(act, grad);
    for (int r = 0; r < 7; ++r)
      for (int c = 0; c < 7; ++c) {
        double s = 0.0;
        for (int k = 0; k < 8; ++k) {
          double w = 0.0;
          for (int i = 0; i < 49; ++i) w += grad.values[static_cast<size_t>(k * 49 + i)];
          s += w / 49.0 * act.at(k, r, c);
        }
        REQUIRE(raw(r, c) >= 0.0f);
        REQUIRE(std::fabs(raw(r, c) - std::max(0.0, s)) < 1e-6);
      }
  }
  model::CaptureBundle b;
  b.target_activations = act;
  b.target_grads = grad;
  std::fill(b.target_grads.values.begin(), b.target_grads.values.end(), 0.0f);
  CHECK(grad_cam(b).constant);
  b.target_activations = {1, 7, 7, std::vector<float>(49, 1.0f)};
  b.target_grads = {1, 7, 7, std::vector<float>(49, 0.3f)};
  const auto m = grad_cam(b);
  CHECK(m.constant);
  for (float v : m.values.values()) REQUIRE(v == 0.0f);
  CHECK_THROWS_AS(grad_cam(model::CaptureBundle{}), Error);
  b.target_grads.rows = 6;
  CHECK_THROWS_AS(grad_cam(b), ShapeError);
}

TEST_CASE("explainers on captured models satisfy the map invariants") {
  for (bool swin : {false, true}) {
    auto a = tiny(swin);
    const auto img = noise_image(3);
    const auto b0 = model::forward_with_capture(a, img, 0);
    const auto b1 = model::forward_with_capture(a, img, 1);
    for (Method m : {Method::ROLLOUT, Method::GRAD_ROLLOUT, Method::GRAD_CAM}) {
      const auto s0 = explain::explain(m, b0);
      CHECK(s0.source_method == m);
      check_map_invariants(s0);
      if (m == Method::ROLLOUT) CHECK(s0.values == explain::explain(m, b1).values);
      if (m == Method::GRAD_CAM) CHECK(max_abs_diff(s0.values.values(), explain::explain(m, b1).values.values()) > 0.0f);
    }
    CHECK(explain::explain(Method::ROLLOUT, b0).approximate == swin);
  }
}

TEST_CASE("saliency export writes map, sidecar and overlay") {
  const auto dir = testing::temp_dir("export");
  SaliencyMap m;
  m.values = Matrix(224, 224);
  for (int y = 0; y < 224; ++y)
    for (int x = 0; x < 224; ++x) m.values(y, x) = static_cast<float>(x) / 223.0f;
  m.source_method = Method::GRAD_ROLLOUT;
  m.target_class = 2;
  data::RgbImage input{224, 224, std::vector<uint8_t>(224 * 224 * 3, 90)};
  const auto rec = export_saliency(dir, "img0_deit_grad", m, input, {"DEIT_T16", "img0.jpg", "erythroblast", {}});
  const Matrix back = read_saliency_png(rec.map_png);
  CHECK(max_abs_diff(back.values(), m.values.values()) <= 0.5f / 65535.0f + 1e-7f);
  std::ifstream is(rec.sidecar);
  const auto j = nlohmann::json::parse(is);
  CHECK(j["method"] == "GRAD_ROLLOUT");
  CHECK(j["target_class"] == 2);
  CHECK(j["config"]["discard_ratio"] == 0.9);
  const auto ov = data::decode_image(rec.overlay_png);
  CHECK(ov.width == 224);
  // Hot end of the ramp is red-dominant, cold end blue-dominant.
  CHECK(ov.rgb[(10 * 224 + 223) * 3] > ov.rgb[(10 * 224 + 223) * 3 + 2]);
  CHECK(ov.rgb[(10 * 224) * 3 + 2] > ov.rgb[(10 * 224) * 3]);
}

TEST_CASE("gallery tiling") {
  data::RgbImage a{2, 3, std::vector<uint8_t>(18, 0)};
  const auto t = tile({a, a, a}, 2, 2, 1);
  CHECK(t.height == 5);
  CHECK(t.width == 7);
  CHECK(t.rgb[0] == 0);
  CHECK(t.rgb[(4 * 7 + 6) * 3] == 255);
  CHECK(tile({}, 0, 0).rgb.empty());
}
