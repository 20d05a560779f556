#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "test_support.hpp"
#include "xbench/common/error.hpp"
#include "xbench/common/rng.hpp"
#include "xbench/data/synth.hpp"
#include "xbench/model/adapter.hpp"
#include "xbench/model/safetensors.hpp"

using namespace xbench;
using namespace xbench::model;

namespace {

ImageTensor random_image(uint64_t seed, int size = 224) {
  Rng rng(seed);
  ImageTensor t(3, size, size);
  for (auto& v : t.data) v = static_cast<float>(rng.normal());
  return t;
}

double ce_loss(const std::vector<float>& z, int label) {
  double mx = z[0];
  for (float v : z) mx = std::max(mx, static_cast<double>(v));
  double sum = 0.0;
  for (float v : z) sum += std::exp(v - mx);
  return -(z[static_cast<size_t>(label)] - mx - std::log(sum));
}

Adapter random_adapter(const ArchConfig& arch, Family family, int classes, uint64_t seed = 3) {
  BuildOptions o;
  o.init = InitMode::Random;
  o.seed = seed;
  o.arch_override = arch;
  return build_adapter(backbone_spec(family), classes, o);
}

// Central differences of the cross-entropy loss against analytic parameter
// gradients on random coordinates of every parameter tensor.
void check_param_gradients(Network& net, uint64_t seed) {
  // Larger weights than the default init so every path carries signal.
  Rng init(seed);
  for (auto& p : net.params().all()) {
    for (auto& v : p.value.values()) v += static_cast<float>(init.normal() * 0.1);
  }
  const ImageTensor img = random_image(seed + 1);
  const int label = 1;
  GradBuffer g = make_grad_buffer(net.params());
  net.train_step(img, label, g);
  Rng rng(seed + 2);
  int checked = 0, failed = 0;
  for (size_t pi = 0; pi < net.params().size(); ++pi) {
    Param& p = net.params().at(static_cast<int>(pi));
    for (int trial = 0; trial < 2; ++trial) {
      const size_t j = rng.below(p.value.size());
      float* w = p.value.data() + j;
      const float orig = *w;
      const float eps = 1e-2f;
      *w = orig + eps;
      const double lp = ce_loss(net.logits(img), label);
      *w = orig - eps;
      const double lm = ce_loss(net.logits(img), label);
      *w = orig;
      const double fd = (lp - lm) / (2.0 * eps);
      const double an = g[pi].data()[j];
      const double err = std::fabs(fd - an) / std::max({std::fabs(fd), std::fabs(an), 1e-3});
      ++checked;
      if (err > 2e-2) {
        ++failed;
        MESSAGE(p.name << "[" << j << "] analytic " << an << " fd " << fd);
      }
    }
  }
  CHECK(checked > 20);
  CHECK(failed == 0);
}

}  // namespace

TEST_CASE("backbone specs carry the published architecture constants") {
  const auto vit = backbone_spec(Family::VIT_B16);
  CHECK(vit.patch_size == 16);
  CHECK(vit.has_class_token);
  CHECK(vit.grid_rows == 14);
  CHECK(vit.checkpoint_id == "google/vit-base-patch16-224");
  const auto swin = backbone_spec(Family::SWIN_T);
  CHECK(swin.patch_size == 4);
  CHECK_FALSE(swin.has_class_token);
  CHECK(swin.grid_rows == 7);
  CHECK(std::get<SwinConfig>(swin.arch).window == 7);
  CHECK(parse_family("dino") == Family::DINO_S16);
  CHECK(parse_family("DEIT_T16") == Family::DEIT_T16);
  CHECK_THROWS_AS(parse_family("resnet"), ConfigError);
}

TEST_CASE("ViT parameter gradients match central differences") {
  auto net = make_vit(testing::tiny_vit(), 3);
  init_params(net->params(), 5);
  check_param_gradients(*net, 21);
}

TEST_CASE("Swin parameter gradients match central differences") {
  auto net = make_swin(testing::tiny_swin(), 3);
  init_params(net->params(), 6);
  check_param_gradients(*net, 22);
}

TEST_CASE("build_adapter replaces the head with the requested class count") {
  CHECK(random_adapter(testing::tiny_vit(), Family::VIT_B16, 8).network().logits(random_image(1)).size() == 8);
  CHECK(random_adapter(testing::tiny_swin(), Family::SWIN_T, 3).network().logits(random_image(1)).size() == 3);
  CHECK(random_adapter(testing::tiny_vit(), Family::DEIT_T16, 1).network().logits(random_image(1)).size() == 1);
}

TEST_CASE("build_adapter without a cached checkpoint fails with guidance") {
  BuildOptions o;
  o.cache_dir = testing::temp_dir("empty_cache");
  try {
    build_adapter(backbone_spec(Family::DEIT_T16), 8, o);
    FAIL("expected CheckpointError");
  } catch (const CheckpointError& e) {
    CHECK(std::string(e.what()).find("facebook/deit-tiny-patch16-224") != std::string::npos);
  }
}

TEST_CASE("backbone weights load from a Hugging Face style state dict") {
  // Source network exported with the bare (prefix-less) key layout used by
  // backbone-only checkpoints; a fresh classifier head must stay untouched.
  auto src = make_vit(testing::tiny_vit(), 5);
  init_params(src->params(), 99);
  SafeTensors st;
  for (const auto& p : src->params().all()) {
    if (p.name.rfind("classifier", 0) == 0) continue;
    st.put(p.name.substr(4), {{p.value.rows(), p.value.cols()},
                              std::vector<float>(p.value.values().begin(), p.value.values().end())});
  }
  const auto cache = testing::temp_dir("hf_cache");
  st.write(cache / "facebook" / "dino-vits16" / "model.safetensors");

  BuildOptions o;
  o.cache_dir = cache;
  o.arch_override = testing::tiny_vit();
  o.seed = 1;
  Adapter a = build_adapter(backbone_spec(Family::DINO_S16), 3, o);
  const auto& dst = a.network().params();
  for (const auto& p : src->params().all()) {
    const int i = dst.find(p.name);
    if (p.name.rfind("classifier", 0) == 0) continue;
    REQUIRE(i >= 0);
    CHECK(dst.value(i) == p.value);
  }
  CHECK(dst.value(dst.find("classifier.weight")).rows() == 3);
}

TEST_CASE("safetensors reader widens F16 and BF16") {
  const auto dir = testing::temp_dir("st_half");
  // Hand-built container: one F16 tensor [1.0, -2.0] and one BF16 [0.5].
  const std::string header =
      R"({"a":{"dtype":"F16","shape":[2],"data_offsets":[0,4]},"b":{"dtype":"BF16","shape":[1],"data_offsets":[4,6]}})";
  std::string padded = header;
  while (padded.size() % 8) padded.push_back(' ');
  std::ofstream os(dir / "h.safetensors", std::ios::binary);
  const uint64_t len = padded.size();
  os.write(reinterpret_cast<const char*>(&len), 8);
  os << padded;
  const uint16_t data[3] = {0x3C00, 0xC000, 0x3F00};
  os.write(reinterpret_cast<const char*>(data), 6);
  os.close();
  const auto st = SafeTensors::read(dir / "h.safetensors");
  CHECK(st.at("a").values == std::vector<float>{1.0f, -2.0f});
  CHECK(st.at("b").values == std::vector<float>{0.5f});
}

TEST_CASE("predict returns probability rows") {
  Adapter a = random_adapter(testing::tiny_vit(), Family::DEIT_T16, 3);
  std::vector<ImageTensor> batch{random_image(1), random_image(2), random_image(1)};
  const Matrix p = predict(a, batch);
  REQUIRE(p.rows() == 3);
  for (int r = 0; r < 3; ++r) {
    double sum = 0.0;
    for (int c = 0; c < 3; ++c) {
      sum += p(r, c);
      // Freshly initialised head: near-uniform.
      CHECK(p(r, c) > 0.05f);
      CHECK(p(r, c) < 0.95f);
    }
    CHECK(std::fabs(sum - 1.0) < 1e-5);
  }
  for (int c = 0; c < 3; ++c) CHECK(p(0, c) == p(2, c));
  CHECK_THROWS_AS(predict(a, std::vector<ImageTensor>{random_image(1, 64)}), ShapeError);
}

TEST_CASE("capture: attention stacks are row-stochastic and gradients congruent") {
  for (bool swin : {false, true}) {
    Adapter a = swin ? random_adapter(testing::tiny_swin(), Family::SWIN_T, 4)
                     : random_adapter(testing::tiny_vit(), Family::VIT_B16, 4);
    const CaptureBundle b = forward_with_capture(a, random_image(9), 2);
    CHECK(b.target_class == 2);
    double psum = 0.0;
    for (float v : b.probs) psum += v;
    CHECK(std::fabs(psum - 1.0) < 1e-5);
    REQUIRE(b.attentions.depth() == (swin ? 4u : 2u));
    for (size_t l = 0; l < b.attentions.depth(); ++l) {
      const auto& layer = b.attentions.layers[l];
      const auto& glayer = b.attention_grads.layers[l];
      REQUIRE(layer.blocks.size() == glayer.blocks.size());
      for (size_t k = 0; k < layer.blocks.size(); ++k) {
        const auto& blk = layer.blocks[k];
        CHECK(blk.values.size() == glayer.blocks[k].values.size());
        for (int h = 0; h < blk.heads; ++h) {
          for (int i = 0; i < blk.tokens; ++i) {
            double s = 0.0;
            for (int j = 0; j < blk.tokens; ++j) {
              REQUIRE(blk.at(h, i, j) >= 0.0f);
              s += blk.at(h, i, j);
            }
            REQUIRE(std::fabs(s - 1.0) < 1e-4);
          }
        }
      }
    }
    CHECK(b.target_activations.values.size() == b.target_grads.values.size());
    if (swin) {
      CHECK(b.attentions.layers[0].windowed());
      CHECK(b.attentions.layers[0].blocks.size() == 4);  // 14x14 grid, 7x7 windows
      CHECK(b.attentions.layers[1].blocks[0].window->shift == 3);
      CHECK(b.attentions.layers[3].blocks.size() == 1);
      CHECK(b.target_activations.rows == 7);
      CHECK(b.target_activations.channels == 32);
    } else {
      CHECK(b.attentions.layers[0].blocks[0].tokens == 197);
      CHECK(b.target_activations.rows == 14);
      CHECK(b.target_activations.channels == 32);
    }
  }
}

TEST_CASE("capture is deterministic in evaluation mode") {
  Adapter a = random_adapter(testing::tiny_vit(), Family::DINO_S16, 3);
  const auto img = random_image(4);
  const auto b1 = forward_with_capture(a, img, 0);
  const auto b2 = forward_with_capture(a, img, 0);
  for (size_t l = 0; l < b1.attentions.depth(); ++l) {
    CHECK(max_abs_diff(b1.attentions.layers[l].blocks[0].values, b2.attentions.layers[l].blocks[0].values) < 1e-6f);
    CHECK(max_abs_diff(b1.attention_grads.layers[l].blocks[0].values,
                       b2.attention_grads.layers[l].blocks[0].values) < 1e-6f);
  }
  CHECK(max_abs_diff(b1.target_grads.values, b2.target_grads.values) < 1e-6f);
}

TEST_CASE("full-size ViT-family captures have the checkpoint geometry") {
  struct Case {
    Family f;
    int heads;
  };
  for (Case c : {Case{Family::VIT_B16, 12}, Case{Family::DINO_S16, 6}}) {
    BuildOptions o;
    o.init = InitMode::Random;
    Adapter a = build_adapter(backbone_spec(c.f), 8, o);
    const auto b = forward_with_capture(a, random_image(2), 1);
    REQUIRE(b.attentions.depth() == 12);
    for (const auto& l : b.attentions.layers) {
      CHECK(l.blocks[0].heads == c.heads);
      CHECK(l.blocks[0].tokens == 197);
    }
    CHECK(b.target_activations.rows == 14);
    CHECK(b.target_activations.cols == 14);
  }
}

TEST_CASE("Grad-CAM layer gradient matches central differences") {
  // 64 px ViT input keeps the class-token path short enough that float
  // central differences resolve the gradient.
  for (bool swin : {false, true}) {
    Adapter a = swin ? random_adapter(testing::tiny_swin(), Family::SWIN_T, 2, 8)
                     : random_adapter(VitConfig{64, 16, 32, 2, 2, 64, 1e-6f}, Family::DEIT_T16, 2, 8);
    const auto img = random_image(12, swin ? 224 : 64);
    const int target = 1;
    const CaptureBundle b = forward_with_capture(a, img, target);
    const Matrix act = a.network().target_activation(img);
    const int offset = swin ? 0 : 1;
    const int grid = b.target_grads.cols;
    Rng rng(31);
    for (int trial = 0; trial < 10; ++trial) {
      const int ch = static_cast<int>(rng.below(static_cast<uint64_t>(b.target_grads.channels)));
      const int cell = static_cast<int>(rng.below(static_cast<uint64_t>(grid * grid)));
      Matrix plus = act, minus = act;
      plus(cell + offset, ch) += 3e-2f;
      minus(cell + offset, ch) -= 3e-2f;
      const double h = static_cast<double>(plus(cell + offset, ch)) - minus(cell + offset, ch);
      const double fd = (a.network().logits_with_target(img, plus)[target] -
                         a.network().logits_with_target(img, minus)[target]) / h;
      const double an = b.target_grads.at(ch, cell / grid, cell % grid);
      CHECK(std::fabs(fd - an) / std::max(std::fabs(fd), std::fabs(an)) < 1e-2);
    }
  }
}

TEST_CASE("fine_tune on a small fixture does not lose training accuracy") {
  const auto root = testing::temp_dir("ft_pbc");
  data::write_synthetic_pbc(root, 4, 1);
  const auto coll = data::load_pbc(root);
  data::SampleSource src(coll, coll.samples);
  REQUIRE(src.size() == 32);
  Adapter a = random_adapter(testing::tiny_vit(), Family::DEIT_T16, 8, 4);
  auto accuracy = [&] {
    int correct = 0;
    for (size_t i = 0; i < src.size(); ++i) {
      const auto p = predict_one(a, src.pixels(i));
      if (std::max_element(p.begin(), p.end()) - p.begin() == src.label(i)) ++correct;
    }
    return correct / 32.0;
  };
  const double before = accuracy();
  TrainConfig cfg;
  cfg.batch_size = 8;
  cfg.epochs = 2;
  cfg.learning_rate = 1e-3;
  const auto hist = fine_tune(a, src, cfg);
  CHECK(hist.epochs.size() == 2);
  CHECK(accuracy() >= before);

  // Divergence is reported, not silently trained through.
  TrainConfig bad = cfg;
  bad.learning_rate = 1e30;
  bad.epochs = 3;
  CHECK_THROWS_AS(fine_tune(a, src, bad), Error);
}

TEST_CASE("trained weights round-trip through the weights bundle") {
  Adapter a = random_adapter(testing::tiny_swin(), Family::SWIN_T, 3, 17);
  const auto dir = testing::temp_dir("wt");
  a.save(dir / "SWIN_T_busi_0.wt", {{"dataset", "busi"}});
  Adapter b = Adapter::load(dir / "SWIN_T_busi_0.wt");
  CHECK(b.spec().family == Family::SWIN_T);
  const auto img = random_image(3);
  CHECK(a.network().logits(img) == b.network().logits(img));
}
