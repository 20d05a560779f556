#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>

#include "test_support.hpp"
#include "xbench/common/error.hpp"
#include "xbench/data/dataset.hpp"
#include "xbench/data/image.hpp"
#include "xbench/data/source.hpp"
#include "xbench/data/synth.hpp"

using namespace xbench;
using namespace xbench::data;
namespace fs = std::filesystem;

namespace {

RgbImage solid(int h, int w, uint8_t v) {
  RgbImage img;
  img.height = h;
  img.width = w;
  img.rgb.assign(static_cast<size_t>(h * w * 3), v);
  return img;
}

// Collection with the given per-class counts; paths are synthetic, nothing
// is decoded.
ImageCollection fake_collection(const std::vector<int>& counts) {
  ImageCollection c;
  auto names = std::make_shared<std::vector<std::string>>();
  for (size_t k = 0; k < counts.size(); ++k) {
    names->push_back("c" + std::to_string(k));
    for (int i = 0; i < counts[k]; ++i)
      c.samples.push_back({names->back() + "/" + std::to_string(i) + ".png", static_cast<int>(k)});
  }
  c.class_names = names;
  return c;
}

std::map<int, int> per_class(const std::vector<SampleRef>& refs) {
  std::map<int, int> m;
  for (const auto& r : refs) ++m[r.label];
  return m;
}

}  // namespace

TEST_CASE("load_pbc enumerates class folders") {
  const auto root = testing::temp_dir("pbc_small");
  for (const char* cls : {"b_class", "a_class"}) {
    fs::create_directories(root / cls);
    for (int i = 0; i < 3; ++i) write_jpeg(root / cls / ("img" + std::to_string(i) + ".jpg"), solid(40, 30, 100));
  }
  const auto coll = load_pbc(root);
  CHECK(coll.samples.size() == 6);
  REQUIRE(coll.num_classes() == 2);
  CHECK((*coll.class_names)[0] == "a_class");
  for (const auto& s : coll.samples) CHECK(s.label == (s.source_path.rfind("a_class", 0) == 0 ? 0 : 1));
}

TEST_CASE("load_busi excludes masks and keeps the fixed class order") {
  const auto root = testing::temp_dir("busi_small");
  const int counts[3] = {2, 3, 4};
  const auto& names = busi_class_names();
  for (int k = 0; k < 3; ++k) {
    fs::create_directories(root / names[k]);
    for (int i = 0; i < counts[k]; ++i) {
      const std::string stem = names[k] + " (" + std::to_string(i + 1) + ")";
      write_png(root / names[k] / (stem + ".png"), solid(20, 20, 50));
      write_png(root / names[k] / (stem + "_mask.png"), solid(20, 20, 255));
    }
  }
  const auto coll = load_busi(root);
  CHECK(coll.samples.size() == 9);
  const auto m = per_class(coll.samples);
  CHECK(m.at(0) == 2);
  CHECK(m.at(1) == 3);
  CHECK(m.at(2) == 4);
  for (const auto& s : coll.samples) CHECK(s.source_path.find("_mask") == std::string::npos);
}

TEST_CASE("loaders report missing or empty roots") {
  CHECK_THROWS_AS(load_pbc("/nonexistent/xbench/pbc"), ConfigError);
  CHECK_THROWS_AS(load_busi("/nonexistent/xbench/busi"), ConfigError);
  const auto empty = testing::temp_dir("empty_root");
  CHECK_THROWS_AS(load_pbc(empty), DataError);
}

TEST_CASE("unreadable images are skipped and counted") {
  const auto root = testing::temp_dir("pbc_corrupt");
  fs::create_directories(root / "x");
  write_jpeg(root / "x" / "good.jpg", solid(10, 10, 1));
  std::ofstream(root / "x" / "bad.jpg") << "not a jpeg";
  const auto coll = load_pbc(root);
  CHECK(coll.samples.size() == 1);
  CHECK(coll.report.skipped == 1);
  CHECK_FALSE(coll.report.warnings.empty());
}

TEST_CASE("preprocess yields normalized 224x224 tensors") {
  const auto t = preprocess(solid(500, 500, 128));
  CHECK(t.channels == 3);
  CHECK(t.height == 224);
  CHECK(t.width == 224);
  ImageTensor half(3, 37, 53, 0.5f);
  const auto h = preprocess(half);
  for (int c = 0; c < 3; ++c) {
    const float expect = (0.5f - kChannelMean[static_cast<size_t>(c)]) / kChannelStd[static_cast<size_t>(c)];
    CHECK(h.at(c, 0, 0) == doctest::Approx(expect).epsilon(1e-5));
    CHECK(h.at(c, 223, 111) == doctest::Approx(expect).epsilon(1e-5));
  }
}

TEST_CASE("resize plan: shorter side to 224, centre crop") {
  const auto p = plan_resize_crop(363, 360);
  CHECK(p.resized_width == 224);
  CHECK(p.resized_height == 226);
  CHECK(p.crop_top == 1);
  CHECK(p.crop_left == 0);
  const auto q = plan_resize_crop(500, 500);
  CHECK(q.resized_height == 224);
  CHECK(q.crop_top == 0);
  const auto w = plan_resize_crop(100, 300);
  CHECK(w.resized_width == 672);
  CHECK(w.crop_left == 224);
}

TEST_CASE("bilinear resize preserves constants and linear ramps") {
  Matrix ramp(4, 8);
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 8; ++c) ramp(r, c) = static_cast<float>(c);
  const Matrix up = resize_bilinear(ramp, 8, 16);
  // Interior output x maps to source (x + 0.5) / 2 - 0.5.
  for (int x = 1; x < 15; ++x) CHECK(up(3, x) == doctest::Approx((x + 0.5) / 2.0 - 0.5));
  Matrix flat(5, 5, 2.5f);
  const Matrix r = resize_bilinear(flat, 13, 7);
  for (float v : r.values()) CHECK(v == doctest::Approx(2.5f));
}

TEST_CASE("denormalize inverts preprocess on a constant image") {
  const auto back = denormalize(preprocess(solid(224, 224, 77)));
  for (uint8_t v : back.rgb) CHECK(std::abs(static_cast<int>(v) - 77) <= 1);
}

TEST_CASE("gray16 PNG round trip") {
  const auto dir = testing::temp_dir("png16");
  std::vector<uint16_t> px{0, 1, 256, 65535, 1234, 40000};
  write_png_gray16(dir / "a.png", 2, 3, px);
  int h = 0, w = 0;
  CHECK(read_png_gray16(dir / "a.png", h, w) == px);
  CHECK(h == 2);
  CHECK(w == 3);
}

TEST_CASE("split sizes follow the rounded validation fraction") {
  const auto busi = fake_collection({437, 210, 133});
  const auto s = split(busi, 0.15, 0);
  CHECK(s.validation.size() == 117);
  CHECK(s.train.size() == 780 - 117);
  const auto v = per_class(s.validation);
  CHECK(v.at(0) == 66);
  CHECK(v.at(1) == 31);
  CHECK(v.at(2) == 20);

  const auto ten = fake_collection({5, 5});
  const auto h = split(ten, 0.5, 3);
  CHECK(h.validation.size() == 5);
  CHECK(h.train.size() == 5);
}

TEST_CASE("split is deterministic, disjoint and stratified") {
  const auto coll = fake_collection({37, 11, 90, 2, 51});
  for (uint64_t seed : {0ull, 1ull, 42ull}) {
    for (double f : {0.1, 0.15, 0.33, 0.5}) {
      const auto a = split(coll, f, seed);
      const auto b = split(coll, f, seed);
      CHECK(a.validation == b.validation);
      CHECK(a.train == b.train);
      CHECK(a.validation.size() == static_cast<size_t>(std::llround(f * coll.samples.size())));
      auto all = a.train;
      all.insert(all.end(), a.validation.begin(), a.validation.end());
      auto key = [](const SampleRef& r) { return r.source_path; };
      std::vector<std::string> got, want;
      for (const auto& r : all) got.push_back(key(r));
      for (const auto& r : coll.samples) want.push_back(key(r));
      std::sort(got.begin(), got.end());
      std::sort(want.begin(), want.end());
      CHECK(got == want);
      const auto v = per_class(a.validation);
      const auto n = per_class(coll.samples);
      for (const auto& [k, cnt] : n) {
        const double exact = f * cnt;
        const int got_k = v.count(k) ? v.at(k) : 0;
        CHECK(std::fabs(got_k - exact) <= 1.0);
      }
    }
  }
  CHECK(split(coll, 0.2, 1).validation != split(coll, 0.2, 2).validation);
}

TEST_CASE("split refuses classes that cannot be represented on both sides") {
  CHECK_THROWS_AS(split(fake_collection({10, 1}), 0.2, 0), DataError);
}

TEST_CASE("evaluation subset draws exactly per_class from each class") {
  const auto coll = fake_collection({6, 4, 9});
  const auto s = split(coll, 0.5, 0);
  const auto& names = *coll.class_names;
  const auto one = sample_eval_subset(s.validation, names, 1, 7);
  REQUIRE(one.size() == 3);
  for (int k = 0; k < 3; ++k) CHECK(one[static_cast<size_t>(k)].label == k);
  CHECK(sample_eval_subset(s.validation, names, 0, 7).empty());
  CHECK(sample_eval_subset(s.validation, names, 2, 7) == sample_eval_subset(s.validation, names, 2, 7));
  try {
    sample_eval_subset(s.validation, names, 3, 7);
    FAIL("expected DataError");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("c1") != std::string::npos);
  }
}

TEST_CASE("split manifest round trip") {
  const auto coll = fake_collection({8, 8, 8});
  const auto s = split(coll, 0.25, 5);
  const auto dir = testing::temp_dir("manifest");
  write_split_manifest(dir / "split.manifest", coll, s);
  const auto back = read_split_manifest(dir / "split.manifest", coll);
  CHECK(back.validation == s.validation);
  CHECK(back.train == s.train);
  const auto text = split_manifest_text(coll, s);
  CHECK(text.find("c0/0.png\t") == 0);
  CHECK(manifest_hash(s.validation) == manifest_hash(back.validation));
  CHECK(manifest_hash(s.validation) != manifest_hash(s.train));
}

TEST_CASE("synthetic fixtures reproduce the dataset layouts") {
  const auto pbc_root = testing::temp_dir("synth_pbc");
  write_synthetic_pbc(pbc_root, 2, 0);
  const auto pbc = load_pbc(pbc_root);
  CHECK(pbc.num_classes() == 8);
  CHECK(pbc.samples.size() == 16);
  CHECK((*pbc.class_names)[2] == "erythroblast");
  const auto img = decode_image(pbc.root / pbc.samples[0].source_path);
  CHECK(img.width == 360);
  CHECK(img.height == 363);

  const auto busi_root = testing::temp_dir("synth_busi");
  write_synthetic_busi(busi_root, 2, 0);
  const auto busi = load_busi(busi_root);
  CHECK(busi.samples.size() == 6);
  const auto sample = load_sample(busi, busi.samples[0]);
  CHECK(sample.pixels.height == 224);

  SampleSource src(busi, busi.samples);
  CHECK(src.size() == 6);
  CHECK(max_abs_diff(src.pixels(3).data, load_sample(busi, busi.samples[3]).pixels.data) == 0.0f);
}
