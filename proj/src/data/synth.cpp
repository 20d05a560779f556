#include "xbench/data/synth.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <string>

#include "xbench/common/rng.hpp"
#include "xbench/data/image.hpp"

namespace fs = std::filesystem;

namespace xbench::data {
namespace {

using Rgb = std::array<float, 3>;

struct Canvas {
  int height, width;
  std::vector<float> px;  // interleaved RGB, 0..255

  Canvas(int h, int w, Rgb fill) : height(h), width(w), px(static_cast<size_t>(h) * w * 3) {
    for (size_t i = 0; i < px.size(); ++i) px[i] = fill[i % 3];
  }

  // Blend colour into an ellipse with a one-pixel soft edge. `wobble` adds
  // angular radius modulation (lobes / irregular margins).
  void ellipse(float cx, float cy, float rx, float ry, Rgb color, float alpha = 1.0f,
               int lobes = 0, float wobble = 0.0f, float phase = 0.0f) {
    const float reach = std::max(rx, ry) * (1.0f + std::fabs(wobble)) + 2.0f;
    const int y0 = std::max(0, static_cast<int>(cy - reach));
    const int y1 = std::min(height - 1, static_cast<int>(cy + reach));
    const int x0 = std::max(0, static_cast<int>(cx - reach));
    const int x1 = std::min(width - 1, static_cast<int>(cx + reach));
    for (int y = y0; y <= y1; ++y) {
      for (int x = x0; x <= x1; ++x) {
        const float dx = (x - cx) / rx;
        const float dy = (y - cy) / ry;
        float r = std::sqrt(dx * dx + dy * dy);
        if (lobes > 0) {
          const float theta = std::atan2(dy, dx);
          r /= 1.0f + wobble * std::cos(lobes * theta + phase);
        }
        const float edge = std::clamp((1.0f - r) * std::min(rx, ry), 0.0f, 1.0f);
        const float a = alpha * edge;
        if (a <= 0.0f) continue;
        float* p = &px[(static_cast<size_t>(y) * width + x) * 3];
        for (int c = 0; c < 3; ++c) p[c] = p[c] * (1.0f - a) + color[c] * a;
      }
    }
  }

  void noise(Rng& rng, float amplitude) {
    for (auto& v : px) v += static_cast<float>(rng.normal()) * amplitude;
  }

  RgbImage to_rgb() const {
    RgbImage out;
    out.height = height;
    out.width = width;
    out.rgb.resize(px.size());
    for (size_t i = 0; i < px.size(); ++i) {
      out.rgb[i] = static_cast<uint8_t>(std::clamp(std::lround(px[i]), 0L, 255L));
    }
    return out;
  }
};

Rgb jitter(Rgb c, Rng& rng, float amount) {
  for (auto& v : c) v += static_cast<float>(rng.normal()) * amount;
  return c;
}

struct CellStyle {
  const char* name;
  const char* prefix;
  Rgb cytoplasm;
  Rgb nucleus;
  float cell_radius;
  float nucleus_scale;
  int lobes;
  float wobble;
};

// Alphabetical, matching the PBC folder names.
const std::array<CellStyle, 8> kCells{{
    {"basophil", "BA", {150, 90, 170}, {60, 20, 95}, 42, 0.85f, 5, 0.12f},
    {"eosinophil", "EO", {235, 125, 85}, {95, 45, 130}, 48, 0.45f, 2, 0.35f},
    {"erythroblast", "ERB", {170, 160, 210}, {40, 15, 55}, 34, 0.70f, 0, 0.0f},
    {"ig", "IG", {200, 160, 200}, {120, 70, 160}, 55, 0.60f, 1, 0.25f},
    {"lymphocyte", "LY", {140, 170, 230}, {70, 40, 120}, 36, 0.85f, 0, 0.0f},
    {"monocyte", "MO", {185, 180, 205}, {110, 80, 150}, 58, 0.62f, 3, 0.20f},
    {"neutrophil", "SNE", {225, 195, 205}, {90, 40, 140}, 48, 0.30f, 4, 0.45f},
    {"platelet", "PLT", {0, 0, 0}, {130, 80, 165}, 0, 0.0f, 0, 0.0f},
}};

void draw_pbc(Canvas& img, const CellStyle& style, Rng& rng) {
  // Erythrocytes scattered over the smear.
  const int rbc = 10 + static_cast<int>(rng.below(8));
  for (int i = 0; i < rbc; ++i) {
    const float x = static_cast<float>(rng.uniform() * img.width);
    const float y = static_cast<float>(rng.uniform() * img.height);
    const float r = 24.0f + static_cast<float>(rng.uniform() * 10.0);
    img.ellipse(x, y, r, r * 0.95f, jitter({222, 165, 165}, rng, 6));
    img.ellipse(x, y, r * 0.45f, r * 0.45f, jitter({232, 195, 190}, rng, 5), 0.7f);
  }
  const float cx = img.width / 2.0f + static_cast<float>(rng.normal() * 12.0);
  const float cy = img.height / 2.0f + static_cast<float>(rng.normal() * 12.0);
  if (style.cell_radius == 0.0f) {
    const int dots = 3 + static_cast<int>(rng.below(4));
    for (int i = 0; i < dots; ++i) {
      const float r = 6.0f + static_cast<float>(rng.uniform() * 4.0);
      img.ellipse(cx + static_cast<float>(rng.normal() * 25.0),
                  cy + static_cast<float>(rng.normal() * 25.0), r, r * 0.8f,
                  jitter(style.nucleus, rng, 8), 1.0f, 5, 0.2f,
                  static_cast<float>(rng.uniform() * 6.28));
    }
    return;
  }
  const float r = style.cell_radius * (0.9f + static_cast<float>(rng.uniform() * 0.2));
  img.ellipse(cx, cy, r, r * 0.97f, jitter(style.cytoplasm, rng, 8));
  const float phase = static_cast<float>(rng.uniform() * 6.28);
  const float nr = r * style.nucleus_scale;
  if (style.lobes >= 2 && style.wobble > 0.3f) {
    // Segmented nucleus: separate lobes on a ring.
    for (int l = 0; l < style.lobes; ++l) {
      const float t = phase + 6.2832f * l / style.lobes;
      img.ellipse(cx + std::cos(t) * r * 0.42f, cy + std::sin(t) * r * 0.42f, nr, nr * 0.8f,
                  jitter(style.nucleus, rng, 6));
    }
  } else {
    img.ellipse(cx, cy, nr, nr * 0.9f, jitter(style.nucleus, rng, 6), 1.0f, style.lobes,
                style.wobble, phase);
  }
}

void draw_busi(Canvas& img, int cls, Rng& rng, Canvas* mask) {
  // Horizontal tissue bands under speckle.
  for (int b = 0; b < 5; ++b) {
    const float y = static_cast<float>(60 + b * 90 + rng.normal() * 10);
    const float shade = static_cast<float>(90 + rng.uniform() * 70);
    img.ellipse(250, y, 420, 28, {shade, shade, shade}, 0.6f);
  }
  if (cls == 2) return;  // normal
  const float cx = 250.0f + static_cast<float>(rng.normal() * 30);
  const float cy = 250.0f + static_cast<float>(rng.normal() * 30);
  const float rx = 70.0f + static_cast<float>(rng.uniform() * 40);
  const float ry = rx * (cls == 0 ? 0.6f : 0.9f);
  const int lobes = cls == 0 ? 0 : 9;
  const float wobble = cls == 0 ? 0.0f : 0.25f;
  const float phase = static_cast<float>(rng.uniform() * 6.28);
  img.ellipse(cx, cy, rx, ry, {25, 25, 25}, 1.0f, lobes, wobble, phase);
  if (cls == 1) {
    // Posterior acoustic shadow.
    img.ellipse(cx, cy + ry * 1.6f, rx * 0.7f, ry * 1.2f, {40, 40, 40}, 0.5f);
  } else {
    img.ellipse(cx, cy + ry * 1.1f, rx * 0.8f, ry * 0.35f, {200, 200, 200}, 0.5f);
  }
  if (mask) mask->ellipse(cx, cy, rx, ry, {255, 255, 255}, 1.0f, lobes, wobble, phase);
}

}  // namespace

void write_synthetic_pbc(const fs::path& root, int per_class, uint64_t seed) {
  for (size_t c = 0; c < kCells.size(); ++c) {
    const auto& style = kCells[c];
    for (int i = 0; i < per_class; ++i) {
      Rng rng(seed * 1000003ULL + c * 7919ULL + static_cast<uint64_t>(i));
      Canvas img(363, 360, jitter({238, 222, 212}, rng, 4));
      draw_pbc(img, style, rng);
      img.noise(rng, 4.0f);
      write_jpeg(root / style.name / (std::string(style.prefix) + "_" + std::to_string(i) + ".jpg"),
                 img.to_rgb(), 92);
    }
  }
}

void write_synthetic_busi(const fs::path& root, int per_class, uint64_t seed) {
  const std::array<const char*, 3> names{"benign", "malignant", "normal"};
  for (int c = 0; c < 3; ++c) {
    for (int i = 0; i < per_class; ++i) {
      Rng rng(seed * 1000003ULL + static_cast<uint64_t>(c) * 7919ULL + static_cast<uint64_t>(i));
      const float base = static_cast<float>(50 + rng.uniform() * 30);
      Canvas img(500, 500, {base, base, base});
      Canvas mask(500, 500, {0, 0, 0});
      draw_busi(img, c, rng, &mask);
      img.noise(rng, 18.0f);
      const std::string stem = std::string(names[c]) + " (" + std::to_string(i + 1) + ")";
      write_png(root / names[c] / (stem + ".png"), img.to_rgb());
      write_png(root / names[c] / (stem + "_mask.png"), mask.to_rgb());
    }
  }
}

}  // namespace xbench::data
