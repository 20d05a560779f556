#include "xbench/explain/export.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <json.hpp>

#include "xbench/common/error.hpp"

namespace xbench::explain {

namespace {

const char* fusion_name(HeadFusion f) {
  switch (f) {
    case HeadFusion::MEAN: return "MEAN";
    case HeadFusion::MAX: return "MAX";
    case HeadFusion::MIN: return "MIN";
  }
  return "?";
}

nlohmann::json rollout_json(const RolloutConfig& c) {
  return {{"head_fusion", fusion_name(c.head_fusion)},
          {"discard_ratio", c.discard_ratio},
          {"residual_weight", c.residual_weight}};
}

uint8_t to_byte(double x) { return static_cast<uint8_t>(std::lround(std::clamp(x, 0.0, 1.0) * 255.0)); }

}  // namespace

data::RgbImage overlay(const data::RgbImage& base, const Matrix& map, float alpha) {
  if (map.rows() != base.height || map.cols() != base.width) throw ShapeError("overlay map does not match image size");
  data::RgbImage out = base;
  for (int y = 0; y < base.height; ++y) {
    for (int x = 0; x < base.width; ++x) {
      const double v = map(y, x);
      // Jet colour ramp: blue -> cyan -> yellow -> red.
      const double heat[3] = {1.5 - std::fabs(4.0 * v - 3.0), 1.5 - std::fabs(4.0 * v - 2.0),
                              1.5 - std::fabs(4.0 * v - 1.0)};
      uint8_t* px = out.rgb.data() + (static_cast<size_t>(y) * base.width + x) * 3;
      for (int c = 0; c < 3; ++c)
        px[c] = to_byte((1.0 - alpha) * px[c] / 255.0 + alpha * std::clamp(heat[c], 0.0, 1.0));
    }
  }
  return out;
}

data::RgbImage tile(const std::vector<data::RgbImage>& cells, int rows, int cols, int gap) {
  data::RgbImage out;
  if (cells.empty() || rows < 1 || cols < 1) return out;
  const int h = cells.front().height, w = cells.front().width;
  out.height = rows * h + (rows - 1) * gap;
  out.width = cols * w + (cols - 1) * gap;
  out.rgb.assign(static_cast<size_t>(out.height) * out.width * 3, 255);
  for (size_t k = 0; k < cells.size() && k < static_cast<size_t>(rows * cols); ++k) {
    const auto& cell = cells[k];
    if (cell.rgb.empty()) continue;
    if (cell.height != h || cell.width != w) throw ShapeError("gallery cells must share one size");
    const int oy = static_cast<int>(k) / cols * (h + gap), ox = static_cast<int>(k) % cols * (w + gap);
    for (int y = 0; y < h; ++y)
      std::copy_n(cell.rgb.data() + static_cast<size_t>(y) * w * 3, w * 3,
                  out.rgb.data() + (static_cast<size_t>(oy + y) * out.width + ox) * 3);
  }
  return out;
}

ExportRecord export_saliency(const std::filesystem::path& dir, const std::string& stem, const SaliencyMap& map,
                             const data::RgbImage& input, const ExportContext& ctx) {
  std::filesystem::create_directories(dir);
  ExportRecord rec{dir / (stem + ".png"), dir / (stem + ".json"), dir / (stem + "_overlay.png")};
  std::vector<uint16_t> px(map.values.size());
  const auto v = map.values.values();
  for (size_t i = 0; i < px.size(); ++i)
    px[i] = static_cast<uint16_t>(std::lround(std::clamp(v[i], 0.0f, 1.0f) * 65535.0f));
  data::write_png_gray16(rec.map_png, map.values.rows(), map.values.cols(), px);

  nlohmann::json side = {{"method", method_name(map.source_method)},
                         {"target_class", map.target_class},
                         {"class_name", ctx.class_name},
                         {"model", ctx.model},
                         {"image", ctx.image},
                         {"height", map.values.rows()},
                         {"width", map.values.cols()},
                         {"encoding", "uint16 gray, value / 65535"},
                         {"constant", map.constant},
                         {"approximate", map.approximate}};
  if (map.source_method == Method::ROLLOUT) side["config"] = rollout_json(ctx.settings.rollout);
  if (map.source_method == Method::GRAD_ROLLOUT) side["config"] = rollout_json(ctx.settings.gradient_rollout);
  if (map.source_method == Method::GRAD_CAM) side["config"] = nlohmann::json::object();
  std::ofstream(rec.sidecar) << side.dump(2) << "\n";

  data::write_png(rec.overlay_png, overlay(input, map.values));
  return rec;
}

Matrix read_saliency_png(const std::filesystem::path& path) {
  int h = 0, w = 0;
  const auto px = data::read_png_gray16(path, h, w);
  Matrix out(h, w);
  auto o = out.values();
  for (size_t i = 0; i < px.size(); ++i) o[i] = px[i] / 65535.0f;
  return out;
}

}  // namespace xbench::explain
