#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "xbench/data/image.hpp"
#include "xbench/explain/explain.hpp"

namespace xbench::explain {

// Jet-coloured heatmap blended over the input at the given heatmap opacity.
data::RgbImage overlay(const data::RgbImage& base, const Matrix& map, float alpha = 0.5f);

// Tiles equally sized images into a rows x cols grid separated by `gap`
// white pixels. Missing cells stay white.
data::RgbImage tile(const std::vector<data::RgbImage>& cells, int rows, int cols, int gap = 4);

struct ExportRecord {
  std::filesystem::path map_png;
  std::filesystem::path sidecar;
  std::filesystem::path overlay_png;
};

struct ExportContext {
  std::string model;
  std::string image;
  std::string class_name;
  ExplainerSettings settings;
};

// <dir>/<stem>.png (16-bit gray), <stem>.json, <stem>_overlay.png.
ExportRecord export_saliency(const std::filesystem::path& dir, const std::string& stem,
                             const SaliencyMap& map, const data::RgbImage& input,
                             const ExportContext& ctx);

// Reads the 16-bit map back to [0, 1].
Matrix read_saliency_png(const std::filesystem::path& path);

}  // namespace xbench::explain
