#pragma once

#include <optional>
#include <vector>

#include "xbench/common/tensor.hpp"

namespace xbench::model {

// Location of one attention window on a (possibly cyclically shifted) token
// grid. Window-local token t sits at shifted grid cell
// (row * size + t / size, col * size + t % size), i.e. original cell
// ((r + shift) mod grid_rows, (c + shift) mod grid_cols).
struct WindowTag {
  int row = 0;
  int col = 0;
  int size = 0;
  int shift = 0;
};

/// heads x tokens x tokens attention probabilities (or their gradients).
struct AttentionBlock {
  int heads = 0;
  int tokens = 0;
  std::vector<float> values;
  std::optional<WindowTag> window;

  float at(int h, int i, int j) const {
    return values[(static_cast<size_t>(h) * tokens + i) * tokens + j];
  }
};

// One self-attention layer. Global attention has a single block covering all
// tokens (class token first when present); windowed attention has one block
// per window.
struct AttentionLayer {
  std::vector<AttentionBlock> blocks;
  int grid_rows = 0;
  int grid_cols = 0;
  bool has_class_token = false;

  int token_count() const { return grid_rows * grid_cols + (has_class_token ? 1 : 0); }
  bool windowed() const { return !blocks.empty() && blocks.front().window.has_value(); }
};

struct AttentionStack {
  std::vector<AttentionLayer> layers;
  size_t depth() const { return layers.size(); }
};

/// channels x rows x cols feature map (channel-major).
struct FeatureMap {
  int channels = 0;
  int rows = 0;
  int cols = 0;
  std::vector<float> values;

  float& at(int c, int r, int col) { return values[(static_cast<size_t>(c) * rows + r) * cols + col]; }
  float at(int c, int r, int col) const {
    return values[(static_cast<size_t>(c) * rows + r) * cols + col];
  }
};

struct CaptureBundle {
  AttentionStack attentions;
  AttentionStack attention_grads;
  FeatureMap target_activations;
  FeatureMap target_grads;
  int target_class = 0;
  std::vector<float> logits;
  std::vector<float> probs;
};

}  // namespace xbench::model
