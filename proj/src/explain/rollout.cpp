#include "xbench/explain/rollout.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "xbench/common/error.hpp"

namespace xbench::explain {

namespace {

using model::AttentionBlock;
using model::AttentionLayer;
using model::AttentionStack;

struct Dense {
  int n = 0;
  std::vector<double> v;
  explicit Dense(int size) : n(size), v(static_cast<size_t>(size) * size, 0.0) {}
  double& at(int i, int j) { return v[static_cast<size_t>(i) * n + j]; }
};

// Global token index of every window-local token.
std::vector<int> block_tokens(const AttentionLayer& layer, const AttentionBlock& b) {
  std::vector<int> idx(static_cast<size_t>(b.tokens));
  if (!b.window) {
    if (b.tokens != layer.token_count())
      throw ShapeError("attention block has " + std::to_string(b.tokens) + " tokens, layer expects " +
                       std::to_string(layer.token_count()));
    std::iota(idx.begin(), idx.end(), 0);
    return idx;
  }
  const auto& w = *b.window;
  if (w.size * w.size != b.tokens) throw ShapeError("window size does not match block tokens");
  for (int t = 0; t < b.tokens; ++t) {
    const int r = (w.row * w.size + t / w.size + w.shift) % layer.grid_rows;
    const int c = (w.col * w.size + t % w.size + w.shift) % layer.grid_cols;
    idx[static_cast<size_t>(t)] = r * layer.grid_cols + c;
  }
  return idx;
}

// Head-fused layer matrix. With `grad`, entries are clamp(attention * grad)
// first; with unit gradients that is the attention itself, bit for bit.
Dense fuse_layer(const AttentionLayer& layer, const AttentionLayer* grad, HeadFusion fusion) {
  Dense out(layer.token_count());
  for (size_t bi = 0; bi < layer.blocks.size(); ++bi) {
    const AttentionBlock& b = layer.blocks[bi];
    const AttentionBlock* g = grad ? &grad->blocks[bi] : nullptr;
    if (b.heads < 1 || b.values.size() != static_cast<size_t>(b.heads) * b.tokens * b.tokens)
      throw ShapeError("attention block storage does not match heads x tokens x tokens");
    const auto idx = block_tokens(layer, b);
    for (int i = 0; i < b.tokens; ++i) {
      for (int j = 0; j < b.tokens; ++j) {
        double acc = 0.0;
        for (int h = 0; h < b.heads; ++h) {
          float x = b.at(h, i, j);
          if (g) x = std::max(0.0f, x * g->at(h, i, j));
          if (h == 0) acc = x;
          else if (fusion == HeadFusion::MEAN) acc += x;
          else if (fusion == HeadFusion::MAX) acc = std::max(acc, static_cast<double>(x));
          else acc = std::min(acc, static_cast<double>(x));
        }
        if (fusion == HeadFusion::MEAN) acc /= b.heads;
        out.at(idx[static_cast<size_t>(i)], idx[static_cast<size_t>(j)]) += acc;
      }
    }
  }
  return out;
}

void check_row_stochastic(const Dense& a) {
  for (int i = 0; i < a.n; ++i) {
    double s = 0.0;
    for (int j = 0; j < a.n; ++j) s += a.v[static_cast<size_t>(i) * a.n + j];
    if (std::fabs(s - 1.0) > 1e-4)
      throw ShapeError("attention row " + std::to_string(i) + " sums to " + std::to_string(s) + ", expected 1");
  }
}

void augment_in_place(Dense& a, double w) {
  for (int i = 0; i < a.n; ++i) {
    double* row = a.v.data() + static_cast<size_t>(i) * a.n;
    double s = 0.0;
    for (int j = 0; j < a.n; ++j) {
      row[j] = (1.0 - w) * row[j] + (i == j ? w : 0.0);
      s += row[j];
    }
    if (s > 0.0)
      for (int j = 0; j < a.n; ++j) row[j] /= s;
  }
}

// Zeroes the floor(ratio * n^2) smallest entries; ties go to the lower flat
// index. Entry 0 (class token to itself) is kept when `protect_first`.
void discard_lowest(Dense& a, double ratio, bool protect_first) {
  const size_t total = a.v.size();
  const size_t count = static_cast<size_t>(std::floor(ratio * static_cast<double>(total)));
  if (count == 0) return;
  std::vector<size_t> order(total);
  std::iota(order.begin(), order.end(), size_t{0});
  auto less = [&](size_t x, size_t y) { return a.v[x] != a.v[y] ? a.v[x] < a.v[y] : x < y; };
  std::nth_element(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(count - 1), order.end(), less);
  for (size_t k = 0; k < count; ++k)
    if (!(protect_first && order[k] == 0)) a.v[order[k]] = 0.0;
}

// Index of the first layer of the trailing run sharing the last layer's
// token count.
size_t chain_start(const AttentionStack& stack, bool& truncated) {
  if (stack.layers.empty()) throw ShapeError("rollout needs at least one attention layer");
  const bool hierarchical = std::any_of(stack.layers.begin(), stack.layers.end(),
                                        [](const AttentionLayer& l) { return l.windowed(); });
  const int n = stack.layers.back().token_count();
  size_t start = stack.layers.size() - 1;
  while (start > 0 && stack.layers[start - 1].token_count() == n) --start;
  if (start > 0 && !hierarchical)
    throw ShapeError("token count changes between attention layers (" +
                     std::to_string(stack.layers[start - 1].token_count()) + " vs " + std::to_string(n) + ")");
  truncated = start > 0;
  return start;
}

std::vector<double> chain(const AttentionStack& stack, const AttentionStack* grads, const RolloutConfig& cfg,
                          bool* approximate) {
  cfg.validate();
  bool truncated = false;
  const size_t start = chain_start(stack, truncated);
  const AttentionLayer& last = stack.layers.back();
  const int n = last.token_count();
  const bool cls = last.has_class_token;

  std::vector<double> v(static_cast<size_t>(n), 0.0);
  if (cls) v[0] = 1.0;
  else std::fill(v.begin(), v.end(), 1.0 / n);

  bool windowed = false;
  std::vector<double> next(static_cast<size_t>(n));
  for (size_t l = start; l < stack.layers.size(); ++l) {
    const AttentionLayer& layer = stack.layers[l];
    windowed = windowed || layer.windowed();
    Dense a = fuse_layer(layer, grads ? &grads->layers[l] : nullptr, cfg.head_fusion);
    if (grads) discard_lowest(a, cfg.discard_ratio, cls);
    else check_row_stochastic(a);
    augment_in_place(a, cfg.residual_weight);
    std::fill(next.begin(), next.end(), 0.0);
    for (int i = 0; i < n; ++i) {
      const double vi = v[static_cast<size_t>(i)];
      if (vi == 0.0) continue;
      const double* row = a.v.data() + static_cast<size_t>(i) * n;
      for (int j = 0; j < n; ++j) next[static_cast<size_t>(j)] += vi * row[j];
    }
    v.swap(next);
  }
  if (approximate) *approximate = truncated || windowed || !cls;
  if (cls) v.erase(v.begin());
  return v;
}

void check_congruent(const AttentionStack& a, const AttentionStack& g) {
  if (a.depth() != g.depth()) throw ShapeError("attention and gradient stacks differ in depth");
  for (size_t l = 0; l < a.depth(); ++l) {
    const auto& la = a.layers[l];
    const auto& lg = g.layers[l];
    if (la.blocks.size() != lg.blocks.size() || la.token_count() != lg.token_count())
      throw ShapeError("attention and gradient layer " + std::to_string(l) + " differ in shape");
    for (size_t b = 0; b < la.blocks.size(); ++b)
      if (la.blocks[b].values.size() != lg.blocks[b].values.size() || la.blocks[b].heads != lg.blocks[b].heads)
        throw ShapeError("attention and gradient blocks differ in layer " + std::to_string(l));
  }
}

SaliencyMap to_map(const std::vector<double>& scores, const AttentionLayer& last, Method method, int target,
                   bool approximate) {
  Matrix grid(last.grid_rows, last.grid_cols);
  auto g = grid.values();
  for (size_t i = 0; i < scores.size(); ++i) g[i] = static_cast<float>(scores[i]);
  SaliencyMap m = finish_map(grid, method, target);
  m.approximate = approximate;
  return m;
}

}  // namespace

void RolloutConfig::validate() const {
  if (!(discard_ratio >= 0.0 && discard_ratio < 1.0)) throw ConfigError("discard_ratio must lie in [0, 1)");
  if (!(residual_weight >= 0.0 && residual_weight <= 1.0)) throw ConfigError("residual_weight must lie in [0, 1]");
}

Matrix augment_attention(const Matrix& A, double residual_weight) {
  if (A.rows() != A.cols()) throw ShapeError("augment_attention needs a square matrix");
  Dense a(A.rows());
  const auto src = A.values();
  std::copy(src.begin(), src.end(), a.v.begin());
  check_row_stochastic(a);
  augment_in_place(a, residual_weight);
  Matrix out(A.rows(), A.cols());
  auto o = out.values();
  for (size_t i = 0; i < o.size(); ++i) o[i] = static_cast<float>(a.v[i]);
  return out;
}

std::vector<double> rollout_token_scores(const AttentionStack& stack, const RolloutConfig& cfg, bool* approximate) {
  return chain(stack, nullptr, cfg, approximate);
}

std::vector<double> gradient_rollout_token_scores(const AttentionStack& attentions, const AttentionStack& gradients,
                                                  const RolloutConfig& cfg, bool* approximate) {
  check_congruent(attentions, gradients);
  return chain(attentions, &gradients, cfg, approximate);
}

SaliencyMap attention_rollout(const AttentionStack& stack, const RolloutConfig& cfg, int target_class) {
  bool approx = false;
  const auto scores = rollout_token_scores(stack, cfg, &approx);
  return to_map(scores, stack.layers.back(), Method::ROLLOUT, target_class, approx);
}

SaliencyMap gradient_attention_rollout(const model::CaptureBundle& bundle, const RolloutConfig& cfg) {
  bool approx = false;
  const auto scores = gradient_rollout_token_scores(bundle.attentions, bundle.attention_grads, cfg, &approx);
  return to_map(scores, bundle.attentions.layers.back(), Method::GRAD_ROLLOUT, bundle.target_class, approx);
}

}  // namespace xbench::explain
