#pragma once
// Building blocks shared by the ViT-family and Swin networks: parameter
// storage, linear / layer-norm layers and the pre-norm transformer block with
// grouped (global or windowed) multi-head self-attention. Every forward has a
// matching analytic backward.

#include <string>
#include <string_view>
#include <vector>

#include "xbench/common/tensor.hpp"

namespace xbench::model {

struct Param {
  std::string name;  // checkpoint key
  Matrix value;
  bool decay = true;  // weight decay applies (matrices, not norms/biases)
};

class ParamSet {
 public:
  int add(std::string name, int rows, int cols, bool decay);
  Param& at(int i) { return params_.at(static_cast<size_t>(i)); }
  const Param& at(int i) const { return params_.at(static_cast<size_t>(i)); }
  const Matrix& value(int i) const { return params_[static_cast<size_t>(i)].value; }
  Matrix& value(int i) { return params_[static_cast<size_t>(i)].value; }
  size_t size() const { return params_.size(); }
  std::vector<Param>& all() { return params_; }
  const std::vector<Param>& all() const { return params_; }
  int find(std::string_view name) const;
  size_t scalar_count() const;

 private:
  std::vector<Param> params_;
};

using GradBuffer = std::vector<Matrix>;
GradBuffer make_grad_buffer(const ParamSet& params);
void zero(GradBuffer& grads);

// y = x W^T + b, W is (out x in).
void linear_forward(const Matrix& x, const Matrix& w, const Matrix* b, Matrix& y);
// dx is overwritten unless accumulate_dx; dw/db accumulate.
void linear_backward(const Matrix& x, const Matrix& w, const Matrix& dy, Matrix* dx,
                     bool accumulate_dx, Matrix* dw, Matrix* db);

struct NormCache {
  std::vector<float> mean;
  std::vector<float> rstd;
};
void layernorm_forward(const Matrix& x, const Matrix& gamma, const Matrix& beta, float eps,
                       Matrix& y, NormCache& cache);
void layernorm_backward(const Matrix& x, const Matrix& gamma, const NormCache& cache,
                        const Matrix& dy, Matrix& dx, Matrix* dgamma, Matrix* dbeta);

// Parameter indices of one pre-norm transformer block.
struct BlockParams {
  int ln1_g, ln1_b;
  int q_w, q_b, k_w, k_b, v_w, v_b;
  int o_w, o_b;
  int ln2_g, ln2_b;
  int fc1_w, fc1_b, fc2_w, fc2_b;
};

// `attention_scope` is "attention.attention" (ViT) or "attention.self" (Swin).
BlockParams add_block_params(ParamSet& params, const std::string& prefix,
                             std::string_view attention_scope, int dim, int hidden);

// Attention is computed independently within consecutive groups of `group`
// tokens, taken in `perm` order (perm[i] = token index, identity if null).
struct Topology {
  int heads = 1;
  int group = 0;
  const std::vector<int>* perm = nullptr;
  const float* head_bias = nullptr;   // heads x group x group, added to scores
  const float* group_mask = nullptr;  // groups x group x group, added to scores
};

struct BlockCache {
  Matrix x_in, h1;
  NormCache n1;
  Matrix hp;  // h1 in grouped order
  Matrix q, k, v, ctx;
  std::vector<float> probs;  // groups x heads x group x group
  Matrix x_mid, h2;
  NormCache n2;
  Matrix f1, g1;
};

struct BlockGradSinks {
  GradBuffer* params = nullptr;
  std::vector<float>* head_bias = nullptr;  // heads x group x group, accumulated
  std::vector<float>* probs = nullptr;      // d(score)/d(attention probs), same layout as cache
  Matrix* h1 = nullptr;                     // gradient at the first norm output
};

void block_forward(const ParamSet& p, const BlockParams& bp, const Topology& topo, float eps,
                   const Matrix& x, Matrix& out, BlockCache& cache);
// Same as block_forward with the first norm output supplied instead of computed.
void block_forward_from_norm1(const ParamSet& p, const BlockParams& bp, const Topology& topo,
                              float eps, const Matrix& x, const Matrix& h1, Matrix& out,
                              BlockCache& cache);
void block_backward(const ParamSet& p, const BlockParams& bp, const Topology& topo,
                    const BlockCache& cache, const Matrix& dout, Matrix& dx,
                    const BlockGradSinks& sinks);

}  // namespace xbench::model
