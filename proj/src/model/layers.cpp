#include "xbench/model/layers.hpp"

#include <cmath>

#include "xbench/common/error.hpp"
#include "xbench/kernels/kernels.hpp"

namespace xbench::model {

namespace k = xbench::kernels;
using k::Trans;

int ParamSet::add(std::string name, int rows, int cols, bool decay) {
  params_.push_back({std::move(name), Matrix(rows, cols), decay});
  return static_cast<int>(params_.size() - 1);
}

int ParamSet::find(std::string_view name) const {
  for (size_t i = 0; i < params_.size(); ++i) {
    if (params_[i].name == name) return static_cast<int>(i);
  }
  return -1;
}

size_t ParamSet::scalar_count() const {
  size_t n = 0;
  for (const auto& p : params_) n += p.value.size();
  return n;
}

GradBuffer make_grad_buffer(const ParamSet& params) {
  GradBuffer g;
  g.reserve(params.size());
  for (const auto& p : params.all()) g.emplace_back(p.value.rows(), p.value.cols());
  return g;
}

void zero(GradBuffer& grads) {
  for (auto& g : grads) g.fill(0.0f);
}

void linear_forward(const Matrix& x, const Matrix& w, const Matrix* b, Matrix& y) {
  if (x.cols() != w.cols()) throw ShapeError("linear: input width does not match weight");
  y.reset(x.rows(), w.rows());
  if (b) {
    for (int r = 0; r < y.rows(); ++r) std::copy(b->data(), b->data() + w.rows(), y.row(r));
  }
  k::sgemm(Trans::No, Trans::Yes, x.rows(), w.rows(), x.cols(), 1.0f, x.data(), x.cols(),
           w.data(), w.cols(), b ? 1.0f : 0.0f, y.data(), y.cols());
}

void linear_backward(const Matrix& x, const Matrix& w, const Matrix& dy, Matrix* dx,
                     bool accumulate_dx, Matrix* dw, Matrix* db) {
  if (dx) {
    if (!accumulate_dx) dx->reset(x.rows(), x.cols());
    k::sgemm(Trans::No, Trans::No, dy.rows(), w.cols(), dy.cols(), 1.0f, dy.data(), dy.cols(),
             w.data(), w.cols(), accumulate_dx ? 1.0f : 0.0f, dx->data(), dx->cols());
  }
  if (dw) {
    k::sgemm(Trans::Yes, Trans::No, dy.cols(), x.cols(), dy.rows(), 1.0f, dy.data(), dy.cols(),
             x.data(), x.cols(), 1.0f, dw->data(), dw->cols());
  }
  if (db) {
    for (int r = 0; r < dy.rows(); ++r) k::axpy(dy.cols(), 1.0f, dy.row(r), db->data());
  }
}

void layernorm_forward(const Matrix& x, const Matrix& gamma, const Matrix& beta, float eps,
                       Matrix& y, NormCache& cache) {
  y.reset(x.rows(), x.cols());
  cache.mean.resize(static_cast<size_t>(x.rows()));
  cache.rstd.resize(static_cast<size_t>(x.rows()));
  k::layernorm_rows(x.data(), gamma.data(), beta.data(), eps, y.data(), cache.mean.data(),
                    cache.rstd.data(), x.rows(), x.cols());
}

void layernorm_backward(const Matrix& x, const Matrix& gamma, const NormCache& cache,
                        const Matrix& dy, Matrix& dx, Matrix* dgamma, Matrix* dbeta) {
  const int n = x.cols();
  dx.reset(x.rows(), n);
  std::vector<float> xhat(static_cast<size_t>(n)), dxhat(static_cast<size_t>(n));
  for (int r = 0; r < x.rows(); ++r) {
    const float mu = cache.mean[static_cast<size_t>(r)];
    const float rs = cache.rstd[static_cast<size_t>(r)];
    const float* xr = x.row(r);
    const float* dyr = dy.row(r);
    float mean_dxhat = 0.0f;
    float mean_dxhat_xhat = 0.0f;
    for (int j = 0; j < n; ++j) {
      xhat[j] = (xr[j] - mu) * rs;
      dxhat[j] = dyr[j] * gamma.data()[j];
      mean_dxhat += dxhat[j];
      mean_dxhat_xhat += dxhat[j] * xhat[j];
    }
    mean_dxhat /= static_cast<float>(n);
    mean_dxhat_xhat /= static_cast<float>(n);
    float* dxr = dx.row(r);
    for (int j = 0; j < n; ++j) dxr[j] = rs * (dxhat[j] - mean_dxhat - xhat[j] * mean_dxhat_xhat);
    if (dgamma) {
      float* g = dgamma->data();
      for (int j = 0; j < n; ++j) g[j] += dyr[j] * xhat[j];
    }
    if (dbeta) k::axpy(n, 1.0f, dyr, dbeta->data());
  }
}

BlockParams add_block_params(ParamSet& params, const std::string& prefix,
                             std::string_view attention_scope, int dim, int hidden) {
  const std::string att = prefix + std::string(attention_scope) + ".";
  BlockParams bp{};
  bp.ln1_g = params.add(prefix + "layernorm_before.weight", 1, dim, false);
  bp.ln1_b = params.add(prefix + "layernorm_before.bias", 1, dim, false);
  bp.q_w = params.add(att + "query.weight", dim, dim, true);
  bp.q_b = params.add(att + "query.bias", 1, dim, false);
  bp.k_w = params.add(att + "key.weight", dim, dim, true);
  bp.k_b = params.add(att + "key.bias", 1, dim, false);
  bp.v_w = params.add(att + "value.weight", dim, dim, true);
  bp.v_b = params.add(att + "value.bias", 1, dim, false);
  bp.o_w = params.add(prefix + "attention.output.dense.weight", dim, dim, true);
  bp.o_b = params.add(prefix + "attention.output.dense.bias", 1, dim, false);
  bp.ln2_g = params.add(prefix + "layernorm_after.weight", 1, dim, false);
  bp.ln2_b = params.add(prefix + "layernorm_after.bias", 1, dim, false);
  bp.fc1_w = params.add(prefix + "intermediate.dense.weight", hidden, dim, true);
  bp.fc1_b = params.add(prefix + "intermediate.dense.bias", 1, hidden, false);
  bp.fc2_w = params.add(prefix + "output.dense.weight", dim, hidden, true);
  bp.fc2_b = params.add(prefix + "output.dense.bias", 1, dim, false);
  return bp;
}

namespace {

void gather_rows(const Matrix& src, const std::vector<int>* perm, Matrix& dst) {
  if (!perm) {
    dst = src;
    return;
  }
  dst.reset(src.rows(), src.cols());
  for (int i = 0; i < src.rows(); ++i) {
    std::copy(src.row((*perm)[i]), src.row((*perm)[i]) + src.cols(), dst.row(i));
  }
}

// dst[perm[i]] (+)= src[i]
void scatter_rows(const Matrix& src, const std::vector<int>* perm, Matrix& dst, bool accumulate) {
  if (!accumulate) dst.reset(src.rows(), src.cols());
  for (int i = 0; i < src.rows(); ++i) {
    const int t = perm ? (*perm)[i] : i;
    if (accumulate) {
      k::axpy(src.cols(), 1.0f, src.row(i), dst.row(t));
    } else {
      std::copy(src.row(i), src.row(i) + src.cols(), dst.row(t));
    }
  }
}

Matrix* grad(const BlockGradSinks& s, int idx) {
  return s.params ? &(*s.params)[static_cast<size_t>(idx)] : nullptr;
}

}  // namespace

void block_forward(const ParamSet& p, const BlockParams& bp, const Topology& topo, float eps,
                   const Matrix& x, Matrix& out, BlockCache& c) {
  Matrix h1;
  layernorm_forward(x, p.value(bp.ln1_g), p.value(bp.ln1_b), eps, h1, c.n1);
  block_forward_from_norm1(p, bp, topo, eps, x, h1, out, c);
}

void block_forward_from_norm1(const ParamSet& p, const BlockParams& bp, const Topology& topo,
                              float eps, const Matrix& x, const Matrix& h1, Matrix& out,
                              BlockCache& c) {
  const int tokens = x.rows();
  const int dim = x.cols();
  const int heads = topo.heads;
  const int group = topo.group;
  if (group <= 0 || tokens % group != 0) throw ShapeError("block: token count not divisible by group");
  if (dim % heads != 0) throw ShapeError("block: width not divisible by heads");
  const int groups = tokens / group;
  const int dh = dim / heads;
  const float scale = 1.0f / std::sqrt(static_cast<float>(dh));

  c.x_in = x;
  c.h1 = h1;
  gather_rows(c.h1, topo.perm, c.hp);
  linear_forward(c.hp, p.value(bp.q_w), &p.value(bp.q_b), c.q);
  linear_forward(c.hp, p.value(bp.k_w), &p.value(bp.k_b), c.k);
  linear_forward(c.hp, p.value(bp.v_w), &p.value(bp.v_b), c.v);

  const size_t gg = static_cast<size_t>(group) * group;
  c.probs.assign(static_cast<size_t>(groups) * heads * gg, 0.0f);
  c.ctx.reset(tokens, dim);
  for (int g = 0; g < groups; ++g) {
    for (int h = 0; h < heads; ++h) {
      float* s = c.probs.data() + (static_cast<size_t>(g) * heads + h) * gg;
      const size_t off = static_cast<size_t>(g) * group * dim + static_cast<size_t>(h) * dh;
      k::sgemm(Trans::No, Trans::Yes, group, group, dh, scale, c.q.data() + off, dim,
               c.k.data() + off, dim, 0.0f, s, group);
      if (topo.head_bias) k::axpy(static_cast<int>(gg), 1.0f, topo.head_bias + h * gg, s);
      if (topo.group_mask) k::axpy(static_cast<int>(gg), 1.0f, topo.group_mask + g * gg, s);
      k::softmax_rows(s, group, group, group);
      k::sgemm(Trans::No, Trans::No, group, dh, group, 1.0f, s, group, c.v.data() + off, dim,
               0.0f, c.ctx.data() + off, dim);
    }
  }
  Matrix o;
  linear_forward(c.ctx, p.value(bp.o_w), &p.value(bp.o_b), o);
  c.x_mid = x;
  scatter_rows(o, topo.perm, c.x_mid, true);

  layernorm_forward(c.x_mid, p.value(bp.ln2_g), p.value(bp.ln2_b), eps, c.h2, c.n2);
  linear_forward(c.h2, p.value(bp.fc1_w), &p.value(bp.fc1_b), c.f1);
  c.g1.reset(c.f1.rows(), c.f1.cols());
  k::gelu_forward(c.f1.data(), c.g1.data(), static_cast<int>(c.f1.size()));
  linear_forward(c.g1, p.value(bp.fc2_w), &p.value(bp.fc2_b), out);
  k::axpy(static_cast<int>(out.size()), 1.0f, c.x_mid.data(), out.data());
}

void block_backward(const ParamSet& p, const BlockParams& bp, const Topology& topo,
                    const BlockCache& c, const Matrix& dout, Matrix& dx,
                    const BlockGradSinks& sinks) {
  const int tokens = c.x_in.rows();
  const int dim = c.x_in.cols();
  const int heads = topo.heads;
  const int group = topo.group;
  const int groups = tokens / group;
  const int dh = dim / heads;
  const float scale = 1.0f / std::sqrt(static_cast<float>(dh));
  const size_t gg = static_cast<size_t>(group) * group;

  // MLP branch.
  Matrix dg1, df1, dh2, dx_mid;
  linear_backward(c.g1, p.value(bp.fc2_w), dout, &dg1, false, grad(sinks, bp.fc2_w),
                  grad(sinks, bp.fc2_b));
  df1.reset(c.f1.rows(), c.f1.cols());
  k::gelu_backward(c.f1.data(), dg1.data(), df1.data(), static_cast<int>(df1.size()));
  linear_backward(c.h2, p.value(bp.fc1_w), df1, &dh2, false, grad(sinks, bp.fc1_w),
                  grad(sinks, bp.fc1_b));
  layernorm_backward(c.x_mid, p.value(bp.ln2_g), c.n2, dh2, dx_mid, grad(sinks, bp.ln2_g),
                     grad(sinks, bp.ln2_b));
  k::axpy(static_cast<int>(dx_mid.size()), 1.0f, dout.data(), dx_mid.data());

  // Attention branch.
  Matrix d_o;
  gather_rows(dx_mid, topo.perm, d_o);
  Matrix dctx;
  linear_backward(c.ctx, p.value(bp.o_w), d_o, &dctx, false, grad(sinks, bp.o_w),
                  grad(sinks, bp.o_b));
  Matrix dq(tokens, dim), dk(tokens, dim), dv(tokens, dim);
  if (sinks.probs) sinks.probs->assign(c.probs.size(), 0.0f);
  if (sinks.head_bias && sinks.head_bias->size() != static_cast<size_t>(heads) * gg) {
    sinks.head_bias->assign(static_cast<size_t>(heads) * gg, 0.0f);
  }
  std::vector<float> dp(gg), ds(gg);
  for (int g = 0; g < groups; ++g) {
    for (int h = 0; h < heads; ++h) {
      const float* pr = c.probs.data() + (static_cast<size_t>(g) * heads + h) * gg;
      const size_t off = static_cast<size_t>(g) * group * dim + static_cast<size_t>(h) * dh;
      k::sgemm(Trans::No, Trans::Yes, group, group, dh, 1.0f, dctx.data() + off, dim,
               c.v.data() + off, dim, 0.0f, dp.data(), group);
      if (sinks.probs) {
        std::copy(dp.begin(), dp.end(),
                  sinks.probs->begin() + static_cast<long>((static_cast<size_t>(g) * heads + h) * gg));
      }
      k::sgemm(Trans::Yes, Trans::No, group, dh, group, 1.0f, pr, group, dctx.data() + off, dim,
               0.0f, dv.data() + off, dim);
      for (int i = 0; i < group; ++i) {
        const float* prow = pr + static_cast<size_t>(i) * group;
        const float* dprow = dp.data() + static_cast<size_t>(i) * group;
        float* dsrow = ds.data() + static_cast<size_t>(i) * group;
        const float rowdot = k::dot(group, prow, dprow);
        for (int j = 0; j < group; ++j) dsrow[j] = prow[j] * (dprow[j] - rowdot);
      }
      if (sinks.head_bias) {
        k::axpy(static_cast<int>(gg), 1.0f, ds.data(), sinks.head_bias->data() + h * gg);
      }
      k::sgemm(Trans::No, Trans::No, group, dh, group, scale, ds.data(), group, c.k.data() + off,
               dim, 0.0f, dq.data() + off, dim);
      k::sgemm(Trans::Yes, Trans::No, group, dh, group, scale, ds.data(), group,
               c.q.data() + off, dim, 0.0f, dk.data() + off, dim);
    }
  }
  Matrix dhp;
  linear_backward(c.hp, p.value(bp.q_w), dq, &dhp, false, grad(sinks, bp.q_w), grad(sinks, bp.q_b));
  linear_backward(c.hp, p.value(bp.k_w), dk, &dhp, true, grad(sinks, bp.k_w), grad(sinks, bp.k_b));
  linear_backward(c.hp, p.value(bp.v_w), dv, &dhp, true, grad(sinks, bp.v_w), grad(sinks, bp.v_b));
  Matrix dh1;
  scatter_rows(dhp, topo.perm, dh1, false);
  if (sinks.h1) *sinks.h1 = dh1;

  layernorm_backward(c.x_in, p.value(bp.ln1_g), c.n1, dh1, dx, grad(sinks, bp.ln1_g),
                     grad(sinks, bp.ln1_b));
  k::axpy(static_cast<int>(dx.size()), 1.0f, dx_mid.data(), dx.data());
}

}  // namespace xbench::model
