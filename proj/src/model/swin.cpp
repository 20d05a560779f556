// Hierarchical shifted-window transformer. Each block attends within
// non-overlapping windows; odd blocks cyclically shift the grid by half a
// window first and mask pairs that were not adjacent before the shift.
// Parameter names follow the Hugging Face Swin checkpoints.
#include <algorithm>
#include <cmath>
#include <string>

#include "xbench/common/error.hpp"
#include "xbench/kernels/kernels.hpp"
#include "xbench/model/network.hpp"

namespace xbench::model {
namespace {

namespace k = xbench::kernels;

struct BlockMeta {
  int stage = 0;
  int res = 0;
  int win = 0;
  int shift = 0;
  int heads = 0;
  BlockParams bp{};
  int table = -1;
  std::vector<int> perm;
  std::vector<float> mask;       // windows x G x G, empty when unshifted
  std::vector<int> rel_index;    // G x G -> table row
};

struct MergeMeta {
  int res = 0;  // input resolution
  int dim = 0;  // input width
  int norm_g = -1, norm_b = -1, reduction = -1;
};

std::vector<float> softmax(const std::vector<float>& z) {
  double mx = z[0];
  for (float v : z) mx = std::max(mx, static_cast<double>(v));
  std::vector<double> e(z.size());
  double sum = 0.0;
  for (size_t i = 0; i < z.size(); ++i) sum += e[i] = std::exp(z[i] - mx);
  std::vector<float> p(z.size());
  for (size_t i = 0; i < z.size(); ++i) p[i] = static_cast<float>(e[i] / sum);
  return p;
}

class SwinNetwork final : public Network {
 public:
  SwinNetwork(const SwinConfig& cfg, int num_classes) : cfg_(cfg), arch_(cfg), num_classes_(num_classes) {
    if (cfg.depths.empty() || cfg.depths.size() != cfg.heads.size()) {
      throw ConfigError("Swin: depths and heads must be non-empty and equally long");
    }
    if (cfg.image_size % cfg.patch != 0) throw ConfigError("Swin: image size not divisible by patch");
    res0_ = cfg.image_size / cfg.patch;
    const int patch_dim = 3 * cfg.patch * cfg.patch;
    patch_w_ = params_.add("swin.embeddings.patch_embeddings.projection.weight", cfg.embed_dim, patch_dim, true);
    patch_b_ = params_.add("swin.embeddings.patch_embeddings.projection.bias", 1, cfg.embed_dim, false);
    emb_g_ = params_.add("swin.embeddings.norm.weight", 1, cfg.embed_dim, false);
    emb_b_ = params_.add("swin.embeddings.norm.bias", 1, cfg.embed_dim, false);

    int res = res0_;
    int dim = cfg.embed_dim;
    const int table_rows = (2 * cfg.window - 1) * (2 * cfg.window - 1);
    for (size_t s = 0; s < cfg.depths.size(); ++s) {
      const std::string stage = "swin.encoder.layers." + std::to_string(s) + ".";
      for (int b = 0; b < cfg.depths[s]; ++b) {
        BlockMeta m;
        m.stage = static_cast<int>(s);
        m.res = res;
        m.heads = cfg.heads[s];
        m.win = std::min(cfg.window, res);
        m.shift = (b % 2 == 1 && res > cfg.window) ? cfg.window / 2 : 0;
        if (res % m.win != 0) throw ConfigError("Swin: resolution not divisible by window");
        const std::string prefix = stage + "blocks." + std::to_string(b) + ".";
        m.bp = add_block_params(params_, prefix, "attention.self", dim, dim * cfg.mlp_ratio);
        m.table = params_.add(prefix + "attention.self.relative_position_bias_table", table_rows,
                              m.heads, false);
        build_topology(m);
        blocks_.push_back(std::move(m));
      }
      if (s + 1 < cfg.depths.size()) {
        if (res % 2 != 0) throw ConfigError("Swin: odd resolution before patch merging");
        MergeMeta mm;
        mm.res = res;
        mm.dim = dim;
        mm.norm_g = params_.add(stage + "downsample.norm.weight", 1, 4 * dim, false);
        mm.norm_b = params_.add(stage + "downsample.norm.bias", 1, 4 * dim, false);
        mm.reduction = params_.add(stage + "downsample.reduction.weight", 2 * dim, 4 * dim, true);
        merges_.push_back(mm);
        res /= 2;
        dim *= 2;
      }
    }
    final_res_ = res;
    final_dim_ = dim;
    norm_g_ = params_.add("swin.layernorm.weight", 1, dim, false);
    norm_b_ = params_.add("swin.layernorm.bias", 1, dim, false);
    head_w_ = params_.add("classifier.weight", num_classes, dim, true);
    head_b_ = params_.add("classifier.bias", 1, num_classes, false);
  }

  int num_classes() const override { return num_classes_; }
  const ArchConfig& arch() const override { return arch_; }
  std::vector<int> head_params() const override { return {head_w_, head_b_}; }

  std::vector<float> logits(const ImageTensor& image) const override {
    State s;
    forward(image, s, nullptr);
    return s.logits;
  }

  StepResult train_step(const ImageTensor& image, int label, GradBuffer& grads) const override {
    if (label < 0 || label >= num_classes_) throw ShapeError("label outside classifier head");
    State s;
    forward(image, s, nullptr);
    const std::vector<float> p = softmax(s.logits);
    std::vector<float> dlogits(p.size());
    int pred = 0;
    for (size_t i = 0; i < p.size(); ++i) {
      dlogits[i] = p[i] - (static_cast<int>(i) == label ? 1.0f : 0.0f);
      if (s.logits[i] > s.logits[static_cast<size_t>(pred)]) pred = static_cast<int>(i);
    }
    backward(s, dlogits, &grads, nullptr);
    return {-std::log(std::max(p[static_cast<size_t>(label)], 1e-30f)), pred};
  }

  CaptureBundle capture(const ImageTensor& image, int target_class) const override {
    if (target_class < 0 || target_class >= num_classes_) throw ShapeError("target class outside head");
    State s;
    forward(image, s, nullptr);
    CaptureBundle b;
    b.target_class = target_class;
    b.logits = s.logits;
    b.probs = softmax(s.logits);
    std::vector<float> dlogits(s.logits.size(), 0.0f);
    dlogits[static_cast<size_t>(target_class)] = 1.0f;
    Capture cap;
    backward(s, dlogits, nullptr, &cap);
    for (size_t l = 0; l < blocks_.size(); ++l) {
      b.attentions.layers.push_back(layer(blocks_[l], s.blocks[l].probs));
      b.attention_grads.layers.push_back(layer(blocks_[l], cap.dprobs[l]));
    }
    b.target_activations = to_feature_map(s.stage_out);
    b.target_grads = to_feature_map(cap.dstage_out);
    return b;
  }

  Matrix target_activation(const ImageTensor& image) const override {
    State s;
    forward(image, s, nullptr);
    return s.stage_out;
  }

  std::vector<float> logits_with_target(const ImageTensor& image, const Matrix& activation) const override {
    State s;
    forward(image, s, &activation);
    return s.logits;
  }

 private:
  struct MergeCache {
    Matrix gathered, normed;
    NormCache nc;
  };
  struct State {
    Matrix patches, emb_pre;
    NormCache emb_nc;
    std::vector<BlockCache> blocks;
    std::vector<MergeCache> merges;
    Matrix stage_out, xf;
    NormCache nf;
    std::vector<float> pooled, logits;
  };
  struct Capture {
    std::vector<std::vector<float>> dprobs;
    Matrix dstage_out;
  };

  void build_topology(BlockMeta& m) const {
    const int R = m.res, w = m.win, sft = m.shift;
    const int per_row = R / w;
    const int G = w * w;
    m.perm.resize(static_cast<size_t>(R) * R);
    for (int wr = 0; wr < per_row; ++wr) {
      for (int wc = 0; wc < per_row; ++wc) {
        const int g = wr * per_row + wc;
        for (int t = 0; t < G; ++t) {
          const int r = wr * w + t / w;
          const int c = wc * w + t % w;
          m.perm[static_cast<size_t>(g) * G + t] = ((r + sft) % R) * R + (c + sft) % R;
        }
      }
    }
    if (sft > 0) {
      auto region = [&](int v) { return v < R - w ? 0 : (v < R - sft ? 1 : 2); };
      m.mask.assign(static_cast<size_t>(per_row) * per_row * G * G, 0.0f);
      for (int g = 0; g < per_row * per_row; ++g) {
        const int wr = g / per_row, wc = g % per_row;
        for (int i = 0; i < G; ++i) {
          const int li = region(wr * w + i / w) * 3 + region(wc * w + i % w);
          for (int j = 0; j < G; ++j) {
            const int lj = region(wr * w + j / w) * 3 + region(wc * w + j % w);
            if (li != lj) m.mask[(static_cast<size_t>(g) * G + i) * G + j] = -100.0f;
          }
        }
      }
    }
    const int W = cfg_.window;
    m.rel_index.resize(static_cast<size_t>(G) * G);
    for (int i = 0; i < G; ++i) {
      for (int j = 0; j < G; ++j) {
        const int dy = i / w - j / w + W - 1;
        const int dx = i % w - j % w + W - 1;
        m.rel_index[static_cast<size_t>(i) * G + j] = dy * (2 * W - 1) + dx;
      }
    }
  }

  std::vector<float> head_bias(const BlockMeta& m) const {
    const int G = m.win * m.win;
    const Matrix& table = params_.value(m.table);
    std::vector<float> bias(static_cast<size_t>(m.heads) * G * G);
    for (int h = 0; h < m.heads; ++h) {
      for (size_t ij = 0; ij < m.rel_index.size(); ++ij) {
        bias[static_cast<size_t>(h) * G * G + ij] = table(m.rel_index[ij], h);
      }
    }
    return bias;
  }

  Topology topology(const BlockMeta& m, const std::vector<float>& bias) const {
    Topology t;
    t.heads = m.heads;
    t.group = m.win * m.win;
    t.perm = &m.perm;
    t.head_bias = bias.data();
    t.group_mask = m.mask.empty() ? nullptr : m.mask.data();
    return t;
  }

  void forward(const ImageTensor& image, State& s, const Matrix* stage_override) const {
    if (image.channels != 3 || image.height != cfg_.image_size || image.width != cfg_.image_size) {
      throw ShapeError("Swin: expected 3x" + std::to_string(cfg_.image_size) + "x" +
                       std::to_string(cfg_.image_size) + " input");
    }
    const int p = cfg_.patch;
    s.patches.reset(res0_ * res0_, 3 * p * p);
    for (int py = 0; py < res0_; ++py) {
      for (int px = 0; px < res0_; ++px) {
        float* row = s.patches.row(py * res0_ + px);
        for (int c = 0; c < 3; ++c) {
          for (int ky = 0; ky < p; ++ky) {
            for (int kx = 0; kx < p; ++kx) *row++ = image.at(c, py * p + ky, px * p + kx);
          }
        }
      }
    }
    linear_forward(s.patches, params_.value(patch_w_), &params_.value(patch_b_), s.emb_pre);
    Matrix x;
    layernorm_forward(s.emb_pre, params_.value(emb_g_), params_.value(emb_b_), cfg_.ln_eps, x, s.emb_nc);

    s.blocks.resize(blocks_.size());
    s.merges.resize(merges_.size());
    for (size_t l = 0; l < blocks_.size(); ++l) {
      const BlockMeta& m = blocks_[l];
      const std::vector<float> bias = head_bias(m);
      Matrix out;
      block_forward(params_, m.bp, topology(m, bias), cfg_.ln_eps, x, out, s.blocks[l]);
      x = std::move(out);
      const bool stage_end = l + 1 == blocks_.size() || blocks_[l + 1].stage != m.stage;
      if (stage_end && static_cast<size_t>(m.stage) < merges_.size()) {
        const MergeMeta& mm = merges_[static_cast<size_t>(m.stage)];
        MergeCache& mc = s.merges[static_cast<size_t>(m.stage)];
        merge_gather(mm, x, mc.gathered);
        layernorm_forward(mc.gathered, params_.value(mm.norm_g), params_.value(mm.norm_b), cfg_.ln_eps,
                          mc.normed, mc.nc);
        linear_forward(mc.normed, params_.value(mm.reduction), nullptr, x);
      }
    }
    if (stage_override) {
      if (stage_override->rows() != x.rows() || stage_override->cols() != x.cols()) {
        throw ShapeError("Swin: target activation override has wrong shape");
      }
      x = *stage_override;
    }
    s.stage_out = std::move(x);
    layernorm_forward(s.stage_out, params_.value(norm_g_), params_.value(norm_b_), cfg_.ln_eps, s.xf, s.nf);
    const int T = s.xf.rows();
    s.pooled.assign(static_cast<size_t>(final_dim_), 0.0f);
    for (int t = 0; t < T; ++t) k::axpy(final_dim_, 1.0f / static_cast<float>(T), s.xf.row(t), s.pooled.data());
    s.logits.assign(static_cast<size_t>(num_classes_), 0.0f);
    const Matrix& w = params_.value(head_w_);
    for (int c = 0; c < num_classes_; ++c) {
      s.logits[static_cast<size_t>(c)] = k::dot(final_dim_, w.row(c), s.pooled.data()) + params_.value(head_b_)(0, c);
    }
  }

  void backward(const State& s, const std::vector<float>& dlogits, GradBuffer* grads, Capture* cap) const {
    auto G = [&](int idx) { return grads ? &(*grads)[static_cast<size_t>(idx)] : nullptr; };
    std::vector<float> dpooled(static_cast<size_t>(final_dim_), 0.0f);
    const Matrix& w = params_.value(head_w_);
    for (int c = 0; c < num_classes_; ++c) {
      const float g = dlogits[static_cast<size_t>(c)];
      if (g == 0.0f) continue;
      k::axpy(final_dim_, g, w.row(c), dpooled.data());
      if (grads) {
        k::axpy(final_dim_, g, s.pooled.data(), G(head_w_)->row(c));
        (*G(head_b_))(0, c) += g;
      }
    }
    const int T = s.xf.rows();
    Matrix dxf(T, final_dim_);
    for (int t = 0; t < T; ++t) k::axpy(final_dim_, 1.0f / static_cast<float>(T), dpooled.data(), dxf.row(t));
    Matrix dx;
    layernorm_backward(s.stage_out, params_.value(norm_g_), s.nf, dxf, dx, G(norm_g_), G(norm_b_));
    if (cap) {
      cap->dstage_out = dx;
      cap->dprobs.resize(blocks_.size());
    }
    for (size_t li = blocks_.size(); li-- > 0;) {
      const BlockMeta& m = blocks_[li];
      const bool stage_end = li + 1 == blocks_.size() || blocks_[li + 1].stage != m.stage;
      if (stage_end && static_cast<size_t>(m.stage) < merges_.size()) {
        const MergeMeta& mm = merges_[static_cast<size_t>(m.stage)];
        const MergeCache& mc = s.merges[static_cast<size_t>(m.stage)];
        Matrix dnormed, dgathered;
        linear_backward(mc.normed, params_.value(mm.reduction), dx, &dnormed, false, G(mm.reduction), nullptr);
        layernorm_backward(mc.gathered, params_.value(mm.norm_g), mc.nc, dnormed, dgathered, G(mm.norm_g),
                           G(mm.norm_b));
        merge_scatter(mm, dgathered, dx);
      }
      const std::vector<float> bias = head_bias(m);
      std::vector<float> dbias;
      BlockGradSinks sinks;
      sinks.params = grads;
      if (grads) sinks.head_bias = &dbias;
      if (cap) sinks.probs = &cap->dprobs[li];
      Matrix dprev;
      block_backward(params_, m.bp, topology(m, bias), s.blocks[li], dx, dprev, sinks);
      dx = std::move(dprev);
      if (grads) {
        Matrix& dt = *G(m.table);
        const size_t gg = m.rel_index.size();
        for (int h = 0; h < m.heads; ++h) {
          for (size_t ij = 0; ij < gg; ++ij) dt(m.rel_index[ij], h) += dbias[h * gg + ij];
        }
      }
    }
    if (!grads) return;
    Matrix demb;
    layernorm_backward(s.emb_pre, params_.value(emb_g_), s.emb_nc, dx, demb, G(emb_g_), G(emb_b_));
    linear_backward(s.patches, params_.value(patch_w_), demb, nullptr, false, G(patch_w_), G(patch_b_));
  }

  // 2x2 neighbourhood concatenation in the order (0,0), (1,0), (0,1), (1,1)
  // as (row, col) offsets.
  static int merge_source(const MergeMeta& mm, int out_token, int part) {
    const int half = mm.res / 2;
    const int i = out_token / half, j = out_token % half;
    const int dr = part % 2, dc = part / 2;
    return (2 * i + dr) * mm.res + (2 * j + dc);
  }

  static void merge_gather(const MergeMeta& mm, const Matrix& x, Matrix& out) {
    const int n = (mm.res / 2) * (mm.res / 2);
    out.reset(n, 4 * mm.dim);
    for (int t = 0; t < n; ++t) {
      for (int part = 0; part < 4; ++part) {
        const float* src = x.row(merge_source(mm, t, part));
        std::copy(src, src + mm.dim, out.row(t) + part * mm.dim);
      }
    }
  }

  static void merge_scatter(const MergeMeta& mm, const Matrix& dgathered, Matrix& dx) {
    dx.reset(mm.res * mm.res, mm.dim);
    for (int t = 0; t < dgathered.rows(); ++t) {
      for (int part = 0; part < 4; ++part) {
        const float* src = dgathered.row(t) + part * mm.dim;
        std::copy(src, src + mm.dim, dx.row(merge_source(mm, t, part)));
      }
    }
  }

  AttentionLayer layer(const BlockMeta& m, const std::vector<float>& values) const {
    AttentionLayer l;
    l.grid_rows = m.res;
    l.grid_cols = m.res;
    l.has_class_token = false;
    const int G = m.win * m.win;
    const int per_row = m.res / m.win;
    const size_t block = static_cast<size_t>(m.heads) * G * G;
    for (int g = 0; g < per_row * per_row; ++g) {
      AttentionBlock b;
      b.heads = m.heads;
      b.tokens = G;
      b.values.assign(values.begin() + static_cast<long>(g * block),
                      values.begin() + static_cast<long>((g + 1) * block));
      b.window = WindowTag{g / per_row, g % per_row, m.win, m.shift};
      l.blocks.push_back(std::move(b));
    }
    return l;
  }

  FeatureMap to_feature_map(const Matrix& tokens) const {
    FeatureMap f;
    f.channels = tokens.cols();
    f.rows = final_res_;
    f.cols = final_res_;
    f.values.resize(static_cast<size_t>(f.channels) * final_res_ * final_res_);
    for (int t = 0; t < tokens.rows(); ++t) {
      for (int ch = 0; ch < f.channels; ++ch) f.at(ch, t / final_res_, t % final_res_) = tokens(t, ch);
    }
    return f;
  }

  SwinConfig cfg_;
  ArchConfig arch_;
  int num_classes_;
  int res0_ = 0, final_res_ = 0, final_dim_ = 0;
  int patch_w_, patch_b_, emb_g_, emb_b_, norm_g_, norm_b_, head_w_, head_b_;
  std::vector<BlockMeta> blocks_;
  std::vector<MergeMeta> merges_;
};

}  // namespace

std::unique_ptr<Network> make_swin(const SwinConfig& cfg, int num_classes) {
  if (num_classes < 1) throw ConfigError("num_classes must be >= 1");
  return std::make_unique<SwinNetwork>(cfg, num_classes);
}

std::unique_ptr<Network> make_network(const ArchConfig& arch, int num_classes) {
  if (const auto* v = std::get_if<VitConfig>(&arch)) return make_vit(*v, num_classes);
  return make_swin(std::get<SwinConfig>(arch), num_classes);
}

}  // namespace xbench::model
