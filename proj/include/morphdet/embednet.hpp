#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "morphdet/error.hpp"
#include "morphdet/parallel.hpp"
#include "morphdet/random.hpp"

namespace morphdet {

/// Dense array of doubles with a (channels, height, width) or flat shape.
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<double> data;

  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> s, double fill = 0.0) : shape(std::move(s)) {
    data.assign(element_count(shape), fill);
  }
  Tensor(std::vector<std::size_t> s, std::vector<double> d) : shape(std::move(s)), data(std::move(d)) {
    require(data.size() == element_count(shape), "tensor: data length does not match shape");
  }

  static std::size_t element_count(const std::vector<std::size_t>& s) {
    return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
  }
  std::size_t size() const { return data.size(); }
  friend bool operator==(const Tensor&, const Tensor&) = default;
};

struct ConvBlockSpec {
  std::size_t filters = 16;
  std::size_t kernel = 3;
  std::size_t stride = 1;
  friend bool operator==(const ConvBlockSpec&, const ConvBlockSpec&) = default;
};

struct EmbedNetConfig {
  std::size_t in_channels = 22;
  std::vector<ConvBlockSpec> blocks = {{16, 3, 1}, {32, 3, 1}, {64, 3, 1}};
  std::size_t embedding_dim = 128;
  std::uint64_t seed = 0;
  /// Scale embeddings to unit L2 norm before the distance.
  bool l2_normalize = false;

  void validate() const {
    require(in_channels >= 1, "net config: in_channels must be >= 1");
    require(embedding_dim >= 2, "net config: embedding_dim must be >= 2");
    require(!blocks.empty(), "net config: need at least one conv block");
    for (const auto& b : blocks)
      require(b.filters >= 1 && b.kernel >= 1 && b.kernel % 2 == 1 && b.stride >= 1,
              "net config: conv blocks need filters >= 1, odd kernel, stride >= 1");
  }
  friend bool operator==(const EmbedNetConfig&, const EmbedNetConfig&) = default;
};

/// Parse "16:3:1,32:3:1,64:3:1" (filters:kernel[:stride]).
inline std::vector<ConvBlockSpec> parse_blocks(const std::string& text) {
  std::vector<ConvBlockSpec> out;
  std::size_t start = 0;
  while (start <= text.size()) {
    const std::size_t end = std::min(text.find(',', start), text.size());
    const std::string item = text.substr(start, end - start);
    ConvBlockSpec b;
    unsigned long f = 0, k = 0, s = 1;
    const int n = std::sscanf(item.c_str(), "%lu:%lu:%lu", &f, &k, &s);
    if (n < 2) throw Error("net config: bad block '" + item + "' (want filters:kernel[:stride])");
    b = {f, k, s};
    out.push_back(b);
    start = end + 1;
  }
  return out;
}

inline std::string format_blocks(const std::vector<ConvBlockSpec>& blocks) {
  std::string s;
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    if (i) s += ',';
    s += std::to_string(blocks[i].filters) + ':' + std::to_string(blocks[i].kernel) + ':' +
         std::to_string(blocks[i].stride);
  }
  return s;
}

/// Named parameter tensors in a fixed order: conv{i}.weight (F,C,k,k),
/// conv{i}.bias (F), ..., dense.weight (E,F), dense.bias (E).
struct ParamSet {
  std::vector<std::string> names;
  std::vector<Tensor> tensors;

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& t : tensors) n += t.size();
    return n;
  }
  ParamSet zeros_like() const {
    ParamSet z{names, {}};
    for (const auto& t : tensors) z.tensors.emplace_back(t.shape);
    return z;
  }
  void add(const ParamSet& o) {
    for (std::size_t i = 0; i < tensors.size(); ++i)
      for (std::size_t j = 0; j < tensors[i].size(); ++j) tensors[i].data[j] += o.tensors[i].data[j];
  }
  void scale(double s) {
    for (auto& t : tensors)
      for (double& v : t.data) v *= s;
  }
  /// Flat view helpers used by gradient checks.
  double& scalar(std::size_t flat) {
    for (auto& t : tensors) {
      if (flat < t.size()) return t.data[flat];
      flat -= t.size();
    }
    throw Error("param index out of range");
  }
  friend bool operator==(const ParamSet&, const ParamSet&) = default;
};

/// Siamese branch: conv -> ReLU -> 2x2 max-pool blocks, global average
/// pool, dense projection to the embedding.
class EmbedNet {
 public:
  EmbedNet() = default;

  /// He-uniform initialization seeded from config.seed; biases start at 0.
  explicit EmbedNet(EmbedNetConfig config) : config_(std::move(config)) {
    config_.validate();
    Rng rng(config_.seed);
    std::size_t in = config_.in_channels;
    for (std::size_t i = 0; i < config_.blocks.size(); ++i) {
      const auto& b = config_.blocks[i];
      Tensor w({b.filters, in, b.kernel, b.kernel});
      const double bound = std::sqrt(6.0 / static_cast<double>(in * b.kernel * b.kernel));
      for (double& v : w.data) v = rng.uniform(-bound, bound);
      params_.names.push_back("conv" + std::to_string(i) + ".weight");
      params_.tensors.push_back(std::move(w));
      params_.names.push_back("conv" + std::to_string(i) + ".bias");
      params_.tensors.emplace_back(std::vector<std::size_t>{b.filters});
      in = b.filters;
    }
    Tensor w({config_.embedding_dim, in});
    const double bound = std::sqrt(6.0 / static_cast<double>(in));
    for (double& v : w.data) v = rng.uniform(-bound, bound);
    params_.names.push_back("dense.weight");
    params_.tensors.push_back(std::move(w));
    params_.names.push_back("dense.bias");
    params_.tensors.emplace_back(std::vector<std::size_t>{config_.embedding_dim});
  }

  EmbedNet(EmbedNetConfig config, ParamSet params) : config_(std::move(config)), params_(std::move(params)) {
    config_.validate();
    const EmbedNet reference(config_);
    require(params_.names == reference.params_.names, "net: parameter names do not match config");
    for (std::size_t i = 0; i < params_.tensors.size(); ++i)
      require(params_.tensors[i].shape == reference.params_.tensors[i].shape,
              "net: parameter shape mismatch for " + params_.names[i]);
  }

  const EmbedNetConfig& config() const { return config_; }
  const ParamSet& params() const { return params_; }
  ParamSet& params() { return params_; }

  const Tensor& conv_weight(std::size_t i) const { return params_.tensors[2 * i]; }
  const Tensor& conv_bias(std::size_t i) const { return params_.tensors[2 * i + 1]; }
  const Tensor& dense_weight() const { return params_.tensors[2 * config_.blocks.size()]; }
  const Tensor& dense_bias() const { return params_.tensors[2 * config_.blocks.size() + 1]; }

 private:
  EmbedNetConfig config_;
  ParamSet params_;
};

// ---------------------------------------------------------------------------
// Forward / backward for one input

namespace detail {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMatMap = Eigen::Map<const RowMatrix>;
using MatMap = Eigen::Map<RowMatrix>;

struct BlockCache {
  std::size_t in_c = 0, in_h = 0, in_w = 0;
  std::size_t conv_h = 0, conv_w = 0;
  std::size_t pool_h = 0, pool_w = 0;
  RowMatrix cols;                 // (C*k*k) x (conv_h*conv_w)
  RowMatrix activated;            // F x (conv_h*conv_w), after ReLU
  std::vector<std::uint32_t> argmax;  // per pooled output: index into activated row
  std::vector<double> pooled;     // F x pool_h x pool_w
};

inline void im2col(const double* x, std::size_t c_in, std::size_t h, std::size_t w, std::size_t k, std::size_t stride,
                   std::size_t out_h, std::size_t out_w, RowMatrix& cols) {
  const long pad = static_cast<long>(k / 2);
  cols.resize(static_cast<long>(c_in * k * k), static_cast<long>(out_h * out_w));
  for (std::size_t c = 0; c < c_in; ++c) {
    const double* plane = x + c * h * w;
    for (std::size_t ky = 0; ky < k; ++ky) {
      for (std::size_t kx = 0; kx < k; ++kx) {
        double* row = cols.data() + ((c * k + ky) * k + kx) * out_h * out_w;
        for (std::size_t oy = 0; oy < out_h; ++oy) {
          const long iy = static_cast<long>(oy * stride + ky) - pad;
          double* dst = row + oy * out_w;
          if (iy < 0 || iy >= static_cast<long>(h)) {
            std::fill(dst, dst + out_w, 0.0);
            continue;
          }
          const double* src = plane + static_cast<std::size_t>(iy) * w;
          for (std::size_t ox = 0; ox < out_w; ++ox) {
            const long ix = static_cast<long>(ox * stride + kx) - pad;
            dst[ox] = (ix < 0 || ix >= static_cast<long>(w)) ? 0.0 : src[ix];
          }
        }
      }
    }
  }
}

inline void col2im(const RowMatrix& dcols, std::size_t c_in, std::size_t h, std::size_t w, std::size_t k,
                   std::size_t stride, std::size_t out_h, std::size_t out_w, std::vector<double>& dx) {
  const long pad = static_cast<long>(k / 2);
  dx.assign(c_in * h * w, 0.0);
  for (std::size_t c = 0; c < c_in; ++c) {
    double* plane = dx.data() + c * h * w;
    for (std::size_t ky = 0; ky < k; ++ky) {
      for (std::size_t kx = 0; kx < k; ++kx) {
        const double* row = dcols.data() + ((c * k + ky) * k + kx) * out_h * out_w;
        for (std::size_t oy = 0; oy < out_h; ++oy) {
          const long iy = static_cast<long>(oy * stride + ky) - pad;
          if (iy < 0 || iy >= static_cast<long>(h)) continue;
          double* dst = plane + static_cast<std::size_t>(iy) * w;
          const double* src = row + oy * out_w;
          for (std::size_t ox = 0; ox < out_w; ++ox) {
            const long ix = static_cast<long>(ox * stride + kx) - pad;
            if (ix >= 0 && ix < static_cast<long>(w)) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

}  // namespace detail

/// Everything backward() needs from one forward pass.
struct ForwardCache {
  std::vector<detail::BlockCache> blocks;
  std::vector<double> gap;        // last block's channel means
  std::vector<double> raw;        // dense output before optional normalization
  std::vector<double> embedding;  // network output
};

/// phi(x). Input shape must be (in_channels, H, W); every pooling stage
/// needs at least a 2x2 map.
inline std::vector<double> forward(const EmbedNet& net, const Tensor& x, ForwardCache* cache = nullptr) {
  const auto& cfg = net.config();
  require(x.shape.size() == 3 && x.shape[0] == cfg.in_channels,
          "shape mismatch: expected " + std::to_string(cfg.in_channels) + " input channels");
  ForwardCache local;
  ForwardCache& fc = cache ? *cache : local;
  fc.blocks.assign(cfg.blocks.size(), {});

  std::vector<double> current = x.data;
  std::size_t c = x.shape[0], h = x.shape[1], w = x.shape[2];
  for (std::size_t i = 0; i < cfg.blocks.size(); ++i) {
    const auto& spec = cfg.blocks[i];
    auto& bc = fc.blocks[i];
    bc.in_c = c;
    bc.in_h = h;
    bc.in_w = w;
    bc.conv_h = (h - 1) / spec.stride + 1;
    bc.conv_w = (w - 1) / spec.stride + 1;
    require(bc.conv_h >= 2 && bc.conv_w >= 2, "shape mismatch: input too small for the conv stack");
    bc.pool_h = bc.conv_h / 2;
    bc.pool_w = bc.conv_w / 2;
    const std::size_t n_out = bc.conv_h * bc.conv_w;

    detail::im2col(current.data(), c, h, w, spec.kernel, spec.stride, bc.conv_h, bc.conv_w, bc.cols);
    const Tensor& wt = net.conv_weight(i);
    const Tensor& bias = net.conv_bias(i);
    detail::ConstMatMap wm(wt.data.data(), static_cast<long>(spec.filters), static_cast<long>(c * spec.kernel * spec.kernel));
    bc.activated.noalias() = wm * bc.cols;
    for (std::size_t f = 0; f < spec.filters; ++f) {
      double* row = bc.activated.data() + f * n_out;
      const double b = bias.data[f];
      for (std::size_t j = 0; j < n_out; ++j) row[j] = std::max(row[j] + b, 0.0);
    }

    bc.pooled.assign(spec.filters * bc.pool_h * bc.pool_w, 0.0);
    bc.argmax.assign(bc.pooled.size(), 0);
    for (std::size_t f = 0; f < spec.filters; ++f) {
      const double* row = bc.activated.data() + f * n_out;
      for (std::size_t py = 0; py < bc.pool_h; ++py) {
        for (std::size_t px = 0; px < bc.pool_w; ++px) {
          std::uint32_t best = static_cast<std::uint32_t>((2 * py) * bc.conv_w + 2 * px);
          for (std::size_t dy = 0; dy < 2; ++dy)
            for (std::size_t dx = 0; dx < 2; ++dx) {
              const auto idx = static_cast<std::uint32_t>((2 * py + dy) * bc.conv_w + 2 * px + dx);
              if (row[idx] > row[best]) best = idx;
            }
          const std::size_t o = (f * bc.pool_h + py) * bc.pool_w + px;
          bc.argmax[o] = best;
          bc.pooled[o] = row[best];
        }
      }
    }
    current = bc.pooled;
    c = spec.filters;
    h = bc.pool_h;
    w = bc.pool_w;
  }

  const std::size_t hw = h * w;
  fc.gap.assign(c, 0.0);
  for (std::size_t f = 0; f < c; ++f) {
    double s = 0.0;
    for (std::size_t j = 0; j < hw; ++j) s += current[f * hw + j];
    fc.gap[f] = s / static_cast<double>(hw);
  }

  const Tensor& dw = net.dense_weight();
  const Tensor& db = net.dense_bias();
  fc.raw.assign(cfg.embedding_dim, 0.0);
  for (std::size_t e = 0; e < cfg.embedding_dim; ++e) {
    double s = db.data[e];
    const double* wr = dw.data.data() + e * c;
    for (std::size_t f = 0; f < c; ++f) s += wr[f] * fc.gap[f];
    fc.raw[e] = s;
  }
  fc.embedding = fc.raw;
  if (cfg.l2_normalize) {
    double n2 = 0.0;
    for (double v : fc.raw) n2 += v * v;
    const double n = std::sqrt(n2);
    if (n > 0.0)
      for (double& v : fc.embedding) v /= n;
  }
  return fc.embedding;
}

/// One embedding per input, computed independently.
inline std::vector<std::vector<double>> forward_batch(const EmbedNet& net, std::span<const Tensor> xs) {
  std::vector<std::vector<double>> out(xs.size());
  parallel_for(xs.size(), [&](std::size_t i) { out[i] = forward(net, xs[i]); });
  return out;
}

/// Accumulates d(loss)/d(params) into `grads` given d(loss)/d(embedding).
inline void backward(const EmbedNet& net, const ForwardCache& fc, std::span<const double> d_embedding, ParamSet& grads) {
  const auto& cfg = net.config();
  const std::size_t nb = cfg.blocks.size();
  std::vector<double> d_raw(d_embedding.begin(), d_embedding.end());
  if (cfg.l2_normalize) {
    double n2 = 0.0;
    for (double v : fc.raw) n2 += v * v;
    const double n = std::sqrt(n2);
    if (n > 0.0) {
      double dot = 0.0;
      for (std::size_t e = 0; e < d_raw.size(); ++e) dot += fc.embedding[e] * d_embedding[e];
      for (std::size_t e = 0; e < d_raw.size(); ++e) d_raw[e] = (d_embedding[e] - fc.embedding[e] * dot) / n;
    }
  }

  const std::size_t c_last = fc.gap.size();
  Tensor& g_dw = grads.tensors[2 * nb];
  Tensor& g_db = grads.tensors[2 * nb + 1];
  const Tensor& dw = net.dense_weight();
  std::vector<double> d_gap(c_last, 0.0);
  for (std::size_t e = 0; e < cfg.embedding_dim; ++e) {
    g_db.data[e] += d_raw[e];
    double* gr = g_dw.data.data() + e * c_last;
    const double* wr = dw.data.data() + e * c_last;
    for (std::size_t f = 0; f < c_last; ++f) {
      gr[f] += d_raw[e] * fc.gap[f];
      d_gap[f] += d_raw[e] * wr[f];
    }
  }

  // Gradient w.r.t. the last pooled map.
  const auto& last = fc.blocks.back();
  const std::size_t hw = last.pool_h * last.pool_w;
  std::vector<double> d_pooled(c_last * hw);
  for (std::size_t f = 0; f < c_last; ++f)
    for (std::size_t j = 0; j < hw; ++j) d_pooled[f * hw + j] = d_gap[f] / static_cast<double>(hw);

  for (std::size_t i = nb; i-- > 0;) {
    const auto& spec = cfg.blocks[i];
    const auto& bc = fc.blocks[i];
    const std::size_t n_out = bc.conv_h * bc.conv_w;
    detail::RowMatrix d_act = detail::RowMatrix::Zero(static_cast<long>(spec.filters), static_cast<long>(n_out));
    for (std::size_t f = 0; f < spec.filters; ++f) {
      double* drow = d_act.data() + f * n_out;
      const double* arow = bc.activated.data() + f * n_out;
      for (std::size_t j = 0; j < bc.pool_h * bc.pool_w; ++j) {
        const std::size_t o = f * bc.pool_h * bc.pool_w + j;
        const std::uint32_t src = bc.argmax[o];
        if (arow[src] > 0.0) drow[src] += d_pooled[o];  // ReLU gate, subgradient 0 at 0
      }
    }
    Tensor& g_w = grads.tensors[2 * i];
    Tensor& g_b = grads.tensors[2 * i + 1];
    const std::size_t ckk = bc.in_c * spec.kernel * spec.kernel;
    detail::MatMap gwm(g_w.data.data(), static_cast<long>(spec.filters), static_cast<long>(ckk));
    gwm.noalias() += d_act * bc.cols.transpose();
    for (std::size_t f = 0; f < spec.filters; ++f) {
      const double* drow = d_act.data() + f * n_out;
      double s = 0.0;
      for (std::size_t j = 0; j < n_out; ++j) s += drow[j];
      g_b.data[f] += s;
    }
    if (i == 0) break;
    detail::ConstMatMap wm(net.conv_weight(i).data.data(), static_cast<long>(spec.filters), static_cast<long>(ckk));
    detail::RowMatrix d_cols = wm.transpose() * d_act;
    detail::col2im(d_cols, bc.in_c, bc.in_h, bc.in_w, spec.kernel, spec.stride, bc.conv_h, bc.conv_w, d_pooled);
  }
}

// ---------------------------------------------------------------------------
// Distance and loss

inline double pair_distance(std::span<const double> a, std::span<const double> b) {
  require(a.size() == b.size(), "distance: dimension mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s);
}

struct ContrastiveParams {
  double margin = 1.0;
};

/// y = 0 genuine pair, y = 1 imposter (morph) pair.
inline double contrastive_loss(double distance, int y, const ContrastiveParams& p = {}) {
  require(p.margin > 0.0, "contrastive: margin must be positive");
  if (y == 0) return distance * distance;
  const double gap = std::max(0.0, p.margin - distance);
  return gap * gap;
}

/// d(loss)/d(e1); d(loss)/d(e2) is its negation. Kinks at D = 0 and D = m
/// take subgradient 0.
inline std::vector<double> contrastive_embedding_grad(std::span<const double> e1, std::span<const double> e2, int y,
                                                      const ContrastiveParams& p = {}) {
  std::vector<double> g(e1.size(), 0.0);
  if (y == 0) {
    for (std::size_t i = 0; i < g.size(); ++i) g[i] = 2.0 * (e1[i] - e2[i]);
    return g;
  }
  const double d = pair_distance(e1, e2);
  if (d <= 0.0 || d >= p.margin) return g;
  const double coeff = -2.0 * (p.margin - d) / d;
  for (std::size_t i = 0; i < g.size(); ++i) g[i] = coeff * (e1[i] - e2[i]);
  return g;
}

/// One training pair as network inputs.
struct PairInput {
  const Tensor* reference = nullptr;
  const Tensor* probe = nullptr;
  int label = 0;
};

struct PairResult {
  double distance = 0.0;
  double loss = 0.0;
};

inline PairResult pair_loss(const EmbedNet& net, const PairInput& pair, const ContrastiveParams& p = {}) {
  const auto e1 = forward(net, *pair.reference);
  const auto e2 = forward(net, *pair.probe);
  const double d = pair_distance(e1, e2);
  return {d, contrastive_loss(d, pair.label, p)};
}

struct BatchGradient {
  double mean_loss = 0.0;
  ParamSet grads;
};

/// Mean contrastive loss of the batch and its exact gradient. Pairs are
/// processed in parallel; per-pair gradients are summed in batch order.
inline BatchGradient batch_loss_and_gradient(const EmbedNet& net, std::span<const PairInput> batch,
                                             const ContrastiveParams& p = {}) {
  require(!batch.empty(), "backward: empty batch");
  std::vector<ParamSet> per_pair(batch.size());
  std::vector<double> losses(batch.size());
  parallel_for(batch.size(), [&](std::size_t i) {
    ForwardCache c1, c2;
    const auto e1 = forward(net, *batch[i].reference, &c1);
    const auto e2 = forward(net, *batch[i].probe, &c2);
    const double d = pair_distance(e1, e2);
    losses[i] = contrastive_loss(d, batch[i].label, p);
    auto g1 = contrastive_embedding_grad(e1, e2, batch[i].label, p);
    std::vector<double> g2(g1.size());
    for (std::size_t k = 0; k < g1.size(); ++k) g2[k] = -g1[k];
    per_pair[i] = net.params().zeros_like();
    backward(net, c1, g1, per_pair[i]);
    backward(net, c2, g2, per_pair[i]);
  });
  BatchGradient out{0.0, net.params().zeros_like()};
  for (std::size_t i = 0; i < batch.size(); ++i) {
    out.mean_loss += losses[i];
    out.grads.add(per_pair[i]);
  }
  const double inv = 1.0 / static_cast<double>(batch.size());
  out.mean_loss *= inv;
  out.grads.scale(inv);
  return out;
}

// ---------------------------------------------------------------------------
// Adam

struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t step = 0;
  ParamSet m, v;

  static AdamState for_net(const EmbedNet& net) {
    AdamState s;
    s.m = net.params().zeros_like();
    s.v = net.params().zeros_like();
    return s;
  }
  friend bool operator==(const AdamState&, const AdamState&) = default;
};

inline void adam_step(EmbedNet& net, const ParamSet& grads, AdamState& state, double lr) {
  auto& params = net.params();
  require(grads.tensors.size() == params.tensors.size() && state.m.tensors.size() == params.tensors.size(),
          "adam: parameter layout mismatch");
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t i = 0; i < params.tensors.size(); ++i) {
    auto& p = params.tensors[i].data;
    const auto& g = grads.tensors[i].data;
    auto& m = state.m.tensors[i].data;
    auto& v = state.v.tensors[i].data;
    require(g.size() == p.size(), "adam: shape mismatch for " + params.names[i]);
    for (std::size_t j = 0; j < p.size(); ++j) {
      m[j] = state.beta1 * m[j] + (1.0 - state.beta1) * g[j];
      v[j] = state.beta2 * v[j] + (1.0 - state.beta2) * g[j] * g[j];
      const double m_hat = m[j] / c1, v_hat = v[j] / c2;
      p[j] -= lr * m_hat / (std::sqrt(v_hat) + state.eps);
    }
  }
}

}  // namespace morphdet
