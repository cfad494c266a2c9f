#pragma once

#include <cmath>
#include <cstddef>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "bwssl/conv.hpp"
#include "bwssl/noise.hpp"
#include "bwssl/ops.hpp"

namespace bwssl {

/// A named parameter or buffer. `adapt` marks tensors that receive LARS
/// trust-ratio scaling and weight decay (conv/affine weights, not biases or
/// batch-norm parameters).
template <typename T>
struct NamedTensor {
  std::string name;
  Tensor<T> tensor;
  bool adapt = false;
};

template <typename T>
using NamedTensors = std::vector<NamedTensor<T>>;

// ---------------------------------------------------------------------------
// Initialisation
// ---------------------------------------------------------------------------

/// Fills `t` with U(-bound, bound) from a stream keyed on the parameter name,
/// so initial values do not depend on construction order.
template <typename T>
void init_uniform(Tensor<T>& t, double bound, std::uint64_t seed, const std::string& name) {
  auto rng = make_stream(seed, "init/" + name);
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (auto& v : t.mutable_data()) v = static_cast<T>(dist(rng));
}

// ---------------------------------------------------------------------------
// Batch normalisation
// ---------------------------------------------------------------------------

enum class BnMode {
  train,         // batch statistics, running statistics updated
  train_frozen,  // batch statistics, running statistics untouched
  eval,          // running statistics only
};

/// Batch normalisation over axis 1 of an [N, C, ...] tensor.
template <typename T>
class BatchNorm {
 public:
  BatchNorm() = default;
  explicit BatchNorm(std::size_t channels, double momentum = 0.1, double eps = 1e-5)
      : gamma_(Shape{channels}, T(1)),
        beta_(Shape{channels}, T(0)),
        running_mean_(Shape{channels}, T(0)),
        running_var_(Shape{channels}, T(1)),
        momentum_(momentum),
        eps_(eps) {
    gamma_.set_requires_grad(true);
    beta_.set_requires_grad(true);
  }

  Tensor<T> forward(const Tensor<T>& x) {
    if (x.rank() < 2 || x.dim(1) != channels()) {
      throw ShapeError(detail::concat("batch norm over ", channels(), " channels got ",
                                      to_string(x.shape())));
    }
    return mode_ == BnMode::eval ? forward_eval(x) : forward_train(x);
  }

  void set_mode(BnMode m) { mode_ = m; }
  BnMode mode() const { return mode_; }
  std::size_t channels() const { return gamma_.numel(); }
  double eps() const { return eps_; }
  void set_eps(double e) { eps_ = e; }

  Tensor<T>& gamma() { return gamma_; }
  Tensor<T>& beta() { return beta_; }
  Tensor<T>& running_mean() { return running_mean_; }
  Tensor<T>& running_var() { return running_var_; }

  void parameters(const std::string& prefix, NamedTensors<T>& out) {
    out.push_back({prefix + "/gamma", gamma_, false});
    out.push_back({prefix + "/beta", beta_, false});
  }
  void buffers(const std::string& prefix, NamedTensors<T>& out) {
    out.push_back({prefix + "/running_mean", running_mean_, false});
    out.push_back({prefix + "/running_var", running_var_, false});
  }

 private:
  struct Layout {
    std::size_t n, c, s;
  };
  static Layout layout(const Tensor<T>& x) {
    const std::size_t n = x.dim(0), c = x.dim(1);
    return {n, c, x.numel() / (n * c)};
  }

  Tensor<T> forward_train(const Tensor<T>& x) {
    const auto [n, c, s] = layout(x);
    const std::size_t m = n * s;
    if (m < 2) {
      throw ShapeError(detail::concat("batch norm in training mode needs at least 2 values per "
                                      "channel, got ", m));
    }
    const auto xv = x.data();
    auto xhat = std::make_shared<std::vector<T>>(x.numel());
    auto inv_std = std::make_shared<std::vector<T>>(c);
    std::vector<T> out(x.numel());
    const auto gv = gamma_.data();
    const auto bv = beta_.data();
    std::vector<T> means(c), vars(c);
    for (std::size_t ch = 0; ch < c; ++ch) {
      T sum = 0;
      for (std::size_t b = 0; b < n; ++b) {
        const T* p = xv.data() + (b * c + ch) * s;
        for (std::size_t i = 0; i < s; ++i) sum += p[i];
      }
      const T mu = sum / static_cast<T>(m);
      T sq = 0;
      for (std::size_t b = 0; b < n; ++b) {
        const T* p = xv.data() + (b * c + ch) * s;
        for (std::size_t i = 0; i < s; ++i) sq += (p[i] - mu) * (p[i] - mu);
      }
      const T var = sq / static_cast<T>(m);
      const T is = T(1) / std::sqrt(var + static_cast<T>(eps_));
      means[ch] = mu;
      vars[ch] = var;
      (*inv_std)[ch] = is;
      for (std::size_t b = 0; b < n; ++b) {
        const std::size_t off = (b * c + ch) * s;
        for (std::size_t i = 0; i < s; ++i) {
          const T h = (xv[off + i] - mu) * is;
          (*xhat)[off + i] = h;
          out[off + i] = h * gv[ch] + bv[ch];
        }
      }
    }
    if (mode_ == BnMode::train) {
      auto rm = running_mean_.mutable_data();
      auto rv = running_var_.mutable_data();
      const T mom = static_cast<T>(momentum_);
      const T unbias = static_cast<T>(m) / static_cast<T>(m - 1);
      for (std::size_t ch = 0; ch < c; ++ch) {
        rm[ch] = (T(1) - mom) * rm[ch] + mom * means[ch];
        rv[ch] = (T(1) - mom) * rv[ch] + mom * vars[ch] * unbias;
      }
    }
    auto gamma = gamma_;
    auto beta = beta_;
    return detail::make_result<T>(
        x.shape(), std::move(out), "batch_norm_train", {x, gamma, beta},
        [x, gamma, beta, xhat, inv_std, n, c, s, m](std::span<const T> g) {
          const auto gv = gamma.data();
          std::vector<T> dgamma(c, T(0)), dbeta(c, T(0));
          for (std::size_t ch = 0; ch < c; ++ch)
            for (std::size_t b = 0; b < n; ++b) {
              const std::size_t off = (b * c + ch) * s;
              for (std::size_t i = 0; i < s; ++i) {
                dbeta[ch] += g[off + i];
                dgamma[ch] += g[off + i] * (*xhat)[off + i];
              }
            }
          if (x.requires_grad()) {
            auto& gx = x.grad_buffer();
            const T inv_m = T(1) / static_cast<T>(m);
            for (std::size_t ch = 0; ch < c; ++ch) {
              const T k = gv[ch] * (*inv_std)[ch];
              for (std::size_t b = 0; b < n; ++b) {
                const std::size_t off = (b * c + ch) * s;
                for (std::size_t i = 0; i < s; ++i) {
                  gx[off + i] += k * (g[off + i] - inv_m * dbeta[ch] - (*xhat)[off + i] * inv_m * dgamma[ch]);
                }
              }
            }
          }
          if (gamma.requires_grad()) {
            auto& gg = gamma.grad_buffer();
            for (std::size_t ch = 0; ch < c; ++ch) gg[ch] += dgamma[ch];
          }
          if (beta.requires_grad()) {
            auto& gb = beta.grad_buffer();
            for (std::size_t ch = 0; ch < c; ++ch) gb[ch] += dbeta[ch];
          }
        });
  }

  Tensor<T> forward_eval(const Tensor<T>& x) {
    const auto [n, c, s] = layout(x);
    const auto xv = x.data();
    const auto rm = running_mean_.data();
    const auto rv = running_var_.data();
    const auto gv = gamma_.data();
    const auto bv = beta_.data();
    auto inv_std = std::make_shared<std::vector<T>>(c);
    auto xhat = std::make_shared<std::vector<T>>(x.numel());
    std::vector<T> out(x.numel());
    for (std::size_t ch = 0; ch < c; ++ch) {
      const T is = T(1) / std::sqrt(rv[ch] + static_cast<T>(eps_));
      (*inv_std)[ch] = is;
      for (std::size_t b = 0; b < n; ++b) {
        const std::size_t off = (b * c + ch) * s;
        for (std::size_t i = 0; i < s; ++i) {
          const T h = (xv[off + i] - rm[ch]) * is;
          (*xhat)[off + i] = h;
          out[off + i] = h * gv[ch] + bv[ch];
        }
      }
    }
    auto gamma = gamma_;
    auto beta = beta_;
    return detail::make_result<T>(
        x.shape(), std::move(out), "batch_norm_eval", {x, gamma, beta},
        [x, gamma, beta, xhat, inv_std, n, c, s](std::span<const T> g) {
          const auto gv = gamma.data();
          for (std::size_t ch = 0; ch < c; ++ch)
            for (std::size_t b = 0; b < n; ++b) {
              const std::size_t off = (b * c + ch) * s;
              for (std::size_t i = 0; i < s; ++i) {
                if (x.requires_grad()) x.grad_buffer()[off + i] += g[off + i] * gv[ch] * (*inv_std)[ch];
                if (gamma.requires_grad()) gamma.grad_buffer()[ch] += g[off + i] * (*xhat)[off + i];
                if (beta.requires_grad()) beta.grad_buffer()[ch] += g[off + i];
              }
            }
        });
  }

  Tensor<T> gamma_, beta_, running_mean_, running_var_;
  double momentum_ = 0.1;
  double eps_ = 1e-5;
  BnMode mode_ = BnMode::train;
};

// ---------------------------------------------------------------------------
// Convolution and affine layers
// ---------------------------------------------------------------------------

template <typename T>
class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(std::size_t in, std::size_t out, std::size_t kernel, std::size_t stride, std::size_t padding,
         std::size_t groups = 1)
      : weight_(Shape{out, in / std::max<std::size_t>(groups, 1), kernel, kernel}),
        params_{stride, padding, groups, ConvAlgo::im2col} {
    if (groups == 0 || in % groups != 0 || out % groups != 0) {
      throw ConfigError(detail::concat("conv: ", in, " -> ", out, " channels not divisible into ",
                                       groups, " groups"));
    }
    weight_.set_requires_grad(true);
  }

  void init(std::uint64_t seed, const std::string& name) {
    const double fan_in = static_cast<double>(weight_.numel() / weight_.dim(0));
    init_uniform(weight_, std::sqrt(6.0 / fan_in), seed, name);
  }

  Tensor<T> forward(const Tensor<T>& x) const { return conv2d(x, weight_, params_); }

  Tensor<T>& weight() { return weight_; }
  Conv2dParams& params() { return params_; }

  void parameters(const std::string& prefix, NamedTensors<T>& out) {
    out.push_back({prefix + "/weight", weight_, true});
  }

 private:
  Tensor<T> weight_;
  Conv2dParams params_;
};

/// y = x W (+ b), W stored [in, out].
template <typename T>
class Linear {
 public:
  Linear() = default;
  Linear(std::size_t in, std::size_t out, bool bias) : weight_(Shape{in, out}) {
    weight_.set_requires_grad(true);
    if (bias) {
      bias_ = Tensor<T>(Shape{out}, T(0));
      bias_->set_requires_grad(true);
    }
  }

  void init(std::uint64_t seed, const std::string& name) {
    init_uniform(weight_, 1.0 / std::sqrt(static_cast<double>(weight_.dim(0))), seed, name);
  }

  Tensor<T> forward(const Tensor<T>& x) const {
    if (x.rank() != 2 || x.dim(1) != weight_.dim(0)) {
      throw ShapeError(detail::concat("linear layer expects width ", weight_.dim(0), ", got ",
                                      to_string(x.shape())));
    }
    auto y = matmul(x, weight_);
    return bias_ ? add(y, *bias_) : y;
  }

  Tensor<T>& weight() { return weight_; }
  std::optional<Tensor<T>>& bias() { return bias_; }
  std::size_t in_features() const { return weight_.dim(0); }
  std::size_t out_features() const { return weight_.dim(1); }

  void parameters(const std::string& prefix, NamedTensors<T>& out) {
    out.push_back({prefix + "/weight", weight_, true});
    if (bias_) out.push_back({prefix + "/bias", *bias_, false});
  }

 private:
  Tensor<T> weight_;
  std::optional<Tensor<T>> bias_;
};

// ---------------------------------------------------------------------------
// Encoder
// ---------------------------------------------------------------------------

struct BlockSpec {
  std::size_t width = 16;
  std::size_t units = 1;
  std::size_t stride = 1;
  bool merge_with_next = false;
};

struct EncoderSpec {
  std::size_t in_channels = 3;
  std::vector<BlockSpec> blocks;

  /// Four blocks, widths 16/32/64/128, strides 2/2/2/1, one residual unit each.
  static EncoderSpec desk() {
    EncoderSpec s;
    s.blocks = {{16, 1, 2, false}, {32, 1, 2, false}, {64, 1, 2, false}, {128, 1, 1, false}};
    return s;
  }

  std::size_t total_stride() const {
    std::size_t s = 1;
    for (const auto& b : blocks) s *= b.stride;
    return s;
  }

  void validate(std::size_t image_h = 0, std::size_t image_w = 0) const {
    if (blocks.empty() || blocks.size() > 6) {
      throw ConfigError(detail::concat("encoder must have 1..6 blocks, got ", blocks.size()));
    }
    for (std::size_t k = 0; k < blocks.size(); ++k) {
      const auto& b = blocks[k];
      if (b.width == 0 || b.stride == 0) throw ConfigError("block width and stride must be positive");
      if (k > 0 && b.units == 0) throw ConfigError("blocks after the first need at least one unit");
    }
    if (blocks.back().merge_with_next) throw ConfigError("last block cannot merge with a successor");
    if (image_h || image_w) {
      const auto s = total_stride();
      if (image_h % s != 0 || image_w % s != 0 || image_h / s == 0 || image_w / s == 0) {
        throw ConfigError(detail::concat("image ", image_h, "x", image_w,
                                         " incompatible with total encoder stride ", s));
      }
    }
  }

  /// Training blocks: contiguous groups of encoder blocks joined by merge flags.
  std::vector<std::vector<std::size_t>> training_groups() const {
    std::vector<std::vector<std::size_t>> groups;
    std::vector<std::size_t> cur;
    for (std::size_t k = 0; k < blocks.size(); ++k) {
      cur.push_back(k);
      if (!blocks[k].merge_with_next) {
        groups.push_back(cur);
        cur.clear();
      }
    }
    return groups;
  }

  std::size_t output_hw(std::size_t block, std::size_t image_hw) const {
    std::size_t s = image_hw;
    for (std::size_t k = 0; k <= block; ++k) s /= blocks[k].stride;
    return s;
  }
};

/// conv3x3-BN-ReLU-conv3x3-BN plus an identity or 1x1 projection shortcut.
template <typename T>
class ResidualUnit {
 public:
  ResidualUnit() = default;
  ResidualUnit(std::size_t in, std::size_t out, std::size_t stride)
      : conv1_(in, out, 3, stride, 1), bn1_(out), conv2_(out, out, 3, 1, 1), bn2_(out) {
    if (in != out || stride != 1) {
      shortcut_conv_.emplace(in, out, 1, stride, 0);
      shortcut_bn_.emplace(out);
    }
  }

  void init(std::uint64_t seed, const std::string& prefix) {
    conv1_.init(seed, prefix + "/conv1/weight");
    conv2_.init(seed, prefix + "/conv2/weight");
    if (shortcut_conv_) shortcut_conv_->init(seed, prefix + "/shortcut_conv/weight");
  }

  Tensor<T> forward(const Tensor<T>& x) {
    auto h = relu(bn1_.forward(conv1_.forward(x)));
    h = bn2_.forward(conv2_.forward(h));
    auto skip = shortcut_conv_ ? shortcut_bn_->forward(shortcut_conv_->forward(x)) : x;
    return relu(add(h, skip));
  }

  bool has_projection() const { return shortcut_conv_.has_value(); }

  void set_bn_mode(BnMode m) {
    bn1_.set_mode(m);
    bn2_.set_mode(m);
    if (shortcut_bn_) shortcut_bn_->set_mode(m);
  }

  void parameters(const std::string& p, NamedTensors<T>& out) {
    conv1_.parameters(p + "/conv1", out);
    bn1_.parameters(p + "/bn1", out);
    conv2_.parameters(p + "/conv2", out);
    bn2_.parameters(p + "/bn2", out);
    if (shortcut_conv_) {
      shortcut_conv_->parameters(p + "/shortcut_conv", out);
      shortcut_bn_->parameters(p + "/shortcut_bn", out);
    }
  }
  void buffers(const std::string& p, NamedTensors<T>& out) {
    bn1_.buffers(p + "/bn1", out);
    bn2_.buffers(p + "/bn2", out);
    if (shortcut_bn_) shortcut_bn_->buffers(p + "/shortcut_bn", out);
  }

 private:
  Conv2d<T> conv1_;
  BatchNorm<T> bn1_;
  Conv2d<T> conv2_;
  BatchNorm<T> bn2_;
  std::optional<Conv2d<T>> shortcut_conv_;
  std::optional<BatchNorm<T>> shortcut_bn_;
};

/// One encoder block. Block 1 starts with a strided 3x3 stem convolution
/// (the lone full-resolution layer folded into the first training block);
/// later blocks put their stride on the first residual unit.
template <typename T>
class EncoderBlock {
 public:
  EncoderBlock() = default;
  EncoderBlock(std::size_t index, std::size_t in, const BlockSpec& spec) : index_(index) {
    std::size_t ch = in;
    std::size_t stride = spec.stride;
    if (index == 0) {
      stem_conv_.emplace(in, spec.width, 3, spec.stride, 1);
      stem_bn_.emplace(spec.width);
      ch = spec.width;
      stride = 1;
    }
    for (std::size_t u = 0; u < spec.units; ++u) {
      units_.emplace_back(ch, spec.width, u == 0 ? stride : 1);
      ch = spec.width;
    }
  }

  std::string prefix() const { return "block" + std::to_string(index_ + 1); }

  void init(std::uint64_t seed) {
    if (stem_conv_) stem_conv_->init(seed, prefix() + "/stem/conv/weight");
    for (std::size_t u = 0; u < units_.size(); ++u) {
      units_[u].init(seed, prefix() + "/unit" + std::to_string(u + 1));
    }
  }

  Tensor<T> forward(const Tensor<T>& x) {
    auto h = x;
    if (stem_conv_) h = relu(stem_bn_->forward(stem_conv_->forward(h)));
    for (auto& u : units_) h = u.forward(h);
    return h;
  }

  void set_bn_mode(BnMode m) {
    if (stem_bn_) stem_bn_->set_mode(m);
    for (auto& u : units_) u.set_bn_mode(m);
  }

  void parameters(NamedTensors<T>& out) {
    if (stem_conv_) {
      stem_conv_->parameters(prefix() + "/stem/conv", out);
      stem_bn_->parameters(prefix() + "/stem/bn", out);
    }
    for (std::size_t u = 0; u < units_.size(); ++u) {
      units_[u].parameters(prefix() + "/unit" + std::to_string(u + 1), out);
    }
  }
  void buffers(NamedTensors<T>& out) {
    if (stem_bn_) stem_bn_->buffers(prefix() + "/stem/bn", out);
    for (std::size_t u = 0; u < units_.size(); ++u) {
      units_[u].buffers(prefix() + "/unit" + std::to_string(u + 1), out);
    }
  }

  const std::vector<ResidualUnit<T>>& units() const { return units_; }

 private:
  std::size_t index_ = 0;
  std::optional<Conv2d<T>> stem_conv_;
  std::optional<BatchNorm<T>> stem_bn_;
  std::vector<ResidualUnit<T>> units_;
};

/// Where a forward pass draws its noise: stream (seed, "noise", step, view, block).
struct NoiseStream {
  std::uint64_t seed = 0;
  std::uint64_t step = 0;
  std::uint64_t view = 0;
};

struct EncoderForwardOptions {
  // Number of blocks to evaluate (0 = all).
  std::size_t up_to = 0;
  // Wrap the input of block k in stop_gradient when stop_before[k] is set.
  std::vector<bool> stop_before;
  NoiseConfig noise;
  NoiseStream noise_stream;
  // Noise is only injected when training.
  bool training = false;
};

template <typename T>
class Encoder {
 public:
  Encoder() = default;
  explicit Encoder(const EncoderSpec& spec, std::uint64_t seed = 0) : spec_(spec) {
    spec_.validate();
    std::size_t in = spec.in_channels;
    for (std::size_t k = 0; k < spec.blocks.size(); ++k) {
      blocks_.emplace_back(k, in, spec.blocks[k]);
      blocks_.back().init(seed);
      in = spec.blocks[k].width;
    }
  }

  /// Activations at each evaluated block boundary.
  std::vector<Tensor<T>> forward(const Tensor<T>& x, const EncoderForwardOptions& opt = {}) {
    const std::size_t count = opt.up_to == 0 ? blocks_.size() : std::min(opt.up_to, blocks_.size());
    if (x.rank() != 4 || x.dim(1) != spec_.in_channels) {
      throw ShapeError(detail::concat("encoder expects N x ", spec_.in_channels, " x H x W, got ",
                                      to_string(x.shape())));
    }
    std::size_t stride = 1;
    for (std::size_t k = 0; k < count; ++k) stride *= spec_.blocks[k].stride;
    if (x.dim(2) / stride == 0 || x.dim(3) / stride == 0 || x.dim(2) % stride || x.dim(3) % stride) {
      throw ConfigError(detail::concat("input ", x.dim(2), "x", x.dim(3), " incompatible with encoder stride ",
                                       stride));
    }
    std::vector<Tensor<T>> acts;
    acts.reserve(count);
    auto h = x;
    for (std::size_t k = 0; k < count; ++k) {
      if (k < opt.stop_before.size() && opt.stop_before[k]) h = stop_gradient(h);
      if (opt.training && opt.noise.active() && (k > 0 || opt.noise.include_input)) {
        auto rng = make_stream(opt.noise_stream.seed, "noise", opt.noise_stream.step,
                               opt.noise_stream.view, k);
        h = inject_noise(h, opt.noise, rng);
      }
      h = blocks_[k].forward(h);
      acts.push_back(h);
    }
    return acts;
  }

  std::size_t num_blocks() const { return blocks_.size(); }
  EncoderBlock<T>& block(std::size_t k) { return blocks_.at(k); }
  const EncoderSpec& spec() const { return spec_; }

  void set_bn_mode(BnMode m) {
    for (auto& b : blocks_) b.set_bn_mode(m);
  }

  NamedTensors<T> parameters() {
    NamedTensors<T> out;
    for (auto& b : blocks_) b.parameters(out);
    return out;
  }
  NamedTensors<T> block_parameters(std::size_t k) {
    NamedTensors<T> out;
    blocks_.at(k).parameters(out);
    return out;
  }
  NamedTensors<T> buffers() {
    NamedTensors<T> out;
    for (auto& b : blocks_) b.buffers(out);
    return out;
  }
  NamedTensors<T> block_buffers(std::size_t k) {
    NamedTensors<T> out;
    blocks_.at(k).buffers(out);
    return out;
  }

 private:
  EncoderSpec spec_;
  std::vector<EncoderBlock<T>> blocks_;
};

// ---------------------------------------------------------------------------
// Projector
// ---------------------------------------------------------------------------

/// MLP of `depth` affine layers with BN + ReLU between consecutive layers.
/// Hidden layers carry no bias (BN follows); the output layer does.
template <typename T>
class Projector {
 public:
  Projector() = default;
  Projector(std::size_t in, std::size_t hidden, std::size_t out, std::size_t depth = 3) {
    if (depth == 0) throw ConfigError("projector depth must be at least 1");
    std::size_t w = in;
    for (std::size_t l = 0; l < depth; ++l) {
      const bool last = l + 1 == depth;
      layers_.emplace_back(w, last ? out : hidden, last);
      if (!last) norms_.emplace_back(hidden);
      w = hidden;
    }
  }

  void init(std::uint64_t seed, const std::string& prefix) {
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      layers_[l].init(seed, prefix + "/fc" + std::to_string(l + 1) + "/weight");
    }
  }

  Tensor<T> forward(const Tensor<T>& x) {
    if (x.rank() != 2 || x.dim(1) != in_features()) {
      throw ShapeError(detail::concat("projector expects width ", in_features(), ", got ",
                                      to_string(x.shape())));
    }
    auto h = x;
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      h = layers_[l].forward(h);
      if (l < norms_.size()) h = relu(norms_[l].forward(h));
    }
    return h;
  }

  std::size_t depth() const { return layers_.size(); }
  std::size_t in_features() const { return layers_.front().in_features(); }
  std::size_t out_features() const { return layers_.back().out_features(); }
  Linear<T>& layer(std::size_t l) { return layers_.at(l); }
  BatchNorm<T>& norm(std::size_t l) { return norms_.at(l); }

  void set_bn_mode(BnMode m) {
    for (auto& n : norms_) n.set_mode(m);
  }

  void parameters(const std::string& prefix, NamedTensors<T>& out) {
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      layers_[l].parameters(prefix + "/fc" + std::to_string(l + 1), out);
      if (l < norms_.size()) norms_[l].parameters(prefix + "/bn" + std::to_string(l + 1), out);
    }
  }
  void buffers(const std::string& prefix, NamedTensors<T>& out) {
    for (std::size_t l = 0; l < norms_.size(); ++l) {
      norms_[l].buffers(prefix + "/bn" + std::to_string(l + 1), out);
    }
  }

 private:
  std::vector<Linear<T>> layers_;
  std::vector<BatchNorm<T>> norms_;
};

}  // namespace bwssl
