#pragma once

#include <cmath>
#include <optional>
#include <string>

#include "bwssl/nn.hpp"

namespace bwssl {

enum class PoolingKind { gsp, lsp, cbe_gsp, cbe_l2, cbe_sqrt };

inline std::string to_string(PoolingKind k) {
  switch (k) {
    case PoolingKind::gsp: return "gsp";
    case PoolingKind::lsp: return "lsp";
    case PoolingKind::cbe_gsp: return "cbe-gsp";
    case PoolingKind::cbe_l2: return "cbe-l2";
    case PoolingKind::cbe_sqrt: return "cbe-sqrt";
  }
  return "?";
}

inline PoolingKind pooling_kind_from_string(const std::string& s) {
  for (auto k : {PoolingKind::gsp, PoolingKind::lsp, PoolingKind::cbe_gsp, PoolingKind::cbe_l2,
                 PoolingKind::cbe_sqrt}) {
    if (to_string(k) == s) return k;
  }
  throw ConfigError("unknown pooling kind '" + s + "'");
}

inline bool is_expansion(PoolingKind k) {
  return k == PoolingKind::cbe_gsp || k == PoolingKind::cbe_l2 || k == PoolingKind::cbe_sqrt;
}

struct PoolingConfig {
  PoolingKind kind = PoolingKind::cbe_gsp;
  // LSP grid side; 0 picks the largest grid with channels*g*g <= target_width.
  std::size_t bins = 0;
  // Desired pooled width (LSP target, CbE expansion width).
  std::size_t target_width = 512;
  std::size_t filter_size = 1;
  std::size_t groups = 1;
};

/// Per-channel spatial mean: [N, C, H, W] -> [N, C].
template <typename T>
Tensor<T> gsp(const Tensor<T>& x) {
  if (x.rank() != 4) throw ShapeError("gsp expects NCHW, got " + to_string(x.shape()));
  return mean(x, {2, 3});
}

/// Means over a g x g grid of spatial bins, laid out bin-major (row-major bin
/// order) with channels contiguous inside each bin: [N, C, H, W] -> [N, g*g*C].
template <typename T>
Tensor<T> lsp(const Tensor<T>& x, std::size_t g) {
  if (x.rank() != 4) throw ShapeError("lsp expects NCHW, got " + to_string(x.shape()));
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (g == 0 || h % g != 0 || w % g != 0) {
    throw ConfigError(detail::concat("lsp: ", g, "x", g, " bins do not divide ", h, "x", w));
  }
  const std::size_t bh = h / g, bw = w / g;
  const std::size_t width = c * g * g;
  const T count = static_cast<T>(bh * bw);
  const auto xv = x.data();
  std::vector<T> out(n * width, T(0));
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t xx = 0; xx < w; ++xx) {
          const std::size_t bin = (y / bh) * g + xx / bw;
          out[b * width + bin * c + ch] += xv[((b * c + ch) * h + y) * w + xx];
        }
  for (auto& v : out) v /= count;
  return detail::make_result<T>({n, width}, std::move(out), "lsp", {x},
                                [x, n, c, h, w, g, bh, bw, width, count](std::span<const T> gr) {
                                  auto& gx = x.grad_buffer();
                                  for (std::size_t b = 0; b < n; ++b)
                                    for (std::size_t ch = 0; ch < c; ++ch)
                                      for (std::size_t y = 0; y < h; ++y)
                                        for (std::size_t xx = 0; xx < w; ++xx) {
                                          const std::size_t bin = (y / bh) * g + xx / bw;
                                          gx[((b * c + ch) * h + y) * w + xx] +=
                                              gr[b * width + bin * c + ch] / count;
                                        }
                                });
}

/// Largest LSP grid side that divides the map and keeps C*g*g <= target.
inline std::size_t choose_lsp_bins(std::size_t channels, std::size_t hw, std::size_t target) {
  std::size_t best = 1;
  for (std::size_t g = 1; g <= hw; ++g) {
    if (hw % g == 0 && channels * g * g <= target) best = g;
  }
  return best;
}

/// Reduction applied after an expansion convolution.
template <typename T>
Tensor<T> expansion_reduce(const Tensor<T>& expanded, PoolingKind kind) {
  switch (kind) {
    case PoolingKind::cbe_gsp: return gsp(expanded);
    case PoolingKind::cbe_l2: return sqrt(mean(square(expanded), {2, 3}));
    case PoolingKind::cbe_sqrt: return mean(signed_sqrt(expanded), {2, 3});
    default: throw ConfigError("expansion_reduce: not an expansion pooling kind");
  }
}

/// A block head's pooling stage. Expansion variants own a trainable
/// convolution that belongs to the block's local parameter set.
template <typename T>
class Pooling {
 public:
  Pooling() = default;
  Pooling(const PoolingConfig& cfg, std::size_t channels, std::size_t spatial) : cfg_(cfg) {
    switch (cfg.kind) {
      case PoolingKind::gsp: width_ = channels; break;
      case PoolingKind::lsp:
        bins_ = cfg.bins ? cfg.bins : choose_lsp_bins(channels, spatial, cfg.target_width);
        if (spatial % bins_ != 0) {
          throw ConfigError(detail::concat("lsp: ", bins_, " bins do not divide spatial size ", spatial));
        }
        width_ = channels * bins_ * bins_;
        break;
      default:
        if (cfg.target_width < channels) {
          throw ConfigError(detail::concat("expansion width ", cfg.target_width,
                                           " smaller than block channels ", channels));
        }
        if (cfg.filter_size % 2 == 0) throw ConfigError("expansion filter size must be odd");
        expand_.emplace(channels, cfg.target_width, cfg.filter_size, 1, cfg.filter_size / 2, cfg.groups);
        width_ = cfg.target_width;
    }
  }

  void init(std::uint64_t seed, const std::string& prefix) {
    if (expand_) expand_->init(seed, prefix + "/expand/weight");
  }

  Tensor<T> forward(const Tensor<T>& x) {
    switch (cfg_.kind) {
      case PoolingKind::gsp: return gsp(x);
      case PoolingKind::lsp: return lsp(x, bins_);
      default:
        if (cfg_.kind == PoolingKind::cbe_gsp && cfg_.filter_size == 1) {
          // Spatial mean commutes with a 1x1 convolution: expand the pooled vector instead.
          const std::size_t n = x.dim(0), c = x.dim(1);
          return reshape(expand_->forward(reshape(gsp(x), {n, c, 1, 1})), {n, width_});
        }
        return expansion_reduce(expand_->forward(x), cfg_.kind);
    }
  }

  std::size_t output_width() const { return width_; }
  std::size_t bins() const { return bins_; }
  const PoolingConfig& config() const { return cfg_; }
  std::optional<Conv2d<T>>& expansion() { return expand_; }

  void parameters(const std::string& prefix, NamedTensors<T>& out) {
    if (expand_) expand_->parameters(prefix + "/expand", out);
  }

 private:
  PoolingConfig cfg_;
  std::size_t bins_ = 1;
  std::size_t width_ = 0;
  std::optional<Conv2d<T>> expand_;
};

}  // namespace bwssl
