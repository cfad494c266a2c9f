#pragma once

#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include "bwssl/nn.hpp"

namespace bwssl {

/// lr(t) = base * 0.5 * (1 + cos(pi * progress)) after an optional linear warmup.
struct CosineSchedule {
  double base = 0.2;
  std::size_t total_steps = 1;
  std::size_t warmup_steps = 0;

  double operator()(std::size_t t) const {
    if (t > total_steps) {
      throw ConfigError(detail::concat("schedule step ", t, " beyond total ", total_steps));
    }
    if (t < warmup_steps) return base * static_cast<double>(t + 1) / static_cast<double>(warmup_steps);
    const std::size_t span = total_steps - warmup_steps;
    if (span == 0) return base;
    const double progress = static_cast<double>(t - warmup_steps) / static_cast<double>(span);
    return base * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
  }
};

struct LarsConfig {
  double momentum = 0.9;
  double weight_decay = 1e-6;
  double trust = 0.001;
  double eps = 1e-9;
};

namespace detail {

template <typename T>
void check_finite_grads(const NamedTensors<T>& params) {
  for (const auto& p : params) {
    if (!p.tensor.has_grad()) continue;
    const auto g = p.tensor.grad();
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (!std::isfinite(static_cast<double>(g[i]))) {
        throw NumericError(concat("non-finite gradient in '", p.name, "' at element ", i, "; step aborted"));
      }
    }
  }
}

template <typename T>
bool all_zero(std::span<const T> v) {
  for (auto x : v)
    if (x != T(0)) return false;
  return true;
}

}  // namespace detail

/// Layer-wise adaptive rate scaling with momentum. Tensors flagged `adapt`
/// get local rate trust*|w| / (|g| + wd*|w| + eps) and weight decay; the rest
/// (biases, batch-norm affine terms) take plain momentum SGD.
template <typename T>
class Lars {
 public:
  Lars() = default;
  Lars(NamedTensors<T> params, LarsConfig cfg) : params_(std::move(params)), cfg_(cfg) {
    for (const auto& p : params_) buffers_.emplace_back(p.tensor.numel(), T(0));
  }

  void step(double lr) {
    detail::check_finite_grads(params_);
    for (std::size_t k = 0; k < params_.size(); ++k) {
      auto& p = params_[k];
      auto& buf = buffers_[k];
      const auto g = p.tensor.grad_or_zero();
      if (detail::all_zero<T>(g) && detail::all_zero<T>(buf)) continue;
      auto w = p.tensor.mutable_data();
      const T m = static_cast<T>(cfg_.momentum);
      if (p.adapt) {
        double wn = 0, gn = 0;
        for (std::size_t i = 0; i < w.size(); ++i) {
          wn += static_cast<double>(w[i]) * w[i];
          gn += static_cast<double>(g[i]) * g[i];
        }
        wn = std::sqrt(wn);
        gn = std::sqrt(gn);
        const double denom = gn + cfg_.weight_decay * wn + cfg_.eps;
        const double local = (wn > 0 && denom > 0) ? cfg_.trust * wn / denom : 1.0;
        const T scale = static_cast<T>(local * lr);
        const T wd = static_cast<T>(cfg_.weight_decay);
        for (std::size_t i = 0; i < w.size(); ++i) {
          buf[i] = m * buf[i] + scale * (g[i] + wd * w[i]);
          w[i] -= buf[i];
        }
      } else {
        const T rate = static_cast<T>(lr);
        for (std::size_t i = 0; i < w.size(); ++i) {
          buf[i] = m * buf[i] + g[i];
          w[i] -= rate * buf[i];
        }
      }
    }
  }

  void zero_grad() {
    for (auto& p : params_) p.tensor.zero_grad();
  }

  const NamedTensors<T>& parameters() const { return params_; }
  const std::vector<std::vector<T>>& buffers() const { return buffers_; }
  const LarsConfig& config() const { return cfg_; }

 private:
  NamedTensors<T> params_;
  std::vector<std::vector<T>> buffers_;
  LarsConfig cfg_;
};

struct SgdConfig {
  double momentum = 0.9;
  double weight_decay = 0.0;
};

/// buf = m*buf + g + wd*w; w -= lr*buf.
template <typename T>
class Sgd {
 public:
  Sgd() = default;
  Sgd(NamedTensors<T> params, SgdConfig cfg) : params_(std::move(params)), cfg_(cfg) {
    for (const auto& p : params_) buffers_.emplace_back(p.tensor.numel(), T(0));
  }

  void step(double lr) {
    detail::check_finite_grads(params_);
    const T m = static_cast<T>(cfg_.momentum), wd = static_cast<T>(cfg_.weight_decay), rate = static_cast<T>(lr);
    for (std::size_t k = 0; k < params_.size(); ++k) {
      const auto g = params_[k].tensor.grad_or_zero();
      auto w = params_[k].tensor.mutable_data();
      auto& buf = buffers_[k];
      for (std::size_t i = 0; i < w.size(); ++i) {
        buf[i] = m * buf[i] + g[i] + wd * w[i];
        w[i] -= rate * buf[i];
      }
    }
  }

  void zero_grad() {
    for (auto& p : params_) p.tensor.zero_grad();
  }

 private:
  NamedTensors<T> params_;
  std::vector<std::vector<T>> buffers_;
  SgdConfig cfg_;
};

}  // namespace bwssl
