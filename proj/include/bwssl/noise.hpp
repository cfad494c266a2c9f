#pragma once

#include <cstdint>
#include <random>
#include <string>

#include "bwssl/ops.hpp"

namespace bwssl {

enum class NoiseMode { independent, shared_spatial };

inline std::string to_string(NoiseMode m) {
  return m == NoiseMode::independent ? "independent" : "shared-spatial";
}

inline NoiseMode noise_mode_from_string(const std::string& s) {
  if (s == "independent") return NoiseMode::independent;
  if (s == "shared-spatial") return NoiseMode::shared_spatial;
  throw ConfigError("unknown noise mode '" + s + "'");
}

/// Gaussian activation noise added at block inputs during training.
struct NoiseConfig {
  double sigma = 0.0;
  NoiseMode mode = NoiseMode::independent;
  // Also perturb the raw image entering block 1 (off: feature maps only).
  bool include_input = false;

  bool active() const { return sigma > 0.0; }
};

/// Adds zero-mean Gaussian noise to an NCHW activation. In shared-spatial
/// mode one draw per (n, h, w) is added to every channel at that position.
template <typename T>
Tensor<T> inject_noise(const Tensor<T>& x, const NoiseConfig& cfg, Rng& rng) {
  if (cfg.sigma < 0.0) throw ConfigError("noise sigma must be non-negative");
  if (!cfg.active()) return x;
  if (x.rank() != 4) throw ShapeError("inject_noise expects NCHW, got " + to_string(x.shape()));
  const std::size_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  std::normal_distribution<double> normal(0.0, cfg.sigma);
  std::vector<T> noise(x.numel());
  if (cfg.mode == NoiseMode::independent) {
    for (auto& v : noise) v = static_cast<T>(normal(rng));
  } else {
    for (std::size_t b = 0; b < n; ++b)
      for (std::size_t p = 0; p < hw; ++p) {
        const T v = static_cast<T>(normal(rng));
        for (std::size_t ch = 0; ch < c; ++ch) noise[(b * c + ch) * hw + p] = v;
      }
  }
  return add(x, Tensor<T>(x.shape(), std::move(noise)));
}

}  // namespace bwssl
