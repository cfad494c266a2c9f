#pragma once

// Test-only helpers: random inputs, a central-difference gradient checker and
// independent loop-based reference implementations.

#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "bwssl/conv.hpp"
#include "bwssl/tensor.hpp"

namespace bwssl::testing {

inline Tensor<double> random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0,
                                    bool requires_grad = true) {
  std::uniform_real_distribution<double> dist(lo, hi);
  Tensor<double> t(std::move(shape));
  for (auto& v : t.mutable_data()) v = dist(rng);
  t.set_requires_grad(requires_grad);
  return t;
}

// Values bounded away from zero (keeps kinks and poles out of finite-difference stencils).
inline Tensor<double> random_away_from_zero(Shape shape, std::mt19937_64& rng, double lo = 0.2,
                                            double hi = 1.5) {
  std::uniform_real_distribution<double> mag(lo, hi);
  std::bernoulli_distribution sign(0.5);
  Tensor<double> t(std::move(shape));
  for (auto& v : t.mutable_data()) v = sign(rng) ? mag(rng) : -mag(rng);
  t.set_requires_grad(true);
  return t;
}

struct GradCheckResult {
  double max_relative_error = 0.0;  // worst over inputs of ||analytic - numeric|| / max norm
  bool finite = true;
};

/// Compares analytic gradients of `f` (scalar-valued) with central differences
/// of step `h`, input by input, using the norm-wise relative error.
inline GradCheckResult grad_check(const std::function<Tensor<double>(std::vector<Tensor<double>>&)>& f,
                                  std::vector<Tensor<double>> inputs, double h = 1e-5) {
  for (auto& t : inputs) t.zero_grad();
  auto loss = f(inputs);
  backward(loss);
  GradCheckResult res;
  for (auto& t : inputs) {
    const auto analytic = t.grad_or_zero();
    std::vector<double> numeric(t.numel());
    auto data = t.mutable_data();
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double orig = data[i];
      data[i] = orig + h;
      const double fp = f(inputs).item();
      data[i] = orig - h;
      const double fm = f(inputs).item();
      data[i] = orig;
      numeric[i] = (fp - fm) / (2 * h);
    }
    double diff = 0, na = 0, nn = 0;
    for (std::size_t i = 0; i < numeric.size(); ++i) {
      diff += (analytic[i] - numeric[i]) * (analytic[i] - numeric[i]);
      na += analytic[i] * analytic[i];
      nn += numeric[i] * numeric[i];
      if (!std::isfinite(analytic[i]) || !std::isfinite(numeric[i])) res.finite = false;
    }
    const double denom = std::max({std::sqrt(na), std::sqrt(nn), 1e-12});
    res.max_relative_error = std::max(res.max_relative_error, std::sqrt(diff) / denom);
  }
  return res;
}

/// Weighted sum with fixed random weights: turns any tensor into a scalar
/// whose gradient exercises every output element.
inline Tensor<double> random_projection(const Tensor<double>& y, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  auto w = random_tensor(y.shape(), rng, -1, 1, false);
  return sum_all(mul(y, w));
}

/// Straightforward nested-loop convolution (cross-correlation, zero padding).
inline std::vector<double> conv_oracle(const Tensor<double>& x, const Tensor<double>& k, std::size_t stride,
                                       std::size_t pad, std::size_t groups) {
  const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::size_t O = k.dim(0), KH = k.dim(2), KW = k.dim(3);
  const std::size_t Cg = C / groups, Og = O / groups;
  const std::size_t Ho = (H + 2 * pad - KH) / stride + 1, Wo = (W + 2 * pad - KW) / stride + 1;
  auto at = [&](std::size_t n, std::size_t c, long y, long xx) -> double {
    if (y < 0 || xx < 0 || y >= static_cast<long>(H) || xx >= static_cast<long>(W)) return 0.0;
    return x[((n * C + c) * H + static_cast<std::size_t>(y)) * W + static_cast<std::size_t>(xx)];
  };
  std::vector<double> out(N * O * Ho * Wo, 0.0);
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t o = 0; o < O; ++o)
      for (std::size_t oy = 0; oy < Ho; ++oy)
        for (std::size_t ox = 0; ox < Wo; ++ox) {
          double s = 0;
          const std::size_t g = o / Og;
          for (std::size_t ci = 0; ci < Cg; ++ci)
            for (std::size_t ky = 0; ky < KH; ++ky)
              for (std::size_t kx = 0; kx < KW; ++kx) {
                const long iy = static_cast<long>(oy * stride + ky) - static_cast<long>(pad);
                const long ix = static_cast<long>(ox * stride + kx) - static_cast<long>(pad);
                s += k[((o * Cg + ci) * KH + ky) * KW + kx] * at(n, g * Cg + ci, iy, ix);
              }
          out[((n * O + o) * Ho + oy) * Wo + ox] = s;
        }
  return out;
}

/// Double-loop cross-correlation matrix (optionally column-centred).
inline std::vector<double> correlation_oracle(const Tensor<double>& a, const Tensor<double>& b, bool center) {
  const std::size_t N = a.dim(0), D = a.dim(1);
  std::vector<double> A(a.data().begin(), a.data().end()), B(b.data().begin(), b.data().end());
  if (center) {
    for (std::size_t j = 0; j < D; ++j) {
      double ma = 0, mb = 0;
      for (std::size_t i = 0; i < N; ++i) {
        ma += A[i * D + j];
        mb += B[i * D + j];
      }
      ma /= static_cast<double>(N);
      mb /= static_cast<double>(N);
      for (std::size_t i = 0; i < N; ++i) {
        A[i * D + j] -= ma;
        B[i * D + j] -= mb;
      }
    }
  }
  std::vector<double> c(D * D);
  for (std::size_t i = 0; i < D; ++i)
    for (std::size_t j = 0; j < D; ++j) {
      double num = 0, sa = 0, sb = 0;
      for (std::size_t n = 0; n < N; ++n) {
        num += A[n * D + i] * B[n * D + j];
        sa += A[n * D + i] * A[n * D + i];
        sb += B[n * D + j] * B[n * D + j];
      }
      c[i * D + j] = num / (std::sqrt(sa) * std::sqrt(sb));
    }
  return c;
}

/// Direct evaluation of the redundancy-reduction objective from a matrix.
inline double barlow_oracle(const std::vector<double>& c, std::size_t D, double lambda,
                            const std::vector<double>& tau) {
  double inv = 0, red = 0;
  for (std::size_t i = 0; i < D; ++i)
    for (std::size_t j = 0; j < D; ++j) {
      const double v = c[i * D + j];
      if (i == j) {
        const double t = tau.size() == 1 ? tau[0] : tau[i];
        inv += (t - v) * (t - v);
      } else {
        red += v * v;
      }
    }
  return inv + lambda * red;
}

inline double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace bwssl::testing
