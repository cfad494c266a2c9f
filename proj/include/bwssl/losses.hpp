#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "bwssl/ops.hpp"

namespace bwssl {

enum class LossKind { barlow_twins, simclr, vicreg, supervised_ce };

inline std::string to_string(LossKind k) {
  switch (k) {
    case LossKind::barlow_twins: return "barlow-twins";
    case LossKind::simclr: return "simclr";
    case LossKind::vicreg: return "vicreg";
    case LossKind::supervised_ce: return "supervised-ce";
  }
  return "?";
}

inline LossKind loss_kind_from_string(const std::string& s) {
  for (auto k : {LossKind::barlow_twins, LossKind::simclr, LossKind::vicreg, LossKind::supervised_ce}) {
    if (to_string(k) == s) return k;
  }
  throw ConfigError("unknown loss kind '" + s + "'");
}

struct VicRegCoefficients {
  double invariance = 25.0;
  double variance = 25.0;
  double covariance = 1.0;
};

struct BlockLossConfig {
  LossKind kind = LossKind::barlow_twins;
  double lambda = 0.0051;   // redundancy-reduction weight
  double tau = 1.0;         // invariance target for every diagonal entry
  bool center = true;       // mean-centre embedding columns before correlating
  double temperature = 0.5;
  VicRegCoefficients vicreg;
  std::size_t classes = 10;

  void validate() const {
    if (!(lambda > 0.0)) throw ConfigError("lambda must be positive");
    if (!(tau > 0.0 && tau <= 1.0)) throw ConfigError("invariance target must lie in (0, 1]");
    if (!(temperature > 0.0)) throw ConfigError("temperature must be positive");
    if (kind == LossKind::supervised_ce && classes < 2) throw ConfigError("need at least 2 classes");
  }
};

inline constexpr double kNormEpsilon = 1e-12;

/// Scalar loss plus its two named components (zero where a loss has no such
/// split).
template <typename T>
struct LossTerms {
  Tensor<T> loss;
  double invariance = 0.0;
  double redundancy = 0.0;
};

namespace detail {

template <typename T>
Tensor<T> identity_mask(std::size_t d, T on, T off) {
  Tensor<T> m(Shape{d, d}, off);
  for (std::size_t i = 0; i < d; ++i) m.mutable_data()[i * d + i] = on;
  return m;
}

template <typename T>
void check_views(const Tensor<T>& a, const Tensor<T>& b, const char* what) {
  if (a.rank() != 2 || a.shape() != b.shape()) {
    throw ShapeError(concat(what, ": views must be matching [N, D] matrices, got ", to_string(a.shape()),
                            " and ", to_string(b.shape())));
  }
  if (a.dim(0) < 2) throw ShapeError(concat(what, ": batch size must be at least 2"));
}

template <typename T>
Tensor<T> scale_rows(const Tensor<T>& z, const std::vector<double>& factors) {
  const std::size_t n = z.dim(0), d = z.dim(1);
  std::vector<T> m(n * d);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) m[i * d + j] = static_cast<T>(factors[i]);
  return mul(z, Tensor<T>(z.shape(), std::move(m)));
}

template <typename T>
Tensor<T> center_columns(const Tensor<T>& z) {
  return sub(z, mean(z, {0}));
}

}  // namespace detail

/// D x D matrix C_ij = sum_b zA_bi zB_bj / (|zA_:i| |zB_:j|). With `center`,
/// columns are mean-subtracted first. Optional per-example weights w_b enter
/// as a sqrt(w_b) row scaling of both (centred) views.
template <typename T>
Tensor<T> cross_correlation(const Tensor<T>& za, const Tensor<T>& zb, bool center = true,
                            const std::vector<double>* weights = nullptr) {
  detail::check_views(za, zb, "cross_correlation");
  auto a = center ? detail::center_columns(za) : za;
  auto b = center ? detail::center_columns(zb) : zb;
  if (weights) {
    if (weights->size() != za.dim(0)) throw ShapeError("cross_correlation: weight count mismatch");
    std::vector<double> root(weights->size());
    for (std::size_t i = 0; i < root.size(); ++i) root[i] = std::sqrt(std::max(0.0, (*weights)[i]));
    a = detail::scale_rows(a, root);
    b = detail::scale_rows(b, root);
  }
  const std::size_t d = za.dim(1);
  auto na = reshape(sqrt(sum(square(a), {0})), {d, 1});
  auto nb = reshape(sqrt(sum(square(b), {0})), {1, d});
  auto num = matmul(transpose(a), b);
  return div(num, matmul(na, nb));
}

/// sum_i (tau_i - C_ii)^2 + lambda * sum_{i != j} C_ij^2.
template <typename T>
LossTerms<T> barlow_twins_loss(const Tensor<T>& c, double lambda, const std::vector<double>& tau) {
  if (c.rank() != 2 || c.dim(0) != c.dim(1)) {
    throw ShapeError("barlow_twins_loss expects a square matrix, got " + to_string(c.shape()));
  }
  const std::size_t d = c.dim(0);
  if (tau.size() != d && tau.size() != 1) throw ShapeError("invariance target size mismatch");
  Tensor<T> target(Shape{d, d}, T(0));
  for (std::size_t i = 0; i < d; ++i) {
    target.mutable_data()[i * d + i] = static_cast<T>(tau.size() == 1 ? tau[0] : tau[i]);
  }
  auto on = detail::identity_mask<T>(d, T(1), T(0));
  auto off = detail::identity_mask<T>(d, T(0), T(1));
  auto inv = sum_all(square(sub(mul(c, on), target)));
  auto red = sum_all(square(mul(c, off)));
  LossTerms<T> out;
  out.loss = add(inv, mul(red, static_cast<T>(lambda)));
  out.invariance = static_cast<double>(inv.item());
  out.redundancy = static_cast<double>(red.item());
  return out;
}

template <typename T>
LossTerms<T> barlow_twins_loss(const Tensor<T>& c, double lambda, double tau = 1.0) {
  return barlow_twins_loss(c, lambda, std::vector<double>{tau});
}

/// Normalised-temperature cross-entropy over the 2N x 2N cosine-similarity
/// graph with self-pairs excluded, averaged over (optionally weighted) anchors.
template <typename T>
LossTerms<T> simclr_loss(const Tensor<T>& za, const Tensor<T>& zb, double temperature,
                         const std::vector<double>* weights = nullptr) {
  detail::check_views(za, zb, "simclr_loss");
  const std::size_t n = za.dim(0), m = 2 * n;
  auto z = normalize_rows(concat_rows(za, zb), static_cast<T>(kNormEpsilon));
  auto sim = mul(matmul(z, transpose(z)), static_cast<T>(1.0 / temperature));
  auto logp = log_softmax_rows(add(sim, detail::identity_mask<T>(m, T(-1e30), T(0))));
  if (weights && weights->size() != n) throw ShapeError("simclr_loss: weight count mismatch");
  Tensor<T> pick(Shape{m, m}, T(0));
  double total = 0;
  for (std::size_t i = 0; i < m; ++i) {
    const double w = weights ? (*weights)[i % n] : 1.0;
    pick.mutable_data()[i * m + (i + n) % m] = static_cast<T>(w);
    total += w;
  }
  LossTerms<T> out;
  out.loss = mul(sum_all(mul(logp, pick)), static_cast<T>(-1.0 / std::max(total, kNormEpsilon)));
  out.invariance = static_cast<double>(out.loss.item());
  return out;
}

/// inv * MSE(zA, zB) + var * sum_views mean_i relu(1 - std_i)
///   + cov * sum_views (sum_{i != j} Cov_ij^2) / D.
/// `invariance` reports the MSE term, `redundancy` the covariance term.
template <typename T>
LossTerms<T> vicreg_loss(const Tensor<T>& za, const Tensor<T>& zb, const VicRegCoefficients& k = {},
                         const std::vector<double>* weights = nullptr) {
  detail::check_views(za, zb, "vicreg_loss");
  const std::size_t n = za.dim(0), d = za.dim(1);
  auto diff2 = square(sub(za, zb));
  Tensor<T> inv;
  if (weights) {
    if (weights->size() != n) throw ShapeError("vicreg_loss: weight count mismatch");
    double total = 0;
    for (auto w : *weights) total += w;
    auto weighted = detail::scale_rows(diff2, *weights);
    inv = div(sum_all(weighted), static_cast<T>(std::max(total, kNormEpsilon) * static_cast<double>(d)));
  } else {
    inv = mean_all(diff2);
  }
  auto off = detail::identity_mask<T>(d, T(0), T(1));
  auto view_terms = [&](const Tensor<T>& z) {
    auto zc = detail::center_columns(z);
    auto var = div(sum(square(zc), {0}), static_cast<T>(n - 1));
    auto stdev = sqrt(add(var, static_cast<T>(kNormEpsilon)));
    auto hinge = mean_all(relu(sub(T(1), stdev)));
    auto cov = div(matmul(transpose(zc), zc), static_cast<T>(n - 1));
    auto cov_term = div(sum_all(square(mul(cov, off))), static_cast<T>(d));
    return std::make_pair(hinge, cov_term);
  };
  auto [ha, ca] = view_terms(za);
  auto [hb, cb] = view_terms(zb);
  auto var_term = add(ha, hb);
  auto cov_term = add(ca, cb);
  LossTerms<T> out;
  out.loss = add(add(mul(inv, static_cast<T>(k.invariance)), mul(var_term, static_cast<T>(k.variance))),
                 mul(cov_term, static_cast<T>(k.covariance)));
  out.invariance = static_cast<double>(inv.item());
  out.redundancy = static_cast<double>(cov_term.item());
  return out;
}

/// Mean negative log-softmax of the true class.
template <typename T>
LossTerms<T> supervised_ce_loss(const Tensor<T>& logits, const std::vector<int>& labels,
                                const std::vector<double>* weights = nullptr) {
  if (logits.rank() != 2 || logits.dim(0) != labels.size()) {
    throw ShapeError("supervised_ce_loss: logits " + to_string(logits.shape()) + " vs " +
                     std::to_string(labels.size()) + " labels");
  }
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  Tensor<T> pick(Shape{n, k}, T(0));
  double total = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= k) {
      throw ConfigError(detail::concat("label ", labels[i], " outside [0, ", k, ")"));
    }
    const double w = weights ? (*weights)[i] : 1.0;
    pick.mutable_data()[i * k + static_cast<std::size_t>(labels[i])] = static_cast<T>(w);
    total += w;
  }
  LossTerms<T> out;
  out.loss = mul(sum_all(mul(log_softmax_rows(logits), pick)), static_cast<T>(-1.0 / std::max(total, kNormEpsilon)));
  out.invariance = static_cast<double>(out.loss.item());
  return out;
}

/// The configured objective on two embedding views. The supervised loss
/// averages the cross-entropy of both views.
template <typename T>
LossTerms<T> block_loss(const BlockLossConfig& cfg, const Tensor<T>& za, const Tensor<T>& zb,
                        const std::vector<int>* labels = nullptr, const std::vector<double>* weights = nullptr) {
  switch (cfg.kind) {
    case LossKind::barlow_twins:
      return barlow_twins_loss(cross_correlation(za, zb, cfg.center, weights), cfg.lambda, cfg.tau);
    case LossKind::simclr: return simclr_loss(za, zb, cfg.temperature, weights);
    case LossKind::vicreg: return vicreg_loss(za, zb, cfg.vicreg, weights);
    case LossKind::supervised_ce: {
      if (!labels) throw ConfigError("supervised loss needs labels");
      auto a = supervised_ce_loss(za, *labels, weights);
      auto b = supervised_ce_loss(zb, *labels, weights);
      LossTerms<T> out;
      out.loss = mul(add(a.loss, b.loss), T(0.5));
      out.invariance = static_cast<double>(out.loss.item());
      return out;
    }
  }
  throw ConfigError("unknown loss kind");
}

/// Per-example difficulty used for routing. For Barlow Twins this is each
/// example's share of the invariance term: sum_i (a_bi - b_bi)^2 over
/// column-normalised (optionally centred) embeddings, since
/// sum_b (a_bi - b_bi)^2 = 2 - 2 C_ii.
template <typename T>
std::vector<double> per_example_difficulty(const BlockLossConfig& cfg, const Tensor<T>& za,
                                           const Tensor<T>& zb, const std::vector<int>* labels = nullptr) {
  const std::size_t n = za.dim(0), d = za.dim(1);
  std::vector<double> out(n, 0.0);
  const auto av = za.data();
  const auto bv = zb.data();
  switch (cfg.kind) {
    case LossKind::barlow_twins: {
      auto normalized = [&](std::span<const T> v) {
        std::vector<double> z(v.begin(), v.end());
        for (std::size_t j = 0; j < d; ++j) {
          double mu = 0;
          if (cfg.center) {
            for (std::size_t i = 0; i < n; ++i) mu += z[i * d + j];
            mu /= static_cast<double>(n);
          }
          double ss = 0;
          for (std::size_t i = 0; i < n; ++i) ss += (z[i * d + j] - mu) * (z[i * d + j] - mu);
          const double nrm = std::max(std::sqrt(ss), kNormEpsilon);
          for (std::size_t i = 0; i < n; ++i) z[i * d + j] = (z[i * d + j] - mu) / nrm;
        }
        return z;
      };
      const auto a = normalized(av);
      const auto b = normalized(bv);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) out[i] += (a[i * d + j] - b[i * d + j]) * (a[i * d + j] - b[i * d + j]);
      break;
    }
    case LossKind::supervised_ce: {
      if (!labels) throw ConfigError("supervised difficulty needs labels");
      for (std::size_t i = 0; i < n; ++i) {
        const T* row = av.data() + i * d;
        const double mx = *std::max_element(row, row + d);
        double s = 0;
        for (std::size_t j = 0; j < d; ++j) s += std::exp(row[j] - mx);
        out[i] = mx + std::log(s) - row[(*labels)[i]];
      }
      break;
    }
    default: {
      // Cosine distance between the two views of each example.
      for (std::size_t i = 0; i < n; ++i) {
        double dot = 0, na = 0, nb = 0;
        for (std::size_t j = 0; j < d; ++j) {
          dot += av[i * d + j] * bv[i * d + j];
          na += av[i * d + j] * av[i * d + j];
          nb += bv[i * d + j] * bv[i * d + j];
        }
        out[i] = 1.0 - dot / std::max(std::sqrt(na * nb), kNormEpsilon);
      }
    }
  }
  return out;
}

}  // namespace bwssl
