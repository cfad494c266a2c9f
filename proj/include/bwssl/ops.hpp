#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "bwssl/tensor.hpp"

namespace bwssl {

namespace detail {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMat = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMapMat = Eigen::Map<const RowMat<T>>;

template <typename T>
Tensor<T> make_result(Shape shape, std::vector<T> values, std::string op,
                      std::vector<Tensor<T>> inputs,
                      std::function<void(std::span<const T>)> backward_rule) {
  Tensor<T> out(std::move(shape), std::move(values));
  const bool needs = grad_enabled() && std::any_of(inputs.begin(), inputs.end(),
                                 [](const Tensor<T>& t) { return t.requires_grad(); });
  if (needs) {
    out.set_requires_grad(true);
    auto fn = std::make_shared<GradFn<T>>();
    fn->op = std::move(op);
    fn->inputs = std::move(inputs);
    fn->backward = std::move(backward_rule);
    out.set_grad_fn(std::move(fn));
  }
  return out;
}

template <typename T>
T clamp_divisor(T v) {
  const T eps = static_cast<T>(kDivEpsilon);
  if (std::abs(v) < eps) {
    warnings().division_clamps.fetch_add(1, std::memory_order_relaxed);
    return v < T(0) ? -eps : eps;
  }
  return v;
}

// Broadcast layout of a binary operation. The smaller operand is either a
// single value or matches the trailing axes of the larger one.
struct Broadcast {
  Shape out;
  std::size_t na;
  std::size_t nb;
};

inline bool is_suffix(const Shape& small, const Shape& big) {
  if (small.size() > big.size()) return false;
  return std::equal(small.rbegin(), small.rend(), big.rbegin());
}

template <typename T>
Broadcast broadcast(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.shape() == b.shape()) return {a.shape(), a.numel(), b.numel()};
  if (b.numel() == 1 || is_suffix(b.shape(), a.shape())) return {a.shape(), a.numel(), b.numel()};
  if (a.numel() == 1 || is_suffix(a.shape(), b.shape())) return {b.shape(), a.numel(), b.numel()};
  throw ShapeError(concat(op, ": shapes ", to_string(a.shape()), " and ", to_string(b.shape()),
                          " are not broadcast-compatible"));
}

// Sums a broadcast gradient back down to an operand with `n` elements.
template <typename T, typename F>
void reduce_into(std::vector<T>& dst, std::size_t total, F&& value_at) {
  const std::size_t n = dst.size();
  for (std::size_t i = 0; i < total; ++i) dst[i % n] += value_at(i);
}

template <typename T, typename Fwd, typename Da, typename Db>
Tensor<T> binary(const Tensor<T>& a, const Tensor<T>& b, const char* op, Fwd fwd, Da da, Db db) {
  const auto bc = broadcast(a, b, op);
  const std::size_t n = numel(bc.out);
  std::vector<T> out(n);
  const auto av = a.data();
  const auto bv = b.data();
  const std::size_t na = bc.na, nb = bc.nb;
  for (std::size_t i = 0; i < n; ++i) out[i] = fwd(av[i % na], bv[i % nb]);
  return make_result<T>(bc.out, std::move(out), op, {a, b},
                        [a, b, n, na, nb, da, db](std::span<const T> g) {
                          const auto av = a.data();
                          const auto bv = b.data();
                          if (a.requires_grad()) {
                            reduce_into(a.grad_buffer(), n, [&](std::size_t i) {
                              return g[i] * da(av[i % na], bv[i % nb]);
                            });
                          }
                          if (b.requires_grad()) {
                            reduce_into(b.grad_buffer(), n, [&](std::size_t i) {
                              return g[i] * db(av[i % na], bv[i % nb]);
                            });
                          }
                        });
}

// Elementwise unary op whose derivative is expressed through input x and
// output y.
template <typename T, typename Fwd, typename Deriv>
Tensor<T> unary(const Tensor<T>& a, const char* op, Fwd fwd, Deriv deriv) {
  const auto av = a.data();
  std::vector<T> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = fwd(av[i]);
  auto result = make_result<T>(a.shape(), std::move(out), op, {a}, nullptr);
  if (result.requires_grad()) {
    auto ys = result.storage();
    result.grad_fn()->backward = [a, ys, deriv](std::span<const T> g) {
      auto& ga = a.grad_buffer();
      const auto av = a.data();
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i] * deriv(av[i], (*ys)[i]);
    };
  }
  return result;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary<T>(
      a, b, "add", [](T x, T y) { return x + y; }, [](T, T) { return T(1); },
      [](T, T) { return T(1); });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary<T>(
      a, b, "sub", [](T x, T y) { return x - y; }, [](T, T) { return T(1); },
      [](T, T) { return T(-1); });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary<T>(
      a, b, "mul", [](T x, T y) { return x * y; }, [](T, T y) { return y; },
      [](T x, T) { return x; });
}

/// a / b with divisors of magnitude below kDivEpsilon clamped (and counted).
template <typename T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary<T>(
      a, b, "div", [](T x, T y) { return x / detail::clamp_divisor(y); },
      [](T, T y) { return T(1) / detail::clamp_divisor(y); },
      [](T x, T y) {
        const T c = detail::clamp_divisor(y);
        return -x / (c * c);
      });
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, T s) {
  return detail::unary<T>(a, "add_scalar", [s](T x) { return x + s; }, [](T, T) { return T(1); });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, T s) {
  return detail::unary<T>(a, "mul_scalar", [s](T x) { return x * s; }, [s](T, T) { return s; });
}

template <typename T>
Tensor<T> sub(T s, const Tensor<T>& a) {
  return detail::unary<T>(a, "rsub_scalar", [s](T x) { return s - x; }, [](T, T) { return T(-1); });
}

template <typename T>
Tensor<T> div(const Tensor<T>& a, T s) {
  const T d = detail::clamp_divisor(s);
  return detail::unary<T>(a, "div_scalar", [d](T x) { return x / d; }, [d](T, T) { return T(1) / d; });
}

template <typename T>
Tensor<T> neg(const Tensor<T>& a) {
  return mul(a, T(-1));
}

template <typename T>
Tensor<T> square(const Tensor<T>& a) {
  return detail::unary<T>(a, "square", [](T x) { return x * x; }, [](T x, T) { return T(2) * x; });
}

/// Square root; the derivative 1/(2*sqrt(x)) clamps its divisor at zero.
template <typename T>
Tensor<T> sqrt(const Tensor<T>& a) {
  return detail::unary<T>(
      a, "sqrt", [](T x) { return std::sqrt(x); },
      [](T, T y) { return T(1) / (T(2) * detail::clamp_divisor(y)); });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& a) {
  return detail::unary<T>(
      a, "relu", [](T x) { return x > T(0) ? x : T(0); },
      [](T x, T) { return x > T(0) ? T(1) : T(0); });
}

template <typename T>
Tensor<T> exp(const Tensor<T>& a) {
  return detail::unary<T>(a, "exp", [](T x) { return std::exp(x); }, [](T, T y) { return y; });
}

template <typename T>
Tensor<T> log(const Tensor<T>& a) {
  auto guarded = [](T x) {
    const T tiny = std::numeric_limits<T>::min();
    if (x < tiny) {
      warnings().log_clamps.fetch_add(1, std::memory_order_relaxed);
      return tiny;
    }
    return x;
  };
  return detail::unary<T>(
      a, "log", [guarded](T x) { return std::log(guarded(x)); },
      [guarded](T x, T) { return T(1) / guarded(x); });
}

/// sign(x) * sqrt(|x|).
template <typename T>
Tensor<T> signed_sqrt(const Tensor<T>& a) {
  return detail::unary<T>(
      a, "signed_sqrt",
      [](T x) { return x < T(0) ? -std::sqrt(-x) : std::sqrt(x); },
      [](T, T y) { return T(1) / (T(2) * detail::clamp_divisor(std::abs(y))); });
}

// ---------------------------------------------------------------------------
// Graph utilities
// ---------------------------------------------------------------------------

/// Identity forward; contributes nothing to the gradient of its input.
template <typename T>
Tensor<T> stop_gradient(const Tensor<T>& t) {
  return t.detach();
}

template <typename T>
Tensor<T> constant_like(const Tensor<T>& t, T v) {
  return Tensor<T>(t.shape(), v);
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
  if (numel(shape) != a.numel()) {
    throw ShapeError(detail::concat("reshape ", to_string(a.shape()), " -> ", to_string(shape)));
  }
  auto out = Tensor<T>::alias(std::move(shape), a.storage());
  if (grad_enabled() && a.requires_grad()) {
    out.set_requires_grad(true);
    auto fn = std::make_shared<GradFn<T>>();
    fn->op = "reshape";
    fn->inputs = {a};
    fn->backward = [a](std::span<const T> g) {
      auto& ga = a.grad_buffer();
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i];
    };
    out.set_grad_fn(std::move(fn));
  }
  return out;
}

/// Concatenates two tensors along axis 0.
template <typename T>
Tensor<T> concat_rows(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() == 0 || a.rank() != b.rank() ||
      !std::equal(a.shape().begin() + 1, a.shape().end(), b.shape().begin() + 1)) {
    throw ShapeError(detail::concat("concat_rows: ", to_string(a.shape()), " vs ",
                                    to_string(b.shape())));
  }
  Shape shape = a.shape();
  shape[0] += b.dim(0);
  std::vector<T> out(a.data().begin(), a.data().end());
  out.insert(out.end(), b.data().begin(), b.data().end());
  const std::size_t na = a.numel();
  return detail::make_result<T>(shape, std::move(out), "concat_rows", {a, b},
                                [a, b, na](std::span<const T> g) {
                                  if (a.requires_grad()) {
                                    auto& ga = a.grad_buffer();
                                    for (std::size_t i = 0; i < na; ++i) ga[i] += g[i];
                                  }
                                  if (b.requires_grad()) {
                                    auto& gb = b.grad_buffer();
                                    for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += g[na + i];
                                  }
                                });
}

// ---------------------------------------------------------------------------
// Linear algebra
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw ShapeError(detail::concat("matmul: ", to_string(a.shape()), " x ", to_string(b.shape())));
  }
  const auto m = static_cast<Eigen::Index>(a.dim(0));
  const auto k = static_cast<Eigen::Index>(a.dim(1));
  const auto n = static_cast<Eigen::Index>(b.dim(1));
  std::vector<T> out(static_cast<std::size_t>(m * n));
  detail::MapMat<T>(out.data(), m, n).noalias() =
      detail::ConstMapMat<T>(a.data().data(), m, k) * detail::ConstMapMat<T>(b.data().data(), k, n);
  return detail::make_result<T>(
      {a.dim(0), b.dim(1)}, std::move(out), "matmul", {a, b}, [a, b, m, k, n](std::span<const T> g) {
        detail::ConstMapMat<T> G(g.data(), m, n);
        if (a.requires_grad()) {
          detail::MapMat<T>(a.grad_buffer().data(), m, k).noalias() +=
              G * detail::ConstMapMat<T>(b.data().data(), k, n).transpose();
        }
        if (b.requires_grad()) {
          detail::MapMat<T>(b.grad_buffer().data(), k, n).noalias() +=
              detail::ConstMapMat<T>(a.data().data(), m, k).transpose() * G;
        }
      });
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& a) {
  if (a.rank() != 2) throw ShapeError("transpose expects a matrix, got " + to_string(a.shape()));
  const std::size_t r = a.dim(0), c = a.dim(1);
  std::vector<T> out(r * c);
  const auto av = a.data();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = av[i * c + j];
  return detail::make_result<T>({c, r}, std::move(out), "transpose", {a},
                                [a, r, c](std::span<const T> g) {
                                  auto& ga = a.grad_buffer();
                                  for (std::size_t i = 0; i < r; ++i)
                                    for (std::size_t j = 0; j < c; ++j) ga[i * c + j] += g[j * r + i];
                                });
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

enum class ReduceKind { sum, mean, max };

/// Reduces over `axes` (duplicates ignored). Reduced axes are dropped from the
/// result unless keepdims is set.
template <typename T>
Tensor<T> reduce(ReduceKind kind, const Tensor<T>& t, std::vector<std::size_t> axes,
                 bool keepdims = false) {
  const auto& shape = t.shape();
  std::vector<bool> reduced(shape.size(), false);
  for (auto ax : axes) {
    if (ax >= shape.size()) {
      throw ShapeError(detail::concat("reduce: axis ", ax, " out of range for ", to_string(shape)));
    }
    reduced[ax] = true;
  }
  std::size_t count = 1;
  Shape out_shape;
  for (std::size_t d = 0; d < shape.size(); ++d) {
    if (reduced[d]) {
      count *= shape[d];
      if (keepdims) out_shape.push_back(1);
    } else {
      out_shape.push_back(shape[d]);
    }
  }
  if (count == 0 || t.numel() == 0) throw ShapeError("reduce over an empty axis");

  // Sum/mean over one contiguous run of axes: view the input as
  // [outer, count, inner] and reduce the middle dimension.
  std::vector<std::size_t> sorted_axes(axes);
  std::sort(sorted_axes.begin(), sorted_axes.end());
  sorted_axes.erase(std::unique(sorted_axes.begin(), sorted_axes.end()), sorted_axes.end());
  if (kind != ReduceKind::max && !sorted_axes.empty() &&
      sorted_axes.back() - sorted_axes.front() + 1 == sorted_axes.size()) {
    std::size_t outer = 1, inner = 1;
    for (std::size_t d = 0; d < sorted_axes.front(); ++d) outer *= shape[d];
    for (std::size_t d = sorted_axes.back() + 1; d < shape.size(); ++d) inner *= shape[d];
    const auto tv = t.data();
    std::vector<T> out(outer * inner, T(0));
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t m = 0; m < count; ++m) {
        const T* src = tv.data() + (o * count + m) * inner;
        T* dst = out.data() + o * inner;
        for (std::size_t i = 0; i < inner; ++i) dst[i] += src[i];
      }
    const T scale = kind == ReduceKind::mean ? T(1) / static_cast<T>(count) : T(1);
    if (kind == ReduceKind::mean) {
      for (auto& v : out) v /= static_cast<T>(count);
    }
    return detail::make_result<T>(out_shape, std::move(out), "reduce", {t},
                                  [t, outer, count, inner, scale](std::span<const T> g) {
                                    auto& gt = t.grad_buffer();
                                    for (std::size_t o = 0; o < outer; ++o)
                                      for (std::size_t m = 0; m < count; ++m) {
                                        T* dst = gt.data() + (o * count + m) * inner;
                                        const T* src = g.data() + o * inner;
                                        for (std::size_t i = 0; i < inner; ++i) dst[i] += src[i] * scale;
                                      }
                                  });
  }

  // General case: flat input index -> flat output index.
  const std::size_t n = t.numel();
  auto target = std::make_shared<std::vector<std::size_t>>(n);
  {
    std::vector<std::size_t> idx(shape.size(), 0);
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t o = 0;
      for (std::size_t d = 0; d < shape.size(); ++d) {
        if (!reduced[d]) o = o * shape[d] + idx[d];
      }
      (*target)[i] = o;
      for (std::size_t d = shape.size(); d-- > 0;) {
        if (++idx[d] < shape[d]) break;
        idx[d] = 0;
      }
    }
  }
  const std::size_t m = numel(out_shape);
  const auto tv = t.data();
  std::vector<T> out(m, kind == ReduceKind::max ? -std::numeric_limits<T>::infinity() : T(0));
  auto argmax = std::make_shared<std::vector<std::size_t>>();
  if (kind == ReduceKind::max) {
    argmax->assign(m, 0);
    for (std::size_t i = 0; i < n; ++i) {
      const auto o = (*target)[i];
      if (tv[i] > out[o]) {
        out[o] = tv[i];
        (*argmax)[o] = i;
      }
    }
  } else {
    for (std::size_t i = 0; i < n; ++i) out[(*target)[i]] += tv[i];
    if (kind == ReduceKind::mean) {
      for (auto& v : out) v /= static_cast<T>(count);
    }
  }
  return detail::make_result<T>(
      out_shape, std::move(out), "reduce", {t}, [t, kind, target, argmax, count](std::span<const T> g) {
        auto& gt = t.grad_buffer();
        if (kind == ReduceKind::max) {
          for (std::size_t o = 0; o < g.size(); ++o) gt[(*argmax)[o]] += g[o];
          return;
        }
        const T scale = kind == ReduceKind::mean ? T(1) / static_cast<T>(count) : T(1);
        for (std::size_t i = 0; i < gt.size(); ++i) gt[i] += g[(*target)[i]] * scale;
      });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& t, std::vector<std::size_t> axes, bool keepdims = false) {
  return reduce(ReduceKind::sum, t, std::move(axes), keepdims);
}

template <typename T>
Tensor<T> mean(const Tensor<T>& t, std::vector<std::size_t> axes, bool keepdims = false) {
  return reduce(ReduceKind::mean, t, std::move(axes), keepdims);
}

template <typename T>
Tensor<T> sum_all(const Tensor<T>& t) {
  std::vector<std::size_t> axes(t.rank());
  std::iota(axes.begin(), axes.end(), std::size_t{0});
  if (axes.empty()) return reshape(t, {});
  return reduce(ReduceKind::sum, t, axes);
}

template <typename T>
Tensor<T> mean_all(const Tensor<T>& t) {
  std::vector<std::size_t> axes(t.rank());
  std::iota(axes.begin(), axes.end(), std::size_t{0});
  if (axes.empty()) return reshape(t, {});
  return reduce(ReduceKind::mean, t, axes);
}

// ---------------------------------------------------------------------------
// Row-wise helpers used by the contrastive and supervised losses
// ---------------------------------------------------------------------------

/// Row-wise log-softmax of a matrix.
template <typename T>
Tensor<T> log_softmax_rows(const Tensor<T>& x) {
  if (x.rank() != 2) throw ShapeError("log_softmax_rows expects a matrix");
  const std::size_t r = x.dim(0), c = x.dim(1);
  const auto xv = x.data();
  std::vector<T> out(r * c);
  for (std::size_t i = 0; i < r; ++i) {
    const T* row = xv.data() + i * c;
    const T mx = *std::max_element(row, row + c);
    T s = 0;
    for (std::size_t j = 0; j < c; ++j) s += std::exp(row[j] - mx);
    const T lse = mx + std::log(s);
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] = row[j] - lse;
  }
  auto result = detail::make_result<T>(x.shape(), std::move(out), "log_softmax_rows", {x}, nullptr);
  if (result.requires_grad()) {
    auto ys = result.storage();
    result.grad_fn()->backward = [x, ys, r, c](std::span<const T> g) {
      auto& gx = x.grad_buffer();
      for (std::size_t i = 0; i < r; ++i) {
        T gs = 0;
        for (std::size_t j = 0; j < c; ++j) gs += g[i * c + j];
        for (std::size_t j = 0; j < c; ++j) {
          gx[i * c + j] += g[i * c + j] - std::exp((*ys)[i * c + j]) * gs;
        }
      }
    };
  }
  return result;
}

/// Scales each row to unit L2 norm (norms below eps are clamped to eps).
template <typename T>
Tensor<T> normalize_rows(const Tensor<T>& x, T eps = T(1e-12)) {
  if (x.rank() != 2) throw ShapeError("normalize_rows expects a matrix");
  const std::size_t r = x.dim(0), c = x.dim(1);
  const auto xv = x.data();
  std::vector<T> out(r * c);
  auto norms = std::make_shared<std::vector<T>>(r);
  for (std::size_t i = 0; i < r; ++i) {
    T s = 0;
    for (std::size_t j = 0; j < c; ++j) s += xv[i * c + j] * xv[i * c + j];
    T nrm = std::sqrt(s);
    if (nrm < eps) {
      warnings().zero_norm_clamps.fetch_add(1, std::memory_order_relaxed);
      nrm = eps;
    }
    (*norms)[i] = nrm;
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] = xv[i * c + j] / nrm;
  }
  auto result = detail::make_result<T>(x.shape(), std::move(out), "normalize_rows", {x}, nullptr);
  if (result.requires_grad()) {
    auto ys = result.storage();
    result.grad_fn()->backward = [x, ys, norms, r, c, eps](std::span<const T> g) {
      auto& gx = x.grad_buffer();
      for (std::size_t i = 0; i < r; ++i) {
        const T nrm = (*norms)[i];
        // Clamped rows are a plain scaling by 1/eps.
        const bool clamped = !(nrm > eps);
        T dot = 0;
        for (std::size_t j = 0; j < c; ++j) dot += g[i * c + j] * (*ys)[i * c + j];
        for (std::size_t j = 0; j < c; ++j) {
          const T proj = clamped ? T(0) : dot * (*ys)[i * c + j];
          gx[i * c + j] += (g[i * c + j] - proj) / nrm;
        }
      }
    };
  }
  return result;
}

}  // namespace bwssl
