#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "bwssl/ops.hpp"

namespace bwssl {

enum class ConvAlgo {
  direct,  // nested loops
  im2col,  // patch matrix + GEMM
};

struct Conv2dParams {
  std::size_t stride = 1;
  std::size_t padding = 0;
  std::size_t groups = 1;
  ConvAlgo algo = ConvAlgo::im2col;
};

namespace detail {

struct ConvGeometry {
  std::size_t n, c, h, w;     // input
  std::size_t o, kh, kw;      // kernel
  std::size_t ho, wo;         // output
  std::size_t stride, pad, groups;
  std::size_t cg, og;         // channels per group

  std::size_t patch() const { return cg * kh * kw; }
  std::size_t positions() const { return ho * wo; }
};

inline ConvGeometry conv_geometry(const Shape& x, const Shape& k, const Conv2dParams& p) {
  if (x.size() != 4 || k.size() != 4) {
    throw ShapeError(concat("conv2d expects NCHW input and OIHW kernel, got ", to_string(x), " and ",
                            to_string(k)));
  }
  if (p.stride == 0) throw ConfigError("conv2d: stride must be positive");
  ConvGeometry g{};
  g.n = x[0];
  g.c = x[1];
  g.h = x[2];
  g.w = x[3];
  g.o = k[0];
  g.kh = k[2];
  g.kw = k[3];
  g.stride = p.stride;
  g.pad = p.padding;
  g.groups = p.groups;
  if (g.groups == 0 || g.c % g.groups != 0 || g.o % g.groups != 0) {
    throw ConfigError(concat("conv2d: ", g.c, " input and ", g.o,
                             " output channels cannot be split into ", g.groups, " groups"));
  }
  g.cg = g.c / g.groups;
  g.og = g.o / g.groups;
  if (k[1] != g.cg) {
    throw ShapeError(concat("conv2d: kernel expects ", k[1], " channels per group, input has ", g.cg));
  }
  if (g.h + 2 * g.pad < g.kh || g.w + 2 * g.pad < g.kw) {
    throw ConfigError(concat("conv2d: kernel ", g.kh, "x", g.kw, " larger than padded input ",
                             g.h, "x", g.w));
  }
  g.ho = (g.h + 2 * g.pad - g.kh) / g.stride + 1;
  g.wo = (g.w + 2 * g.pad - g.kw) / g.stride + 1;
  if (g.ho == 0 || g.wo == 0) throw ConfigError("conv2d: output spatial dims collapse to zero");
  return g;
}

// Patch matrix for one group: rows = (c, ky, kx), cols = (n, oy, ox).
template <typename T>
void im2col(const ConvGeometry& g, std::span<const T> x, std::size_t group, std::vector<T>& col) {
  const std::size_t cols = g.n * g.positions();
  col.assign(g.patch() * cols, T(0));
  for (std::size_t ci = 0; ci < g.cg; ++ci) {
    const std::size_t c = group * g.cg + ci;
    for (std::size_t ky = 0; ky < g.kh; ++ky) {
      for (std::size_t kx = 0; kx < g.kw; ++kx) {
        T* row = col.data() + ((ci * g.kh + ky) * g.kw + kx) * cols;
        for (std::size_t n = 0; n < g.n; ++n) {
          const T* plane = x.data() + (n * g.c + c) * g.h * g.w;
          T* dst = row + n * g.positions();
          for (std::size_t oy = 0; oy < g.ho; ++oy) {
            const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) -
                                      static_cast<std::ptrdiff_t>(g.pad);
            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) continue;
            for (std::size_t ox = 0; ox < g.wo; ++ox) {
              const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) -
                                        static_cast<std::ptrdiff_t>(g.pad);
              if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.w)) continue;
              dst[oy * g.wo + ox] = plane[static_cast<std::size_t>(iy) * g.w + static_cast<std::size_t>(ix)];
            }
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const ConvGeometry& g, const std::vector<T>& col, std::size_t group, std::vector<T>& dx) {
  const std::size_t cols = g.n * g.positions();
  for (std::size_t ci = 0; ci < g.cg; ++ci) {
    const std::size_t c = group * g.cg + ci;
    for (std::size_t ky = 0; ky < g.kh; ++ky) {
      for (std::size_t kx = 0; kx < g.kw; ++kx) {
        const T* row = col.data() + ((ci * g.kh + ky) * g.kw + kx) * cols;
        for (std::size_t n = 0; n < g.n; ++n) {
          T* plane = dx.data() + (n * g.c + c) * g.h * g.w;
          const T* src = row + n * g.positions();
          for (std::size_t oy = 0; oy < g.ho; ++oy) {
            const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) -
                                      static_cast<std::ptrdiff_t>(g.pad);
            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) continue;
            for (std::size_t ox = 0; ox < g.wo; ++ox) {
              const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) -
                                        static_cast<std::ptrdiff_t>(g.pad);
              if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.w)) continue;
              plane[static_cast<std::size_t>(iy) * g.w + static_cast<std::size_t>(ix)] += src[oy * g.wo + ox];
            }
          }
        }
      }
    }
  }
}

template <typename T>
std::vector<T> conv_forward_im2col(const ConvGeometry& g, std::span<const T> x, std::span<const T> k) {
  std::vector<T> out(g.n * g.o * g.positions());
  std::vector<T> col;
  const auto cols = static_cast<Eigen::Index>(g.n * g.positions());
  RowMat<T> res;
  for (std::size_t gi = 0; gi < g.groups; ++gi) {
    im2col(g, x, gi, col);
    ConstMapMat<T> W(k.data() + gi * g.og * g.patch(), static_cast<Eigen::Index>(g.og),
                     static_cast<Eigen::Index>(g.patch()));
    ConstMapMat<T> C(col.data(), static_cast<Eigen::Index>(g.patch()), cols);
    res.noalias() = W * C;
    for (std::size_t oc = 0; oc < g.og; ++oc) {
      for (std::size_t n = 0; n < g.n; ++n) {
        const T* src = res.data() + oc * static_cast<std::size_t>(cols) + n * g.positions();
        std::copy(src, src + g.positions(), out.data() + (n * g.o + gi * g.og + oc) * g.positions());
      }
    }
  }
  return out;
}

template <typename T>
void conv_backward_im2col(const ConvGeometry& g, std::span<const T> x, std::span<const T> k,
                          std::span<const T> grad_out, std::vector<T>* dx, std::vector<T>* dk) {
  std::vector<T> col;
  const auto cols = static_cast<Eigen::Index>(g.n * g.positions());
  const auto og = static_cast<Eigen::Index>(g.og);
  const auto patch = static_cast<Eigen::Index>(g.patch());
  RowMat<T> G(og, cols);
  for (std::size_t gi = 0; gi < g.groups; ++gi) {
    for (std::size_t oc = 0; oc < g.og; ++oc) {
      for (std::size_t n = 0; n < g.n; ++n) {
        const T* src = grad_out.data() + (n * g.o + gi * g.og + oc) * g.positions();
        std::copy(src, src + g.positions(),
                  G.data() + oc * static_cast<std::size_t>(cols) + n * g.positions());
      }
    }
    if (dk) {
      im2col(g, x, gi, col);
      ConstMapMat<T> C(col.data(), patch, cols);
      MapMat<T>(dk->data() + gi * g.og * g.patch(), og, patch).noalias() += G * C.transpose();
    }
    if (dx) {
      ConstMapMat<T> W(k.data() + gi * g.og * g.patch(), og, patch);
      col.assign(g.patch() * static_cast<std::size_t>(cols), T(0));
      MapMat<T>(col.data(), patch, cols).noalias() = W.transpose() * G;
      col2im_add(g, col, gi, *dx);
    }
  }
}

template <typename T>
std::vector<T> conv_forward_direct(const ConvGeometry& g, std::span<const T> x, std::span<const T> k) {
  std::vector<T> out(g.n * g.o * g.positions(), T(0));
  for (std::size_t n = 0; n < g.n; ++n)
    for (std::size_t o = 0; o < g.o; ++o) {
      const std::size_t gi = o / g.og;
      for (std::size_t oy = 0; oy < g.ho; ++oy)
        for (std::size_t ox = 0; ox < g.wo; ++ox) {
          T acc = 0;
          for (std::size_t ci = 0; ci < g.cg; ++ci) {
            const std::size_t c = gi * g.cg + ci;
            for (std::size_t ky = 0; ky < g.kh; ++ky) {
              const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) -
                                        static_cast<std::ptrdiff_t>(g.pad);
              if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) continue;
              for (std::size_t kx = 0; kx < g.kw; ++kx) {
                const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) -
                                          static_cast<std::ptrdiff_t>(g.pad);
                if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.w)) continue;
                acc += k[((o * g.cg + ci) * g.kh + ky) * g.kw + kx] *
                       x[((n * g.c + c) * g.h + static_cast<std::size_t>(iy)) * g.w + static_cast<std::size_t>(ix)];
              }
            }
          }
          out[((n * g.o + o) * g.ho + oy) * g.wo + ox] = acc;
        }
    }
  return out;
}

template <typename T>
void conv_backward_direct(const ConvGeometry& g, std::span<const T> x, std::span<const T> k,
                          std::span<const T> grad_out, std::vector<T>* dx, std::vector<T>* dk) {
  for (std::size_t n = 0; n < g.n; ++n)
    for (std::size_t o = 0; o < g.o; ++o) {
      const std::size_t gi = o / g.og;
      for (std::size_t oy = 0; oy < g.ho; ++oy)
        for (std::size_t ox = 0; ox < g.wo; ++ox) {
          const T go = grad_out[((n * g.o + o) * g.ho + oy) * g.wo + ox];
          for (std::size_t ci = 0; ci < g.cg; ++ci) {
            const std::size_t c = gi * g.cg + ci;
            for (std::size_t ky = 0; ky < g.kh; ++ky) {
              const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) -
                                        static_cast<std::ptrdiff_t>(g.pad);
              if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) continue;
              for (std::size_t kx = 0; kx < g.kw; ++kx) {
                const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) -
                                          static_cast<std::ptrdiff_t>(g.pad);
                if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.w)) continue;
                const std::size_t xi =
                    ((n * g.c + c) * g.h + static_cast<std::size_t>(iy)) * g.w + static_cast<std::size_t>(ix);
                const std::size_t ki = ((o * g.cg + ci) * g.kh + ky) * g.kw + kx;
                if (dk) (*dk)[ki] += go * x[xi];
                if (dx) (*dx)[xi] += go * k[ki];
              }
            }
          }
        }
    }
}

}  // namespace detail

/// Cross-correlation of an NCHW input with an O x (C/groups) x kh x kw kernel.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& kernel, const Conv2dParams& p = {}) {
  const auto g = detail::conv_geometry(input.shape(), kernel.shape(), p);
  auto out = p.algo == ConvAlgo::direct ? detail::conv_forward_direct<T>(g, input.data(), kernel.data())
                                        : detail::conv_forward_im2col<T>(g, input.data(), kernel.data());
  const auto algo = p.algo;
  return detail::make_result<T>(
      {g.n, g.o, g.ho, g.wo}, std::move(out), "conv2d", {input, kernel},
      [input, kernel, g, algo](std::span<const T> grad_out) {
        std::vector<T>* dx = input.requires_grad() ? &input.grad_buffer() : nullptr;
        std::vector<T>* dk = kernel.requires_grad() ? &kernel.grad_buffer() : nullptr;
        if (algo == ConvAlgo::direct) {
          detail::conv_backward_direct<T>(g, input.data(), kernel.data(), grad_out, dx, dk);
        } else {
          detail::conv_backward_im2col<T>(g, input.data(), kernel.data(), grad_out, dx, dk);
        }
      });
}

}  // namespace bwssl
