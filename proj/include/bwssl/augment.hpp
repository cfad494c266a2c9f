#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <random>
#include <variant>
#include <vector>

#include "bwssl/data.hpp"
#include "bwssl/tensor.hpp"

namespace bwssl {

// ---------------------------------------------------------------------------
// Transform specifications
// ---------------------------------------------------------------------------

struct CropSpec {
  double scale_lo = 0.08, scale_hi = 1.0;
  double ratio_lo = 3.0 / 4.0, ratio_hi = 4.0 / 3.0;
  bool operator==(const CropSpec&) const = default;
};
struct FlipSpec {
  double p = 0.5;
  bool operator==(const FlipSpec&) const = default;
};
struct JitterSpec {
  double p = 0.8;
  double brightness = 0.4, contrast = 0.4, saturation = 0.2, hue = 0.1;
  bool operator==(const JitterSpec&) const = default;
};
struct GrayscaleSpec {
  double p = 0.2;
  bool operator==(const GrayscaleSpec&) const = default;
};
struct BlurSpec {
  double p = 1.0;
  double sigma_lo = 0.1, sigma_hi = 2.0;
  bool operator==(const BlurSpec&) const = default;
};
struct SolarizeSpec {
  double p = 0.0;
  double threshold = 0.5;
  bool operator==(const SolarizeSpec&) const = default;
};

using Transform = std::variant<CropSpec, FlipSpec, JitterSpec, GrayscaleSpec, BlurSpec, SolarizeSpec>;

inline const char* transform_name(const Transform& t) {
  constexpr const char* names[] = {"crop", "flip", "jitter", "grayscale", "blur", "solarize"};
  return names[t.index()];
}

/// Transforms for the two views of a pair; they differ only in parameters
/// (blur and solarisation probabilities are asymmetric in the standard recipe).
struct ViewPipeline {
  std::array<std::vector<Transform>, 2> views;

  bool empty() const { return views[0].empty() && views[1].empty(); }
  bool has(std::size_t kind_index) const {
    for (const auto& v : views)
      for (const auto& t : v)
        if (t.index() == kind_index) return true;
    return false;
  }
  bool operator==(const ViewPipeline&) const = default;

  /// Full two-view recipe: crop, flip, jitter, grayscale, blur (1.0 / 0.1),
  /// solarisation (0.0 / 0.2).
  static ViewPipeline full() {
    ViewPipeline p;
    p.views[0] = {CropSpec{}, FlipSpec{}, JitterSpec{}, GrayscaleSpec{}, BlurSpec{1.0}, SolarizeSpec{0.0}};
    p.views[1] = {CropSpec{}, FlipSpec{}, JitterSpec{}, GrayscaleSpec{}, BlurSpec{0.1}, SolarizeSpec{0.2}};
    return p;
  }
  static ViewPipeline jitter_only() {
    ViewPipeline p;
    p.views[0] = p.views[1] = {JitterSpec{}};
    return p;
  }
  static ViewPipeline small_crops(double scale_lo = 0.6) {
    ViewPipeline p;
    p.views[0] = p.views[1] = {CropSpec{scale_lo, 1.0}, JitterSpec{}};
    return p;
  }
};

// ---------------------------------------------------------------------------
// Pixel operations
// ---------------------------------------------------------------------------

namespace augment_ops {

inline float clamp01(double v) { return static_cast<float>(std::clamp(v, 0.0, 1.0)); }

/// Bilinear resampling (half-pixel centres) of the box [y0, y0+h) x [x0, x0+w).
inline Image resized_crop(const Image& in, double y0, double x0, double h, double w, std::size_t out_h,
                          std::size_t out_w) {
  Image out(in.channels, out_h, out_w);
  const double sy = h / static_cast<double>(out_h), sx = w / static_cast<double>(out_w);
  for (std::size_t y = 0; y < out_h; ++y) {
    const double fy = std::clamp(y0 + (static_cast<double>(y) + 0.5) * sy - 0.5, 0.0,
                                 static_cast<double>(in.height - 1));
    const auto iy = static_cast<std::size_t>(fy);
    const std::size_t iy1 = std::min(iy + 1, in.height - 1);
    const double ty = fy - static_cast<double>(iy);
    for (std::size_t x = 0; x < out_w; ++x) {
      const double fx = std::clamp(x0 + (static_cast<double>(x) + 0.5) * sx - 0.5, 0.0,
                                   static_cast<double>(in.width - 1));
      const auto ix = static_cast<std::size_t>(fx);
      const std::size_t ix1 = std::min(ix + 1, in.width - 1);
      const double tx = fx - static_cast<double>(ix);
      for (std::size_t c = 0; c < in.channels; ++c) {
        const double top = in.at(c, iy, ix) * (1 - tx) + in.at(c, iy, ix1) * tx;
        const double bot = in.at(c, iy1, ix) * (1 - tx) + in.at(c, iy1, ix1) * tx;
        out.at(c, y, x) = static_cast<float>(top * (1 - ty) + bot * ty);
      }
    }
  }
  return out;
}

inline void flip_horizontal(Image& img) {
  for (std::size_t c = 0; c < img.channels; ++c)
    for (std::size_t y = 0; y < img.height; ++y) {
      auto* row = &img.at(c, y, 0);
      std::reverse(row, row + img.width);
    }
}

inline std::vector<float> luma(const Image& img) {
  std::vector<float> g(img.plane());
  const float* r = img.values.data();
  for (std::size_t i = 0; i < g.size(); ++i) {
    g[i] = img.channels == 3 ? 0.299f * r[i] + 0.587f * r[i + g.size()] + 0.114f * r[i + 2 * g.size()] : r[i];
  }
  return g;
}

inline void adjust_brightness(Image& img, double f) {
  for (auto& v : img.values) v = clamp01(v * f);
}

inline void adjust_contrast(Image& img, double f) {
  const auto g = luma(img);
  const double m = std::accumulate(g.begin(), g.end(), 0.0) / static_cast<double>(g.size());
  for (auto& v : img.values) v = clamp01((v - m) * f + m);
}

inline void adjust_saturation(Image& img, double f) {
  if (img.channels != 3) return;
  const auto g = luma(img);
  const std::size_t p = img.plane();
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t i = 0; i < p; ++i) img.values[c * p + i] = clamp01((img.values[c * p + i] - g[i]) * f + g[i]);
}

inline void adjust_hue(Image& img, double shift) {
  if (img.channels != 3) return;
  const std::size_t p = img.plane();
  for (std::size_t i = 0; i < p; ++i) {
    float& r = img.values[i];
    float& g = img.values[p + i];
    float& b = img.values[2 * p + i];
    const double mx = std::max({r, g, b}), mn = std::min({r, g, b}), d = mx - mn;
    if (d <= 0) continue;
    double h;
    if (mx == r) h = std::fmod((g - b) / d, 6.0);
    else if (mx == g) h = (b - r) / d + 2.0;
    else h = (r - g) / d + 4.0;
    h = h / 6.0 + shift;
    h -= std::floor(h);
    const double s = d / mx, v = mx;
    const double hh = h * 6.0;
    const int sector = static_cast<int>(hh) % 6;
    const double f = hh - std::floor(hh);
    const double pv = v * (1 - s), qv = v * (1 - s * f), tv = v * (1 - s * (1 - f));
    double rr, gg, bb;
    switch (sector) {
      case 0: rr = v, gg = tv, bb = pv; break;
      case 1: rr = qv, gg = v, bb = pv; break;
      case 2: rr = pv, gg = v, bb = tv; break;
      case 3: rr = pv, gg = qv, bb = v; break;
      case 4: rr = tv, gg = pv, bb = v; break;
      default: rr = v, gg = pv, bb = qv;
    }
    r = clamp01(rr);
    g = clamp01(gg);
    b = clamp01(bb);
  }
}

inline void to_grayscale(Image& img) {
  if (img.channels != 3) return;
  const auto g = luma(img);
  for (std::size_t c = 0; c < 3; ++c) std::copy(g.begin(), g.end(), img.values.begin() + c * g.size());
}

/// Separable Gaussian blur with reflected borders; kernel side ~10% of the image.
inline void gaussian_blur(Image& img, double sigma, long radius = 0) {
  const std::size_t side = std::min(img.height, img.width);
  if (radius <= 0) radius = std::max<long>(1, std::lround(0.05 * static_cast<double>(side)));
  std::vector<double> k(2 * radius + 1);
  double total = 0;
  for (long i = -radius; i <= radius; ++i) total += k[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
  for (auto& v : k) v /= total;
  auto reflect = [](long i, long n) {
    if (n == 1) return 0L;
    while (i < 0 || i >= n) i = i < 0 ? -i : 2 * (n - 1) - i;
    return i;
  };
  const long h = static_cast<long>(img.height), w = static_cast<long>(img.width);
  std::vector<double> tmp(img.plane());
  for (std::size_t c = 0; c < img.channels; ++c) {
    float* plane = img.values.data() + c * img.plane();
    for (long y = 0; y < h; ++y)
      for (long x = 0; x < w; ++x) {
        double s = 0;
        for (long i = -radius; i <= radius; ++i) s += k[i + radius] * plane[y * w + reflect(x + i, w)];
        tmp[y * w + x] = s;
      }
    for (long y = 0; y < h; ++y)
      for (long x = 0; x < w; ++x) {
        double s = 0;
        for (long i = -radius; i <= radius; ++i) s += k[i + radius] * tmp[reflect(y + i, h) * w + x];
        plane[y * w + x] = clamp01(s);
      }
  }
}

inline void solarize(Image& img, double threshold) {
  for (auto& v : img.values)
    if (v >= threshold) v = 1.0f - v;
}

}  // namespace augment_ops

// ---------------------------------------------------------------------------
// Applying transforms
// ---------------------------------------------------------------------------

namespace detail {

inline bool coin(Rng& rng, double p) {
  // Always draw so stream consumption is independent of p.
  return std::uniform_real_distribution<double>(0.0, 1.0)(rng) < p;
}

inline double uniform(Rng& rng, double lo, double hi) {
  return lo + (hi - lo) * std::uniform_real_distribution<double>(0.0, 1.0)(rng);
}

inline void apply(Image& img, const CropSpec& s, Rng& rng) {
  const double h = static_cast<double>(img.height), w = static_cast<double>(img.width);
  const double area = h * w;
  for (int attempt = 0; attempt < 10; ++attempt) {
    const double target = area * uniform(rng, s.scale_lo, s.scale_hi);
    const double ratio = std::exp(uniform(rng, std::log(s.ratio_lo), std::log(s.ratio_hi)));
    const double cw = std::round(std::sqrt(target * ratio));
    const double ch = std::round(std::sqrt(target / ratio));
    if (cw >= 1 && ch >= 1 && cw <= w && ch <= h) {
      const double y0 = std::floor(uniform(rng, 0, h - ch + 1 - 1e-9));
      const double x0 = std::floor(uniform(rng, 0, w - cw + 1 - 1e-9));
      img = augment_ops::resized_crop(img, y0, x0, ch, cw, img.height, img.width);
      return;
    }
  }
  // Fallback: central crop at the clamped aspect ratio.
  const double in_ratio = w / h;
  double cw = w, ch = h;
  if (in_ratio < s.ratio_lo) ch = std::round(w / s.ratio_lo);
  else if (in_ratio > s.ratio_hi) cw = std::round(h * s.ratio_hi);
  img = augment_ops::resized_crop(img, std::floor((h - ch) / 2), std::floor((w - cw) / 2), ch, cw, img.height,
                                  img.width);
}

inline void apply(Image& img, const FlipSpec& s, Rng& rng) {
  if (coin(rng, s.p)) augment_ops::flip_horizontal(img);
}

inline void apply(Image& img, const JitterSpec& s, Rng& rng) {
  const bool on = coin(rng, s.p);
  std::array<int, 4> order{0, 1, 2, 3};
  std::shuffle(order.begin(), order.end(), rng);
  const double fb = uniform(rng, std::max(0.0, 1 - s.brightness), 1 + s.brightness);
  const double fc = uniform(rng, std::max(0.0, 1 - s.contrast), 1 + s.contrast);
  const double fs = uniform(rng, std::max(0.0, 1 - s.saturation), 1 + s.saturation);
  const double fh = uniform(rng, -s.hue, s.hue);
  if (!on) return;
  for (int op : order) {
    switch (op) {
      case 0: if (s.brightness > 0) augment_ops::adjust_brightness(img, fb); break;
      case 1: if (s.contrast > 0) augment_ops::adjust_contrast(img, fc); break;
      case 2: if (s.saturation > 0) augment_ops::adjust_saturation(img, fs); break;
      default: if (s.hue > 0) augment_ops::adjust_hue(img, fh);
    }
  }
}

inline void apply(Image& img, const GrayscaleSpec& s, Rng& rng) {
  if (coin(rng, s.p)) augment_ops::to_grayscale(img);
}

inline void apply(Image& img, const BlurSpec& s, Rng& rng) {
  const bool on = coin(rng, s.p);
  const double sigma = uniform(rng, s.sigma_lo, s.sigma_hi);
  if (on) augment_ops::gaussian_blur(img, sigma);
}

inline void apply(Image& img, const SolarizeSpec& s, Rng& rng) {
  if (coin(rng, s.p)) augment_ops::solarize(img, s.threshold);
}

}  // namespace detail

/// Applies one view's transforms in order, drawing from `rng`.
inline Image apply_view(Image img, const std::vector<Transform>& transforms, Rng& rng) {
  for (const auto& t : transforms) std::visit([&](const auto& spec) { detail::apply(img, spec, rng); }, t);
  return img;
}

/// Identifies the stream of one image's views: (seed, "augment", epoch, image, pipeline, view).
struct ViewStream {
  std::uint64_t seed = 0;
  std::uint64_t epoch = 0;
  std::uint64_t image = 0;
  std::uint64_t pipeline = 0;
};

inline std::pair<Image, Image> generate_views(const Image& img, const ViewPipeline& pipeline, const ViewStream& s) {
  if (img.height == 0 || img.width == 0) throw ConfigError("cannot augment an empty image");
  auto ra = make_stream(s.seed, "augment", s.epoch, s.image, s.pipeline, 0);
  auto rb = make_stream(s.seed, "augment", s.epoch, s.image, s.pipeline, 1);
  return {apply_view(img, pipeline.views[0], ra), apply_view(img, pipeline.views[1], rb)};
}

// ---------------------------------------------------------------------------
// Per-block schedules
// ---------------------------------------------------------------------------

class AugmentationSchedule {
 public:
  AugmentationSchedule() = default;
  explicit AugmentationSchedule(std::vector<ViewPipeline> per_block) : blocks_(std::move(per_block)) {}

  static AugmentationSchedule uniform(std::size_t blocks, const ViewPipeline& p = ViewPipeline::full()) {
    return AugmentationSchedule(std::vector<ViewPipeline>(blocks, p));
  }

  /// Easier views early: block 1 colour jitter only, block 2 adds small crops,
  /// later blocks the full recipe.
  static AugmentationSchedule adaptive(std::size_t blocks, double small_crop_lo = 0.6) {
    std::vector<ViewPipeline> v;
    for (std::size_t b = 0; b < blocks; ++b) {
      v.push_back(b == 0   ? ViewPipeline::jitter_only()
                  : b == 1 ? ViewPipeline::small_crops(small_crop_lo)
                           : ViewPipeline::full());
    }
    return AugmentationSchedule(std::move(v));
  }

  const ViewPipeline& for_block(std::size_t b) const {
    if (b >= blocks_.size()) {
      throw ConfigError(detail::concat("no augmentation pipeline for block ", b + 1, " (schedule has ",
                                       blocks_.size(), ")"));
    }
    return blocks_[b];
  }
  std::size_t size() const { return blocks_.size(); }

  /// Distinct pipelines in first-use order, and each block's index into them.
  std::pair<std::vector<ViewPipeline>, std::vector<std::size_t>> distinct() const {
    std::vector<ViewPipeline> uniq;
    std::vector<std::size_t> index;
    for (const auto& p : blocks_) {
      auto it = std::find(uniq.begin(), uniq.end(), p);
      index.push_back(static_cast<std::size_t>(it - uniq.begin()));
      if (it == uniq.end()) uniq.push_back(p);
    }
    return {uniq, index};
  }

 private:
  std::vector<ViewPipeline> blocks_;
};

/// Stacks images into an [N, C, H, W] tensor.
template <typename T>
Tensor<T> to_batch(const std::vector<Image>& images) {
  if (images.empty()) throw ShapeError("cannot batch zero images");
  const auto& f = images.front();
  const std::size_t sz = f.values.size();
  std::vector<T> v(images.size() * sz);
  for (std::size_t i = 0; i < images.size(); ++i) {
    if (images[i].values.size() != sz) throw ShapeError("images in a batch must share dimensions");
    std::copy(images[i].values.begin(), images[i].values.end(), v.begin() + static_cast<std::ptrdiff_t>(i * sz));
  }
  return Tensor<T>(Shape{images.size(), f.channels, f.height, f.width}, std::move(v));
}

/// Two augmented view batches for dataset rows `indices`, built in parallel
/// with one stream per (image, view).
template <typename T>
std::pair<Tensor<T>, Tensor<T>> view_batches(const Dataset& data, const std::vector<std::size_t>& indices,
                                             const ViewPipeline& pipeline, std::uint64_t seed,
                                             std::uint64_t epoch, std::uint64_t pipeline_id) {
  std::vector<Image> a(indices.size()), b(indices.size());
  parallel_for(indices.size(), [&](std::size_t i) {
    auto [va, vb] = generate_views(data.image(indices[i]), pipeline, {seed, epoch, indices[i], pipeline_id});
    a[i] = std::move(va);
    b[i] = std::move(vb);
  });
  return {to_batch<T>(a), to_batch<T>(b)};
}

/// Un-augmented batch of dataset rows.
template <typename T>
Tensor<T> plain_batch(const Dataset& data, const std::vector<std::size_t>& indices) {
  const std::size_t sz = data.image_size();
  std::vector<T> v(indices.size() * sz);
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const auto px = data.pixels_of(indices[i]);
    std::copy(px.begin(), px.end(), v.begin() + static_cast<std::ptrdiff_t>(i * sz));
  }
  return Tensor<T>(Shape{indices.size(), data.channels, data.height, data.width}, std::move(v));
}

}  // namespace bwssl
