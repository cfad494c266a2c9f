#pragma once

#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "bwssl/checkpoint.hpp"
#include "bwssl/common.hpp"

namespace bwssl {

/// A channel-major image with values in [0, 1].
struct Image {
  std::size_t channels = 0, height = 0, width = 0;
  std::vector<float> values;

  Image() = default;
  Image(std::size_t c, std::size_t h, std::size_t w, float fill = 0.0f)
      : channels(c), height(h), width(w), values(c * h * w, fill) {}

  float& at(std::size_t c, std::size_t y, std::size_t x) { return values[(c * height + y) * width + x]; }
  float at(std::size_t c, std::size_t y, std::size_t x) const { return values[(c * height + y) * width + x]; }
  std::size_t plane() const { return height * width; }
};

/// Images stored contiguously in NCHW order with integer labels.
struct Dataset {
  std::size_t channels = 3, height = 0, width = 0, classes = 0;
  std::vector<float> pixels;
  std::vector<int> labels;

  std::size_t size() const { return labels.size(); }
  std::size_t image_size() const { return channels * height * width; }

  std::span<const float> pixels_of(std::size_t i) const {
    return {pixels.data() + i * image_size(), image_size()};
  }

  Image image(std::size_t i) const {
    Image img(channels, height, width);
    const auto src = pixels_of(i);
    std::copy(src.begin(), src.end(), img.values.begin());
    return img;
  }

  void push_back(const Image& img, int label) {
    if (img.channels != channels || img.height != height || img.width != width) {
      throw ConfigError(detail::concat("image ", img.channels, "x", img.height, "x", img.width,
                                       " does not match dataset ", channels, "x", height, "x", width));
    }
    pixels.insert(pixels.end(), img.values.begin(), img.values.end());
    labels.push_back(label);
  }

  /// First `n` examples (or all, if fewer).
  Dataset head(std::size_t n) const {
    Dataset d = *this;
    n = std::min(n, size());
    d.labels.resize(n);
    d.pixels.resize(n * image_size());
    return d;
  }
};

struct DatasetSplit {
  Dataset train;
  Dataset val;
};

enum class DataSource { cifar10_binary, raw_tensor_file, synthetic };

inline std::string to_string(DataSource s) {
  switch (s) {
    case DataSource::cifar10_binary: return "cifar10-binary";
    case DataSource::raw_tensor_file: return "raw-tensor-file";
    case DataSource::synthetic: return "synthetic";
  }
  return "?";
}

inline DataSource data_source_from_string(const std::string& s) {
  for (auto k : {DataSource::cifar10_binary, DataSource::raw_tensor_file, DataSource::synthetic}) {
    if (to_string(k) == s) return k;
  }
  throw ConfigError("unknown dataset source '" + s + "'");
}

struct DatasetDescriptor {
  DataSource source = DataSource::synthetic;
  // Directory (cifar10-binary) or file stem (raw-tensor-file); empty means $BWSSL_DATA_DIR.
  std::string path;
  std::size_t train_size = 10000;
  std::size_t val_size = 2000;
  std::size_t classes = 10;
  std::size_t height = 32, width = 32;
  // Pixel noise of the synthetic generator.
  double synthetic_noise = 0.08;

  void validate() const {
    if (classes < 2) throw ConfigError("dataset needs at least 2 classes");
    if (train_size == 0 || val_size == 0) throw ConfigError("dataset splits must be non-empty");
    if (height == 0 || width == 0) throw ConfigError("image dimensions must be positive");
  }

  std::string resolved_path() const {
    if (!path.empty()) return path;
    if (const char* env = std::getenv("BWSSL_DATA_DIR"); env && *env) return env;
    throw ConfigError("no dataset path given and BWSSL_DATA_DIR is unset");
  }
};

// ---------------------------------------------------------------------------
// CIFAR-10 binary batches: records of 1 label byte + 3072 pixel bytes
// (1024 red, 1024 green, 1024 blue, each row-major 32x32).
// ---------------------------------------------------------------------------

inline constexpr std::size_t kCifarRecord = 1 + 3 * 32 * 32;

inline void append_cifar10_bytes(const std::string& bytes, Dataset& out, std::size_t limit = SIZE_MAX) {
  out.channels = 3;
  out.height = out.width = 32;
  out.classes = 10;
  if (bytes.size() % kCifarRecord != 0) {
    throw ParseError(detail::concat("truncated CIFAR-10 record (file size ", bytes.size(), ")"),
                     bytes.size() - bytes.size() % kCifarRecord);
  }
  const std::size_t n = std::min(limit, bytes.size() / kCifarRecord);
  for (std::size_t r = 0; r < n; ++r) {
    const std::size_t off = r * kCifarRecord;
    const auto label = static_cast<unsigned char>(bytes[off]);
    if (label > 9) throw ParseError(detail::concat("CIFAR-10 label ", int(label), " out of range"), off);
    out.labels.push_back(label);
    for (std::size_t i = 1; i < kCifarRecord; ++i) {
      out.pixels.push_back(static_cast<float>(static_cast<unsigned char>(bytes[off + i])) / 255.0f);
    }
  }
}

inline Dataset load_cifar10_file(const std::string& path, std::size_t limit = SIZE_MAX) {
  Dataset d;
  append_cifar10_bytes(detail::read_file(path), d, limit);
  return d;
}

/// Training images from data_batch_{1..5}.bin, validation from test_batch.bin.
inline DatasetSplit load_cifar10_dir(const std::string& dir, std::size_t train_size, std::size_t val_size) {
  namespace fs = std::filesystem;
  DatasetSplit split;
  for (int b = 1; b <= 5 && split.train.size() < train_size; ++b) {
    const auto p = fs::path(dir) / ("data_batch_" + std::to_string(b) + ".bin");
    if (!fs::exists(p)) throw ConfigError("missing CIFAR-10 batch " + p.string());
    append_cifar10_bytes(detail::read_file(p.string()), split.train, train_size - split.train.size());
  }
  const auto test = fs::path(dir) / "test_batch.bin";
  if (!fs::exists(test)) throw ConfigError("missing CIFAR-10 batch " + test.string());
  append_cifar10_bytes(detail::read_file(test.string()), split.val, val_size);
  return split;
}

// ---------------------------------------------------------------------------
// Raw tensor files:
//   "BWSSLDS1", u32 count, u32 channels, u32 height, u32 width, u32 classes,
//   count x { u32 label, channels*height*width x f32 }
// ---------------------------------------------------------------------------

inline constexpr char kDatasetMagic[9] = "BWSSLDS1";

inline std::string encode_dataset(const Dataset& d) {
  std::string out(kDatasetMagic, 8);
  for (auto v : {d.size(), d.channels, d.height, d.width, d.classes}) {
    detail::put_u32(out, static_cast<std::uint32_t>(v));
  }
  for (std::size_t i = 0; i < d.size(); ++i) {
    detail::put_u32(out, static_cast<std::uint32_t>(d.labels[i]));
    for (auto v : d.pixels_of(i)) detail::put_f32(out, v);
  }
  return out;
}

inline Dataset decode_dataset(const std::string& bytes) {
  detail::ByteReader r(bytes);
  if (r.str(8, "magic") != std::string(kDatasetMagic, 8)) throw ParseError("bad dataset magic", 0);
  Dataset d;
  const auto n = r.u32("count");
  d.channels = r.u32("channels");
  d.height = r.u32("height");
  d.width = r.u32("width");
  d.classes = r.u32("classes");
  if (d.classes < 2) throw ParseError("dataset declares fewer than 2 classes", 24);
  d.labels.reserve(n);
  d.pixels.reserve(static_cast<std::size_t>(n) * d.image_size());
  for (std::uint32_t i = 0; i < n; ++i) {
    const auto at = r.offset();
    const auto label = r.u32("label");
    if (label >= d.classes) throw ParseError(detail::concat("label ", label, " out of range"), at);
    d.labels.push_back(static_cast<int>(label));
    for (std::size_t k = 0; k < d.image_size(); ++k) d.pixels.push_back(r.f32("pixels"));
  }
  if (!r.done()) throw ParseError("trailing bytes after dataset", r.offset());
  return d;
}

inline void save_dataset(const std::string& path, const Dataset& d) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write " + path);
  const auto bytes = encode_dataset(d);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

// ---------------------------------------------------------------------------
// Synthetic textures. Each class is a flip-invariant pattern family; colours,
// phase, scale, centre and pixel noise vary per image, so the class survives
// the standard two-view augmentations while low-level statistics do not
// identify it.
// ---------------------------------------------------------------------------

namespace detail {

inline double pattern_value(std::size_t cls, double u, double v, double freq, double phase, double cu,
                            double cv) {
  constexpr double pi = std::numbers::pi;
  const double du = u - cu, dv = v - cv;
  const double r = std::sqrt(du * du + dv * dv);
  switch (cls % 10) {
    case 0: return std::cos(2 * pi * freq * v + phase);
    case 1: return std::cos(2 * pi * 2.2 * freq * v + phase);
    case 2: return std::cos(2 * pi * freq * u + phase);
    case 3: return std::cos(2 * pi * 2.2 * freq * u + phase);
    case 4: return std::cos(2 * pi * freq * u + phase) * std::cos(2 * pi * freq * v + phase);
    case 5: return std::cos(2 * pi * 1.6 * freq * r + phase);
    case 6: return std::cos(8 * std::atan2(dv, du) + phase);
    case 7:
      return 0.5 * (std::cos(2 * pi * freq * (u + v) / std::numbers::sqrt2 + phase) +
                    std::cos(2 * pi * freq * (u - v) / std::numbers::sqrt2 + phase));
    case 8: {
      const double d = std::cos(2 * pi * 1.5 * freq * u + phase) + std::cos(2 * pi * 1.5 * freq * v + phase);
      return d > 1.0 ? 1.0 : -1.0;
    }
    default: return std::exp(-r * r / 0.05) * 2.0 - 1.0;
  }
}

}  // namespace detail

/// Draws `n` labelled images from per-example streams (seed, "synthetic", split, i).
inline Dataset make_synthetic(std::size_t n, std::size_t classes, std::size_t height, std::size_t width,
                              std::uint64_t seed, std::uint64_t split, double noise = 0.08) {
  if (classes < 2) throw ConfigError("synthetic dataset needs at least 2 classes");
  Dataset d;
  d.channels = 3;
  d.height = height;
  d.width = width;
  d.classes = classes;
  d.labels.resize(n);
  d.pixels.resize(n * d.image_size());
  parallel_for(n, [&](std::size_t i) {
    auto rng = make_stream(seed, "synthetic", split, i);
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    std::normal_distribution<double> gauss(0.0, noise);
    const int label = static_cast<int>(i % classes);
    const double freq = 2.5 * (0.85 + 0.3 * uni(rng));
    const double phase = 2 * std::numbers::pi * uni(rng);
    const double cu = 0.3 + 0.4 * uni(rng), cv = 0.3 + 0.4 * uni(rng);
    double fg[3], bg[3];
    for (int c = 0; c < 3; ++c) {
      fg[c] = uni(rng);
      bg[c] = uni(rng);
    }
    // Keep foreground/background separable in brightness.
    const double gap = (fg[0] + fg[1] + fg[2] - bg[0] - bg[1] - bg[2]) / 3.0;
    if (std::abs(gap) < 0.25) {
      for (double& c : fg) c = std::min(1.0, c + 0.3);
      for (double& c : bg) c = std::max(0.0, c - 0.3);
    }
    float* out = d.pixels.data() + i * d.image_size();
    for (std::size_t y = 0; y < height; ++y)
      for (std::size_t x = 0; x < width; ++x) {
        const double u = (static_cast<double>(x) + 0.5) / static_cast<double>(width);
        const double v = (static_cast<double>(y) + 0.5) / static_cast<double>(height);
        const double t = 0.5 + 0.5 * detail::pattern_value(static_cast<std::size_t>(label), u, v, freq, phase, cu, cv);
        for (std::size_t c = 0; c < 3; ++c) {
          const double val = t * fg[c] + (1.0 - t) * bg[c] + gauss(rng);
          out[(c * height + y) * width + x] = static_cast<float>(std::clamp(val, 0.0, 1.0));
        }
      }
    d.labels[i] = label;
  });
  return d;
}

inline DatasetSplit load_dataset(const DatasetDescriptor& desc, std::uint64_t seed) {
  desc.validate();
  DatasetSplit split;
  switch (desc.source) {
    case DataSource::synthetic:
      split.train = make_synthetic(desc.train_size, desc.classes, desc.height, desc.width, seed, 0,
                                   desc.synthetic_noise);
      split.val = make_synthetic(desc.val_size, desc.classes, desc.height, desc.width, seed, 1,
                                 desc.synthetic_noise);
      break;
    case DataSource::cifar10_binary:
      split = load_cifar10_dir(desc.resolved_path(), desc.train_size, desc.val_size);
      break;
    case DataSource::raw_tensor_file: {
      const auto base = desc.resolved_path();
      split.train = decode_dataset(detail::read_file(base + ".train.bin")).head(desc.train_size);
      split.val = decode_dataset(detail::read_file(base + ".val.bin")).head(desc.val_size);
      break;
    }
  }
  for (const auto* d : {&split.train, &split.val}) {
    if (d->height != desc.height || d->width != desc.width) {
      throw ConfigError(detail::concat("dataset images are ", d->height, "x", d->width, ", config expects ",
                                       desc.height, "x", desc.width));
    }
    if (d->classes != desc.classes) {
      throw ConfigError(detail::concat("dataset has ", d->classes, " classes, config expects ", desc.classes));
    }
  }
  return split;
}

}  // namespace bwssl
