#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <numeric>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "bwssl/augment.hpp"
#include "bwssl/checkpoint.hpp"
#include "bwssl/losses.hpp"
#include "bwssl/optim.hpp"
#include "bwssl/pooling.hpp"

namespace bwssl {

// ---------------------------------------------------------------------------
// Accuracy
// ---------------------------------------------------------------------------

/// Index of the largest score in a row; ties go to the lowest index.
inline std::size_t argmax(std::span<const double> row) {
  std::size_t best = 0;
  for (std::size_t j = 1; j < row.size(); ++j)
    if (row[j] > row[best]) best = j;
  return best;
}

/// Fraction of rows of `scores` ([N, classes], row-major) whose argmax equals the label.
inline double top1_accuracy(const std::vector<double>& scores, std::size_t classes, const std::vector<int>& labels) {
  if (classes == 0 || scores.size() != labels.size() * classes) {
    throw ShapeError(detail::concat("top1_accuracy: ", scores.size(), " scores for ", labels.size(), " labels x ",
                                    classes, " classes"));
  }
  if (labels.empty()) throw ShapeError("top1_accuracy: no examples");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (static_cast<int>(argmax({scores.data() + i * classes, classes})) == labels[i]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(labels.size());
}

// ---------------------------------------------------------------------------
// Frozen features
// ---------------------------------------------------------------------------

/// Globally pooled activations of one block: rows x dim, row-major.
struct BlockFeatures {
  std::size_t rows = 0, dim = 0;
  std::vector<double> values;
};

namespace detail {

template <typename T>
void append_pooled(const Tensor<T>& act, BlockFeatures& f) {
  const auto pooled = gsp(act);
  f.dim = pooled.dim(1);
  f.rows += pooled.dim(0);
  for (auto v : pooled.data()) f.values.push_back(static_cast<double>(v));
}

}  // namespace detail

/// Runs the encoder in evaluation mode over `images` ([N, C, H, W] batches
/// drawn by `batch_of`) and returns GSP features of blocks 1..up_to.
template <typename T, typename BatchFn>
std::vector<BlockFeatures> pooled_features(Encoder<T>& encoder, std::size_t n, std::size_t up_to, std::size_t batch,
                                           BatchFn batch_of) {
  if (up_to == 0 || up_to > encoder.num_blocks()) {
    throw ConfigError(detail::concat("block ", up_to, " outside 1..", encoder.num_blocks()));
  }
  NoGradGuard no_grad;
  encoder.set_bn_mode(BnMode::eval);
  std::vector<BlockFeatures> out(up_to);
  EncoderForwardOptions opt;
  opt.up_to = up_to;
  for (std::size_t lo = 0; lo < n; lo += batch) {
    std::vector<std::size_t> idx(std::min(batch, n - lo));
    std::iota(idx.begin(), idx.end(), lo);
    const auto acts = encoder.forward(batch_of(idx), opt);
    for (std::size_t k = 0; k < up_to; ++k) detail::append_pooled(acts[k], out[k]);
  }
  return out;
}

template <typename T>
std::vector<BlockFeatures> pooled_features(Encoder<T>& encoder, const Dataset& data, std::size_t up_to,
                                           std::size_t batch = 256) {
  return pooled_features(encoder, data.size(), up_to, batch,
                         [&](const std::vector<std::size_t>& idx) { return plain_batch<T>(data, idx); });
}

// ---------------------------------------------------------------------------
// Linear probe
// ---------------------------------------------------------------------------

struct ProbeConfig {
  std::vector<double> lrs{0.1, 0.3, 1.0};
  std::size_t epochs = 30;
  std::size_t batch = 256;
  double momentum = 0.9;
  double weight_decay = 0.0;
  std::uint64_t seed = 0;

  void validate() const {
    if (lrs.empty()) throw ConfigError("probe learning-rate grid is empty");
    for (double lr : lrs)
      if (!(lr > 0.0)) throw ConfigError("probe learning rates must be positive");
    if (epochs == 0 || batch == 0) throw ConfigError("probe epochs and batch must be positive");
  }
};

/// Affine classifier over standardised features.
struct LinearProbe {
  std::size_t block = 0;  // 1-based
  std::size_t dim = 0, classes = 0;
  std::vector<double> mean, inv_std;
  std::vector<double> weight;  // dim x classes
  std::vector<double> bias;

  std::vector<double> standardize(const BlockFeatures& f) const {
    std::vector<double> x(f.values);
    for (std::size_t i = 0; i < f.rows; ++i)
      for (std::size_t j = 0; j < dim; ++j) x[i * dim + j] = (x[i * dim + j] - mean[j]) * inv_std[j];
    return x;
  }

  std::vector<double> scores(const BlockFeatures& f) const {
    if (f.dim != dim) throw ShapeError(detail::concat("probe expects width ", dim, ", got ", f.dim));
    const auto x = standardize(f);
    std::vector<double> s(f.rows * classes);
    for (std::size_t i = 0; i < f.rows; ++i)
      for (std::size_t c = 0; c < classes; ++c) {
        double acc = bias[c];
        for (std::size_t j = 0; j < dim; ++j) acc += x[i * dim + j] * weight[j * classes + c];
        s[i * classes + c] = acc;
      }
    return s;
  }

  double accuracy(const BlockFeatures& f, const std::vector<int>& labels) const {
    return top1_accuracy(scores(f), classes, labels);
  }
};

struct ProbeEntry {
  std::size_t block = 0;
  double top1 = 0;
  double best_lr = 0;
  std::size_t epochs = 0;
  std::vector<double> grid_top1;  // one per grid learning rate
  std::vector<double> per_class;
  LinearProbe probe;
};

struct ProbeReport {
  std::vector<ProbeEntry> entries;
};

/// Trains one probe per grid learning rate (SGD with momentum, cosine decay)
/// and keeps the one with the best held-out top-1 (first on ties).
inline ProbeEntry fit_probe(const BlockFeatures& train, const std::vector<int>& train_labels, const BlockFeatures& val,
                            const std::vector<int>& val_labels, std::size_t classes, const ProbeConfig& cfg,
                            std::size_t block = 0) {
  cfg.validate();
  if (train.rows != train_labels.size() || val.rows != val_labels.size()) {
    throw ShapeError("fit_probe: feature rows and labels differ");
  }
  LinearProbe base;
  base.block = block;
  base.dim = train.dim;
  base.classes = classes;
  base.mean.assign(train.dim, 0.0);
  base.inv_std.assign(train.dim, 1.0);
  for (std::size_t i = 0; i < train.rows; ++i)
    for (std::size_t j = 0; j < train.dim; ++j) base.mean[j] += train.values[i * train.dim + j];
  for (auto& m : base.mean) m /= static_cast<double>(train.rows);
  for (std::size_t j = 0; j < train.dim; ++j) {
    double ss = 0;
    for (std::size_t i = 0; i < train.rows; ++i) {
      const double d = train.values[i * train.dim + j] - base.mean[j];
      ss += d * d;
    }
    const double sd = std::sqrt(ss / static_cast<double>(train.rows));
    base.inv_std[j] = sd > 1e-12 ? 1.0 / sd : 0.0;
  }
  const auto x = base.standardize(train);
  const std::size_t d = train.dim, n = train.rows;
  const std::size_t per_epoch = (n + cfg.batch - 1) / cfg.batch;

  ProbeEntry best;
  best.block = block;
  best.epochs = cfg.epochs;
  best.top1 = -1;
  for (std::size_t g = 0; g < cfg.lrs.size(); ++g) {
    auto w = Tensor<double>(Shape{d, classes}, 0.0).set_requires_grad(true);
    auto b = Tensor<double>(Shape{classes}, 0.0).set_requires_grad(true);
    Sgd<double> opt({{"weight", w, true}, {"bias", b, false}}, {cfg.momentum, cfg.weight_decay});
    CosineSchedule sched{cfg.lrs[g], cfg.epochs * per_epoch, 0};
    std::size_t step = 0;
    std::vector<std::size_t> perm(n);
    for (std::size_t e = 0; e < cfg.epochs; ++e) {
      std::iota(perm.begin(), perm.end(), 0);
      auto rng = make_stream(cfg.seed, "probe", block, g, e);
      std::shuffle(perm.begin(), perm.end(), rng);
      for (std::size_t lo = 0; lo < n; lo += cfg.batch) {
        const std::size_t m = std::min(cfg.batch, n - lo);
        std::vector<double> xb(m * d);
        std::vector<int> yb(m);
        for (std::size_t r = 0; r < m; ++r) {
          std::copy_n(x.begin() + static_cast<std::ptrdiff_t>(perm[lo + r] * d), d, xb.begin() + static_cast<std::ptrdiff_t>(r * d));
          yb[r] = train_labels[perm[lo + r]];
        }
        auto logits = add(matmul(Tensor<double>(Shape{m, d}, std::move(xb)), w), b);
        auto loss = supervised_ce_loss(logits, yb).loss;
        opt.zero_grad();
        backward(loss);
        opt.step(sched(step++));
      }
    }
    LinearProbe probe = base;
    probe.weight.assign(w.data().begin(), w.data().end());
    probe.bias.assign(b.data().begin(), b.data().end());
    const double acc = probe.accuracy(val, val_labels);
    best.grid_top1.push_back(acc);
    if (acc > best.top1) {
      best.top1 = acc;
      best.best_lr = cfg.lrs[g];
      best.probe = std::move(probe);
    }
  }
  const auto s = best.probe.scores(val);
  std::vector<double> hit(classes, 0), count(classes, 0);
  for (std::size_t i = 0; i < val.rows; ++i) {
    const auto y = static_cast<std::size_t>(val_labels[i]);
    count[y] += 1;
    if (argmax({s.data() + i * classes, classes}) == y) hit[y] += 1;
  }
  for (std::size_t c = 0; c < classes; ++c) best.per_class.push_back(count[c] > 0 ? hit[c] / count[c] : 0.0);
  return best;
}

/// Probes the frozen encoder at each requested block (1-based).
template <typename T>
ProbeReport linear_probe(Encoder<T>& encoder, const DatasetSplit& data, const std::vector<std::size_t>& blocks,
                         const ProbeConfig& cfg) {
  std::size_t top = 0;
  for (auto k : blocks) {
    if (k == 0 || k > encoder.num_blocks()) {
      throw ConfigError(detail::concat("probe block ", k, " outside 1..", encoder.num_blocks()));
    }
    top = std::max(top, k);
  }
  ProbeReport report;
  if (blocks.empty()) return report;
  const auto train = pooled_features(encoder, data.train, top);
  const auto val = pooled_features(encoder, data.val, top);
  for (auto k : blocks) {
    report.entries.push_back(
        fit_probe(train[k - 1], data.train.labels, val[k - 1], data.val.labels, data.train.classes, cfg, k));
  }
  return report;
}

// ---------------------------------------------------------------------------
// Cross-correlation diagnostics
// ---------------------------------------------------------------------------

struct Quantiles {
  double min = 0, q25 = 0, median = 0, q75 = 0, max = 0, mean = 0;
};

inline Quantiles summarize(std::vector<double> v) {
  Quantiles q;
  if (v.empty()) return q;
  std::sort(v.begin(), v.end());
  auto at = [&](double p) {
    const double pos = p * static_cast<double>(v.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, v.size() - 1);
    return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
  };
  q.min = v.front();
  q.max = v.back();
  q.q25 = at(0.25);
  q.median = at(0.5);
  q.q75 = at(0.75);
  q.mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  return q;
}

struct CorrelationEntry {
  std::size_t block = 0;
  std::vector<double> on_diagonal, off_diagonal;
  Quantiles on, off;
};

struct CorrelationStats {
  std::vector<CorrelationEntry> entries;
};

/// Centred cross-correlation of two feature views, entries clamped to [-1, 1].
inline CorrelationEntry correlation_entry(const BlockFeatures& a, const BlockFeatures& b, std::size_t block = 0) {
  if (a.rows != b.rows || a.dim != b.dim || a.rows < 2) {
    throw ShapeError("correlation needs two matching views of at least 2 samples");
  }
  const auto c = cross_correlation(Tensor<double>(Shape{a.rows, a.dim}, a.values),
                                   Tensor<double>(Shape{b.rows, b.dim}, b.values), true);
  CorrelationEntry e;
  e.block = block;
  const auto cv = c.data();
  for (std::size_t i = 0; i < a.dim; ++i)
    for (std::size_t j = 0; j < a.dim; ++j) {
      const double v = std::clamp(cv[i * a.dim + j], -1.0, 1.0);
      (i == j ? e.on_diagonal : e.off_diagonal).push_back(v);
    }
  e.on = summarize(e.on_diagonal);
  e.off = summarize(e.off_diagonal);
  return e;
}

/// Two augmented views of every image in `sample`, pooled backbone features
/// of blocks 1..up_to (no projector), one correlation entry per block.
template <typename T>
CorrelationStats correlation_diagnostics(Encoder<T>& encoder, const Dataset& sample, const ViewPipeline& pipeline,
                                         std::uint64_t seed, std::size_t up_to = 0, std::size_t batch = 256) {
  if (sample.size() < 2) throw ConfigError("correlation diagnostics need at least 2 samples");
  if (up_to == 0) up_to = encoder.num_blocks();
  std::array<std::vector<BlockFeatures>, 2> views;
  for (std::size_t v = 0; v < 2; ++v) {
    views[v] = pooled_features(encoder, sample.size(), up_to, batch, [&](const std::vector<std::size_t>& idx) {
      auto pair = view_batches<T>(sample, idx, pipeline, seed, 0, 0);
      return v == 0 ? pair.first : pair.second;
    });
  }
  CorrelationStats stats;
  for (std::size_t k = 0; k < up_to; ++k) stats.entries.push_back(correlation_entry(views[0][k], views[1][k], k + 1));
  return stats;
}

// ---------------------------------------------------------------------------
// Corruptions
// ---------------------------------------------------------------------------

enum class CorruptionKind { gaussian_noise, blur, contrast, pixelate };

inline std::string to_string(CorruptionKind k) {
  switch (k) {
    case CorruptionKind::gaussian_noise: return "gaussian-noise";
    case CorruptionKind::blur: return "blur";
    case CorruptionKind::contrast: return "contrast";
    case CorruptionKind::pixelate: return "pixelate";
  }
  return "?";
}

inline CorruptionKind corruption_kind_from_string(const std::string& s) {
  for (auto k : {CorruptionKind::gaussian_noise, CorruptionKind::blur, CorruptionKind::contrast,
                 CorruptionKind::pixelate}) {
    if (to_string(k) == s) return k;
  }
  throw ConfigError("unknown corruption '" + s + "'");
}

inline std::vector<CorruptionKind> all_corruptions() {
  return {CorruptionKind::gaussian_noise, CorruptionKind::blur, CorruptionKind::contrast, CorruptionKind::pixelate};
}

/// Strength parameter of severity 1..5 (32x32 scale): noise std, blur sigma,
/// contrast factor, pixelation resize factor.
inline double corruption_level(CorruptionKind k, std::size_t severity) {
  static const double noise[] = {0.04, 0.06, 0.08, 0.09, 0.10};
  static const double blur[] = {0.4, 0.6, 0.7, 0.8, 1.0};
  static const double contrast[] = {0.75, 0.5, 0.4, 0.3, 0.15};
  static const double pixelate[] = {0.95, 0.9, 0.85, 0.75, 0.65};
  if (severity < 1 || severity > 5) throw ConfigError(detail::concat("severity ", severity, " outside 1..5"));
  switch (k) {
    case CorruptionKind::gaussian_noise: return noise[severity - 1];
    case CorruptionKind::blur: return blur[severity - 1];
    case CorruptionKind::contrast: return contrast[severity - 1];
    case CorruptionKind::pixelate: return pixelate[severity - 1];
  }
  return 0;
}

namespace augment_ops {

/// Box-average down to round(f * side), then nearest-neighbour back up.
inline void pixelate(Image& img, double factor) {
  const std::size_t h = img.height, w = img.width;
  const std::size_t sh = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(factor * static_cast<double>(h))));
  const std::size_t sw = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(factor * static_cast<double>(w))));
  for (std::size_t c = 0; c < img.channels; ++c) {
    std::vector<double> small(sh * sw, 0.0), count(sh * sw, 0.0);
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        const std::size_t cell = (y * sh / h) * sw + x * sw / w;
        small[cell] += img.at(c, y, x);
        count[cell] += 1;
      }
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        const std::size_t cell = (y * sh / h) * sw + x * sw / w;
        img.at(c, y, x) = clamp01(small[cell] / count[cell]);
      }
  }
}

}  // namespace augment_ops

/// Applies corruption `k` at strength `level` (see corruption_level).
inline void apply_corruption(Image& img, CorruptionKind k, double level, Rng& rng) {
  switch (k) {
    case CorruptionKind::gaussian_noise: {
      std::normal_distribution<double> n(0.0, level);
      for (auto& v : img.values) v = augment_ops::clamp01(v + n(rng));
      break;
    }
    case CorruptionKind::blur:
      augment_ops::gaussian_blur(img, level, std::max<long>(1, static_cast<long>(std::ceil(3 * level))));
      break;
    case CorruptionKind::contrast: {
      double m = 0;
      for (auto v : img.values) m += v;
      m /= static_cast<double>(img.values.size());
      for (auto& v : img.values) v = augment_ops::clamp01((v - m) * level + m);
      break;
    }
    case CorruptionKind::pixelate: augment_ops::pixelate(img, level); break;
  }
}

/// A corrupted copy of `data`; per-image noise comes from (seed, "corrupt", kind, level bits, i).
inline Dataset corrupt_dataset(const Dataset& data, CorruptionKind k, double level, std::uint64_t seed) {
  Dataset out = data;
  parallel_for(data.size(), [&](std::size_t i) {
    auto img = data.image(i);
    auto rng = make_stream(seed, "corrupt", static_cast<std::uint64_t>(k), std::bit_cast<std::uint64_t>(level), i);
    apply_corruption(img, k, level, rng);
    std::copy(img.values.begin(), img.values.end(), out.pixels.begin() + static_cast<std::ptrdiff_t>(i * data.image_size()));
  });
  return out;
}

struct CorruptionRow {
  CorruptionKind kind;
  std::size_t severity = 0;  // 0 is the uncorrupted control
  double error = 0;
};

struct CorruptionSummary {
  CorruptionKind kind;
  double mean_error = 0;
  double std_error = 0;  // population std over the severities
};

struct CorruptionReport {
  double clean_error = 0;
  std::vector<CorruptionRow> rows;
  std::vector<CorruptionSummary> summary;
};

/// Top-1 error of `probe` on corrupted copies of `val` for every kind and
/// severity; each kind also gets a severity-0 control row.
template <typename T>
CorruptionReport corruption_eval(Encoder<T>& encoder, const LinearProbe& probe, const Dataset& val,
                                 const std::vector<CorruptionKind>& kinds,
                                 const std::vector<std::size_t>& severities = {1, 2, 3, 4, 5}, std::uint64_t seed = 0) {
  auto error_on = [&](const Dataset& d) {
    const auto f = pooled_features(encoder, d, probe.block);
    return 1.0 - probe.accuracy(f[probe.block - 1], d.labels);
  };
  CorruptionReport report;
  report.clean_error = error_on(val);
  for (auto k : kinds) {
    report.rows.push_back({k, 0, report.clean_error});
    std::vector<double> errs;
    for (auto s : severities) {
      const double e = error_on(corrupt_dataset(val, k, corruption_level(k, s), seed));
      report.rows.push_back({k, s, e});
      errs.push_back(e);
    }
    CorruptionSummary sum{k, 0, 0};
    if (!errs.empty()) {
      sum.mean_error = std::accumulate(errs.begin(), errs.end(), 0.0) / static_cast<double>(errs.size());
      double ss = 0;
      for (double e : errs) ss += (e - sum.mean_error) * (e - sum.mean_error);
      sum.std_error = std::sqrt(ss / static_cast<double>(errs.size()));
    }
    report.summary.push_back(sum);
  }
  return report;
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

namespace detail {

inline std::ofstream open_report(const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw ConfigError("cannot write " + path);
  out.precision(10);
  return out;
}

}  // namespace detail

inline void write_probe_csv(const std::string& path, const ProbeReport& r) {
  auto out = detail::open_report(path);
  out << "block,top1,best_lr,epochs\n";
  for (const auto& e : r.entries) out << e.block << ',' << e.top1 << ',' << e.best_lr << ',' << e.epochs << '\n';
}

inline nlohmann::json to_json(const ProbeReport& r, const ProbeConfig& cfg) {
  nlohmann::json j;
  j["lrs"] = cfg.lrs;
  j["epochs"] = cfg.epochs;
  j["entries"] = nlohmann::json::array();
  for (const auto& e : r.entries) {
    j["entries"].push_back({{"block", e.block}, {"top1", e.top1}, {"best_lr", e.best_lr},
                            {"grid_top1", e.grid_top1}, {"per_class", e.per_class}});
  }
  return j;
}

inline nlohmann::json to_json(const Quantiles& q) {
  return {{"min", q.min}, {"q25", q.q25}, {"median", q.median}, {"q75", q.q75}, {"max", q.max}, {"mean", q.mean}};
}

inline nlohmann::json to_json(const CorrelationStats& s) {
  nlohmann::json j = nlohmann::json::array();
  for (const auto& e : s.entries) {
    j.push_back({{"block", e.block},
                 {"on_summary", to_json(e.on)},
                 {"off_summary", to_json(e.off)},
                 {"on_diagonal", e.on_diagonal},
                 {"off_diagonal", e.off_diagonal}});
  }
  return j;
}

inline void write_corruption_csv(const std::string& path, const CorruptionReport& r) {
  auto out = detail::open_report(path);
  out << "kind,severity,error\n";
  for (const auto& row : r.rows) out << to_string(row.kind) << ',' << row.severity << ',' << row.error << '\n';
}

inline void write_corruption_summary_csv(const std::string& path, const CorruptionReport& r) {
  auto out = detail::open_report(path);
  out << "kind,mean_error,std_error,clean_error\n";
  for (const auto& s : r.summary) {
    out << to_string(s.kind) << ',' << s.mean_error << ',' << s.std_error << ',' << r.clean_error << '\n';
  }
}

}  // namespace bwssl
