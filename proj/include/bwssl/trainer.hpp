#pragma once

#include <algorithm>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "bwssl/augment.hpp"
#include "bwssl/checkpoint.hpp"
#include "bwssl/losses.hpp"
#include "bwssl/optim.hpp"
#include "bwssl/pooling.hpp"

namespace bwssl {

enum class RegimeKind {
  end_to_end,
  simultaneous,
  sequential,
  supervised_blockwise,
  random_frozen,
  merged_first,
  first_block_pretrained
};

inline std::string to_string(RegimeKind k) {
  switch (k) {
    case RegimeKind::end_to_end: return "end-to-end";
    case RegimeKind::simultaneous: return "simultaneous";
    case RegimeKind::sequential: return "sequential";
    case RegimeKind::supervised_blockwise: return "supervised-blockwise";
    case RegimeKind::random_frozen: return "random-frozen";
    case RegimeKind::merged_first: return "merged-first";
    case RegimeKind::first_block_pretrained: return "first-block-pretrained";
  }
  return "?";
}

inline RegimeKind regime_kind_from_string(const std::string& s) {
  for (auto k : {RegimeKind::end_to_end, RegimeKind::simultaneous, RegimeKind::sequential,
                 RegimeKind::supervised_blockwise, RegimeKind::random_frozen, RegimeKind::merged_first,
                 RegimeKind::first_block_pretrained}) {
    if (to_string(k) == s) return k;
  }
  throw ConfigError("unknown regime '" + s + "'");
}

struct RegimeConfig {
  RegimeKind kind = RegimeKind::simultaneous;
  // sequential: frozen blocks keep normalising with batch statistics.
  bool bn_stats_live = false;
  // random-frozen: 1-based block that trains; 0 means the last block.
  std::size_t trained_block = 0;
  // merged-first: number of leading blocks fused into one training block.
  std::size_t merge_count = 2;
  // first-block-pretrained: checkpoint holding block 1.
  std::string pretrained_checkpoint;
};

enum class RoutingScheme { train_all_below, weighted_others };

inline std::string to_string(RoutingScheme s) {
  return s == RoutingScheme::train_all_below ? "train-all-below" : "weighted-others";
}

inline RoutingScheme routing_scheme_from_string(const std::string& s) {
  if (s == "train-all-below") return RoutingScheme::train_all_below;
  if (s == "weighted-others") return RoutingScheme::weighted_others;
  throw ConfigError("unknown routing scheme '" + s + "'");
}

struct RoutingConfig {
  bool enabled = false;
  RoutingScheme scheme = RoutingScheme::train_all_below;
  // Weight of non-assigned blocks under weighted-others.
  double weight = 0.5;

  void validate() const {
    if (!(weight >= 0.0 && weight <= 1.0)) throw ConfigError("routing weight must lie in [0, 1]");
  }
};

/// Block assignment (0-based, ascending difficulty -> ascending block) and
/// the per-block example weights, indexed [block][example].
struct Routing {
  std::vector<std::size_t> block;
  std::vector<std::vector<double>> weights;
};

/// Splits examples into `blocks` equal quantile groups by difficulty; ties
/// keep example order.
inline Routing route_examples(const std::vector<double>& difficulty, std::size_t blocks, const RoutingConfig& cfg) {
  if (blocks == 0) throw ConfigError("routing needs at least one block");
  const std::size_t n = difficulty.size();
  for (double d : difficulty) {
    if (!std::isfinite(d)) throw NumericError("routing difficulty is not finite");
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return difficulty[a] < difficulty[b]; });
  Routing r;
  r.block.resize(n);
  for (std::size_t rank = 0; rank < n; ++rank) r.block[order[rank]] = rank * blocks / n;
  r.weights.assign(blocks, std::vector<double>(n, 1.0));
  if (!cfg.enabled) return r;
  for (std::size_t b = 0; b < blocks; ++b)
    for (std::size_t i = 0; i < n; ++i) {
      if (cfg.scheme == RoutingScheme::train_all_below) {
        r.weights[b][i] = b <= r.block[i] ? 1.0 : 0.0;
      } else {
        r.weights[b][i] = b == r.block[i] ? 1.0 : cfg.weight;
      }
    }
  return r;
}

struct ProjectorConfig {
  std::size_t hidden = 512;
  std::size_t out = 512;
  std::size_t depth = 3;
};

struct HeadConfig {
  PoolingConfig pooling;
  ProjectorConfig projector;
  BlockLossConfig loss;
};

enum class AugmentKind { full, adaptive, none };

inline std::string to_string(AugmentKind k) {
  switch (k) {
    case AugmentKind::full: return "full";
    case AugmentKind::adaptive: return "adaptive";
    case AugmentKind::none: return "none";
  }
  return "?";
}

inline AugmentKind augment_kind_from_string(const std::string& s) {
  for (auto k : {AugmentKind::full, AugmentKind::adaptive, AugmentKind::none}) {
    if (to_string(k) == s) return k;
  }
  throw ConfigError("unknown augmentation schedule '" + s + "'");
}

struct AugmentConfig {
  AugmentKind kind = AugmentKind::full;
  double small_crop_scale = 0.6;

  AugmentationSchedule schedule(std::size_t groups) const {
    switch (kind) {
      case AugmentKind::adaptive: return AugmentationSchedule::adaptive(groups, small_crop_scale);
      case AugmentKind::none: return AugmentationSchedule::uniform(groups, ViewPipeline{});
      default: return AugmentationSchedule::uniform(groups);
    }
  }
};

struct OptimConfig {
  double base_lr = 0.2;
  std::size_t warmup_epochs = 0;
  LarsConfig lars;
};

struct TrainConfig {
  EncoderSpec encoder = EncoderSpec::desk();
  // One entry shared by every head, or one per encoder block (a head is
  // selected by the top block of its training group).
  std::vector<HeadConfig> heads{HeadConfig{}};
  RegimeConfig regime;
  OptimConfig optim;
  AugmentConfig augment;
  NoiseConfig noise;
  RoutingConfig routing;
  std::size_t epochs = 30;
  std::size_t batch_size = 256;
  std::uint64_t seed = 0;
  // Gradient-isolation audit period in steps (0 = never).
  std::size_t audit_every = 0;
  // One backward pass over the summed block losses instead of one per block.
  bool combined_backward = false;
  // Epoch interval of intermediate checkpoints (0 = final only).
  std::size_t checkpoint_every = 0;
  // Run directory for metrics.jsonl and checkpoints; empty keeps everything in memory.
  std::string out_dir;

  const HeadConfig& head_for(std::size_t top_block) const {
    if (heads.size() == 1) return heads.front();
    if (heads.size() != encoder.blocks.size()) {
      throw ConfigError(detail::concat("need 1 or ", encoder.blocks.size(), " head configs, got ", heads.size()));
    }
    return heads.at(top_block);
  }

  void validate() const {
    encoder.validate();
    if (heads.empty()) throw ConfigError("at least one head config is required");
    for (std::size_t b = 0; b < encoder.blocks.size(); ++b) {
      const auto& h = head_for(b);
      h.loss.validate();
      if (h.projector.depth == 0 || h.projector.hidden == 0 || h.projector.out == 0) {
        throw ConfigError("projector depth and widths must be positive");
      }
    }
    if (epochs == 0) throw ConfigError("epochs must be positive");
    if (batch_size < 2) throw ConfigError("batch size must be at least 2");
    if (noise.sigma < 0.0) throw ConfigError("noise sigma must be non-negative");
    if (optim.base_lr < 0.0) throw ConfigError("learning rate must be non-negative");
    routing.validate();
    const auto nb = encoder.blocks.size();
    switch (regime.kind) {
      case RegimeKind::random_frozen:
        if (regime.trained_block > nb) {
          throw ConfigError(detail::concat("random-frozen block ", regime.trained_block, " beyond ", nb, " blocks"));
        }
        break;
      case RegimeKind::merged_first:
        if (regime.merge_count < 2 || regime.merge_count > nb) {
          throw ConfigError(detail::concat("merge count must lie in [2, ", nb, "], got ", regime.merge_count));
        }
        break;
      case RegimeKind::first_block_pretrained:
        if (regime.pretrained_checkpoint.empty()) throw ConfigError("first-block-pretrained needs a checkpoint path");
        if (!std::filesystem::exists(regime.pretrained_checkpoint)) {
          throw ConfigError("missing checkpoint " + regime.pretrained_checkpoint);
        }
        break;
      default: break;
    }
  }
};

/// One metrics line: {step, block, loss, invariance, redundancy, lr}.
struct StepRecord {
  std::size_t step = 0;
  std::size_t epoch = 0;
  std::size_t block = 0;  // 1-based top block of the training group
  double loss = 0, invariance = 0, redundancy = 0, lr = 0;

  nlohmann::json to_json() const {
    return {{"step", step}, {"epoch", epoch}, {"block", block}, {"loss", loss},
            {"invariance", invariance}, {"redundancy", redundancy}, {"lr", lr}};
  }
};

struct AuditReport {
  std::size_t audited_steps = 0;
  std::size_t checked_tensors = 0;
  std::size_t violations = 0;
  std::string first_violation;
};

struct TrainResult {
  std::vector<StepRecord> records;
  AuditReport audit;
  std::size_t steps = 0;
};

struct StepInfo {
  std::size_t step = 0;
  std::size_t epoch = 0;
  std::size_t phase = 0;
};

/// Runs one training regime over an encoder with one local head per
/// training group.
template <typename T>
class Trainer {
 public:
  struct Group {
    std::vector<std::size_t> blocks;
    std::size_t top = 0;
    HeadConfig head_cfg;
    Pooling<T> pool;
    Projector<T> proj;
    bool trainable = true;
    NamedTensors<T> params;  // encoder blocks + head
    Lars<T> opt;
    CosineSchedule schedule;
    std::size_t local_step = 0;

    std::string head_prefix() const { return "head" + std::to_string(top + 1); }
  };

  struct Phase {
    std::vector<std::size_t> groups;
    std::size_t epochs = 0;
  };

  Trainer(TrainConfig cfg, const Dataset& train) : cfg_(std::move(cfg)), data_(train) {
    cfg_.validate();
    cfg_.encoder.validate(train.height, train.width);
    if (train.channels != cfg_.encoder.in_channels) {
      throw ConfigError(detail::concat("dataset has ", train.channels, " channels, encoder expects ",
                                       cfg_.encoder.in_channels));
    }
    steps_per_epoch_ = train.size() / cfg_.batch_size;
    if (steps_per_epoch_ == 0) {
      throw ConfigError(detail::concat("dataset of ", train.size(), " images is smaller than batch ", cfg_.batch_size));
    }
    encoder_ = Encoder<T>(cfg_.encoder, cfg_.seed);
    build_groups();
    build_phases();
    schedule_ = cfg_.augment.schedule(groups_.size());
    difficulty_.assign(train.size(), 0.0);
    next_difficulty_.assign(train.size(), 0.0);
  }

  void set_step_hook(std::function<void(const StepInfo&)> hook) { hook_ = std::move(hook); }

  TrainResult run() {
    std::ofstream metrics;
    if (!cfg_.out_dir.empty()) {
      std::filesystem::create_directories(cfg_.out_dir);
      metrics.open(std::filesystem::path(cfg_.out_dir) / "metrics.jsonl", std::ios::trunc);
      if (!metrics) throw ConfigError("cannot write metrics under " + cfg_.out_dir);
    }
    TrainResult result;
    std::size_t epoch = 0;
    for (std::size_t ph = 0; ph < phases_.size(); ++ph) {
      enter_phase(ph);
      for (std::size_t e = 0; e < phases_[ph].epochs; ++e, ++epoch) {
        auto perm = epoch_order(epoch);
        for (std::size_t s = 0; s < steps_per_epoch_; ++s) {
          std::vector<std::size_t> idx(perm.begin() + static_cast<std::ptrdiff_t>(s * cfg_.batch_size),
                                       perm.begin() + static_cast<std::ptrdiff_t>((s + 1) * cfg_.batch_size));
          auto recs = train_step(ph, epoch, idx, result);
          for (const auto& r : recs) {
            if (metrics) metrics << r.to_json().dump() << '\n';
            result.records.push_back(r);
          }
          if (hook_) hook_({step_, epoch, ph});
          ++step_;
        }
        difficulty_.swap(next_difficulty_);
        seen_epochs_ = true;
        if (cfg_.checkpoint_every && (epoch + 1) % cfg_.checkpoint_every == 0 && !cfg_.out_dir.empty()) {
          save((std::filesystem::path(cfg_.out_dir) / ("checkpoint_epoch" + std::to_string(epoch + 1) + ".bin")).string());
        }
      }
    }
    if (!cfg_.out_dir.empty()) save((std::filesystem::path(cfg_.out_dir) / "checkpoint.bin").string());
    result.steps = step_;
    return result;
  }

  /// Encoder parameters and buffers followed by every head's tensors.
  NamedTensors<T> state() {
    auto out = encoder_.parameters();
    for (auto& b : encoder_.buffers()) out.push_back(b);
    for (auto& g : groups_) {
      g.pool.parameters(g.head_prefix() + "/pool", out);
      g.proj.parameters(g.head_prefix() + "/proj", out);
      g.proj.buffers(g.head_prefix() + "/proj", out);
    }
    return out;
  }

  void save(const std::string& path) { save_checkpoint(path, state()); }

  NamedTensors<T> all_parameters() {
    auto out = encoder_.parameters();
    for (auto& g : groups_) {
      g.pool.parameters(g.head_prefix() + "/pool", out);
      g.proj.parameters(g.head_prefix() + "/proj", out);
    }
    return out;
  }

  Encoder<T>& encoder() { return encoder_; }
  std::vector<Group>& groups() { return groups_; }
  const std::vector<Phase>& phases() const { return phases_; }
  const TrainConfig& config() const { return cfg_; }
  std::size_t steps_per_epoch() const { return steps_per_epoch_; }

 private:
  void build_groups() {
    const auto nb = cfg_.encoder.blocks.size();
    std::vector<std::vector<std::size_t>> layout;
    auto spec = cfg_.encoder;
    switch (cfg_.regime.kind) {
      case RegimeKind::end_to_end: {
        std::vector<std::size_t> all(nb);
        std::iota(all.begin(), all.end(), 0);
        layout.push_back(all);
        break;
      }
      case RegimeKind::merged_first:
        for (std::size_t k = 0; k + 1 < cfg_.regime.merge_count; ++k) spec.blocks[k].merge_with_next = true;
        layout = spec.training_groups();
        break;
      default: layout = spec.training_groups();
    }
    std::size_t trained_group = layout.size();
    if (cfg_.regime.kind == RegimeKind::random_frozen) {
      const std::size_t k = cfg_.regime.trained_block == 0 ? nb - 1 : cfg_.regime.trained_block - 1;
      for (std::size_t g = 0; g < layout.size(); ++g) {
        if (layout[g].front() == k) trained_group = g;
      }
      if (trained_group == layout.size()) {
        throw ConfigError(detail::concat("random-frozen block ", k + 1, " does not start a training group"));
      }
      layout.resize(trained_group + 1);
    }
    for (std::size_t g = 0; g < layout.size(); ++g) {
      Group grp;
      grp.blocks = layout[g];
      grp.top = layout[g].back();
      grp.head_cfg = cfg_.head_for(grp.top);
      if (cfg_.regime.kind == RegimeKind::supervised_blockwise) {
        grp.head_cfg.loss.kind = LossKind::supervised_ce;
        grp.head_cfg.loss.classes = data_.classes;
      }
      if (grp.head_cfg.loss.kind == LossKind::supervised_ce) grp.head_cfg.projector.out = grp.head_cfg.loss.classes;
      const auto& bs = cfg_.encoder.blocks[grp.top];
      grp.pool = Pooling<T>(grp.head_cfg.pooling, bs.width, cfg_.encoder.output_hw(grp.top, data_.height));
      grp.pool.init(cfg_.seed, grp.head_prefix() + "/pool");
      const auto& pc = grp.head_cfg.projector;
      grp.proj = Projector<T>(grp.pool.output_width(), pc.hidden, pc.out, pc.depth);
      grp.proj.init(cfg_.seed, grp.head_prefix() + "/proj");
      grp.trainable = true;
      if (cfg_.regime.kind == RegimeKind::random_frozen && g < trained_group) grp.trainable = false;
      if (cfg_.regime.kind == RegimeKind::first_block_pretrained && g == 0) grp.trainable = false;
      for (auto b : grp.blocks) {
        for (auto& p : encoder_.block_parameters(b)) grp.params.push_back(p);
      }
      grp.pool.parameters(grp.head_prefix() + "/pool", grp.params);
      grp.proj.parameters(grp.head_prefix() + "/proj", grp.params);
      grp.opt = Lars<T>(grp.params, cfg_.optim.lars);
      groups_.push_back(std::move(grp));
    }
    if (cfg_.regime.kind == RegimeKind::first_block_pretrained) {
      NamedTensors<T> first;
      for (auto b : groups_.front().blocks) {
        for (auto& p : encoder_.block_parameters(b)) first.push_back(p);
        for (auto& p : encoder_.block_buffers(b)) first.push_back(p);
      }
      load_checkpoint(cfg_.regime.pretrained_checkpoint, first, true);
    }
  }

  void build_phases() {
    std::vector<std::size_t> trainable;
    for (std::size_t g = 0; g < groups_.size(); ++g) {
      if (groups_[g].trainable) trainable.push_back(g);
    }
    if (cfg_.regime.kind == RegimeKind::sequential) {
      const std::size_t n = trainable.size();
      if (cfg_.epochs < n) {
        throw ConfigError(detail::concat("sequential training needs at least ", n, " epochs, got ", cfg_.epochs));
      }
      for (std::size_t i = 0; i < n; ++i) {
        phases_.push_back({{trainable[i]}, cfg_.epochs / n + (i < cfg_.epochs % n ? 1 : 0)});
      }
    } else {
      phases_.push_back({trainable, cfg_.epochs});
    }
    for (const auto& ph : phases_) {
      const std::size_t total = ph.epochs * steps_per_epoch_;
      const std::size_t warm = std::min(cfg_.optim.warmup_epochs * steps_per_epoch_, total);
      for (auto g : ph.groups) groups_[g].schedule = CosineSchedule{cfg_.optim.base_lr, total, warm};
    }
  }

  void enter_phase(std::size_t ph) {
    const auto& active = phases_[ph].groups;
    const std::size_t top = groups_[active.back()].top;
    for (std::size_t g = 0; g < groups_.size(); ++g) {
      auto& grp = groups_[g];
      const bool on = std::find(active.begin(), active.end(), g) != active.end();
      for (auto& p : grp.params) {
        p.tensor.set_requires_grad(on);
        p.tensor.release_grad();
      }
      BnMode mode = BnMode::train;
      if (!on) {
        // Random-init blocks keep batch statistics; trained or loaded blocks are frozen outright.
        const bool live = cfg_.regime.kind == RegimeKind::random_frozen ||
                          (cfg_.regime.kind == RegimeKind::sequential && cfg_.regime.bn_stats_live);
        mode = live ? BnMode::train : BnMode::eval;
      }
      if (grp.top <= top) {
        for (auto b : grp.blocks) encoder_.block(b).set_bn_mode(mode);
      }
      grp.proj.set_bn_mode(on ? BnMode::train : BnMode::eval);
    }
  }

  std::vector<std::size_t> epoch_order(std::size_t epoch) const {
    std::vector<std::size_t> perm(data_.size());
    std::iota(perm.begin(), perm.end(), 0);
    auto rng = make_stream(cfg_.seed, "shuffle", epoch);
    std::shuffle(perm.begin(), perm.end(), rng);
    return perm;
  }

  Routing routing_for(const std::vector<std::size_t>& idx, std::size_t blocks, std::size_t epoch) const {
    std::vector<double> d(idx.size());
    if (seen_epochs_) {
      for (std::size_t i = 0; i < idx.size(); ++i) d[i] = difficulty_[idx[i]];
    } else {
      auto rng = make_stream(cfg_.seed, "route", epoch, step_);
      std::uniform_real_distribution<double> u(0.0, 1.0);
      for (auto& v : d) v = u(rng);
    }
    return route_examples(d, blocks, cfg_.routing);
  }

  static bool grads_all_zero(const NamedTensor<T>& p) {
    if (!p.tensor.has_grad()) return true;
    for (auto v : p.tensor.grad()) {
      T zero(0);
      if (std::memcmp(&v, &zero, sizeof(T)) != 0) return false;
    }
    return true;
  }

  std::vector<StepRecord> train_step(std::size_t ph, std::size_t epoch, const std::vector<std::size_t>& idx,
                                     TrainResult& result) {
    const auto& active = phases_[ph].groups;
    const std::size_t up_to = groups_[active.back()].top + 1;
    const bool e2e = cfg_.regime.kind == RegimeKind::end_to_end;

    EncoderForwardOptions fwd;
    fwd.up_to = up_to;
    fwd.training = true;
    fwd.noise = cfg_.noise;
    fwd.stop_before.assign(encoder_.num_blocks(), false);
    if (!e2e) {
      for (const auto& g : groups_) fwd.stop_before[g.blocks.front()] = true;
    }

    std::vector<int> labels(idx.size());
    for (std::size_t i = 0; i < idx.size(); ++i) labels[i] = data_.labels[idx[i]];

    const bool route = cfg_.routing.enabled && active.size() > 1;
    Routing routing;
    if (route) routing = routing_for(idx, active.size(), epoch);

    // Views per distinct pipeline among the active groups.
    std::vector<ViewPipeline> pipelines;
    std::vector<std::size_t> pipeline_of(active.size());
    for (std::size_t a = 0; a < active.size(); ++a) {
      const auto& p = schedule_.for_block(active[a]);
      auto it = std::find(pipelines.begin(), pipelines.end(), p);
      pipeline_of[a] = static_cast<std::size_t>(it - pipelines.begin());
      if (it == pipelines.end()) pipelines.push_back(p);
    }

    std::vector<LossTerms<T>> losses(active.size());
    std::vector<bool> has_loss(active.size(), false);
    for (std::size_t p = 0; p < pipelines.size(); ++p) {
      auto [va, vb] = view_batches<T>(data_, idx, pipelines[p], cfg_.seed, epoch, p);
      std::array<std::vector<Tensor<T>>, 2> acts;
      for (std::size_t v = 0; v < 2; ++v) {
        fwd.noise_stream = {cfg_.seed, step_, v};
        acts[v] = encoder_.forward(v == 0 ? va : vb, fwd);
      }
      for (std::size_t a = 0; a < active.size(); ++a) {
        if (pipeline_of[a] != p) continue;
        auto& grp = groups_[active[a]];
        const std::vector<double>* w = route ? &routing.weights[a] : nullptr;
        if (w && std::all_of(w->begin(), w->end(), [](double x) { return x == 0.0; })) continue;
        auto za = grp.proj.forward(grp.pool.forward(acts[0][grp.top]));
        auto zb = grp.proj.forward(grp.pool.forward(acts[1][grp.top]));
        losses[a] = block_loss(grp.head_cfg.loss, za, zb, &labels, w);
        has_loss[a] = true;
        const double lv = static_cast<double>(losses[a].loss.item());
        if (!std::isfinite(lv)) {
          throw NumericError(detail::concat("block ", grp.top + 1, ": non-finite loss at step ", step_,
                                            " (invariance ", losses[a].invariance, ", redundancy ",
                                            losses[a].redundancy, ")"));
        }
        if (a + 1 == active.size()) {
          const auto d = per_example_difficulty(grp.head_cfg.loss, za.detach(), zb.detach(), &labels);
          for (std::size_t i = 0; i < idx.size(); ++i) next_difficulty_[idx[i]] = d[i];
        }
      }
    }

    auto model = all_parameters();
    for (auto& p : model) p.tensor.zero_grad();
    const bool audit = cfg_.audit_every && step_ % cfg_.audit_every == 0;
    if (audit) {
      ++result.audit.audited_steps;
      std::vector<std::vector<std::vector<T>>> stash(active.size());
      for (std::size_t a = 0; a < active.size(); ++a) {
        if (!has_loss[a]) continue;
        for (auto& p : model) p.tensor.zero_grad();
        backward(losses[a].loss);
        auto& grp = groups_[active[a]];
        std::set<std::string> own;
        for (const auto& p : grp.params) own.insert(p.name);
        for (const auto& p : model) {
          if (own.count(p.name)) continue;
          ++result.audit.checked_tensors;
          if (!grads_all_zero(p)) {
            if (result.audit.violations++ == 0) {
              result.audit.first_violation =
                  detail::concat("step ", step_, ": loss of block ", grp.top + 1, " reached '", p.name, "'");
            }
          }
        }
        for (const auto& p : grp.params) stash[a].push_back(p.tensor.grad_or_zero());
      }
      for (auto& p : model) p.tensor.zero_grad();
      for (std::size_t a = 0; a < active.size(); ++a) {
        if (!has_loss[a]) continue;
        auto& grp = groups_[active[a]];
        for (std::size_t k = 0; k < grp.params.size(); ++k) {
          if (grp.params[k].tensor.requires_grad()) grp.params[k].tensor.grad_buffer() = stash[a][k];
        }
      }
    } else if (cfg_.combined_backward) {
      Tensor<T> total;
      bool any = false;
      for (std::size_t a = 0; a < active.size(); ++a) {
        if (!has_loss[a]) continue;
        total = any ? add(total, losses[a].loss) : losses[a].loss;
        any = true;
      }
      if (any) backward(total);
    } else {
      for (std::size_t a = 0; a < active.size(); ++a) {
        if (has_loss[a]) backward(losses[a].loss);
      }
    }

    std::vector<StepRecord> recs;
    for (std::size_t a = 0; a < active.size(); ++a) {
      auto& grp = groups_[active[a]];
      const double lr = grp.schedule(grp.local_step);
      try {
        grp.opt.step(lr);
      } catch (const NumericError& e) {
        throw NumericError(detail::concat("block ", grp.top + 1, ": ", e.what()));
      }
      ++grp.local_step;
      if (!has_loss[a]) continue;
      StepRecord r;
      r.step = step_;
      r.epoch = epoch;
      r.block = grp.top + 1;
      r.loss = static_cast<double>(losses[a].loss.item());
      r.invariance = losses[a].invariance;
      r.redundancy = losses[a].redundancy;
      r.lr = lr;
      recs.push_back(r);
    }
    return recs;
  }

  TrainConfig cfg_;
  const Dataset& data_;
  Encoder<T> encoder_;
  std::vector<Group> groups_;
  std::vector<Phase> phases_;
  AugmentationSchedule schedule_;
  std::size_t steps_per_epoch_ = 0;
  std::size_t step_ = 0;
  bool seen_epochs_ = false;
  std::vector<double> difficulty_, next_difficulty_;
  std::function<void(const StepInfo&)> hook_;
};

}  // namespace bwssl
