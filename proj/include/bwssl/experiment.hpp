#pragma once

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <type_traits>
#include <vector>

#include <nlohmann/json.hpp>

#include "bwssl/eval.hpp"
#include "bwssl/trainer.hpp"

namespace bwssl {

using json = nlohmann::json;

struct EvalConfig {
  bool probe = true;
  std::vector<std::size_t> probe_blocks;  // empty = every block
  ProbeConfig probe_cfg;
  bool diagnostics = true;
  std::size_t diagnostic_samples = 1024;
  bool corruption = false;
  std::vector<CorruptionKind> corruptions = all_corruptions();
  std::vector<std::size_t> severities{1, 2, 3, 4, 5};
};

struct ExperimentConfig {
  std::string name = "run";
  TrainConfig train;
  DatasetDescriptor dataset;
  EvalConfig eval;

  void validate() const {
    train.validate();
    dataset.validate();
    train.encoder.validate(dataset.height, dataset.width);
    for (auto k : eval.probe_blocks) {
      if (k == 0 || k > train.encoder.blocks.size()) {
        throw ConfigError(detail::concat("probe block ", k, " outside 1..", train.encoder.blocks.size()));
      }
    }
    if (eval.probe) eval.probe_cfg.validate();
    if (eval.diagnostics && eval.diagnostic_samples < 2) throw ConfigError("diagnostics need at least 2 samples");
    for (auto s : eval.severities) corruption_level(CorruptionKind::blur, s);
    if (eval.corruption && !eval.probe) throw ConfigError("corruption evaluation needs the probe enabled");
  }
};

// ---------------------------------------------------------------------------
// Strict JSON reading
// ---------------------------------------------------------------------------

namespace detail {

/// Reads optional keys of one JSON object and rejects any key it was not asked about.
class ObjectReader {
 public:
  ObjectReader(const json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j.is_object()) throw ConfigError("'" + where_ + "' must be a JSON object");
  }

  template <typename V>
  void read(const std::string& key, V& out) {
    used_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return;
    if constexpr (std::is_unsigned_v<V> && !std::is_same_v<V, bool>) {
      if (!it->is_number_unsigned()) throw ConfigError("'" + path(key) + "' must be a non-negative integer");
    }
    try {
      out = it->template get<V>();
    } catch (const json::exception& e) {
      throw ConfigError("'" + path(key) + "': " + e.what());
    }
  }

  template <typename E, typename Parse>
  void read_enum(const std::string& key, E& out, Parse parse) {
    std::string s;
    bool present = j_.contains(key);
    read(key, s);
    if (present) out = parse(s);
  }

  const json* child(const std::string& key) {
    used_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  std::string path(const std::string& key) const { return where_ + "." + key; }

  void finish() const {
    for (const auto& [k, v] : j_.items()) {
      if (!used_.count(k)) throw ConfigError("unknown key '" + path(k) + "'");
    }
  }

 private:
  const json& j_;
  std::string where_;
  std::set<std::string> used_;
};

inline void read_pooling(const json& j, const std::string& where, PoolingConfig& p) {
  ObjectReader r(j, where);
  r.read_enum("kind", p.kind, pooling_kind_from_string);
  r.read("bins", p.bins);
  r.read("width", p.target_width);
  r.read("filter_size", p.filter_size);
  r.read("groups", p.groups);
  r.finish();
}

inline void read_loss(const json& j, const std::string& where, BlockLossConfig& l) {
  ObjectReader r(j, where);
  r.read_enum("kind", l.kind, loss_kind_from_string);
  r.read("lambda", l.lambda);
  r.read("tau", l.tau);
  r.read("center", l.center);
  r.read("temperature", l.temperature);
  r.read("classes", l.classes);
  if (const auto* v = r.child("vicreg")) {
    ObjectReader vr(*v, r.path("vicreg"));
    vr.read("invariance", l.vicreg.invariance);
    vr.read("variance", l.vicreg.variance);
    vr.read("covariance", l.vicreg.covariance);
    vr.finish();
  }
  r.finish();
}

inline void read_head(const json& j, const std::string& where, HeadConfig& h) {
  ObjectReader r(j, where);
  if (const auto* p = r.child("pooling")) read_pooling(*p, r.path("pooling"), h.pooling);
  if (const auto* p = r.child("projector")) {
    ObjectReader pr(*p, r.path("projector"));
    pr.read("hidden", h.projector.hidden);
    pr.read("out", h.projector.out);
    pr.read("depth", h.projector.depth);
    pr.finish();
  }
  if (const auto* l = r.child("loss")) read_loss(*l, r.path("loss"), h.loss);
  r.finish();
}

}  // namespace detail

inline ExperimentConfig parse_config(const json& j) {
  using detail::ObjectReader;
  ExperimentConfig c;
  ObjectReader r(j, "config");
  auto& t = c.train;
  r.read("name", c.name);
  r.read("seed", t.seed);
  r.read("epochs", t.epochs);
  r.read("batch_size", t.batch_size);
  r.read("audit_every", t.audit_every);
  r.read("checkpoint_every", t.checkpoint_every);
  r.read("combined_backward", t.combined_backward);
  r.read("out_dir", t.out_dir);

  if (const auto* x = r.child("regime")) {
    ObjectReader rr(*x, "regime");
    rr.read_enum("kind", t.regime.kind, regime_kind_from_string);
    rr.read("bn_stats_live", t.regime.bn_stats_live);
    rr.read("trained_block", t.regime.trained_block);
    rr.read("merge_count", t.regime.merge_count);
    rr.read("pretrained_checkpoint", t.regime.pretrained_checkpoint);
    rr.finish();
  }
  if (const auto* x = r.child("encoder")) {
    ObjectReader er(*x, "encoder");
    er.read("in_channels", t.encoder.in_channels);
    if (const auto* blocks = er.child("blocks")) {
      if (!blocks->is_array()) throw ConfigError("'encoder.blocks' must be an array");
      t.encoder.blocks.clear();
      for (std::size_t k = 0; k < blocks->size(); ++k) {
        BlockSpec b;
        ObjectReader br((*blocks)[k], "encoder.blocks[" + std::to_string(k) + "]");
        br.read("width", b.width);
        br.read("units", b.units);
        br.read("stride", b.stride);
        br.read("merge_with_next", b.merge_with_next);
        br.finish();
        t.encoder.blocks.push_back(b);
      }
    }
    er.finish();
  }
  if (const auto* x = r.child("heads")) {
    if (!x->is_array() || x->empty()) throw ConfigError("'heads' must be a non-empty array");
    t.heads.assign(x->size(), HeadConfig{});
    for (std::size_t k = 0; k < x->size(); ++k) detail::read_head((*x)[k], "heads[" + std::to_string(k) + "]", t.heads[k]);
  }
  if (const auto* x = r.child("optim")) {
    ObjectReader o(*x, "optim");
    o.read("base_lr", t.optim.base_lr);
    o.read("warmup_epochs", t.optim.warmup_epochs);
    o.read("momentum", t.optim.lars.momentum);
    o.read("weight_decay", t.optim.lars.weight_decay);
    o.read("trust", t.optim.lars.trust);
    o.read("eps", t.optim.lars.eps);
    o.finish();
  }
  if (const auto* x = r.child("augment")) {
    ObjectReader a(*x, "augment");
    a.read_enum("kind", t.augment.kind, augment_kind_from_string);
    a.read("small_crop_scale", t.augment.small_crop_scale);
    a.finish();
  }
  if (const auto* x = r.child("noise")) {
    ObjectReader n(*x, "noise");
    n.read("sigma", t.noise.sigma);
    n.read_enum("mode", t.noise.mode, noise_mode_from_string);
    n.read("include_input", t.noise.include_input);
    n.finish();
  }
  if (const auto* x = r.child("routing")) {
    ObjectReader rt(*x, "routing");
    rt.read("enabled", t.routing.enabled);
    rt.read_enum("scheme", t.routing.scheme, routing_scheme_from_string);
    rt.read("weight", t.routing.weight);
    rt.finish();
  }
  if (const auto* x = r.child("dataset")) {
    ObjectReader d(*x, "dataset");
    d.read_enum("source", c.dataset.source, data_source_from_string);
    d.read("path", c.dataset.path);
    d.read("train_size", c.dataset.train_size);
    d.read("val_size", c.dataset.val_size);
    d.read("classes", c.dataset.classes);
    d.read("height", c.dataset.height);
    d.read("width", c.dataset.width);
    d.read("synthetic_noise", c.dataset.synthetic_noise);
    d.finish();
  }
  if (const auto* x = r.child("eval")) {
    ObjectReader e(*x, "eval");
    e.read("probe", c.eval.probe);
    e.read("probe_blocks", c.eval.probe_blocks);
    e.read("probe_lrs", c.eval.probe_cfg.lrs);
    e.read("probe_epochs", c.eval.probe_cfg.epochs);
    e.read("probe_batch", c.eval.probe_cfg.batch);
    e.read("probe_momentum", c.eval.probe_cfg.momentum);
    e.read("probe_weight_decay", c.eval.probe_cfg.weight_decay);
    e.read("diagnostics", c.eval.diagnostics);
    e.read("diagnostic_samples", c.eval.diagnostic_samples);
    e.read("corruption", c.eval.corruption);
    std::vector<std::string> kinds;
    const bool has_kinds = x->contains("corruptions");
    e.read("corruptions", kinds);
    if (has_kinds) {
      c.eval.corruptions.clear();
      for (const auto& k : kinds) c.eval.corruptions.push_back(corruption_kind_from_string(k));
    }
    e.read("severities", c.eval.severities);
    e.finish();
  }
  r.finish();
  c.eval.probe_cfg.seed = t.seed;
  c.validate();
  return c;
}

inline ExperimentConfig parse_config_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("config is not valid JSON: ") + e.what(), e.byte > 0 ? e.byte - 1 : 0);
  }
  return parse_config(j);
}

inline ExperimentConfig load_config(const std::string& path) { return parse_config_text(detail::read_file(path)); }

inline json to_json(const ExperimentConfig& c) {
  const auto& t = c.train;
  json blocks = json::array();
  for (const auto& b : t.encoder.blocks) {
    blocks.push_back({{"width", b.width}, {"units", b.units}, {"stride", b.stride}, {"merge_with_next", b.merge_with_next}});
  }
  json heads = json::array();
  for (const auto& h : t.heads) {
    heads.push_back({{"pooling",
                      {{"kind", to_string(h.pooling.kind)},
                       {"bins", h.pooling.bins},
                       {"width", h.pooling.target_width},
                       {"filter_size", h.pooling.filter_size},
                       {"groups", h.pooling.groups}}},
                     {"projector", {{"hidden", h.projector.hidden}, {"out", h.projector.out}, {"depth", h.projector.depth}}},
                     {"loss",
                      {{"kind", to_string(h.loss.kind)},
                       {"lambda", h.loss.lambda},
                       {"tau", h.loss.tau},
                       {"center", h.loss.center},
                       {"temperature", h.loss.temperature},
                       {"classes", h.loss.classes},
                       {"vicreg",
                        {{"invariance", h.loss.vicreg.invariance},
                         {"variance", h.loss.vicreg.variance},
                         {"covariance", h.loss.vicreg.covariance}}}}}});
  }
  std::vector<std::string> kinds;
  for (auto k : c.eval.corruptions) kinds.push_back(to_string(k));
  return {
      {"name", c.name},
      {"seed", t.seed},
      {"epochs", t.epochs},
      {"batch_size", t.batch_size},
      {"audit_every", t.audit_every},
      {"checkpoint_every", t.checkpoint_every},
      {"combined_backward", t.combined_backward},
      {"out_dir", t.out_dir},
      {"regime",
       {{"kind", to_string(t.regime.kind)},
        {"bn_stats_live", t.regime.bn_stats_live},
        {"trained_block", t.regime.trained_block},
        {"merge_count", t.regime.merge_count},
        {"pretrained_checkpoint", t.regime.pretrained_checkpoint}}},
      {"encoder", {{"in_channels", t.encoder.in_channels}, {"blocks", blocks}}},
      {"heads", heads},
      {"optim",
       {{"base_lr", t.optim.base_lr},
        {"warmup_epochs", t.optim.warmup_epochs},
        {"momentum", t.optim.lars.momentum},
        {"weight_decay", t.optim.lars.weight_decay},
        {"trust", t.optim.lars.trust},
        {"eps", t.optim.lars.eps}}},
      {"augment", {{"kind", to_string(t.augment.kind)}, {"small_crop_scale", t.augment.small_crop_scale}}},
      {"noise", {{"sigma", t.noise.sigma}, {"mode", to_string(t.noise.mode)}, {"include_input", t.noise.include_input}}},
      {"routing", {{"enabled", t.routing.enabled}, {"scheme", to_string(t.routing.scheme)}, {"weight", t.routing.weight}}},
      {"dataset",
       {{"source", to_string(c.dataset.source)},
        {"path", c.dataset.path},
        {"train_size", c.dataset.train_size},
        {"val_size", c.dataset.val_size},
        {"classes", c.dataset.classes},
        {"height", c.dataset.height},
        {"width", c.dataset.width},
        {"synthetic_noise", c.dataset.synthetic_noise}}},
      {"eval",
       {{"probe", c.eval.probe},
        {"probe_blocks", c.eval.probe_blocks},
        {"probe_lrs", c.eval.probe_cfg.lrs},
        {"probe_epochs", c.eval.probe_cfg.epochs},
        {"probe_batch", c.eval.probe_cfg.batch},
        {"probe_momentum", c.eval.probe_cfg.momentum},
        {"probe_weight_decay", c.eval.probe_cfg.weight_decay},
        {"diagnostics", c.eval.diagnostics},
        {"diagnostic_samples", c.eval.diagnostic_samples},
        {"corruption", c.eval.corruption},
        {"corruptions", kinds},
        {"severities", c.eval.severities}}},
  };
}

// ---------------------------------------------------------------------------
// Runs
// ---------------------------------------------------------------------------

struct RunSummary {
  std::string dir;
  TrainResult train;
  ProbeReport probe;
  CorrelationStats diagnostics, diagnostics_random_init;
  CorruptionReport corruption;
};

namespace detail {

inline void write_json(const std::filesystem::path& p, const json& j) {
  std::ofstream out(p, std::ios::trunc);
  if (!out) throw ConfigError("cannot write " + p.string());
  out << j.dump(2) << '\n';
}

inline std::vector<std::size_t> probe_blocks(const ExperimentConfig& c) {
  if (!c.eval.probe_blocks.empty()) return c.eval.probe_blocks;
  std::vector<std::size_t> all(c.train.encoder.blocks.size());
  std::iota(all.begin(), all.end(), 1);
  return all;
}

}  // namespace detail

/// Encoder parameters and batch-norm statistics restored from a checkpoint.
template <typename T>
Encoder<T> load_encoder(const EncoderSpec& spec, const std::string& path) {
  if (!std::filesystem::exists(path)) throw ConfigError("missing checkpoint " + path);
  Encoder<T> enc(spec, 0);
  auto tensors = enc.parameters();
  for (auto& b : enc.buffers()) tensors.push_back(b);
  load_checkpoint(path, tensors, true);
  return enc;
}

/// Evaluations of a trained encoder, written into `dir`.
template <typename T>
void evaluate_encoder(const ExperimentConfig& c, Encoder<T>& enc, const DatasetSplit& data, const std::string& dir,
                      RunSummary& out, std::ostream* log = nullptr) {
  namespace fs = std::filesystem;
  const fs::path d(dir);
  if (c.eval.probe) {
    if (log) *log << "[" << c.name << "] linear probe\n";
    out.probe = linear_probe(enc, data, detail::probe_blocks(c), c.eval.probe_cfg);
    write_probe_csv((d / "probe.csv").string(), out.probe);
    detail::write_json(d / "probe.json", to_json(out.probe, c.eval.probe_cfg));
  }
  if (c.eval.diagnostics) {
    if (log) *log << "[" << c.name << "] correlation diagnostics\n";
    const auto sample = data.val.head(c.eval.diagnostic_samples);
    out.diagnostics = correlation_diagnostics(enc, sample, ViewPipeline::full(), c.train.seed);
    Encoder<T> fresh(c.train.encoder, c.train.seed);
    out.diagnostics_random_init = correlation_diagnostics(fresh, sample, ViewPipeline::full(), c.train.seed);
    detail::write_json(d / "diagnostics.json",
                       {{"trained", to_json(out.diagnostics)}, {"random_init", to_json(out.diagnostics_random_init)}});
  }
  if (c.eval.corruption) {
    if (log) *log << "[" << c.name << "] corruption evaluation\n";
    const std::size_t top = detail::probe_blocks(c).back();
    const ProbeEntry* entry = nullptr;
    for (const auto& e : out.probe.entries)
      if (e.block == top) entry = &e;
    ProbeEntry fitted;
    if (!entry) {
      fitted = linear_probe(enc, data, {top}, c.eval.probe_cfg).entries.front();
      entry = &fitted;
    }
    out.corruption = corruption_eval(enc, entry->probe, data.val, c.eval.corruptions, c.eval.severities, c.train.seed);
    write_corruption_csv((d / "corruption.csv").string(), out.corruption);
    write_corruption_summary_csv((d / "corruption_summary.csv").string(), out.corruption);
  }
}

/// Trains per the config, then probes, diagnoses and corrupts as enabled.
/// The run directory receives config.json, metrics.jsonl, checkpoint.bin and
/// the reports.
inline RunSummary run_experiment(ExperimentConfig c, std::ostream* log = nullptr) {
  namespace fs = std::filesystem;
  c.validate();
  if (c.train.out_dir.empty()) throw ConfigError("run needs an output directory");
  c.eval.probe_cfg.seed = c.train.seed;
  const fs::path dir(c.train.out_dir);
  fs::create_directories(dir);
  detail::write_json(dir / "config.json", to_json(c));

  const auto start = std::chrono::steady_clock::now();
  auto elapsed = [&] { return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count(); };
  const auto data = load_dataset(c.dataset, c.train.seed);
  RunSummary out;
  out.dir = dir.string();

  Trainer<float> trainer(c.train, data.train);
  if (log) {
    const std::size_t spe = trainer.steps_per_epoch();
    trainer.set_step_hook([&, spe](const StepInfo& s) {
      if ((s.step + 1) % spe == 0) {
        *log << "[" << c.name << "] epoch " << s.epoch + 1 << "/" << c.train.epochs << " (" << elapsed() << " s)\n";
      }
    });
  }
  out.train = trainer.run();
  evaluate_encoder(c, trainer.encoder(), data, dir.string(), out, log);

  json summary = {{"name", c.name},
                  {"regime", to_string(c.train.regime.kind)},
                  {"steps", out.train.steps},
                  {"audit",
                   {{"audited_steps", out.train.audit.audited_steps},
                    {"checked_tensors", out.train.audit.checked_tensors},
                    {"violations", out.train.audit.violations},
                    {"first_violation", out.train.audit.first_violation}}},
                  {"seconds", elapsed()}};
  for (const auto& e : out.probe.entries) summary["probe_top1"].push_back({{"block", e.block}, {"top1", e.top1}});
  detail::write_json(dir / "summary.json", summary);
  return out;
}

// ---------------------------------------------------------------------------
// Presets
// ---------------------------------------------------------------------------

struct Preset {
  std::string name;
  std::string description;
  std::vector<ExperimentConfig> variants;
};

inline std::vector<std::string> preset_names() {
  return {"fig4-main",          "fig6-firstblock",       "fig7-pooling",          "appendixA-invariance-targets",
          "appendixA-lambda",   "appendixA-adaptive-aug", "appendixA-routing",     "appendixB-projector",
          "appendixB-probe-lr", "appendixB-groupconv",   "appendixB-filter-size", "appendixC-corruption"};
}

/// Desk-scale defaults: 4-block encoder, CbE-GSP heads of width 512,
/// 3-layer projector, Barlow Twins, LARS, 30 epochs of batch 256 on a
/// 10k/2k CIFAR-10 subset.
inline ExperimentConfig desk_config() {
  ExperimentConfig c;
  c.dataset.source = DataSource::cifar10_binary;
  c.dataset.train_size = 10000;
  c.dataset.val_size = 2000;
  c.train.epochs = 30;
  c.train.batch_size = 256;
  return c;
}

/// Builds the named preset with every variant writing under `out_dir/<variant>`.
inline Preset make_preset(const std::string& name, const std::string& out_dir, std::uint64_t seed = 0) {
  namespace fs = std::filesystem;
  Preset p;
  p.name = name;
  auto variant = [&](const std::string& vname, RegimeKind kind) {
    auto c = desk_config();
    c.name = vname;
    c.train.seed = seed;
    c.train.regime.kind = kind;
    c.train.out_dir = (fs::path(out_dir) / vname).string();
    return c;
  };
  auto add = [&](ExperimentConfig c) { p.variants.push_back(std::move(c)); };
  const std::size_t nb = EncoderSpec::desk().blocks.size();

  if (name == "fig4-main") {
    p.description = "Regime comparison and accuracy vs depth: end-to-end, simultaneous, sequential, supervised "
                    "blockwise, the best blockwise model with activation noise, and the random-frozen baseline per depth.";
    add(variant("end-to-end", RegimeKind::end_to_end));
    add(variant("simultaneous", RegimeKind::simultaneous));
    add(variant("sequential", RegimeKind::sequential));
    add(variant("supervised-blockwise", RegimeKind::supervised_blockwise));
    auto noisy = variant("simultaneous-noise", RegimeKind::simultaneous);
    noisy.train.noise.sigma = 0.25;
    add(noisy);
    for (std::size_t k = 1; k <= nb; ++k) {
      auto c = variant("random-frozen-b" + std::to_string(k), RegimeKind::random_frozen);
      c.train.regime.trained_block = k;
      c.eval.probe_blocks = {k};
      c.eval.diagnostics = false;
      add(c);
    }
  } else if (name == "fig6-firstblock") {
    p.description = "First-block variants: block 1 taken from an end-to-end run and frozen, and blocks 1-2 merged.";
    add(variant("end-to-end", RegimeKind::end_to_end));
    auto pre = variant("first-block-pretrained", RegimeKind::first_block_pretrained);
    pre.train.regime.pretrained_checkpoint = (fs::path(out_dir) / "end-to-end" / "checkpoint.bin").string();
    add(pre);
    auto merged = variant("merged-first-2", RegimeKind::merged_first);
    merged.train.regime.merge_count = 2;
    add(merged);
    add(variant("simultaneous", RegimeKind::simultaneous));
  } else if (name == "fig7-pooling") {
    p.description = "Pooling strategies ahead of each block's projector.";
    for (auto k : {PoolingKind::gsp, PoolingKind::lsp, PoolingKind::cbe_gsp, PoolingKind::cbe_l2, PoolingKind::cbe_sqrt}) {
      auto c = variant("pool-" + to_string(k), RegimeKind::simultaneous);
      c.train.heads[0].pooling.kind = k;
      add(c);
    }
  } else if (name == "appendixA-invariance-targets") {
    p.description = "Fixed invariance target 1 vs per-block targets 0.6/0.75/0.9/1.0, with end-to-end for reference.";
    add(variant("end-to-end", RegimeKind::end_to_end));
    add(variant("tau-fixed", RegimeKind::simultaneous));
    auto c = variant("tau-adjusted", RegimeKind::simultaneous);
    c.train.heads.assign(nb, HeadConfig{});
    const double taus[] = {0.6, 0.75, 0.9, 1.0};
    for (std::size_t b = 0; b < nb; ++b) c.train.heads[b].loss.tau = taus[b];
    add(c);
  } else if (name == "appendixA-lambda") {
    p.description = "Redundancy weight of block 1 varied while blocks 2-4 train as one end-to-end group.";
    for (double lambda : {0.0005, 0.0051, 0.05, 0.5}) {
      std::ostringstream nm;
      nm << "lambda-" << lambda;
      auto c = variant(nm.str(), RegimeKind::simultaneous);
      c.train.encoder.blocks[1].merge_with_next = true;
      c.train.encoder.blocks[2].merge_with_next = true;
      c.train.heads.assign(nb, HeadConfig{});
      c.train.heads[0].loss.lambda = lambda;
      add(c);
    }
  } else if (name == "appendixA-adaptive-aug") {
    p.description = "Sequential training with identical vs progressively harder augmentations per block.";
    add(variant("uniform-aug", RegimeKind::sequential));
    auto c = variant("adaptive-aug", RegimeKind::sequential);
    c.train.augment.kind = AugmentKind::adaptive;
    add(c);
  } else if (name == "appendixA-routing") {
    p.description = "Difficulty-based routing of examples to blocks.";
    add(variant("no-routing", RegimeKind::simultaneous));
    auto below = variant("train-all-below", RegimeKind::simultaneous);
    below.train.routing = {true, RoutingScheme::train_all_below, 0.5};
    add(below);
    auto others = variant("weighted-others-0.5", RegimeKind::simultaneous);
    others.train.routing = {true, RoutingScheme::weighted_others, 0.5};
    add(others);
  } else if (name == "appendixB-projector") {
    p.description = "Projector width.";
    for (std::size_t w : {256, 512, 1024}) {
      auto c = variant("projector-" + std::to_string(w), RegimeKind::simultaneous);
      c.train.heads[0].projector.hidden = c.train.heads[0].projector.out = w;
      add(c);
    }
  } else if (name == "appendixB-probe-lr") {
    p.description = "One simultaneous run probed at each grid learning rate (see probe.json grid_top1).";
    auto c = variant("simultaneous", RegimeKind::simultaneous);
    c.eval.probe_cfg.lrs = {0.1, 0.3, 1.0};
    add(c);
  } else if (name == "appendixB-groupconv") {
    p.description = "Grouped 1x1 expansion convolution.";
    for (std::size_t g : {1, 4, 16}) {
      auto c = variant("groups-" + std::to_string(g), RegimeKind::simultaneous);
      c.train.heads[0].pooling.groups = g;
      add(c);
    }
  } else if (name == "appendixB-filter-size") {
    p.description = "Expansion filter size.";
    for (std::size_t f : {1, 3, 7}) {
      auto c = variant("filter-" + std::to_string(f), RegimeKind::simultaneous);
      c.train.heads[0].pooling.filter_size = f;
      add(c);
    }
  } else if (name == "appendixC-corruption") {
    p.description = "Corruption robustness of end-to-end vs the best blockwise model (CbE-GSP + noise 0.25).";
    auto e2e = variant("end-to-end", RegimeKind::end_to_end);
    e2e.eval.corruption = true;
    add(e2e);
    auto best = variant("simultaneous-noise", RegimeKind::simultaneous);
    best.train.noise.sigma = 0.25;
    best.eval.corruption = true;
    add(best);
  } else {
    std::string known;
    for (const auto& n : preset_names()) known += " " + n;
    throw ConfigError("unknown preset '" + name + "'; known:" + known);
  }
  return p;
}

// ---------------------------------------------------------------------------
// Plot data
// ---------------------------------------------------------------------------

namespace detail {

inline json read_json(const std::filesystem::path& p) {
  try {
    return json::parse(read_file(p.string()));
  } catch (const json::parse_error& e) {
    throw ParseError(p.string() + ": " + e.what(), e.byte > 0 ? e.byte - 1 : 0);
  }
}

struct RunArtifacts {
  std::string variant;
  std::filesystem::path dir;
  json config;
};

inline RunArtifacts check_run(const std::filesystem::path& dir, const std::string& variant) {
  namespace fs = std::filesystem;
  std::vector<std::string> missing;
  for (auto f : {"config.json", "metrics.jsonl"}) {
    if (!fs::exists(dir / f)) missing.push_back((dir / f).string());
  }
  json cfg;
  if (fs::exists(dir / "config.json")) {
    cfg = read_json(dir / "config.json");
    const auto& ev = cfg.at("eval");
    if (ev.at("probe").get<bool>() && !fs::exists(dir / "probe.json")) missing.push_back((dir / "probe.json").string());
    if (ev.at("diagnostics").get<bool>() && !fs::exists(dir / "diagnostics.json")) {
      missing.push_back((dir / "diagnostics.json").string());
    }
    if (ev.at("corruption").get<bool>() && !fs::exists(dir / "corruption.csv")) {
      missing.push_back((dir / "corruption.csv").string());
    }
  }
  if (!missing.empty()) {
    std::string msg = "run artifacts missing:";
    for (const auto& m : missing) msg += " " + m;
    throw ConfigError(msg);
  }
  return {variant, dir, cfg};
}

}  // namespace detail

/// Writes tidy CSVs under `dir/plotdata/` from a run directory or a preset
/// directory (one sub-directory per variant, listed in preset.json).
/// Returns the written file paths.
inline std::vector<std::string> emit_plotdata(const std::string& dir) {
  namespace fs = std::filesystem;
  const fs::path root(dir);
  if (!fs::exists(root) || !fs::is_directory(root)) throw ConfigError("no run directory at " + dir);
  if (fs::is_empty(root)) throw ConfigError("run directory " + dir + " is empty");

  std::vector<detail::RunArtifacts> runs;
  if (fs::exists(root / "preset.json")) {
    const auto preset = detail::read_json(root / "preset.json");
    for (const auto& v : preset.at("variants")) {
      const auto name = v.get<std::string>();
      runs.push_back(detail::check_run(root / name, name));
    }
  } else {
    runs.push_back(detail::check_run(root, root.filename().string()));
  }

  const fs::path out = root / "plotdata";
  fs::create_directories(out);
  auto open = [&](const std::string& f) { return detail::open_report((out / f).string()); };
  auto acc = open("accuracy_vs_depth.csv");
  acc << "variant,block,top1\n";
  auto grid = open("probe_lr.csv");
  grid << "variant,block,lr,top1\n";
  auto violin = open("correlation_violin.csv");
  violin << "variant,model,block,term,value\n";
  auto corr_sum = open("correlation_summary.csv");
  corr_sum << "variant,model,block,on_mean,on_median,off_mean,off_median\n";
  auto loss = open("loss_curves.csv");
  loss << "variant,step,epoch,block,loss,invariance,redundancy,lr\n";
  auto corr = open("corruption.csv");
  corr << "variant,kind,severity,error\n";

  // Random-frozen runs contribute block k of run k to one assembled curve.
  std::map<std::size_t, double> frozen_curve;
  for (const auto& r : runs) {
    const std::size_t nb = r.config.at("encoder").at("blocks").size();
    const bool frozen = r.config.at("regime").at("kind") == "random-frozen";
    if (fs::exists(r.dir / "probe.json")) {
      const auto probe = detail::read_json(r.dir / "probe.json");
      const auto lrs = probe.at("lrs").get<std::vector<double>>();
      std::map<std::size_t, double> by_block;
      for (const auto& e : probe.at("entries")) {
        const auto b = e.at("block").get<std::size_t>();
        by_block[b] = e.at("top1").get<double>();
        const auto g = e.at("grid_top1").get<std::vector<double>>();
        for (std::size_t i = 0; i < g.size() && i < lrs.size(); ++i) {
          grid << r.variant << ',' << b << ',' << lrs[i] << ',' << g[i] << '\n';
        }
      }
      for (std::size_t b = 1; b <= nb; ++b) {
        acc << r.variant << ',' << b << ',';
        if (by_block.count(b)) acc << by_block[b];
        acc << '\n';
      }
      if (frozen) {
        std::size_t k = r.config.at("regime").at("trained_block").get<std::size_t>();
        if (k == 0) k = nb;
        if (by_block.count(k)) frozen_curve[k] = by_block[k];
      }
    }
    if (fs::exists(r.dir / "diagnostics.json")) {
      const auto diag = detail::read_json(r.dir / "diagnostics.json");
      for (const auto* model : {"trained", "random_init"}) {
        if (!diag.contains(model)) continue;
        for (const auto& e : diag.at(model)) {
          const auto b = e.at("block").get<std::size_t>();
          for (const auto* term : {"on_diagonal", "off_diagonal"}) {
            const std::string tname = term == std::string("on_diagonal") ? "on" : "off";
            for (const auto& v : e.at(term)) violin << r.variant << ',' << model << ',' << b << ',' << tname << ',' << v.get<double>() << '\n';
          }
          corr_sum << r.variant << ',' << model << ',' << b << ',' << e.at("on_summary").at("mean").get<double>() << ','
                   << e.at("on_summary").at("median").get<double>() << ',' << e.at("off_summary").at("mean").get<double>()
                   << ',' << e.at("off_summary").at("median").get<double>() << '\n';
        }
      }
    }
    {
      std::ifstream in(r.dir / "metrics.jsonl");
      std::string line;
      while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto m = json::parse(line);
        loss << r.variant << ',' << m.at("step").get<std::size_t>() << ',' << m.at("epoch").get<std::size_t>() << ','
             << m.at("block").get<std::size_t>() << ',' << m.at("loss").get<double>() << ','
             << m.at("invariance").get<double>() << ',' << m.at("redundancy").get<double>() << ','
             << m.at("lr").get<double>() << '\n';
      }
    }
    if (fs::exists(r.dir / "corruption.csv")) {
      std::ifstream in(r.dir / "corruption.csv");
      std::string line;
      std::getline(in, line);
      while (std::getline(in, line)) {
        if (!line.empty()) corr << r.variant << ',' << line << '\n';
      }
    }
  }
  if (!frozen_curve.empty()) {
    const std::size_t nb = runs.front().config.at("encoder").at("blocks").size();
    for (std::size_t b = 1; b <= nb; ++b) {
      acc << "random-frozen," << b << ',';
      if (frozen_curve.count(b)) acc << frozen_curve[b];
      acc << '\n';
    }
  }
  std::vector<std::string> files;
  for (auto f : {"accuracy_vs_depth.csv", "probe_lr.csv", "correlation_violin.csv", "correlation_summary.csv",
                 "loss_curves.csv", "corruption.csv"}) {
    files.push_back((out / f).string());
  }
  return files;
}

/// Runs every variant of a preset under `out_dir`, then emits plot data.
inline void run_preset(const Preset& p, const std::string& out_dir, std::ostream* log = nullptr) {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  json names = json::array();
  for (const auto& v : p.variants) names.push_back(v.name);
  detail::write_json(fs::path(out_dir) / "preset.json",
                     {{"name", p.name}, {"description", p.description}, {"variants", names}});
  for (const auto& v : p.variants) {
    if (log) *log << "== " << p.name << " / " << v.name << "\n";
    run_experiment(v, log);
  }
  emit_plotdata(out_dir);
}

}  // namespace bwssl
