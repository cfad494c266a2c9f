// Command-line front end: train, evaluate and regenerate experiment presets.

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "bwssl/experiment.hpp"

namespace fs = std::filesystem;
using namespace bwssl;

namespace {

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  int threads = 1;
  std::string out;
};

void add_common(CLI::App* app, Common& c, bool needs_config) {
  auto* opt = app->add_option("--config", c.config, "experiment JSON");
  if (needs_config) opt->required();
  app->add_option("--seed", c.seed, "override the config seed");
  app->add_option("--threads", c.threads, "worker threads")->check(CLI::PositiveNumber);
  app->add_option("--out", c.out, "run directory");
}

ExperimentConfig resolve(const Common& c) {
  std::string path = c.config;
  if (path.empty()) {
    if (c.out.empty()) throw ConfigError("need --config or an --out run directory holding config.json");
    path = (fs::path(c.out) / "config.json").string();
  }
  auto cfg = load_config(path);
  if (c.seed) cfg.train.seed = cfg.eval.probe_cfg.seed = *c.seed;
  if (!c.out.empty()) cfg.train.out_dir = c.out;
  if (cfg.train.out_dir.empty()) cfg.train.out_dir = "runs/" + cfg.name;
  set_threads(c.threads);
  return cfg;
}

Encoder<float> trained_encoder(const ExperimentConfig& cfg, const std::string& checkpoint) {
  const auto path = checkpoint.empty() ? (fs::path(cfg.train.out_dir) / "checkpoint.bin").string() : checkpoint;
  return load_encoder<float>(cfg.train.encoder, path);
}

void write_json_file(const fs::path& p, const json& j) {
  fs::create_directories(p.parent_path());
  std::ofstream(p) << j.dump(2) << '\n';
}

int report(const char* kind, const std::string& msg, int code) {
  std::cerr << json{{"error", kind}, {"message", msg}}.dump() << '\n';
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Blockwise self-supervised training and evaluation"};
  app.require_subcommand(1);

  Common common;
  std::string checkpoint;

  auto* train = app.add_subcommand("train", "train per --config and evaluate");
  add_common(train, common, true);

  auto* probe = app.add_subcommand("probe", "linear probes on a trained run");
  add_common(probe, common, false);
  probe->add_option("--checkpoint", checkpoint, "encoder checkpoint (default <out>/checkpoint.bin)");

  auto* diagnose = app.add_subcommand("diagnose", "cross-correlation diagnostics of a trained run");
  add_common(diagnose, common, false);
  diagnose->add_option("--checkpoint", checkpoint, "encoder checkpoint");

  auto* corrupt = app.add_subcommand("corrupt-eval", "probe error under input corruptions");
  add_common(corrupt, common, false);
  corrupt->add_option("--checkpoint", checkpoint, "encoder checkpoint");

  std::string plot_dir;
  auto* plot = app.add_subcommand("emit-plotdata", "tidy CSVs from a run or preset directory");
  plot->add_option("--out", plot_dir, "run or preset directory")->required();

  std::string preset_name;
  bool synthetic = false, print_only = false;
  std::optional<std::size_t> epochs;
  std::uint64_t preset_seed = 0;
  int preset_threads = 1;
  std::string preset_out;
  auto* preset = app.add_subcommand("preset", "run a named experiment preset ('list' shows them)");
  preset->add_option("name", preset_name, "preset name")->required();
  preset->add_option("--seed", preset_seed, "seed for every variant");
  preset->add_option("--threads", preset_threads, "worker threads")->check(CLI::PositiveNumber);
  preset->add_option("--out", preset_out, "output directory (default runs/<name>)");
  preset->add_option("--epochs", epochs, "override the epoch budget");
  preset->add_flag("--synthetic", synthetic, "use the synthetic dataset instead of CIFAR-10");
  preset->add_flag("--print", print_only, "print the variant configs and exit");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (*train) {
      auto cfg = resolve(common);
      auto r = run_experiment(cfg, &std::cerr);
      for (const auto& e : r.probe.entries) std::cout << "block " << e.block << " top1 " << e.top1 << '\n';
      std::cout << "wrote " << r.dir << '\n';
    } else if (*probe) {
      auto cfg = resolve(common);
      auto enc = trained_encoder(cfg, checkpoint);
      const auto data = load_dataset(cfg.dataset, cfg.train.seed);
      std::vector<std::size_t> blocks = cfg.eval.probe_blocks;
      if (blocks.empty())
        for (std::size_t k = 1; k <= cfg.train.encoder.blocks.size(); ++k) blocks.push_back(k);
      auto rep = linear_probe(enc, data, blocks, cfg.eval.probe_cfg);
      const fs::path d(cfg.train.out_dir);
      fs::create_directories(d);
      write_probe_csv((d / "probe.csv").string(), rep);
      write_json_file(d / "probe.json", to_json(rep, cfg.eval.probe_cfg));
      for (const auto& e : rep.entries) std::cout << "block " << e.block << " top1 " << e.top1 << " lr " << e.best_lr << '\n';
    } else if (*diagnose) {
      auto cfg = resolve(common);
      auto enc = trained_encoder(cfg, checkpoint);
      const auto data = load_dataset(cfg.dataset, cfg.train.seed);
      const auto sample = data.val.head(cfg.eval.diagnostic_samples);
      auto trained = correlation_diagnostics(enc, sample, ViewPipeline::full(), cfg.train.seed);
      Encoder<float> fresh(cfg.train.encoder, cfg.train.seed);
      auto random = correlation_diagnostics(fresh, sample, ViewPipeline::full(), cfg.train.seed);
      write_json_file(fs::path(cfg.train.out_dir) / "diagnostics.json",
                      {{"trained", to_json(trained)}, {"random_init", to_json(random)}});
      for (const auto& e : trained.entries) {
        std::cout << "block " << e.block << " on-diagonal median " << e.on.median << " off-diagonal median "
                  << e.off.median << '\n';
      }
    } else if (*corrupt) {
      auto cfg = resolve(common);
      auto enc = trained_encoder(cfg, checkpoint);
      const auto data = load_dataset(cfg.dataset, cfg.train.seed);
      const std::size_t top =
          cfg.eval.probe_blocks.empty() ? cfg.train.encoder.blocks.size() : cfg.eval.probe_blocks.back();
      auto fitted = linear_probe(enc, data, {top}, cfg.eval.probe_cfg).entries.front();
      auto rep = corruption_eval(enc, fitted.probe, data.val, cfg.eval.corruptions, cfg.eval.severities, cfg.train.seed);
      const fs::path d(cfg.train.out_dir);
      fs::create_directories(d);
      write_corruption_csv((d / "corruption.csv").string(), rep);
      write_corruption_summary_csv((d / "corruption_summary.csv").string(), rep);
      std::cout << "clean error " << rep.clean_error << '\n';
      for (const auto& s : rep.summary) std::cout << to_string(s.kind) << " mean error " << s.mean_error << '\n';
    } else if (*plot) {
      for (const auto& f : emit_plotdata(plot_dir)) std::cout << f << '\n';
    } else if (*preset) {
      if (preset_name == "list") {
        for (const auto& n : preset_names()) std::cout << n << '\n';
        return 0;
      }
      const std::string out = preset_out.empty() ? "runs/" + preset_name : preset_out;
      auto p = make_preset(preset_name, out, preset_seed);
      for (auto& v : p.variants) {
        if (synthetic) v.dataset.source = DataSource::synthetic;
        if (epochs) v.train.epochs = *epochs;
      }
      if (print_only) {
        json all = json::array();
        for (const auto& v : p.variants) all.push_back(to_json(v));
        std::cout << json{{"name", p.name}, {"description", p.description}, {"variants", all}}.dump(2) << '\n';
        return 0;
      }
      set_threads(preset_threads);
      run_preset(p, out, &std::cerr);
      std::cout << "wrote " << out << '\n';
    }
  } catch (const ConfigError& e) {
    return report("config", e.what(), 2);
  } catch (const ParseError& e) {
    return report("parse", e.what(), 3);
  } catch (const ShapeError& e) {
    return report("shape", e.what(), 4);
  } catch (const NumericError& e) {
    return report("numeric", e.what(), 5);
  } catch (const std::exception& e) {
    return report("internal", e.what(), 1);
  }
  return 0;
}
