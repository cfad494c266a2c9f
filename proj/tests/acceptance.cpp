// Acceptance checks. Prints one PASS/FAIL line per criterion; exit status is
// 0 when every selected criterion passes, 77 when the only failures are
// criteria whose inputs are absent (no dataset on disk), 1 otherwise.
//
//   acceptance [--criterion N]... [--proxy]

#include <chrono>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <numeric>
#include <random>
#include <sstream>

#include "bwssl/experiment.hpp"
#include "support.hpp"

using namespace bwssl;
using bwssl::testing::grad_check;
using bwssl::testing::random_away_from_zero;
using bwssl::testing::random_projection;
using bwssl::testing::random_tensor;
using Td = Tensor<double>;

namespace {

// Tolerances, pinned.
constexpr double kGradRelTol = 1e-4;
constexpr double kGradStep = 1e-5;
constexpr std::size_t kGradShapes = 20;
constexpr double kOracleTol = 1e-12;
constexpr double kSimclrTol = 1e-9;
constexpr double kNoiseTol = 0.002;
constexpr double kDiagMargin = 0.05;
constexpr double kE2eOverFrozen = 0.15;
constexpr double kBlockwiseOverFrozen = 0.10;

enum class Outcome { pass, fail, unavailable };

struct Verdict {
  Outcome outcome = Outcome::fail;
  std::string detail;
};

Verdict verdict(bool ok, std::string detail) { return {ok ? Outcome::pass : Outcome::fail, std::move(detail)}; }

std::string fmt(double v, int prec = 4) {
  std::ostringstream s;
  s.precision(prec);
  s << v;
  return s.str();
}

std::string temp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("bwssl_acceptance_" + name);
  std::filesystem::remove_all(p);
  return p.string();
}

// ---------------------------------------------------------------------------
// 1. Finite differences
// ---------------------------------------------------------------------------

struct GradCase {
  std::string name;
  // Builds inputs and the scalar function for shape draw `s`.
  std::function<std::pair<std::vector<Td>, std::function<Td(std::vector<Td>&)>>(std::mt19937_64&, std::size_t)> make;
};

std::size_t pick(std::mt19937_64& rng, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

std::vector<GradCase> grad_cases() {
  using Fn = std::function<Td(std::vector<Td>&)>;
  using Made = std::pair<std::vector<Td>, Fn>;
  std::vector<GradCase> cases;
  auto elementwise = [&](std::string name, std::function<Td(const Td&)> op, bool away_from_zero, bool positive) {
    cases.push_back({name, [=](std::mt19937_64& rng, std::size_t s) -> Made {
                       Shape sh{pick(rng, 1, 5), pick(rng, 1, 6)};
                       Td x = positive ? random_tensor(sh, rng, 0.3, 2.0)
                                       : away_from_zero ? random_away_from_zero(sh, rng) : random_tensor(sh, rng);
                       return {{x}, [=](std::vector<Td>& in) { return random_projection(op(in[0]), s); }};
                     }});
  };
  elementwise("neg", [](const Td& x) { return neg(x); }, false, false);
  elementwise("square", [](const Td& x) { return square(x); }, false, false);
  elementwise("sqrt", [](const Td& x) { return bwssl::sqrt(x); }, false, true);
  elementwise("relu", [](const Td& x) { return relu(x); }, true, false);
  elementwise("exp", [](const Td& x) { return bwssl::exp(x); }, false, false);
  elementwise("log", [](const Td& x) { return bwssl::log(x); }, false, true);
  elementwise("signed_sqrt", [](const Td& x) { return signed_sqrt(x); }, true, false);
  elementwise("add_scalar", [](const Td& x) { return add(x, 0.7); }, false, false);
  elementwise("mul_scalar", [](const Td& x) { return mul(x, -1.3); }, false, false);
  elementwise("sub_from_scalar", [](const Td& x) { return sub(2.0, x); }, false, false);
  elementwise("div_scalar", [](const Td& x) { return div(x, 3.0); }, false, false);
  elementwise("transpose", [](const Td& x) { return transpose(x); }, false, false);
  elementwise("log_softmax_rows", [](const Td& x) { return log_softmax_rows(x); }, false, false);
  elementwise("normalize_rows", [](const Td& x) { return normalize_rows(x); }, true, false);
  elementwise("center_columns", [](const Td& x) { return detail::center_columns(x); }, false, false);
  elementwise("sum_all", [](const Td& x) { return mul(sum_all(x), sum_all(x)); }, false, false);
  elementwise("mean_all", [](const Td& x) { return square(mean_all(x)); }, false, false);

  auto binary_case = [&](std::string name, std::function<Td(const Td&, const Td&)> op, bool positive_b) {
    cases.push_back({name, [=](std::mt19937_64& rng, std::size_t s) -> Made {
                       const std::size_t n = pick(rng, 1, 4), m = pick(rng, 1, 5);
                       // Every other draw broadcasts a trailing-dimension operand.
                       Shape bs = s % 2 ? Shape{m} : Shape{n, m};
                       Td a = random_tensor({n, m}, rng);
                       Td b = positive_b ? random_tensor(bs, rng, 0.5, 2.0) : random_tensor(bs, rng);
                       return {{a, b}, [=](std::vector<Td>& in) { return random_projection(op(in[0], in[1]), s); }};
                     }});
  };
  binary_case("add", [](const Td& a, const Td& b) { return add(a, b); }, false);
  binary_case("sub", [](const Td& a, const Td& b) { return sub(a, b); }, false);
  binary_case("mul", [](const Td& a, const Td& b) { return mul(a, b); }, false);
  binary_case("div", [](const Td& a, const Td& b) { return div(a, b); }, true);

  cases.push_back({"matmul", [](std::mt19937_64& rng, std::size_t s) -> Made {
                     const std::size_t n = pick(rng, 1, 4), k = pick(rng, 1, 5), m = pick(rng, 1, 4);
                     return {{random_tensor({n, k}, rng), random_tensor({k, m}, rng)},
                             [=](std::vector<Td>& in) { return random_projection(matmul(in[0], in[1]), s); }};
                   }});
  cases.push_back({"concat_rows", [](std::mt19937_64& rng, std::size_t s) -> Made {
                     const std::size_t d = pick(rng, 1, 4);
                     return {{random_tensor({pick(rng, 1, 3), d}, rng), random_tensor({pick(rng, 1, 3), d}, rng)},
                             [=](std::vector<Td>& in) { return random_projection(concat_rows(in[0], in[1]), s); }};
                   }});
  cases.push_back({"reshape", [](std::mt19937_64& rng, std::size_t s) -> Made {
                     const std::size_t a = pick(rng, 1, 4), b = pick(rng, 1, 4);
                     return {{random_tensor({a, b}, rng)},
                             [=](std::vector<Td>& in) { return random_projection(reshape(in[0], {b, a}), s); }};
                   }});
  for (bool use_mean : {false, true}) {
    cases.push_back({use_mean ? "mean_axes" : "sum_axes", [use_mean](std::mt19937_64& rng, std::size_t s) -> Made {
                       Shape sh{pick(rng, 1, 3), pick(rng, 1, 3), pick(rng, 1, 3)};
                       std::vector<std::vector<std::size_t>> options{{0}, {1}, {2}, {0, 1}, {1, 2}, {0, 2}};
                       auto axes = options[s % options.size()];
                       return {{random_tensor(sh, rng)}, [=](std::vector<Td>& in) {
                                 return random_projection(use_mean ? mean(in[0], axes) : sum(in[0], axes), s);
                               }};
                     }});
  }
  cases.push_back({"conv2d", [](std::mt19937_64& rng, std::size_t s) -> Made {
                     const std::size_t g = 1 + s % 2, cg = pick(rng, 1, 2), og = pick(rng, 1, 2);
                     const std::size_t k = 1 + 2 * (s % 2 == 0 ? pick(rng, 0, 1) : 0);
                     Conv2dParams p{pick(rng, 1, 2), k / 2 + (s % 3 == 0 ? 1 : 0), g, ConvAlgo::im2col};
                     const std::size_t h = pick(rng, 3, 5), w = pick(rng, 3, 5);
                     return {{random_tensor({pick(rng, 1, 2), g * cg, h, w}, rng), random_tensor({g * og, cg, k, k}, rng)},
                             [=](std::vector<Td>& in) { return random_projection(conv2d(in[0], in[1], p), s); }};
                   }});
  cases.push_back({"batch_norm", [](std::mt19937_64& rng, std::size_t s) -> Made {
                     const std::size_t c = pick(rng, 1, 3);
                     Shape sh = s % 2 ? Shape{pick(rng, 2, 5), c} : Shape{pick(rng, 2, 3), c, 2, 2};
                     return {{random_tensor(sh, rng), random_tensor({c}, rng, 0.5, 1.5), random_tensor({c}, rng)},
                             [=](std::vector<Td>& in) {
                               BatchNorm<double> bn(c);
                               bn.gamma() = in[1];
                               bn.beta() = in[2];
                               return random_projection(bn.forward(in[0]), s);
                             }};
                   }});
  cases.push_back({"linear", [](std::mt19937_64& rng, std::size_t s) -> Made {
                     const std::size_t n = pick(rng, 1, 4), i = pick(rng, 1, 4), o = pick(rng, 1, 4);
                     return {{random_tensor({n, i}, rng), random_tensor({i, o}, rng), random_tensor({o}, rng)},
                             [=](std::vector<Td>& in) {
                               Linear<double> l(i, o, true);
                               l.weight() = in[1];
                               *l.bias() = in[2];
                               return random_projection(l.forward(in[0]), s);
                             }};
                   }});
  cases.push_back({"gsp", [](std::mt19937_64& rng, std::size_t s) -> Made {
                     return {{random_tensor({pick(rng, 1, 2), pick(rng, 1, 3), pick(rng, 1, 4), pick(rng, 1, 4)}, rng)},
                             [=](std::vector<Td>& in) { return random_projection(gsp(in[0]), s); }};
                   }});
  cases.push_back({"lsp", [](std::mt19937_64& rng, std::size_t s) -> Made {
                     const std::size_t g = pick(rng, 1, 3);
                     return {{random_tensor({pick(rng, 1, 2), pick(rng, 1, 3), g * pick(rng, 1, 2), g * pick(rng, 1, 2)}, rng)},
                             [=](std::vector<Td>& in) { return random_projection(lsp(in[0], g), s); }};
                   }});
  for (auto kind : {PoolingKind::cbe_gsp, PoolingKind::cbe_l2, PoolingKind::cbe_sqrt}) {
    cases.push_back({"pool_" + to_string(kind), [kind](std::mt19937_64& rng, std::size_t s) -> Made {
                       const std::size_t c = pick(rng, 1, 3), f = 1 + 2 * (s % 2);
                       PoolingConfig cfg{kind, 0, c + pick(rng, 0, 3), f, 1};
                       Pooling<double> probe(cfg, c, 4);
                       auto kshape = probe.expansion()->weight().shape();
                       // cbe-sqrt has a kink at 0; keep the expanded map away from it with positive inputs and weights.
                       const bool pos = kind == PoolingKind::cbe_sqrt;
                       return {{pos ? random_tensor({pick(rng, 1, 2), c, 3, 3}, rng, 0.2, 1.0)
                                    : random_tensor({pick(rng, 1, 2), c, 3, 3}, rng),
                                pos ? random_tensor(kshape, rng, 0.2, 1.0) : random_tensor(kshape, rng)},
                               [=](std::vector<Td>& in) {
                                 Pooling<double> p(cfg, c, 3);
                                 p.expansion()->weight() = in[1];
                                 return random_projection(p.forward(in[0]), s);
                               }};
                     }});
  }
  cases.push_back({"scale_rows", [](std::mt19937_64& rng, std::size_t s) -> Made {
                     const std::size_t n = pick(rng, 1, 4);
                     std::vector<double> f(n);
                     for (auto& v : f) v = std::uniform_real_distribution<double>(0, 2)(rng);
                     return {{random_tensor({n, pick(rng, 1, 3)}, rng)},
                             [=](std::vector<Td>& in) { return random_projection(detail::scale_rows(in[0], f), s); }};
                   }});
  cases.push_back({"inject_noise", [](std::mt19937_64& rng, std::size_t s) -> Made {
                     NoiseConfig cfg{0.25, s % 2 ? NoiseMode::shared_spatial : NoiseMode::independent, false};
                     return {{random_tensor({pick(rng, 1, 2), pick(rng, 1, 3), 2, 2}, rng)}, [=](std::vector<Td>& in) {
                               auto r = make_stream(s, "fd-noise");
                               return random_projection(square(inject_noise(in[0], cfg, r)), s);
                             }};
                   }});
  cases.push_back({"cross_correlation", [](std::mt19937_64& rng, std::size_t s) -> Made {
                     const std::size_t n = pick(rng, 3, 8), d = pick(rng, 1, 4);
                     std::vector<double> w(n);
                     for (auto& v : w) v = std::uniform_real_distribution<double>(0.2, 1.5)(rng);
                     const bool center = s % 2 == 0, weighted = s % 3 == 0;
                     return {{random_tensor({n, d}, rng), random_tensor({n, d}, rng)}, [=](std::vector<Td>& in) {
                               return random_projection(cross_correlation(in[0], in[1], center, weighted ? &w : nullptr), s);
                             }};
                   }});
  cases.push_back({"barlow_twins_loss", [](std::mt19937_64& rng, std::size_t s) -> Made {
                     const std::size_t n = pick(rng, 3, 8), d = pick(rng, 1, 4);
                     std::vector<double> tau(d);
                     for (auto& t : tau) t = s % 2 ? 1.0 : std::uniform_real_distribution<double>(0.5, 1.0)(rng);
                     return {{random_tensor({n, d}, rng), random_tensor({n, d}, rng)}, [=](std::vector<Td>& in) {
                               return barlow_twins_loss(cross_correlation(in[0], in[1]), 0.05, tau).loss;
                             }};
                   }});
  cases.push_back({"simclr_loss", [](std::mt19937_64& rng, std::size_t s) -> Made {
                     const std::size_t n = pick(rng, 2, 5), d = pick(rng, 1, 4);
                     const double temp = s % 2 ? 0.5 : 0.2;
                     return {{random_tensor({n, d}, rng), random_tensor({n, d}, rng)},
                             [=](std::vector<Td>& in) { return simclr_loss(in[0], in[1], temp).loss; }};
                   }});
  cases.push_back({"vicreg_loss", [](std::mt19937_64& rng, std::size_t) -> Made {
                     const std::size_t n = pick(rng, 3, 6), d = pick(rng, 1, 4);
                     // Column spreads straddle 1 so both hinge branches appear across draws.
                     return {{random_tensor({n, d}, rng, -1.2, 1.2), random_tensor({n, d}, rng, -2.5, 2.5)},
                             [=](std::vector<Td>& in) { return vicreg_loss(in[0], in[1]).loss; }};
                   }});
  cases.push_back({"supervised_ce_loss", [](std::mt19937_64& rng, std::size_t) -> Made {
                     const std::size_t n = pick(rng, 1, 5), k = pick(rng, 2, 5);
                     std::vector<int> labels(n);
                     for (auto& l : labels) l = static_cast<int>(pick(rng, 0, k - 1));
                     return {{random_tensor({n, k}, rng)},
                             [=](std::vector<Td>& in) { return supervised_ce_loss(in[0], labels).loss; }};
                   }});
  return cases;
}

Verdict criterion_gradients() {
  const auto start = std::chrono::steady_clock::now();
  double worst = 0;
  std::string worst_op;
  std::size_t checks = 0;
  std::vector<std::string> failed;
  for (const auto& c : grad_cases()) {
    std::mt19937_64 rng(std::hash<std::string>{}(c.name) ^ 0x5eed);
    bool ok = true;
    for (std::size_t s = 0; s < kGradShapes; ++s) {
      auto [inputs, fn] = c.make(rng, s);
      auto r = grad_check(fn, inputs, kGradStep);
      ++checks;
      if (!r.finite || !(r.max_relative_error <= kGradRelTol)) ok = false;
      if (r.max_relative_error > worst) {
        worst = r.max_relative_error;
        worst_op = c.name;
      }
    }
    if (!ok) failed.push_back(c.name);
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  std::string detail = std::to_string(grad_cases().size()) + " ops x " + std::to_string(kGradShapes) +
                       " shapes, worst rel err " + fmt(worst, 3) + " (" + worst_op + "), " + fmt(secs, 3) + " s";
  for (const auto& f : failed) detail += ", failed: " + f;
  return verdict(failed.empty() && secs < 120.0, detail);
}

// ---------------------------------------------------------------------------
// 2. Stop-gradient isolation
// ---------------------------------------------------------------------------

Verdict criterion_isolation() {
  TrainConfig c;
  c.encoder = EncoderSpec::desk();
  c.regime.kind = RegimeKind::simultaneous;
  c.batch_size = 8;
  c.epochs = 4;
  c.audit_every = 1;
  c.seed = 2;
  const auto data = make_synthetic(200, 10, 16, 16, 2, 0);
  Trainer<float> t(c, data);
  auto r = t.run();
  return verdict(r.steps == 100 && r.audit.audited_steps == 100 && r.audit.violations == 0 && r.audit.checked_tensors > 0,
                 std::to_string(r.audit.audited_steps) + "/" + std::to_string(r.steps) + " steps audited, " +
                     std::to_string(r.audit.checked_tensors) + " gradient tensors checked, " +
                     std::to_string(r.audit.violations) + " non-zero" +
                     (r.audit.first_violation.empty() ? "" : " (first: " + r.audit.first_violation + ")"));
}

// ---------------------------------------------------------------------------
// 3. Loss oracles
// ---------------------------------------------------------------------------

Verdict criterion_loss_oracles() {
  std::mt19937_64 rng(303);
  double worst_c = 0, worst_l = 0;
  for (std::size_t i = 0; i < 100; ++i) {
    const std::size_t n = pick(rng, 2, 16), d = pick(rng, 1, 8);
    auto a = random_tensor({n, d}, rng, -1, 1, false), b = random_tensor({n, d}, rng, -1, 1, false);
    const bool center = i % 2 == 0;
    auto c = cross_correlation(a, b, center);
    const auto oracle = bwssl::testing::correlation_oracle(a, b, center);
    worst_c = std::max(worst_c, bwssl::testing::max_abs_diff(c.data(), oracle));
    std::vector<double> tau(d);
    for (auto& t : tau) t = i % 3 ? 1.0 : std::uniform_real_distribution<double>(0.5, 1.0)(rng);
    const double lambda = std::uniform_real_distribution<double>(1e-3, 0.1)(rng);
    const double got = barlow_twins_loss(c, lambda, tau).loss.item();
    worst_l = std::max(worst_l, std::abs(got - bwssl::testing::barlow_oracle(oracle, d, lambda, tau)));
  }
  const double worked = barlow_twins_loss(Td::matrix(2, 2, {1, -1, -1, 1}), 0.0051).loss.item();

  // N = 2, all four embeddings identical: three equal logits per anchor.
  Td ident = Td::matrix(2, 2, {1, 0, 1, 0});
  const double simclr_ln3 = simclr_loss(ident, ident, 0.5).loss.item();

  Td ortho = Td::matrix(4, 2, {1, 1, 1, -1, -1, 1, -1, -1});
  const double vic = vicreg_loss(ortho, ortho).loss.item();

  const bool ok = worst_c <= kOracleTol && worst_l <= kOracleTol && worked == 0.0102 &&
                  std::abs(simclr_ln3 - std::log(3.0)) <= kSimclrTol && vic == 0.0;
  return verdict(ok, "max |C - oracle| " + fmt(worst_c, 3) + ", max |L - oracle| " + fmt(worst_l, 3) +
                         ", worked example " + fmt(worked, 17) + ", simclr " + fmt(simclr_ln3, 12) + " vs ln3, vicreg " +
                         fmt(vic, 3));
}

// ---------------------------------------------------------------------------
// 4. Degenerate partition
// ---------------------------------------------------------------------------

Verdict criterion_single_block() {
  set_threads(1);
  const auto data = make_synthetic(80, 4, 16, 16, 4, 0);
  std::vector<std::vector<std::vector<std::vector<float>>>> trajectories;
  for (auto kind : {RegimeKind::end_to_end, RegimeKind::simultaneous, RegimeKind::sequential}) {
    TrainConfig c;
    c.encoder = EncoderSpec::desk();
    c.encoder.blocks.resize(1);
    c.heads[0].pooling.target_width = 64;
    c.heads[0].projector = {64, 64, 3};
    c.regime.kind = kind;
    c.batch_size = 8;
    c.epochs = 5;
    c.seed = 4;
    Trainer<float> t(c, data);
    trajectories.emplace_back();
    auto& traj = trajectories.back();
    t.set_step_hook([&](const StepInfo&) {
      traj.emplace_back();
      for (const auto& p : t.state()) traj.back().emplace_back(p.tensor.data().begin(), p.tensor.data().end());
    });
    t.run();
  }
  const bool ok = trajectories[0].size() == 50 && trajectories[0] == trajectories[1] && trajectories[0] == trajectories[2];
  return verdict(ok, std::to_string(trajectories[0].size()) + " steps; end-to-end == simultaneous: " +
                         (trajectories[0] == trajectories[1] ? "yes" : "no") +
                         ", end-to-end == sequential: " + (trajectories[0] == trajectories[2] ? "yes" : "no"));
}

// ---------------------------------------------------------------------------
// 5. Desk-scale orderings on CIFAR-10
// ---------------------------------------------------------------------------

struct OrderingRuns {
  std::map<std::string, std::vector<double>> curve;  // variant -> top1 per block (seed mean)
};

OrderingRuns ordering_protocol(ExperimentConfig base, const std::vector<std::uint64_t>& seeds, const std::string& root) {
  const std::size_t nb = base.train.encoder.blocks.size();
  std::map<std::string, std::vector<double>> sums;
  auto record = [&](const std::string& v, std::size_t block, double top1) {
    auto& s = sums[v];
    s.resize(nb, 0.0);
    s[block - 1] += top1 / static_cast<double>(seeds.size());
  };
  for (auto seed : seeds) {
    auto variant = [&](const std::string& name, RegimeKind kind) {
      auto c = base;
      c.name = name;
      c.train.seed = seed;
      c.train.regime.kind = kind;
      c.eval.diagnostics = false;
      c.train.out_dir = (std::filesystem::path(root) / ("seed" + std::to_string(seed)) / name).string();
      return c;
    };
    for (auto [name, kind] : {std::pair{"end-to-end", RegimeKind::end_to_end}, {"simultaneous", RegimeKind::simultaneous},
                              {"sequential", RegimeKind::sequential}, {"supervised-blockwise", RegimeKind::supervised_blockwise}}) {
      auto r = run_experiment(variant(name, kind), &std::cerr);
      for (const auto& e : r.probe.entries) record(name, e.block, e.top1);
    }
    for (std::size_t k = 1; k <= nb; ++k) {
      auto c = variant("random-frozen-b" + std::to_string(k), RegimeKind::random_frozen);
      c.train.regime.trained_block = k;
      c.eval.probe_blocks = {k};
      auto r = run_experiment(c, &std::cerr);
      record("random-frozen", k, r.probe.entries.front().top1);
    }
  }
  return {sums};
}

Verdict judge_orderings(const OrderingRuns& r, std::size_t nb, const std::string& label) {
  const auto& e2e = r.curve.at("end-to-end");
  const auto& sim = r.curve.at("simultaneous");
  const auto& seq = r.curve.at("sequential");
  const auto& sup = r.curve.at("supervised-blockwise");
  const auto& frz = r.curve.at("random-frozen");
  const double a = e2e[nb - 1] - frz[nb - 1], b = sim[nb - 1] - frz[nb - 1];
  const double gap2 = sim[1] - frz[1], gap4 = sim[nb - 1] - frz[nb - 1];
  const bool ok = a >= kE2eOverFrozen && b >= kBlockwiseOverFrozen && gap4 > gap2;
  std::string d = label + ": (a) e2e - frozen " + fmt(a) + " (>= " + fmt(kE2eOverFrozen) + "), (b) simultaneous - frozen " +
                  fmt(b) + " (>= " + fmt(kBlockwiseOverFrozen) + "), (c) gap block " + std::to_string(nb) + " " +
                  fmt(gap4) + " vs block 2 " + fmt(gap2) + "; soft: simultaneous " + fmt(sim[nb - 1]) + " vs sequential " +
                  fmt(seq[nb - 1]) + ", supervised block 1 " + fmt(sup[0]) + " vs simultaneous block 1 " + fmt(sim[0]);
  return verdict(ok, d);
}

bool cifar_present(const DatasetDescriptor& d) {
  std::string dir;
  try {
    dir = d.resolved_path();
  } catch (const ConfigError&) {
    return false;
  }
  namespace fs = std::filesystem;
  for (int i = 1; i <= 5; ++i) {
    if (!fs::exists(fs::path(dir) / ("data_batch_" + std::to_string(i) + ".bin"))) return false;
  }
  return fs::exists(fs::path(dir) / "test_batch.bin");
}

Verdict criterion_orderings() {
  auto base = desk_config();
  if (!cifar_present(base.dataset)) {
    return {Outcome::unavailable,
            "CIFAR-10 binary batches not found (set BWSSL_DATA_DIR to the cifar-10-batches-bin directory); "
            "ordering protocol not run"};
  }
  const std::size_t nb = base.train.encoder.blocks.size();
  return judge_orderings(ordering_protocol(base, {0, 1, 2}, temp_dir("c5")), nb, "CIFAR-10, 3 seeds");
}

// Same protocol on the synthetic generator at reduced scale; informational only.
Verdict criterion_orderings_proxy() {
  auto base = desk_config();
  base.dataset.source = DataSource::synthetic;
  base.dataset.train_size = 2048;
  base.dataset.val_size = 512;
  base.train.epochs = 10;
  const std::size_t nb = base.train.encoder.blocks.size();
  return judge_orderings(ordering_protocol(base, {0}, temp_dir("c5proxy")), nb, "synthetic proxy, 1 seed");
}

// ---------------------------------------------------------------------------
// 6. Pooling equivalences
// ---------------------------------------------------------------------------

Verdict criterion_pooling() {
  std::mt19937_64 rng(606);
  std::size_t lsp_equal = 0, cbe_equal = 0, cbe_direct_equal = 0;
  for (std::size_t i = 0; i < 100; ++i) {
    const std::size_t n = pick(rng, 1, 4), c = pick(rng, 1, 8), h = pick(rng, 1, 8), w = pick(rng, 1, 8);
    auto x = random_tensor({n, c, h, w}, rng, -3, 3, false);
    const auto g = gsp(x);
    const std::vector<double> ref(g.data().begin(), g.data().end());
    auto as_vec = [](const Td& t) { return std::vector<double>(t.data().begin(), t.data().end()); };
    if (as_vec(lsp(x, 1)) == ref) ++lsp_equal;

    Pooling<double> cbe(PoolingConfig{PoolingKind::cbe_gsp, 0, c, 1, 1}, c, std::max(h, w));
    auto& k = cbe.expansion()->weight();
    auto kv = k.mutable_data();
    std::fill(kv.begin(), kv.end(), 0.0);
    for (std::size_t j = 0; j < c; ++j) kv[j * c + j] = 1.0;
    if (as_vec(cbe.forward(x)) == ref) ++cbe_equal;
    if (as_vec(expansion_reduce(conv2d(x, k), PoolingKind::cbe_gsp)) == ref) ++cbe_direct_equal;
  }
  return verdict(lsp_equal == 100 && cbe_equal == 100 && cbe_direct_equal == 100,
                 "gsp == lsp(1x1): " + std::to_string(lsp_equal) + "/100, gsp == cbe(identity 1x1, gsp): " +
                     std::to_string(cbe_equal) + "/100 (unfused path " + std::to_string(cbe_direct_equal) + "/100)");
}

// ---------------------------------------------------------------------------
// 7. Noise statistics
// ---------------------------------------------------------------------------

Verdict criterion_noise() {
  constexpr double sigma = 0.25;
  Tensor<double> zeros(Shape{1000, 10, 10, 10}, 0.0);  // 1e6 draws
  auto rng = make_stream(7, "acceptance-noise");
  auto y = inject_noise(zeros, NoiseConfig{sigma, NoiseMode::independent, false}, rng);
  double m = 0, m2 = 0;
  for (double v : y.data()) m += v;
  m /= static_cast<double>(y.numel());
  for (double v : y.data()) m2 += (v - m) * (v - m);
  const double sd = std::sqrt(m2 / static_cast<double>(y.numel() - 1));

  auto base = random_tensor({20, 8, 6, 6}, rng, -1, 1, false);
  auto shared = inject_noise(base, NoiseConfig{sigma, NoiseMode::shared_spatial, false}, rng);
  double worst_var = 0;
  const std::size_t n = 20, c = 8, hw = 36;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t p = 0; p < hw; ++p) {
      double mu = 0;
      std::vector<double> added(c);
      for (std::size_t ch = 0; ch < c; ++ch) {
        const std::size_t idx = (i * c + ch) * hw + p;
        added[ch] = shared[idx] - base[idx];
        mu += added[ch];
      }
      mu /= static_cast<double>(c);
      double var = 0;
      for (double v : added) var += (v - mu) * (v - mu);
      worst_var = std::max(worst_var, var / static_cast<double>(c));
    }
  // x + e - x is not e bitwise in floating point; at unit-scale inputs the
  // rounding residue is below 1e-32 in variance.
  const bool ok = std::abs(m) <= kNoiseTol && std::abs(sd - sigma) <= kNoiseTol && worst_var <= 1e-30;
  return verdict(ok, "mean " + fmt(m, 3) + ", std " + fmt(sd, 6) + " (target 0.25 +/- 0.002), shared-spatial max "
                         "channel variance " + fmt(worst_var, 3));
}

// ---------------------------------------------------------------------------
// 8. LARS
// ---------------------------------------------------------------------------

Verdict criterion_lars() {
  auto scalar = [](const char* name, double w, double g, bool adapt) {
    auto t = Td::scalar(w).set_requires_grad(true);
    t.grad_buffer()[0] = g;
    return NamedTensor<double>{name, t, adapt};
  };
  auto p = scalar("w", 2, 1, true);
  Lars<double> hand({p}, LarsConfig{0.0, 0.0, 1.0, 0.0});
  hand.step(0.1);
  const double traced = p.tensor.item();

  auto z1 = scalar("a", 2, 0, true), z2 = scalar("b", -3, 0, false);
  Lars<double> idle({z1, z2}, LarsConfig{0.9, 0.0, 0.001, 1e-9});
  idle.step(0.2);
  idle.step(0.2);
  const bool identity = z1.tensor.item() == 2.0 && z2.tensor.item() == -3.0;

  // Excluded parameter, no decay: buf1 = g1, w1 = w0 - lr*buf1;
  // buf2 = m*buf1 + g2, w2 = w1 - lr*buf2.
  const double wd = 1e-3, mom = 0.9, lr = 0.1, w0 = 1.0, g1 = 0.5, g2 = 0.25;
  auto e = scalar("bias", w0, g1, false);
  Lars<double> fallback({e}, LarsConfig{mom, wd, 0.001, 1e-9});
  fallback.step(lr);
  const double buf1 = g1, w1 = w0 - lr * buf1;
  const bool step1 = e.tensor.item() == w1;
  e.tensor.grad_buffer()[0] = g2;
  fallback.step(lr);
  const double w2 = w1 - lr * (mom * buf1 + g2);
  const bool step2 = e.tensor.item() == w2;
  return verdict(traced == 1.8 && identity && step1 && step2,
                 "hand trace w = " + fmt(traced, 17) + ", zero-gradient identity " + (identity ? "yes" : "no") +
                     ", excluded SGD two-step " + (step1 && step2 ? "exact" : "mismatch"));
}

// ---------------------------------------------------------------------------
// 9. Learned invariance
// ---------------------------------------------------------------------------

Verdict criterion_diagnostics() {
  ExperimentConfig c;
  c.name = "diagnostics";
  c.dataset.source = DataSource::synthetic;
  c.dataset.train_size = 2048;
  c.dataset.val_size = 512;
  c.train.epochs = 10;
  c.train.batch_size = 256;
  c.train.seed = 0;
  c.eval.probe = false;
  c.eval.diagnostic_samples = 512;
  c.train.out_dir = temp_dir("c9");
  auto r = run_experiment(c, &std::cerr);
  bool ok = r.diagnostics.entries.size() == c.train.encoder.blocks.size();
  std::string d = "synthetic 2048 images, 10 epochs; on-diagonal mean trained vs random-init:";
  for (std::size_t k = 0; k < r.diagnostics.entries.size(); ++k) {
    const double t = r.diagnostics.entries[k].on.mean, z = r.diagnostics_random_init.entries[k].on.mean;
    ok = ok && t - z >= kDiagMargin;
    d += " b" + std::to_string(k + 1) + " " + fmt(t, 3) + "/" + fmt(z, 3);
  }
  return verdict(ok, d + " (margin >= " + fmt(kDiagMargin) + ")");
}

// ---------------------------------------------------------------------------
// 10. Reproducibility
// ---------------------------------------------------------------------------

Verdict criterion_reproducibility() {
  set_threads(1);
  ExperimentConfig c;
  c.name = "repro";
  c.dataset.source = DataSource::synthetic;
  c.dataset.train_size = 64;
  c.dataset.val_size = 32;
  c.dataset.height = c.dataset.width = 16;
  c.train.heads[0].pooling.target_width = 128;
  c.train.heads[0].projector = {64, 64, 3};
  c.train.batch_size = 16;
  c.train.epochs = 3;
  c.train.seed = 10;
  c.train.noise.sigma = 0.25;
  c.eval.probe = c.eval.diagnostics = false;
  std::string bytes[2];
  for (int i = 0; i < 2; ++i) {
    c.train.out_dir = temp_dir("c10_" + std::to_string(i));
    run_experiment(c);
    bytes[i] = detail::read_file((std::filesystem::path(c.train.out_dir) / "metrics.jsonl").string());
  }
  return verdict(!bytes[0].empty() && bytes[0] == bytes[1],
                 "metrics.jsonl " + std::to_string(bytes[0].size()) + " bytes, identical: " +
                     (bytes[0] == bytes[1] ? "yes" : "no"));
}

}  // namespace

int main(int argc, char** argv) {
  const std::map<int, std::pair<std::string, std::function<Verdict()>>> criteria{
      {1, {"gradient correctness", criterion_gradients}},
      {2, {"stop-gradient isolation", criterion_isolation}},
      {3, {"loss oracles", criterion_loss_oracles}},
      {4, {"single-block regime equivalence", criterion_single_block}},
      {5, {"desk-scale orderings", criterion_orderings}},
      {6, {"pooling equivalences", criterion_pooling}},
      {7, {"noise statistics", criterion_noise}},
      {8, {"LARS traces", criterion_lars}},
      {9, {"learned invariance diagnostics", criterion_diagnostics}},
      {10, {"reproducibility", criterion_reproducibility}},
  };
  std::vector<int> selected;
  bool proxy = false;
  for (int i = 1; i < argc; ++i) {
    if (!std::strcmp(argv[i], "--criterion") && i + 1 < argc) {
      selected.push_back(std::atoi(argv[++i]));
    } else if (!std::strcmp(argv[i], "--proxy")) {
      proxy = true;
    } else {
      std::cerr << "usage: acceptance [--criterion N]... [--proxy]\n";
      return 2;
    }
  }
  if (selected.empty() && !proxy)
    for (const auto& [k, v] : criteria) selected.push_back(k);

  bool failed = false, unavailable = false;
  for (int k : selected) {
    auto it = criteria.find(k);
    if (it == criteria.end()) {
      std::cerr << "no criterion " << k << '\n';
      return 2;
    }
    Verdict v;
    try {
      v = it->second.second();
    } catch (const std::exception& e) {
      v = {Outcome::fail, std::string("threw: ") + e.what()};
    }
    std::cout << "CRITERION " << k << " " << (v.outcome == Outcome::pass ? "PASS" : "FAIL") << " [" << it->second.first
              << "] " << v.detail << std::endl;
    failed = failed || v.outcome == Outcome::fail;
    unavailable = unavailable || v.outcome == Outcome::unavailable;
  }
  if (proxy) {
    auto v = criterion_orderings_proxy();
    std::cout << "PROXY 5 " << (v.outcome == Outcome::pass ? "PASS" : "FAIL") << " [desk-scale orderings, informational] "
              << v.detail << std::endl;
  }
  if (failed) return 1;
  return unavailable ? 77 : 0;
}
