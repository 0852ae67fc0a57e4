// One PASS/FAIL line per acceptance criterion. `--only N` runs a single one.

#include <sys/wait.h>

#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <functional>
#include <iostream>
#include <numeric>
#include <sstream>
#include <string>

#include "anchor_oracle.hpp"
#include "more/commands.hpp"
#include "more/error.hpp"
#include "support.hpp"

using namespace more;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(double v, int digits = 4) {
  std::ostringstream s;
  s.precision(digits);
  s << v;
  return s.str();
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// ---------------------------------------------------------------------------
// Shared diabetes runs. The split, initialization and discovery all derive
// from the seed, exactly as `train` does.

TrainOutcome diabetes_run(const std::string& config, std::uint64_t seed, RefinerKind refiner,
                         const fs::path& out_dir) {
  auto cfg = load_config(testing::source_dir() / "configs" / config);
  cfg.seed = seed;
  cfg.discovery.seed = seed;
  cfg.refiner = refiner;
  cfg.discovery.strict_refiner = false;
  cfg.output = out_dir;
  std::ostringstream sink;
  return cmd_train(cfg, sink);
}

// Mean soft-mixture cross-entropy over `data`, through the public predictor.
double mixture_ce(const MixtureModel& m, const Dataset& data) {
  double loss = 0.0;
  for (std::size_t i = 0; i < data.size(); ++i) loss += ce_loss(mixture_predict(m, data.rows[i]), data.labels[i]);
  return loss / static_cast<double>(data.size());
}

// ---------------------------------------------------------------------------
// 1. Gradients against central differences of an independent forward pass.

Outcome criterion_1() {
  const auto t0 = std::chrono::steady_clock::now();
  constexpr std::size_t kDim = 8;
  constexpr int kCases = 20;
  const Architecture lr{kDim, {}, 2}, mlp{kDim, {50, 50}, 2}, small{kDim, {6}, 2};
  double worst[4] = {0, 0, 0, 0};

  for (int c = 0; c < kCases; ++c) {
    Rng rng(1000 + static_cast<std::uint64_t>(c));
    std::vector<Eigen::VectorXd> xs;
    std::vector<int> ys;
    for (int i = 0; i < 3; ++i) {
      Eigen::VectorXd x(kDim);
      for (auto& v : x) v = rng.uniform(-2, 2);
      xs.push_back(x);
      ys.push_back(static_cast<int>(rng.index(2)));
    }
    const std::vector<std::size_t> batch = {0, 1, 2};

    auto mean_ce_of = [&](const Architecture& arch) {
      return [&, arch](const Eigen::VectorXd& theta) {
        double l = 0;
        for (std::size_t i = 0; i < xs.size(); ++i) l -= std::log(testing::reference_probs(arch, theta, xs[i])[ys[i]]);
        return l / static_cast<double>(xs.size());
      };
    };
    for (int k = 0; k < 2; ++k) {
      const auto& arch = k == 0 ? lr : mlp;
      const DiffClassifier model(arch, rng);
      const auto analytic = grad_params(model, xs, batch, ce_loss_fn(ys)).grad;
      const auto numeric = testing::numeric_gradient(mean_ce_of(arch), model.parameters());
      worst[k] = std::max(worst[k], testing::relative_error(analytic, numeric));
    }

    // Gate: MLP(50,50) on even cases, logistic regression on odd ones.
    const auto& g_arch = c % 2 == 0 ? mlp : lr;
    const DiffClassifier g(g_arch, rng);
    const DiffClassifier f(small, rng);
    const auto omega = g.parameters();

    GradientVector interp = GradientVector::Zero(omega.size());
    for (const auto& x : xs) interp += interpretability_gradient(g, x);
    const auto interp_ref = [&](const Eigen::VectorXd& w) {
      double l = 0;
      for (const auto& x : xs) l -= std::log(testing::reference_probs(g_arch, w, x)[1]);
      return l;
    };
    worst[2] = std::max(worst[2], testing::relative_error(interp, testing::numeric_gradient(interp_ref, omega)));

    TrainingView view;
    for (std::size_t i = 0; i < xs.size(); ++i) {
      view.inputs.push_back(xs[i]);
      view.labels.push_back(ys[i]);
      Eigen::VectorXd r = Eigen::VectorXd::Zero(2);
      r[rng.index(2)] = 1.0;
      view.rule_outputs.push_back(r);
      view.covered.push_back(true);
    }
    GradientVector task = GradientVector::Zero(omega.size());
    for (std::size_t i = 0; i < view.size(); ++i) task += gate_task_gradient(f, g, view, i);
    const auto task_ref = [&](const Eigen::VectorXd& w) {
      double l = 0;
      for (std::size_t i = 0; i < xs.size(); ++i) {
        const auto gp = testing::reference_probs(g_arch, w, xs[i]);
        const auto fp = testing::reference_probs(small, f.parameters(), xs[i]);
        const double p = gp[0] * fp[ys[i]] + gp[1] * view.rule_outputs[i][ys[i]];
        l -= std::log(p);
      }
      return l;
    };
    worst[3] = std::max(worst[3], testing::relative_error(task, testing::numeric_gradient(task_ref, omega)));
  }

  const double secs = seconds_since(t0);
  const double max_err = *std::max_element(std::begin(worst), std::end(worst));
  Outcome o;
  o.pass = max_err <= 1e-4 && secs < 30.0;
  o.detail = std::to_string(kCases) + " cases each; max rel err LR " + fmt(worst[0], 3) + ", MLP(50,50) " +
             fmt(worst[1], 3) + ", l_int " + fmt(worst[2], 3) + ", task wrt gate " + fmt(worst[3], 3) + "; " +
             fmt(secs, 3) + " s";
  return o;
}

// ---------------------------------------------------------------------------
// 2. Final epoch-level training loss stays inside the relaxed constraint.

Outcome criterion_2() {
  testing::TempDir dir("acc2");
  Outcome o{true, ""};
  const auto t0 = std::chrono::steady_clock::now();
  for (const std::string model : {"lr", "mlp"}) {
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
      const auto run = diabetes_run("diabetes_" + model + ".toml", seed, RefinerKind::None, dir.path() / "b");
      const auto& st = run.state;
      const double limit = 1.1 * st.baseline.train_loss * 1.02;
      const double recorded = st.epochs.back().train_loss;
      const double recomputed = mixture_ce(st.model, run.train);
      const bool ok = recorded <= limit && std::abs(recorded - recomputed) <= 1e-9;
      o.pass = o.pass && ok;
      o.detail += model + " seed " + std::to_string(seed) + ": " + fmt(recorded) + "/" + fmt(limit) +
                  (ok ? "" : " (violated)") + "; ";
    }
  }
  const double secs = seconds_since(t0);
  o.pass = o.pass && secs < 300.0;
  o.detail += fmt(secs, 3) + " s";
  return o;
}

// ---------------------------------------------------------------------------
// 3. Logistic-regression mixture on diabetes: loss, coverage, usage bands.

Outcome criterion_3() {
  testing::TempDir dir("acc3");
  std::array<double, 3> loss{}, cov{}, use{};
  std::string per_seed;
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    const auto run = diabetes_run("diabetes_lr.toml", seed, RefinerKind::None, dir.path() / "b");
    const auto& last = run.state.metrics.back();
    loss[seed] = last.test_loss;
    cov[seed] = last.coverage;
    use[seed] = last.usage;
    per_seed += "seed " + std::to_string(seed) + " loss " + fmt(loss[seed], 3) + " cov " + fmt(cov[seed], 3) +
                " usage " + fmt(use[seed], 3) + "; ";
  }
  auto mean = [](const std::array<double, 3>& a) { return (a[0] + a[1] + a[2]) / 3.0; };
  auto within = [](double v, double c, double w) { return std::abs(v - c) <= w; };
  const bool l_ok = within(mean(loss), 0.56, 0.08);
  const bool c_ok = within(mean(cov), 0.89, 0.12);
  const bool u_ok = within(mean(use), 0.20, 0.15);
  Outcome o;
  o.pass = l_ok && c_ok && u_ok;
  o.detail = per_seed + "mean loss " + fmt(mean(loss), 3) + (l_ok ? " ok" : " OUT") + ", coverage " +
             fmt(mean(cov), 3) + (c_ok ? " ok" : " OUT") + ", usage " + fmt(mean(use), 3) + (u_ok ? " ok" : " OUT");
  return o;
}

// ---------------------------------------------------------------------------
// 4. MLP mixture accuracy band and rule budget.

Outcome criterion_4() {
  testing::TempDir dir("acc4");
  Outcome o{true, ""};
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    const auto run = diabetes_run("diabetes_mlp.toml", seed, RefinerKind::None, dir.path() / "b");
    const auto& st = run.state;
    const double acc = st.metrics.back().test_acc;
    const std::size_t active = st.model.rules.active_count();
    const bool ok = std::abs(acc - 0.76) <= 0.05 && active <= 24;
    o.pass = o.pass && ok;
    o.detail += "seed " + std::to_string(seed) + " acc " + fmt(acc, 3) + " rules " + std::to_string(active) +
                (ok ? "" : " (out of band)") + "; ";
  }
  return o;
}

// ---------------------------------------------------------------------------
// 5. Coverage never drops by more than 0.02 and accuracy tracks the baseline.

Outcome criterion_5() {
  testing::TempDir dir("acc5");
  Outcome o{true, ""};
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    const auto run = diabetes_run("diabetes_mlp.toml", seed, RefinerKind::None, dir.path() / "b");
    const auto& m = run.state.metrics;
    bool ok = m.size() == 4;
    double worst_drop = 0.0, worst_acc = 0.0;
    for (std::size_t k = 1; k < m.size(); ++k) worst_drop = std::max(worst_drop, m[k - 1].coverage - m[k].coverage);
    for (const auto& row : m) worst_acc = std::max(worst_acc, std::abs(row.test_acc - m[0].test_acc));
    ok = ok && worst_drop <= 0.02 && worst_acc <= 0.05;
    o.pass = o.pass && ok;
    o.detail += "seed " + std::to_string(seed) + " coverage";
    for (const auto& row : m) o.detail += " " + fmt(row.coverage, 3);
    o.detail += ", max acc shift " + fmt(worst_acc, 3) + (ok ? "" : " (violated)") + "; ";
  }
  return o;
}

// ---------------------------------------------------------------------------
// 6. Barrier coefficient invariants and the empty-rule-set fixed point.

Outcome criterion_6() {
  testing::TempDir dir("acc6");
  std::size_t traces = 0, negative = 0, should_be_zero = 0, nonzero_when_satisfied = 0, formula = 0;
  for (const char* config : {"diabetes_lr.toml", "diabetes_mlp.toml"}) {
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
      const auto run = diabetes_run(config, seed, RefinerKind::None, dir.path() / "b");
      for (const auto& t : run.state.traces) {
        if (t.covered == 0) continue;
        ++traces;
        if (t.lambda < 0.0) ++negative;
        if (t.interp_dot_task >= t.phi) {
          ++should_be_zero;
          if (t.lambda != 0.0) ++nonzero_when_satisfied;
        }
        const double expected =
            t.task_norm_sq < 1e-12 ? 0.0 : std::max((t.phi - t.interp_dot_task) / std::max(t.task_norm_sq, 1e-12), 0.0);
        if (std::abs(expected - t.lambda) > 1e-12 * std::max(1.0, std::abs(expected))) ++formula;
      }
    }
  }

  // No rules: no sample is covered, so the gate must not move at all.
  const auto schema = FeatureSchema::load(testing::source_dir() / "data/diabetes.schema.json");
  const auto data = load_csv(testing::source_dir() / "data/diabetes.csv", schema);
  DiscoveryConfig cfg;
  cfg.init.epochs = 5;
  auto state = initialize(data, data, cfg);
  const auto view = make_view(state.model, data);
  const auto before = state.model.g.parameters();
  Rng rng(6);
  dbgd_epoch(state.model, view, state.baseline, cfg.dbgd, rng);
  const auto after = state.model.g.parameters();
  const bool frozen = std::memcmp(before.data(), after.data(), sizeof(double) * before.size()) == 0;

  Outcome o;
  o.pass = traces > 0 && negative == 0 && nonzero_when_satisfied == 0 && formula == 0 && frozen;
  o.detail = std::to_string(traces) + " covered batches, " + std::to_string(negative) + " negative lambda, " +
             std::to_string(nonzero_when_satisfied) + "/" + std::to_string(should_be_zero) +
             " nonzero lambda with I.T >= phi, " + std::to_string(formula) + " formula mismatches; empty rule set " +
             (frozen ? "leaves gate bitwise unchanged" : "MOVED the gate");
  return o;
}

// ---------------------------------------------------------------------------
// 7. Greedy anchors against exhaustive search on a 4-feature grid.

Outcome criterion_7() {
  const auto grid = testing::grid_dataset(4);
  const auto bins = make_bins(grid, 4);
  PerturbationSampler sampler(grid);
  // Ground truth depends on a single feature.
  const LabelFn f = [](const Instance& z) { return z[1] > 1.5 ? 1 : 0; };
  AnchorConfig cfg;
  cfg.n_samples = 10000;
  int passed = 0;
  std::string failures;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng pick(seed);
    Instance x(4);
    for (auto& v : x) v = static_cast<double>(pick.index(4));
    Rng rng = Rng::derive(seed, {7});
    const auto rule = find_anchor(x, f, sampler, bins, cfg, rng);
    const auto oracle = testing::minimal_anchors(x, f, grid, candidate_predicates(x, bins, grid.schema), cfg.tau);
    const bool ok = oracle.size() == 1 && *oracle.begin() == canonical_predicates(rule.predicates) &&
                    rule.predicates.size() == 1 && rule.predicates[0].feature == 1;
    if (ok) ++passed;
    else failures += " seed " + std::to_string(seed);
  }
  return {passed == 10, std::to_string(passed) + "/10 seeds match the exhaustive optimum" +
                            (failures.empty() ? "" : "; failed:" + failures)};
}

// ---------------------------------------------------------------------------
// 8. Rule expert output, dedup and text round trip.

Outcome criterion_8() {
  const auto schema = testing::mixed_schema();
  const auto data = testing::random_mixed_dataset(200, 8);
  const auto st = Standardizer::fit(data);
  Rng rng(8);

  std::size_t bad_sum = 0, bad_cover = 0;
  for (int t = 0; t < 10000; ++t) {
    RuleSet rs;
    const std::size_t n = rng.index(7);
    for (std::size_t k = 0; k < n; ++k) {
      auto r = testing::random_mixed_rule(rng);
      r.active = rng.index(4) != 0;
      rs.add(r);
    }
    const auto x = testing::random_mixed_instance(rng);
    const auto out = rule_predict(rs, x, st, schema);
    const double s = out.sum();
    if (s != 0.0 && s != 1.0) ++bad_sum;
    const bool any = std::any_of(rs.rules().begin(), rs.rules().end(),
                                 [&](const Rule& r) { return r.active && covers(r, x); });
    if (any != (s == 1.0)) ++bad_cover;
  }

  std::size_t not_idempotent = 0;
  for (int t = 0; t < 1000; ++t) {
    RuleSet rs;
    for (int k = 0; k < 8; ++k) {
      auto r = testing::random_mixed_rule(rng);
      if (k > 0 && rng.index(2) == 0) {
        r.predicates = rs.rules()[rng.index(rs.rules().size())].predicates;
        std::reverse(r.predicates.begin(), r.predicates.end());
      }
      rs.add(r);
    }
    const auto once = dedup(rs);
    if (!(dedup(once) == once)) ++not_idempotent;
  }

  std::size_t round_trip = 0;
  for (int t = 0; t < 1000; ++t) {
    const auto r = testing::random_mixed_rule(rng);
    const auto text = canonical_text(r, schema);
    try {
      const auto parsed = parse_rule(text, schema);
      Rule back = r;
      back.predicates = parsed.predicates;
      back.class_index = parsed.class_index;
      if (canonical_predicates(parsed.predicates) != canonical_predicates(r.predicates) ||
          parsed.class_index != r.class_index || canonical_text(back, schema) != text)
        ++round_trip;
    } catch (const Error&) {
      ++round_trip;
    }
  }

  Outcome o;
  o.pass = bad_sum == 0 && bad_cover == 0 && not_idempotent == 0 && round_trip == 0;
  o.detail = "10000 draws: " + std::to_string(bad_sum) + " bad sums, " + std::to_string(bad_cover) +
             " coverage mismatches; dedup non-idempotent " + std::to_string(not_idempotent) +
             "/1000; round-trip failures " + std::to_string(round_trip) + "/1000";
  return o;
}

// ---------------------------------------------------------------------------
// 9. Refinement protocol robustness.

class ScriptedClient : public LlmClient {
 public:
  explicit ScriptedClient(std::vector<std::string> answers) : answers_(std::move(answers)) {}
  std::string complete(const std::vector<ChatMessage>&) override { return answers_.at(next_++); }

 private:
  std::vector<std::string> answers_;
  std::size_t next_ = 0;
};

std::string token_soup(Rng& rng, const RuleSet& rs, const FeatureSchema& schema) {
  static const std::vector<std::string> tokens = {
      "RULE", "PRUNE", "KEEP", "CONTEXT", "MODIFY", "->", "IF", "THEN", "AND", ":", " ", "\n", "\r\n",
      "age", "glucose", "color", "==", "<=", ">", "in", "(", ")", "]", ",", "red", "yes", "no", "-1",
      "1e309", "nan", "`", "**", "- ", "#", "\t", "\xff", "\0", "999999999999"};
  std::string out;
  const std::size_t n = rng.index(60);
  for (std::size_t i = 0; i < n; ++i) {
    switch (rng.index(5)) {
      case 0: out += std::to_string(static_cast<int>(rng.index(static_cast<std::size_t>(rs.next_id() + 3))) - 1); break;
      case 1: out += static_cast<char>(rng.index(256)); break;
      case 2: out += canonical_text(testing::random_mixed_rule(rng), schema); break;
      default: out += tokens[rng.index(tokens.size())];
    }
  }
  return out;
}

Outcome criterion_9() {
  const auto schema = testing::mixed_schema();
  Rng rng(9);
  auto random_set = [&] {
    RuleSet rs;
    const std::size_t n = 1 + rng.index(6);
    for (std::size_t k = 0; k < n; ++k) {
      auto r = testing::random_mixed_rule(rng);
      if (k > 0 && rng.index(3) == 0) {
        r.predicates = rs.rules().back().predicates;
        r.class_index = 1 - rs.rules().back().class_index;
      }
      rs.add(r);
    }
    return rs;
  };

  std::size_t prune_accepted = 0;
  for (int t = 0; t < 500; ++t) {
    const auto rs = random_set();
    const int id = rs.rules()[rng.index(rs.rules().size())].id;
    const auto p = parse_response("PRUNE " + std::to_string(id) + ": redundant\n", Phase::Adaptation, rs, schema);
    const bool rejected = p.rejected.size() == 1 && p.rejected[0].cause.find("phase") != std::string::npos;
    const bool none_pruned = std::none_of(p.edits.begin(), p.edits.end(),
                                          [](const RefinerEdit& e) { return e.kind == EditKind::Prune; });
    const auto applied = apply_edits(rs, p.edits);
    if (!rejected || !none_pruned || applied.active_count() != rs.active_count()) ++prune_accepted;
  }

  std::size_t crashes = 0, invalid = 0;
  for (int t = 0; t < 10000; ++t) {
    const auto rs = random_set();
    const auto a = token_soup(rng, rs, schema);
    const auto b = token_soup(rng, rs, schema);
    try {
      for (Phase phase : {Phase::Adaptation, Phase::Pruning}) {
        const auto p = parse_response(t % 2 ? a : b, phase, rs, schema);
        if (p.edits.size() != rs.active_count()) ++invalid;
      }
      ProtocolRefiner refiner(std::make_shared<ScriptedClient>(std::vector<std::string>{a, b}));
      const auto out = refiner.refine(rs, schema).first;
      if (out.rules().size() != rs.rules().size()) ++invalid;
      for (std::size_t i = 0; i < out.rules().size(); ++i) {
        const auto& r = out.rules()[i];
        if (r.id != rs.rules()[i].id) ++invalid;
        if (!r.active) continue;
        try {
          validate_rule(r, schema);
        } catch (const Error&) {
          ++invalid;
        }
      }
    } catch (...) {
      ++crashes;
    }
  }

  std::size_t not_idempotent = 0;
  for (int t = 0; t < 500; ++t) {
    const auto rs = random_set();
    ProtocolRefiner refiner(std::make_shared<StubClient>(schema));
    const auto once = refiner.refine(rs, schema).first;
    const auto twice = refiner.refine(once, schema).first;
    if (!(twice == once)) ++not_idempotent;
  }

  Outcome o;
  o.pass = prune_accepted == 0 && crashes == 0 && invalid == 0 && not_idempotent == 0;
  o.detail = "adaptation PRUNE accepted " + std::to_string(prune_accepted) + "/500; 10000 fuzzed responses: " +
             std::to_string(crashes) + " crashes, " + std::to_string(invalid) +
             " invalid results; stub non-idempotent " + std::to_string(not_idempotent) + "/500";
  return o;
}

// ---------------------------------------------------------------------------
// CLI helpers for 10 and 11.

#ifdef MORE_CLI_PATH
struct Captured {
  int status = -1;
  std::string out;
};

Captured capture(const std::string& command) {
  Captured c;
  FILE* pipe = ::popen((command + " 2>&1").c_str(), "r");
  if (pipe == nullptr) return c;
  std::array<char, 4096> buf{};
  std::size_t n = 0;
  while ((n = std::fread(buf.data(), 1, buf.size(), pipe)) > 0) c.out.append(buf.data(), n);
  const int raw = ::pclose(pipe);
  c.status = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
  return c;
}

std::string quote(const fs::path& p) { return "'" + p.string() + "'"; }

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

// Copy of a shipped config with absolute data paths and its own output dir.
fs::path local_config(const std::string& config, const fs::path& dir, const std::string& name) {
  std::string text = slurp(testing::source_dir() / "configs" / config);
  const std::string data_prefix = "\"../data/";
  for (auto pos = text.find(data_prefix); pos != std::string::npos; pos = text.find(data_prefix))
    text.replace(pos, data_prefix.size(), "\"" + (testing::source_dir() / "data").string() + "/");
  const auto out_key = text.find("output = ");
  text = text.substr(0, out_key) + "output = \"" + (dir / name).string() + "\"\n";
  const auto path = dir / (name + ".toml");
  std::ofstream(path) << text;
  return path;
}
#endif

// 10. Two identical CLI runs produce byte-identical artifacts.
Outcome criterion_10() {
#ifdef MORE_CLI_PATH
  testing::TempDir dir("acc10");
  const auto a = capture(std::string(MORE_CLI_PATH) + " train --config " + quote(local_config("diabetes_mlp.toml", dir.path(), "a")));
  const auto b = capture(std::string(MORE_CLI_PATH) + " train --config " + quote(local_config("diabetes_mlp.toml", dir.path(), "b")));
  if (a.status != 0 || b.status != 0) return {false, "train failed: " + a.out + b.out};
  bool same = true;
  std::string detail;
  for (const char* name : {bundle_files::kRuleSet, bundle_files::kMetrics}) {
    const auto x = slurp(dir.path() / "a" / name);
    const auto y = slurp(dir.path() / "b" / name);
    const bool eq = !x.empty() && x == y;
    same = same && eq;
    detail += std::string(name) + (eq ? " identical (" + std::to_string(x.size()) + " bytes); " : " DIFFERS; ");
  }
  return {same, detail + "stub refiner, seed 0"};
#else
  return {false, "command line tool not built"};
#endif
}

// 11. Explanation served from the bundle with no network and no key.
Outcome criterion_11() {
#ifdef MORE_CLI_PATH
  testing::TempDir dir("acc11");
  const auto trained = capture(std::string(MORE_CLI_PATH) + " train --config " +
                               quote(local_config("diabetes_lr.toml", dir.path(), "bundle")));
  if (trained.status != 0) return {false, "train failed: " + trained.out};
  const auto bundle_dir = dir.path() / "bundle";
  const auto bundle = load_bundle(bundle_dir);
  const auto test = load_csv(bundle_dir / bundle_files::kTest, bundle.model.schema);

  std::optional<Instance> chosen;
  std::string context;
  for (const auto& x : test.rows) {
    const auto e = explain(bundle, x);
    if (!e.from_rule) continue;
    const auto* rule = bundle.model.rules.find(e.rule_id);
    if (rule != nullptr && !rule->context.empty()) {
      chosen = x;
      context = rule->context;
      break;
    }
  }
  if (!chosen) return {false, "no test instance is served by a rule with stored context"};
  const auto instance = dir.path() / "instance.json";
  std::ofstream(instance) << instance_to_json(*chosen, bundle.model.schema).dump();

  // The build tree may sit below a directory the unprivileged namespace
  // cannot traverse, so the isolated run uses a copy next to the bundle.
  const auto cli = dir.path() / "more";
  fs::copy_file(MORE_CLI_PATH, cli);
  const bool isolated = capture("unshare -rn true").status == 0;
  const std::string prefix = (isolated ? "unshare -rn " : "") + std::string("env -u MORE_LLM_API_KEY ");
  const auto run = capture(prefix + quote(cli) + " explain --bundle " + quote(bundle_dir) + " --instance " +
                           quote(instance));
  const bool ok = run.status == 0 && run.out.find("source: rule expert") != std::string::npos &&
                  run.out.find(context) != std::string::npos;
  return {ok, std::string(isolated ? "network namespace without interfaces" : "network isolation UNAVAILABLE") +
                  ", MORE_LLM_API_KEY unset; exit " + std::to_string(run.status) +
                  (ok ? "; stored context served" : "; output: " + run.out)};
#else
  return {false, "command line tool not built"};
#endif
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::function<Outcome()>> criteria = {criterion_1, criterion_2, criterion_3, criterion_4,
                                                          criterion_5, criterion_6, criterion_7, criterion_8,
                                                          criterion_9, criterion_10, criterion_11};
  std::size_t only = 0;
  for (int i = 1; i < argc; ++i) {
    if (std::string(argv[i]) == "--only" && i + 1 < argc) {
      only = std::stoul(argv[++i]);
    } else {
      std::cerr << "usage: acceptance [--only N]\n";
      return 2;
    }
  }
  if (only > criteria.size()) {
    std::cerr << "no criterion " << only << '\n';
    return 2;
  }

  bool all = true;
  for (std::size_t n = 1; n <= criteria.size(); ++n) {
    if (only != 0 && n != only) continue;
    Outcome o;
    try {
      o = criteria[n - 1]();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    all = all && o.pass;
    std::cout << "criterion " << n << ": " << (o.pass ? "PASS" : "FAIL") << " - " << o.detail << std::endl;
  }
  return all ? 0 : 1;
}
