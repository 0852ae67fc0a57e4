#include "more/discovery.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <limits>
#include <numeric>
#include <ostream>

#include "more/error.hpp"
#include "more/text.hpp"

namespace more {

namespace {

// Stream keys for Rng::derive.
enum StreamKey : std::uint64_t { kInitTrain = 0, kDbgd = 1, kAnchor = 2, kInitF = 3, kInitG = 4 };

}  // namespace

const char* const kMetricsHeader = "iteration,train_loss,test_loss,test_acc,rule_acc,coverage,usage,n_rules";

void DiscoveryConfig::validate() const {
  if (iterations > 0 && exploit + explore == 0) throw ConfigError("exploit + explore must be at least 1");
  if (init.batch_size == 0) throw ConfigError("batch size must be positive");
  if (!(init.learning_rate > 0.0)) throw ConfigError("learning rate must be positive");
  dbgd.validate();
  anchor.validate();
}

IterationMetrics evaluate(const MixtureModel& m, const Dataset& train, const Dataset& test, std::size_t iteration) {
  IterationMetrics out;
  out.iteration = iteration;
  out.train_loss = mixture_loss(m.f, m.g, make_view(m, train));

  const auto view = make_view(m, test);
  std::size_t correct = 0, covered = 0, rule_correct = 0;
  double loss = 0.0;
  for (std::size_t i = 0; i < view.size(); ++i) {
    const auto y = view.labels[i];
    const auto pred = mix(m.f.forward(view.inputs[i]), m.g.forward(view.inputs[i]), view.rule_outputs[i], m.hard_gate);
    loss += ce_loss(pred, y);
    if (static_cast<int>(argmax(pred)) == y) ++correct;
    if (view.covered[i]) {
      ++covered;
      if (view.rule_outputs[i][y] == 1.0) ++rule_correct;
    }
  }
  const double n = static_cast<double>(view.size());
  out.test_loss = loss / n;
  out.test_acc = static_cast<double>(correct) / n;
  out.rule_acc = covered ? static_cast<double>(rule_correct) / static_cast<double>(covered)
                         : std::numeric_limits<double>::quiet_NaN();
  out.coverage = static_cast<double>(covered) / n;
  out.usage = usage(m.g, view.inputs);
  out.n_rules = m.rules.active_count();
  return out;
}

void write_metrics_csv(std::ostream& out, const std::vector<IterationMetrics>& rows) {
  out << kMetricsHeader << '\n';
  for (const auto& r : rows) {
    out << r.iteration << ',' << format_number(r.train_loss) << ',' << format_number(r.test_loss) << ','
        << format_number(r.test_acc) << ',' << format_number(r.rule_acc) << ',' << format_number(r.coverage) << ','
        << format_number(r.usage) << ',' << r.n_rules << '\n';
  }
}

std::vector<IterationMetrics> read_metrics_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || trim(line) != kMetricsHeader) throw DataError("metrics CSV: unexpected header");
  std::vector<IterationMetrics> rows;
  auto num = [](std::string_view s) {
    if (trim(s) == "nan") return std::numeric_limits<double>::quiet_NaN();
    auto v = parse_number(s);
    if (!v) throw DataError("metrics CSV: bad number '" + std::string(s) + "'");
    return *v;
  };
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    auto f = split(line, ',');
    if (f.size() != 8) throw DataError("metrics CSV: expected 8 fields");
    IterationMetrics r;
    r.iteration = static_cast<std::size_t>(num(f[0]));
    r.train_loss = num(f[1]);
    r.test_loss = num(f[2]);
    r.test_acc = num(f[3]);
    r.rule_acc = num(f[4]);
    r.coverage = num(f[5]);
    r.usage = num(f[6]);
    r.n_rules = static_cast<std::size_t>(num(f[7]));
    rows.push_back(r);
  }
  return rows;
}

std::vector<std::size_t> select_candidates(const MixtureModel& m, const Dataset& train, std::size_t exploit,
                                           std::size_t explore) {
  std::vector<std::pair<double, std::size_t>> eligible;
  for (std::size_t n = 0; n < train.size(); ++n) {
    const auto& x = train.rows[n];
    const auto enc = encode(x, m.standardizer, m.schema);
    const bool to_rules = m.g.forward(enc)[1] > 0.5 && select_rule(m.rules, x, m.standardizer, m.schema) != nullptr;
    if (to_rules) continue;
    eligible.emplace_back(predictive_entropy(m.f.forward(enc)), n);
  }
  std::stable_sort(eligible.begin(), eligible.end(),
                   [](const auto& a, const auto& b) { return a.first < b.first; });

  std::vector<std::size_t> picks;
  const std::size_t n_exploit = std::min(exploit, eligible.size());
  for (std::size_t k = 0; k < n_exploit; ++k) picks.push_back(eligible[k].second);
  const std::size_t n_explore = std::min(explore, eligible.size() - n_exploit);
  for (std::size_t k = 0; k < n_explore; ++k) picks.push_back(eligible[eligible.size() - 1 - k].second);
  return picks;
}

RunState initialize(const Dataset& train, const Dataset& test, const DiscoveryConfig& cfg) {
  cfg.validate();
  if (!(train.schema == test.schema)) throw DataError("train and test data use different schemas");
  RunState state;
  auto& m = state.model;
  m.schema = train.schema;
  m.standardizer = Standardizer::fit(train);
  state.bins = make_bins(train, cfg.anchor.n_bins);

  const Architecture f_arch{m.schema.encoded_width(), cfg.hidden, static_cast<std::size_t>(m.schema.num_classes())};
  const Architecture g_arch{m.schema.encoded_width(), cfg.hidden, 2};
  Rng f_rng = Rng::derive(cfg.seed, {kInitF});
  Rng g_rng = Rng::derive(cfg.seed, {kInitG});
  m.f = DiffClassifier(f_arch, f_rng);
  m.g = DiffClassifier(g_arch, g_rng);
  auto& out_bias = m.g.layers().back().bias;
  out_bias[0] = cfg.gate_bias;
  out_bias[1] = -cfg.gate_bias;

  const auto inputs = encode_all(train, m.standardizer);
  Rng train_rng = Rng::derive(cfg.seed, {kInitTrain});
  state.baseline = init_train(m.f, inputs, train.labels, cfg.init, train_rng);
  state.metrics.push_back(evaluate(m, train, test, 0));
  return state;
}

void discovery_iteration(RunState& state, const Dataset& train, const Dataset& test, const DiscoveryConfig& cfg,
                         Refiner* refiner) {
  auto& m = state.model;
  const std::size_t iteration = state.metrics.size();

  const auto candidates =
      state.saturated ? std::vector<std::size_t>{} : select_candidates(m, train, cfg.exploit, cfg.explore);
  if (candidates.empty()) {
    state.saturated = true;
    state.metrics.push_back(evaluate(m, train, test, iteration));
    return;
  }

  const PerturbationSampler sampler(train);
  const DiffClassifier& f = m.f;
  const LabelFn label = [&](const Instance& z) {
    return static_cast<int>(argmax(f.forward(encode(z, m.standardizer, m.schema))));
  };
  for (std::size_t k = 0; k < candidates.size(); ++k) {
    Rng rng = Rng::derive(cfg.seed, {kAnchor, iteration, k});
    try {
      Rule rule = find_anchor(train.rows[candidates[k]], label, sampler, state.bins, cfg.anchor, rng);
      rule.iteration = static_cast<int>(iteration);
      m.rules.add(std::move(rule));
    } catch (const DataError&) {
      // No describable predicate for this sample; it simply yields no rule.
    }
  }
  m.rules = dedup(m.rules);

  if (refiner != nullptr && m.rules.active_count() > 0) {
    try {
      auto [refined, transcript] = refiner->refine(m.rules, m.schema);
      transcript.iteration = static_cast<int>(iteration);
      m.rules = std::move(refined);
      state.transcripts.push_back(std::move(transcript));
    } catch (const RefinementUnavailable& e) {
      if (cfg.strict_refiner) throw;
      RefinementTranscript failed;
      failed.iteration = static_cast<int>(iteration);
      failed.error = e.what();
      state.transcripts.push_back(std::move(failed));
    }
    m.rules = dedup(m.rules);
  }

  const auto view = make_view(m, train);
  Rng rng = Rng::derive(cfg.seed, {kDbgd, iteration});
  const double bound = (1.0 + cfg.dbgd.epsilon) * state.baseline.train_loss;
  for (std::size_t e = 0; e < cfg.dbgd.epochs; ++e) {
    auto traces = dbgd_epoch(m, view, state.baseline, cfg.dbgd, rng, e);
    for (auto& t : traces) {
      t.iteration = iteration;
      state.traces.push_back(std::move(t));
    }
    state.epochs.push_back({iteration, e, mixture_loss(m.f, m.g, view), bound});
  }
  state.metrics.push_back(evaluate(m, train, test, iteration));
}

RunState run(const Dataset& train, const Dataset& test, const DiscoveryConfig& cfg, Refiner* refiner) {
  RunState state = initialize(train, test, cfg);
  for (std::size_t k = 0; k < cfg.iterations; ++k) discovery_iteration(state, train, test, cfg, refiner);
  return state;
}

}  // namespace more
