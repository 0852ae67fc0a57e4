#include "more/commands.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <ostream>
#include <sstream>

#include "more/error.hpp"
#include "more/text.hpp"

namespace more {

const char* const kLowerFidelityNote =
    "note: no rule explains this instance; the prediction comes from the black-box model and carries lower fidelity "
    "than a rule-backed explanation";

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e)) return kExitConfig;
  if (dynamic_cast<const DivergenceError*>(&e)) return kExitDivergence;
  if (dynamic_cast<const RefinementUnavailable*>(&e)) return kExitRefinement;
  return kExitInput;
}

std::unique_ptr<Refiner> make_refiner(const RunConfig& cfg, const FeatureSchema& schema) {
  switch (cfg.refiner) {
    case RefinerKind::None: return nullptr;
    case RefinerKind::Stub: return std::make_unique<ProtocolRefiner>(std::make_shared<StubClient>(schema));
    case RefinerKind::Remote: return std::make_unique<ProtocolRefiner>(std::make_shared<RemoteClient>(cfg.llm));
  }
  return nullptr;
}

TrainOutcome cmd_train(const RunConfig& cfg, std::ostream& out) {
  const auto schema = FeatureSchema::load(cfg.schema);
  const auto data = load_csv(cfg.data, schema);
  TrainOutcome result;
  if (cfg.test_data) {
    result.train = data;
    result.test = load_csv(*cfg.test_data, schema);
  } else {
    std::tie(result.train, result.test) = split(data, cfg.test_fraction, cfg.seed);
  }
  auto refiner = make_refiner(cfg, schema);
  result.state = run(result.train, result.test, cfg.discovery, refiner.get());
  save_bundle(cfg.output, result.state, result.train, result.test);

  const auto& last = result.state.metrics.back();
  out << "iteration=" << last.iteration << " train_loss=" << format_number(last.train_loss)
      << " test_loss=" << format_number(last.test_loss) << " test_acc=" << format_number(last.test_acc)
      << " rule_acc=" << format_number(last.rule_acc) << " coverage=" << format_number(last.coverage)
      << " usage=" << format_number(last.usage) << " n_rules=" << last.n_rules << '\n';
  return result;
}

nlohmann::json EvalReport::to_json() const {
  auto num = [](double v) { return std::isnan(v) ? nlohmann::json(nullptr) : nlohmann::json(v); };
  return {{"n", n},
          {"loss", num(loss)},
          {"accuracy", num(accuracy)},
          {"coverage", num(coverage)},
          {"usage", num(usage)},
          {"rule_acc", num(rule_acc)},
          {"n_rules", n_rules},
          {"attributed_rules", attributed_rules},
          {"attributed_f", attributed_f},
          {"hard_gate", hard_gate}};
}

EvalReport evaluate_bundle(const Bundle& bundle, const Dataset& data, bool hard_gate) {
  const auto& m = bundle.model;
  if (!(data.schema == m.schema)) throw DataError("data schema does not match the bundle schema");
  if (data.size() == 0) throw DataError("no instances to evaluate");
  const auto view = make_view(m, data);
  EvalReport r;
  r.n = data.size();
  r.hard_gate = hard_gate;
  std::size_t correct = 0, covered = 0, rule_correct = 0, routed = 0;
  for (std::size_t i = 0; i < view.size(); ++i) {
    const auto g = m.g.forward(view.inputs[i]);
    const auto pred = mix(m.f.forward(view.inputs[i]), g, view.rule_outputs[i], hard_gate);
    const int y = view.labels[i];
    r.loss += ce_loss(pred, y);
    if (static_cast<int>(argmax(pred)) == y) ++correct;
    if (g[1] > 0.5) ++routed;
    if (view.covered[i]) {
      ++covered;
      if (view.rule_outputs[i][y] == 1.0) ++rule_correct;
      if (g[1] > 0.5) ++r.attributed_rules;
    }
  }
  const double n = static_cast<double>(r.n);
  r.loss /= n;
  r.accuracy = static_cast<double>(correct) / n;
  r.coverage = static_cast<double>(covered) / n;
  r.usage = static_cast<double>(routed) / n;
  r.rule_acc = covered ? static_cast<double>(rule_correct) / static_cast<double>(covered)
                       : std::numeric_limits<double>::quiet_NaN();
  r.n_rules = m.rules.active_count();
  r.attributed_f = r.n - r.attributed_rules;
  return r;
}

EvalReport cmd_eval(const std::filesystem::path& bundle_dir, const std::filesystem::path& csv, bool hard_gate,
                    std::ostream& out) {
  const auto bundle = load_bundle(bundle_dir);
  const auto data = load_csv(csv, bundle.model.schema);
  const auto r = evaluate_bundle(bundle, data, hard_gate);
  out << "instances=" << r.n << '\n'
      << "loss=" << format_number(r.loss) << '\n'
      << "accuracy=" << format_number(r.accuracy) << '\n'
      << "coverage=" << format_number(r.coverage) << '\n'
      << "usage=" << format_number(r.usage) << '\n'
      << "rule_acc=" << format_number(r.rule_acc) << '\n'
      << "n_rules=" << r.n_rules << '\n'
      << "gate=" << (hard_gate ? "hard" : "soft") << '\n'
      << "attributed_rules=" << r.attributed_rules << '\n'
      << "attributed_f=" << r.attributed_f << '\n';
  return r;
}

Explanation explain(const Bundle& bundle, const Instance& x) {
  const auto& m = bundle.model;
  m.schema.validate(x);
  const auto enc = encode(x, m.standardizer, m.schema);
  const auto f_probs = m.f.forward(enc);
  const auto g = m.g.forward(enc);
  const Rule* rule = select_rule(m.rules, x, m.standardizer, m.schema);

  Explanation e;
  e.gate_rules = g[1];
  std::ostringstream text;
  if (rule != nullptr && g[1] > 0.5) {
    const auto probs = mix(f_probs, g, rule_predict(m.rules, x, m.standardizer, m.schema), false);
    e.from_rule = true;
    e.rule_id = rule->id;
    e.predicted = static_cast<int>(argmax(probs));
    text << "prediction: " << m.schema.classes()[static_cast<std::size_t>(e.predicted)] << '\n'
         << "source: rule expert (gate weight " << format_number(g[1]) << ")\n"
         << "rule #" << rule->id << ": " << canonical_text(*rule, m.schema) << '\n'
         << "context: " << (rule->context.empty() ? "(none recorded)" : rule->context) << '\n';
  } else {
    e.predicted = static_cast<int>(argmax(f_probs));
    text << "prediction: " << m.schema.classes()[static_cast<std::size_t>(e.predicted)] << '\n'
         << "source: black-box model (gate weight on rules " << format_number(g[1]) << ")\n"
         << kLowerFidelityNote << '\n';
  }
  e.text = text.str();
  return e;
}

Explanation cmd_explain(const std::filesystem::path& bundle_dir, const std::string& instance, std::ostream& out) {
  const auto bundle = load_bundle(bundle_dir);
  nlohmann::json j;
  try {
    const auto first = instance.find_first_not_of(" \t\r\n");
    if (first != std::string::npos && instance[first] == '{') {
      j = nlohmann::json::parse(instance);
    } else {
      std::ifstream in(instance);
      if (!in) throw DataError("cannot open instance file " + instance);
      j = nlohmann::json::parse(in);
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed instance JSON: ") + e.what());
  }
  auto e = explain(bundle, instance_from_json(j, bundle.model.schema));
  out << e.text;
  return e;
}

void cmd_report(const std::filesystem::path& bundle_dir, std::ostream& out) { out << read_metrics_text(bundle_dir); }

}  // namespace more
