#pragma once

#include <exception>
#include <filesystem>
#include <iosfwd>
#include <memory>
#include <string>

#include <json.hpp>

#include "more/bundle.hpp"
#include "more/config.hpp"

namespace more {

/// Process exit statuses of the command line tool.
enum ExitCode : int {
  kExitOk = 0,
  kExitInput = 1,        // unreadable or invalid data, bundle or instance
  kExitConfig = 2,       // config parse or validation error
  kExitDivergence = 3,   // non-finite loss or gradient during training
  kExitRefinement = 4,   // remote refiner unreachable and no fallback
};

int exit_code_for(const std::exception& e);

/// Refiner for the configured kind; null for RefinerKind::None.
std::unique_ptr<Refiner> make_refiner(const RunConfig& cfg, const FeatureSchema& schema);

struct TrainOutcome {
  RunState state;
  Dataset train;
  Dataset test;
};

/// Loads data, runs discovery, writes the bundle to cfg.output and prints
/// the final metrics row to `out`.
TrainOutcome cmd_train(const RunConfig& cfg, std::ostream& out);

struct EvalReport {
  std::size_t n = 0;
  double loss = 0.0;
  double accuracy = 0.0;
  double coverage = 0.0;
  double usage = 0.0;
  double rule_acc = 0.0;  // NaN without covered instances
  std::size_t n_rules = 0;
  std::size_t attributed_rules = 0;  // g2 > 0.5 and a rule fires
  std::size_t attributed_f = 0;
  bool hard_gate = false;

  nlohmann::json to_json() const;
};

EvalReport evaluate_bundle(const Bundle& bundle, const Dataset& data, bool hard_gate);

/// Reads the CSV against the bundle schema, evaluates and prints key=value
/// lines.
EvalReport cmd_eval(const std::filesystem::path& bundle_dir, const std::filesystem::path& csv, bool hard_gate,
                    std::ostream& out);

struct Explanation {
  int predicted = -1;
  bool from_rule = false;
  int rule_id = -1;
  double gate_rules = 0.0;  // g2
  std::string text;
};

extern const char* const kLowerFidelityNote;

/// Local, offline: uses only the bundle. A rule answers when the gate sends
/// the instance to the rule expert (g2 > 0.5) and some active rule covers it;
/// otherwise f answers with kLowerFidelityNote.
Explanation explain(const Bundle& bundle, const Instance& x);

/// `instance` is inline JSON (starting with '{') or a path to a JSON file.
Explanation cmd_explain(const std::filesystem::path& bundle_dir, const std::string& instance, std::ostream& out);

/// Copies metrics.csv to `out` unchanged.
void cmd_report(const std::filesystem::path& bundle_dir, std::ostream& out);

}  // namespace more
