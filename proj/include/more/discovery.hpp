#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "more/anchor.hpp"
#include "more/mixture.hpp"
#include "more/refiner.hpp"

namespace more {

struct DiscoveryConfig {
  std::size_t iterations = 3;
  std::size_t exploit = 4;
  std::size_t explore = 4;
  std::vector<std::size_t> hidden = {50, 50};  // f and g share it; empty = LR
  double gate_bias = 2.0;  // initial output bias (+b, -b): the gate starts on f
  SgdConfig init;
  DbgdConfig dbgd;
  AnchorConfig anchor;
  std::uint64_t seed = 0;
  bool strict_refiner = false;  // rethrow RefinementUnavailable instead of degrading

  void validate() const;
};

struct IterationMetrics {
  std::size_t iteration = 0;
  double train_loss = 0.0;
  double test_loss = 0.0;
  double test_acc = 0.0;
  double rule_acc = 0.0;  // rule expert accuracy on covered test rows; NaN if none
  double coverage = 0.0;
  double usage = 0.0;
  std::size_t n_rules = 0;
};

/// Mixture train/test loss and test accuracy, rule accuracy, coverage and
/// usage on the test set, active rule count.
IterationMetrics evaluate(const MixtureModel& m, const Dataset& train, const Dataset& test, std::size_t iteration);

/// Metric rows in the CSV layout
/// iteration,train_loss,test_loss,test_acc,rule_acc,coverage,usage,n_rules
void write_metrics_csv(std::ostream& out, const std::vector<IterationMetrics>& rows);
std::vector<IterationMetrics> read_metrics_csv(std::istream& in);
extern const char* const kMetricsHeader;

/// Epoch-level constraint report against the stored baseline scalar.
struct EpochRecord {
  std::size_t iteration = 0;
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double bound = 0.0;  // (1 + eps) * baseline train loss
};

struct RunState {
  MixtureModel model;
  BaselineSnapshot baseline;
  BinTable bins;
  std::vector<IterationMetrics> metrics;  // entry 0 is the initialization
  std::vector<RefinementTranscript> transcripts;
  std::vector<DbgdStepTrace> traces;
  std::vector<EpochRecord> epochs;
  bool saturated = false;
};

/// Rows of `train` the gate does not hand to the rule expert (g2 <= 0.5 or
/// the expert abstains): the `exploit` lowest-entropy and then the `explore`
/// highest-entropy ones under f. Returns training indices, no duplicates.
std::vector<std::size_t> select_candidates(const MixtureModel& m, const Dataset& train, std::size_t exploit,
                                           std::size_t explore);

/// Standardizer, bins, seeded f and g, unconstrained training of f, and the
/// initialization metrics row.
RunState initialize(const Dataset& train, const Dataset& test, const DiscoveryConfig& cfg);

/// Select, explain, dedup, refine, dedup, retrain, record. `refiner` may be
/// null (no refinement).
void discovery_iteration(RunState& state, const Dataset& train, const Dataset& test, const DiscoveryConfig& cfg,
                         Refiner* refiner);

RunState run(const Dataset& train, const Dataset& test, const DiscoveryConfig& cfg, Refiner* refiner);

}  // namespace more
