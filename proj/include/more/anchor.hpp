#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "more/random.hpp"
#include "more/rules.hpp"
#include "more/schema.hpp"

namespace more {

/// Per numeric feature, strictly increasing cut points; the bins
/// (-inf, c0], (c0, c1], ..., (c_last, inf) partition the line.
/// Categorical and constant features have no cuts.
struct BinTable {
  std::vector<std::vector<double>> cuts;
};

/// Quantile cut points (linear interpolation) rounded to 4 significant
/// digits. Cuts that would leave a training bin empty are dropped.
BinTable make_bins(const Dataset& train, std::size_t n_bins);

struct AnchorConfig {
  double tau = 0.90;
  std::size_t n_samples = 2000;
  std::size_t max_predicates = 0;  // 0 means "number of features"
  std::size_t n_bins = 4;

  void validate() const;
};

/// Black-box label function the anchor is fitted to.
using LabelFn = std::function<int(const Instance&)>;

/// One predicate per feature that has a bin structure, each satisfied by x:
/// the bin holding x for numerics, equality for categoricals.
std::vector<Predicate> candidate_predicates(const Instance& x, const BinTable& bins, const FeatureSchema& schema);

/// Draws perturbations from the training marginals. Features named by a fixed
/// predicate are resampled from training values satisfying it; all other
/// features from their full empirical marginal.
class PerturbationSampler {
 public:
  explicit PerturbationSampler(const Dataset& train);

  const FeatureSchema& schema() const { return schema_; }

  /// Throws EmptySupportError if a fixed predicate has no training support.
  std::vector<Instance> perturb(std::span<const Predicate> fixed, std::size_t n, Rng& rng) const;

 private:
  FeatureSchema schema_;
  std::vector<std::vector<double>> columns_;
};

std::vector<Instance> perturb(const Instance& x, std::span<const Predicate> fixed, const Dataset& train, std::size_t n,
                              Rng& rng);

/// Fraction of perturbations respecting `preds` on which f agrees with f(x).
double precision(std::span<const Predicate> preds, const Instance& x, const LabelFn& f, const AnchorConfig& cfg,
                 const PerturbationSampler& sampler, Rng& rng);

/// Greedy anchor search: starting from no predicates, repeatedly add the
/// candidate with the highest estimated precision until precision >= tau,
/// candidates run out, or max_predicates is reached. Every candidate in a
/// growth step is scored on the same random stream.
///
/// The returned rule has class f(x), anchor x, and at least one predicate.
/// Throws DataError when x admits no candidate predicate at all.
Rule find_anchor(const Instance& x, const LabelFn& f, const PerturbationSampler& sampler, const BinTable& bins,
                 const AnchorConfig& cfg, Rng& rng);

}  // namespace more
