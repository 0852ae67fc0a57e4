#include "more/anchor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "more/error.hpp"
#include "more/text.hpp"

namespace more {

namespace {

double quantile(const std::vector<double>& sorted, double q) {
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const double frac = pos - static_cast<double>(lo);
  if (lo + 1 >= sorted.size()) return sorted.back();
  return sorted[lo] + frac * (sorted[lo + 1] - sorted[lo]);
}

}  // namespace

BinTable make_bins(const Dataset& train, std::size_t n_bins) {
  if (n_bins < 2) throw DataError("n_bins must be at least 2");
  const auto& schema = train.schema;
  BinTable table;
  table.cuts.resize(schema.num_features());
  if (train.size() == 0) return table;
  for (std::size_t i = 0; i < schema.num_features(); ++i) {
    if (schema.feature(i).kind != FeatureKind::Numeric) continue;
    std::vector<double> values;
    values.reserve(train.size());
    for (const auto& row : train.rows) values.push_back(row[i]);
    std::sort(values.begin(), values.end());

    std::vector<double> raw;
    for (std::size_t k = 1; k < n_bins; ++k) {
      raw.push_back(round_significant(quantile(values, static_cast<double>(k) / static_cast<double>(n_bins)), 4));
    }
    std::sort(raw.begin(), raw.end());
    raw.erase(std::unique(raw.begin(), raw.end()), raw.end());

    // Keep a cut only if the bin it closes and the region above it both hold
    // training values.
    auto& cuts = table.cuts[i];
    for (double c : raw) {
      const double prev = cuts.empty() ? -std::numeric_limits<double>::infinity() : cuts.back();
      const bool below = std::any_of(values.begin(), values.end(), [&](double v) { return prev < v && v <= c; });
      const bool above = values.back() > c;
      if (below && above) cuts.push_back(c);
    }
  }
  return table;
}

void AnchorConfig::validate() const {
  if (!(tau > 0.0 && tau <= 1.0)) throw ConfigError("anchor tau must lie in (0, 1]");
  if (n_samples < 100) throw ConfigError("anchor n_samples must be at least 100");
  if (n_bins < 2) throw ConfigError("anchor n_bins must be at least 2");
}

std::vector<Predicate> candidate_predicates(const Instance& x, const BinTable& bins, const FeatureSchema& schema) {
  schema.validate(x);
  std::vector<Predicate> out;
  for (std::size_t i = 0; i < schema.num_features(); ++i) {
    if (schema.feature(i).kind == FeatureKind::Categorical) {
      out.push_back(Predicate::eq(i, static_cast<int>(x[i])));
      continue;
    }
    const auto& cuts = bins.cuts.at(i);
    if (cuts.empty()) continue;
    const double v = x[i];
    if (v <= cuts.front()) {
      out.push_back(Predicate::le(i, cuts.front()));
    } else if (v > cuts.back()) {
      out.push_back(Predicate::gt(i, cuts.back()));
    } else {
      const auto upper = std::lower_bound(cuts.begin(), cuts.end(), v);  // first cut >= v
      out.push_back(Predicate::range(i, *(upper - 1), *upper));
    }
  }
  return out;
}

PerturbationSampler::PerturbationSampler(const Dataset& train) : schema_(train.schema) {
  if (train.size() == 0) throw DataError("perturbation sampler needs training data");
  columns_.resize(schema_.num_features());
  for (std::size_t i = 0; i < schema_.num_features(); ++i) {
    columns_[i].reserve(train.size());
    for (const auto& row : train.rows) columns_[i].push_back(row[i]);
  }
}

std::vector<Instance> PerturbationSampler::perturb(std::span<const Predicate> fixed, std::size_t n, Rng& rng) const {
  const std::size_t d = schema_.num_features();
  // Support of each feature: the full column, or the values meeting every
  // fixed predicate on that feature.
  std::vector<std::vector<double>> restricted(d);
  std::vector<const std::vector<double>*> support(d);
  for (std::size_t i = 0; i < d; ++i) support[i] = &columns_[i];
  for (std::size_t i = 0; i < d; ++i) {
    bool constrained = false;
    for (const auto& p : fixed) constrained = constrained || p.feature == i;
    if (!constrained) continue;
    Instance probe(d, 0.0);
    for (double v : columns_[i]) {
      probe[i] = v;
      bool ok = true;
      for (const auto& p : fixed) ok = ok && (p.feature != i || p.holds(probe));
      if (ok) restricted[i].push_back(v);
    }
    if (restricted[i].empty()) {
      throw EmptySupportError("no training value of '" + schema_.feature(i).name + "' satisfies the fixed predicate");
    }
    support[i] = &restricted[i];
  }

  std::vector<Instance> out(n, Instance(d));
  for (std::size_t s = 0; s < n; ++s) {
    for (std::size_t i = 0; i < d; ++i) {
      const auto& col = *support[i];
      out[s][i] = col[rng.index(col.size())];
    }
  }
  return out;
}

std::vector<Instance> perturb(const Instance& x, std::span<const Predicate> fixed, const Dataset& train, std::size_t n,
                              Rng& rng) {
  for (const auto& p : fixed) {
    if (!p.holds(x)) throw DataError("instance does not satisfy a fixed predicate");
  }
  return PerturbationSampler(train).perturb(fixed, n, rng);
}

double precision(std::span<const Predicate> preds, const Instance& x, const LabelFn& f, const AnchorConfig& cfg,
                 const PerturbationSampler& sampler, Rng& rng) {
  const int target = f(x);
  const auto samples = sampler.perturb(preds, cfg.n_samples, rng);
  std::size_t agree = 0;
  for (const auto& z : samples) {
    if (f(z) == target) ++agree;
  }
  return static_cast<double>(agree) / static_cast<double>(samples.size());
}

Rule find_anchor(const Instance& x, const LabelFn& f, const PerturbationSampler& sampler, const BinTable& bins,
                 const AnchorConfig& cfg, Rng& rng) {
  cfg.validate();
  const auto& schema = sampler.schema();
  auto remaining = candidate_predicates(x, bins, schema);
  if (remaining.empty()) throw DataError("no candidate predicate can describe this instance");
  const std::size_t max_preds = cfg.max_predicates == 0 ? schema.num_features() : cfg.max_predicates;

  Rule rule;
  rule.class_index = f(x);
  rule.anchor = x;
  rule.precision = 0.0;

  const std::uint64_t base = rng.next();
  std::vector<Predicate> chosen;
  for (std::uint64_t step = 0; !remaining.empty() && chosen.size() < max_preds; ++step) {
    std::optional<std::size_t> best;
    double best_precision = -1.0;
    for (std::size_t k = 0; k < remaining.size(); ++k) {
      auto trial = chosen;
      trial.push_back(remaining[k]);
      Rng stream = Rng::derive(base, {step});
      double p;
      try {
        p = precision(trial, x, f, cfg, sampler, stream);
      } catch (const EmptySupportError&) {
        continue;
      }
      if (p > best_precision) {
        best_precision = p;
        best = k;
      }
    }
    if (!best) break;
    chosen.push_back(remaining[*best]);
    remaining.erase(remaining.begin() + static_cast<std::ptrdiff_t>(*best));
    rule.precision = best_precision;
    if (best_precision >= cfg.tau) break;
  }
  if (chosen.empty()) throw DataError("no candidate predicate has training support");
  rule.predicates = std::move(chosen);
  return rule;
}

}  // namespace more
