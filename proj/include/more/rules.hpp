#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "more/error.hpp"
#include "more/model.hpp"
#include "more/schema.hpp"

namespace more {

/// LE: x <= hi. GT: x > lo. RANGE: lo < x <= hi. EQ: x == category.
enum class Op { LE, GT, EQ, RANGE };

struct Predicate {
  std::size_t feature = 0;
  Op op = Op::LE;
  double lo = 0.0;
  double hi = 0.0;
  int category = -1;

  static Predicate le(std::size_t feature, double threshold) { return {feature, Op::LE, 0.0, threshold, -1}; }
  static Predicate gt(std::size_t feature, double threshold) { return {feature, Op::GT, threshold, 0.0, -1}; }
  static Predicate range(std::size_t feature, double lo, double hi) { return {feature, Op::RANGE, lo, hi, -1}; }
  static Predicate eq(std::size_t feature, int category) { return {feature, Op::EQ, 0.0, 0.0, category}; }

  bool holds(const Instance& x) const;

  bool operator==(const Predicate&) const = default;
};

/// Strict weak order used for order-insensitive predicate-set comparison.
bool predicate_less(const Predicate& a, const Predicate& b);

struct Rule {
  int id = -1;
  std::vector<Predicate> predicates;
  int class_index = 0;
  Instance anchor;  // raw sample the rule was generated for
  double precision = 0.0;
  std::string context;  // stored justification, served at explain time
  int iteration = 0;
  bool llm_adapted = false;
  bool active = true;

  bool operator==(const Rule&) const = default;
};

class RuleSet {
 public:
  RuleSet() = default;

  /// Appends `rule` under a fresh id and returns that id.
  int add(Rule rule);

  const std::vector<Rule>& rules() const { return rules_; }
  std::vector<Rule>& rules() { return rules_; }
  int next_id() const { return next_id_; }
  bool empty() const { return rules_.empty(); }

  const Rule* find(int id) const;
  Rule* find(int id);
  std::size_t active_count() const;

  nlohmann::json to_json(const FeatureSchema& schema) const;
  static RuleSet from_json(const nlohmann::json& j, const FeatureSchema& schema);

  bool operator==(const RuleSet&) const = default;

 private:
  std::vector<Rule> rules_;
  int next_id_ = 0;
};

/// True iff every predicate holds on the raw values of `x`.
bool covers(const Rule& rule, const Instance& x);

/// Euclidean distance over standardized numeric features plus the number of
/// differing categorical features.
double anchor_distance(const Instance& x, const Instance& u, const Standardizer& standardizer,
                       const FeatureSchema& schema);

/// Active covering rule whose anchor is nearest to `x` (ties: lower id), or
/// nullptr when the expert abstains.
const Rule* select_rule(const RuleSet& rs, const Instance& x, const Standardizer& standardizer,
                        const FeatureSchema& schema);

/// One-hot of the selected rule's class, or all zeros on abstain.
Eigen::VectorXd rule_predict(const RuleSet& rs, const Instance& x, const Standardizer& standardizer,
                             const FeatureSchema& schema);

/// Fraction of instances covered by at least one active rule.
double coverage(const RuleSet& rs, const Dataset& data);

/// Fraction of inputs with gate output g2 > 0.5.
double usage(const DiffClassifier& gate, const std::vector<Eigen::VectorXd>& inputs);

/// Among active rules with the same predicate set (order-insensitive) and
/// the same class, keeps only the lowest id active. Rules that share
/// predicates but predict different classes are not duplicates.
RuleSet dedup(const RuleSet& rs);

/// Sorted copy of the rule's predicates.
std::vector<Predicate> canonical_predicates(const std::vector<Predicate>& preds);

// Text grammar: IF <feat> <op> <val> [AND ...] THEN <class>
// ops: "<=", ">", "==" (categorical), "in (a, b]".

std::string predicate_text(const Predicate& p, const FeatureSchema& schema);
std::string canonical_text(const Rule& rule, const FeatureSchema& schema);

enum class RuleParseErrorKind {
  Malformed,
  UnknownFeature,
  UnknownOperator,
  UnknownCategory,
  UnknownClass,
  MalformedNumber,
  OperatorKindMismatch,
  InvalidRange,
};

std::string_view to_string(RuleParseErrorKind kind);

class RuleParseError : public Error {
 public:
  RuleParseError(RuleParseErrorKind kind, const std::string& message)
      : Error(std::string(to_string(kind)) + ": " + message), kind_(kind) {}
  RuleParseErrorKind kind() const { return kind_; }

 private:
  RuleParseErrorKind kind_;
};

struct ParsedRule {
  std::vector<Predicate> predicates;
  int class_index = 0;
};

ParsedRule parse_rule(std::string_view text, const FeatureSchema& schema);

/// Throws RuleParseError when a predicate does not fit the schema.
void validate_predicate(const Predicate& p, const FeatureSchema& schema);
void validate_rule(const Rule& rule, const FeatureSchema& schema);

}  // namespace more
