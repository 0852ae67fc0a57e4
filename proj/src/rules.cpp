#include "more/rules.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <tuple>

#include "more/text.hpp"

namespace more {

bool Predicate::holds(const Instance& x) const {
  const double v = x.at(feature);
  switch (op) {
    case Op::LE:
      return v <= hi;
    case Op::GT:
      return v > lo;
    case Op::RANGE:
      return lo < v && v <= hi;
    case Op::EQ:
      return v == static_cast<double>(category);
  }
  return false;
}

bool predicate_less(const Predicate& a, const Predicate& b) {
  return std::tie(a.feature, a.op, a.lo, a.hi, a.category) < std::tie(b.feature, b.op, b.lo, b.hi, b.category);
}

std::vector<Predicate> canonical_predicates(const std::vector<Predicate>& preds) {
  auto sorted = preds;
  std::sort(sorted.begin(), sorted.end(), predicate_less);
  return sorted;
}

int RuleSet::add(Rule rule) {
  rule.id = next_id_++;
  rules_.push_back(std::move(rule));
  return rules_.back().id;
}

const Rule* RuleSet::find(int id) const {
  for (const auto& r : rules_) {
    if (r.id == id) return &r;
  }
  return nullptr;
}

Rule* RuleSet::find(int id) {
  for (auto& r : rules_) {
    if (r.id == id) return &r;
  }
  return nullptr;
}

std::size_t RuleSet::active_count() const {
  return static_cast<std::size_t>(std::count_if(rules_.begin(), rules_.end(), [](const Rule& r) { return r.active; }));
}

nlohmann::json RuleSet::to_json(const FeatureSchema& schema) const {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& r : rules_) {
    arr.push_back({{"id", r.id},
                   {"text", canonical_text(r, schema)},
                   {"class", schema.classes().at(static_cast<std::size_t>(r.class_index))},
                   {"anchor", instance_to_json(r.anchor, schema)},
                   {"precision", r.precision},
                   {"context", r.context},
                   {"iteration", r.iteration},
                   {"llm_adapted", r.llm_adapted},
                   {"active", r.active}});
  }
  return arr;
}

RuleSet RuleSet::from_json(const nlohmann::json& j, const FeatureSchema& schema) {
  if (!j.is_array()) throw DataError("rule set JSON must be an array");
  RuleSet rs;
  try {
    for (const auto& jr : j) {
      Rule r;
      r.id = jr.at("id").get<int>();
      auto parsed = parse_rule(jr.at("text").get<std::string>(), schema);
      r.predicates = std::move(parsed.predicates);
      r.class_index = parsed.class_index;
      const auto label = jr.at("class").get<std::string>();
      if (schema.classes().at(static_cast<std::size_t>(r.class_index)) != label) {
        throw DataError("rule " + std::to_string(r.id) + ": class field disagrees with rule text");
      }
      r.anchor = instance_from_json(jr.at("anchor"), schema);
      r.precision = jr.at("precision").get<double>();
      r.context = jr.at("context").get<std::string>();
      r.iteration = jr.at("iteration").get<int>();
      r.llm_adapted = jr.at("llm_adapted").get<bool>();
      r.active = jr.at("active").get<bool>();
      if (rs.find(r.id)) throw DataError("duplicate rule id " + std::to_string(r.id));
      rs.next_id_ = std::max(rs.next_id_, r.id + 1);
      rs.rules_.push_back(std::move(r));
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("rule set JSON: ") + e.what());
  }
  return rs;
}

bool covers(const Rule& rule, const Instance& x) {
  if (rule.predicates.empty()) return false;
  return std::all_of(rule.predicates.begin(), rule.predicates.end(), [&](const Predicate& p) { return p.holds(x); });
}

double anchor_distance(const Instance& x, const Instance& u, const Standardizer& standardizer,
                       const FeatureSchema& schema) {
  double squares = 0.0;
  double mismatches = 0.0;
  for (std::size_t i = 0; i < schema.num_features(); ++i) {
    if (schema.feature(i).kind == FeatureKind::Numeric) {
      const double gap = standardizer.transform(i, x[i]) - standardizer.transform(i, u[i]);
      squares += gap * gap;
    } else if (x[i] != u[i]) {
      mismatches += 1.0;
    }
  }
  return std::sqrt(squares) + mismatches;
}

const Rule* select_rule(const RuleSet& rs, const Instance& x, const Standardizer& standardizer,
                        const FeatureSchema& schema) {
  const Rule* best = nullptr;
  double best_distance = std::numeric_limits<double>::infinity();
  for (const auto& r : rs.rules()) {
    if (!r.active || !covers(r, x)) continue;
    const double d = anchor_distance(x, r.anchor, standardizer, schema);
    if (best == nullptr || d < best_distance || (d == best_distance && r.id < best->id)) {
      best = &r;
      best_distance = d;
    }
  }
  return best;
}

Eigen::VectorXd rule_predict(const RuleSet& rs, const Instance& x, const Standardizer& standardizer,
                             const FeatureSchema& schema) {
  Eigen::VectorXd out = Eigen::VectorXd::Zero(schema.num_classes());
  if (const Rule* r = select_rule(rs, x, standardizer, schema)) out[r->class_index] = 1.0;
  return out;
}

double coverage(const RuleSet& rs, const Dataset& data) {
  if (data.size() == 0) return 0.0;
  std::size_t hits = 0;
  for (const auto& x : data.rows) {
    const bool hit = std::any_of(rs.rules().begin(), rs.rules().end(),
                                 [&](const Rule& r) { return r.active && covers(r, x); });
    if (hit) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(data.size());
}

double usage(const DiffClassifier& gate, const std::vector<Eigen::VectorXd>& inputs) {
  if (inputs.empty()) return 0.0;
  std::size_t hits = 0;
  for (const auto& x : inputs) {
    if (gate.forward(x)[1] > 0.5) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(inputs.size());
}

RuleSet dedup(const RuleSet& rs) {
  RuleSet out = rs;
  std::vector<Rule*> order;
  for (auto& r : out.rules()) {
    if (r.active) order.push_back(&r);
  }
  std::sort(order.begin(), order.end(), [](const Rule* a, const Rule* b) { return a->id < b->id; });
  std::vector<std::pair<std::vector<Predicate>, int>> seen;
  for (Rule* r : order) {
    auto key = std::make_pair(canonical_predicates(r->predicates), r->class_index);
    if (std::find(seen.begin(), seen.end(), key) != seen.end()) {
      r->active = false;
    } else {
      seen.push_back(std::move(key));
    }
  }
  return out;
}

std::string predicate_text(const Predicate& p, const FeatureSchema& schema) {
  const auto& spec = schema.feature(p.feature);
  switch (p.op) {
    case Op::LE:
      return spec.name + " <= " + format_number(p.hi);
    case Op::GT:
      return spec.name + " > " + format_number(p.lo);
    case Op::RANGE:
      return spec.name + " in (" + format_number(p.lo) + ", " + format_number(p.hi) + "]";
    case Op::EQ:
      return spec.name + " == " + spec.categories.at(static_cast<std::size_t>(p.category));
  }
  return {};
}

std::string canonical_text(const Rule& rule, const FeatureSchema& schema) {
  std::string out = "IF ";
  for (std::size_t i = 0; i < rule.predicates.size(); ++i) {
    if (i > 0) out += " AND ";
    out += predicate_text(rule.predicates[i], schema);
  }
  out += " THEN ";
  out += schema.classes().at(static_cast<std::size_t>(rule.class_index));
  return out;
}

std::string_view to_string(RuleParseErrorKind kind) {
  switch (kind) {
    case RuleParseErrorKind::Malformed:
      return "malformed-rule";
    case RuleParseErrorKind::UnknownFeature:
      return "unknown-feature";
    case RuleParseErrorKind::UnknownOperator:
      return "unknown-operator";
    case RuleParseErrorKind::UnknownCategory:
      return "unknown-category";
    case RuleParseErrorKind::UnknownClass:
      return "unknown-class";
    case RuleParseErrorKind::MalformedNumber:
      return "malformed-number";
    case RuleParseErrorKind::OperatorKindMismatch:
      return "operator-kind-mismatch";
    case RuleParseErrorKind::InvalidRange:
      return "invalid-range";
  }
  return "unknown";
}

void validate_predicate(const Predicate& p, const FeatureSchema& schema) {
  if (p.feature >= schema.num_features()) {
    throw RuleParseError(RuleParseErrorKind::UnknownFeature, "feature index " + std::to_string(p.feature));
  }
  const auto& spec = schema.feature(p.feature);
  const bool categorical = spec.kind == FeatureKind::Categorical;
  if (categorical != (p.op == Op::EQ)) {
    throw RuleParseError(RuleParseErrorKind::OperatorKindMismatch,
                         "operator does not apply to " + std::string(categorical ? "categorical" : "numeric") +
                             " feature '" + spec.name + "'");
  }
  switch (p.op) {
    case Op::EQ:
      if (p.category < 0 || static_cast<std::size_t>(p.category) >= spec.categories.size()) {
        throw RuleParseError(RuleParseErrorKind::UnknownCategory, "category index for '" + spec.name + "'");
      }
      break;
    case Op::RANGE:
      if (!std::isfinite(p.lo) || !std::isfinite(p.hi)) {
        throw RuleParseError(RuleParseErrorKind::MalformedNumber, "non-finite bound for '" + spec.name + "'");
      }
      if (!(p.lo < p.hi)) {
        throw RuleParseError(RuleParseErrorKind::InvalidRange, "empty range for '" + spec.name + "'");
      }
      break;
    case Op::LE:
      if (!std::isfinite(p.hi)) throw RuleParseError(RuleParseErrorKind::MalformedNumber, "threshold for '" + spec.name + "'");
      break;
    case Op::GT:
      if (!std::isfinite(p.lo)) throw RuleParseError(RuleParseErrorKind::MalformedNumber, "threshold for '" + spec.name + "'");
      break;
  }
}

void validate_rule(const Rule& rule, const FeatureSchema& schema) {
  if (rule.predicates.empty()) throw RuleParseError(RuleParseErrorKind::Malformed, "rule has no predicates");
  for (const auto& p : rule.predicates) validate_predicate(p, schema);
  if (rule.class_index < 0 || rule.class_index >= schema.num_classes()) {
    throw RuleParseError(RuleParseErrorKind::UnknownClass, "class index " + std::to_string(rule.class_index));
  }
}

namespace {

double parse_threshold(std::string_view text, const std::string& feature) {
  auto v = parse_number(text);
  if (!v) {
    throw RuleParseError(RuleParseErrorKind::MalformedNumber,
                         "'" + std::string(text) + "' is not a number (feature '" + feature + "')");
  }
  return *v;
}

Predicate parse_predicate(std::string_view text, const FeatureSchema& schema) {
  text = trim(text);
  // Longest schema feature name followed by a space; names may contain spaces.
  std::optional<std::size_t> feature;
  std::size_t name_len = 0;
  for (std::size_t i = 0; i < schema.num_features(); ++i) {
    const auto& name = schema.feature(i).name;
    if (name.size() > name_len && text.size() > name.size() && text.substr(0, name.size()) == name &&
        text[name.size()] == ' ') {
      feature = i;
      name_len = name.size();
    }
  }
  if (!feature) {
    const auto word = text.substr(0, text.find(' '));
    throw RuleParseError(RuleParseErrorKind::UnknownFeature, "'" + std::string(word) + "'");
  }
  const auto& spec = schema.feature(*feature);
  auto rest = trim(text.substr(name_len));
  const auto op_end = rest.find(' ');
  const auto op = rest.substr(0, op_end);
  const auto value = op_end == std::string_view::npos ? std::string_view{} : trim(rest.substr(op_end));
  if (value.empty()) {
    if (op == "<=" || op == ">" || op == "==" || op == "in") {
      throw RuleParseError(RuleParseErrorKind::Malformed, "missing value for '" + spec.name + "'");
    }
    throw RuleParseError(RuleParseErrorKind::UnknownOperator, "'" + std::string(op) + "'");
  }

  Predicate p;
  p.feature = *feature;
  if (op == "<=") {
    p.op = Op::LE;
    if (spec.kind == FeatureKind::Numeric) p.hi = parse_threshold(value, spec.name);
  } else if (op == ">") {
    p.op = Op::GT;
    if (spec.kind == FeatureKind::Numeric) p.lo = parse_threshold(value, spec.name);
  } else if (op == "==") {
    p.op = Op::EQ;
    if (spec.kind == FeatureKind::Categorical) {
      auto c = schema.find_category(*feature, value);
      if (!c) {
        throw RuleParseError(RuleParseErrorKind::UnknownCategory,
                             "'" + std::string(value) + "' is not a category of '" + spec.name + "'");
      }
      p.category = *c;
    }
  } else if (op == "in") {
    p.op = Op::RANGE;
    if (spec.kind == FeatureKind::Numeric) {
      if (value.size() < 5 || value.front() != '(' || value.back() != ']') {
        throw RuleParseError(RuleParseErrorKind::MalformedNumber,
                             "range for '" + spec.name + "' must look like (a, b]");
      }
      const auto inner = value.substr(1, value.size() - 2);
      const auto comma = inner.find(',');
      if (comma == std::string_view::npos) {
        throw RuleParseError(RuleParseErrorKind::MalformedNumber, "range for '" + spec.name + "' needs two bounds");
      }
      p.lo = parse_threshold(inner.substr(0, comma), spec.name);
      p.hi = parse_threshold(inner.substr(comma + 1), spec.name);
    }
  } else {
    throw RuleParseError(RuleParseErrorKind::UnknownOperator, "'" + std::string(op) + "'");
  }
  validate_predicate(p, schema);
  return p;
}

}  // namespace

ParsedRule parse_rule(std::string_view text, const FeatureSchema& schema) {
  text = trim(text);
  if (text.substr(0, 3) != "IF ") throw RuleParseError(RuleParseErrorKind::Malformed, "rule must start with 'IF '");
  const auto then_pos = text.rfind(" THEN ");
  if (then_pos == std::string_view::npos || then_pos < 2) {
    throw RuleParseError(RuleParseErrorKind::Malformed, "rule must contain ' THEN <class>'");
  }
  const auto body = text.substr(3, then_pos - 3);
  const auto label = trim(text.substr(then_pos + 6));

  ParsedRule out;
  std::size_t start = 0;
  constexpr std::string_view kAnd = " AND ";
  while (true) {
    const auto pos = body.find(kAnd, start);
    const auto piece = body.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start);
    if (trim(piece).empty()) throw RuleParseError(RuleParseErrorKind::Malformed, "empty predicate");
    out.predicates.push_back(parse_predicate(piece, schema));
    if (pos == std::string_view::npos) break;
    start = pos + kAnd.size();
  }
  auto cls = schema.find_class(label);
  if (!cls) throw RuleParseError(RuleParseErrorKind::UnknownClass, "'" + std::string(label) + "'");
  out.class_index = *cls;
  return out;
}

}  // namespace more
