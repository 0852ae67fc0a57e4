#include "more/refiner.hpp"

#include <algorithm>
#include <charconv>
#include <map>
#include <set>
#include <sstream>

#include "more/error.hpp"
#include "more/text.hpp"

namespace more {

std::string_view to_string(Phase phase) { return phase == Phase::Adaptation ? "adaptation" : "pruning"; }

std::string_view to_string(EditKind kind) {
  switch (kind) {
    case EditKind::Modify:
      return "MODIFY";
    case EditKind::Keep:
      return "KEEP";
    case EditKind::Prune:
      return "PRUNE";
  }
  return "KEEP";
}

const char* const kSystemPrompt =
    "You are a domain expert reviewing if-then classification rules extracted from a machine learning model. "
    "Answer strictly in the requested line format.";

namespace {

constexpr std::string_view kPhaseAdaptation = "PHASE: RULE ADAPTATION";
constexpr std::string_view kPhasePruning = "PHASE: RULE PRUNING";

std::string one_line(std::string_view text) {
  std::string out(text);
  std::replace(out.begin(), out.end(), '\n', ' ');
  std::replace(out.begin(), out.end(), '\r', ' ');
  return out;
}

void write_vocabulary(std::ostringstream& out, const FeatureSchema& schema) {
  out << "FEATURES (use these names exactly; no other features exist)\n";
  for (const auto& f : schema.features()) {
    if (f.kind == FeatureKind::Numeric) {
      out << "- " << f.name << " (numeric): operators <=, >, in (a, b]\n";
    } else {
      out << "- " << f.name << " (categorical): operator ==; categories:";
      for (std::size_t i = 0; i < f.categories.size(); ++i) out << (i ? ", " : " ") << f.categories[i];
      out << '\n';
    }
  }
  out << "\nCLASSES (target '" << schema.target_name() << "'; use these labels exactly)\n";
  for (const auto& c : schema.classes()) out << "- " << c << '\n';
  out << "\nRULE GRAMMAR\n"
      << "IF <feature> <operator> <value> [AND <feature> <operator> <value> ...] THEN <class>\n"
      << "Numeric: 'x <= 5', 'x > 5', 'x in (2, 5]' (2 < x <= 5). Categorical: 'x == value'.\n";
}

void write_rules(std::ostringstream& out, const RuleSet& rs, const FeatureSchema& schema) {
  out << "\nRULES\n";
  for (const auto& r : rs.rules()) {
    if (!r.active) continue;
    out << '#' << r.id << ": " << canonical_text(r, schema)
        << " | origin=" << (r.llm_adapted ? "adapted" : "discovered") << " | precision=" << format_number(r.precision);
    if (!r.context.empty()) out << " | context=" << one_line(r.context);
    out << '\n';
  }
}

struct LineHead {
  std::string_view keyword;
  int id = -1;
  std::string_view rest;
};

// "<KEYWORD> <digits> : <rest>"
std::optional<LineHead> parse_head(std::string_view line) {
  static constexpr std::string_view kKeywords[] = {"RULE", "CONTEXT", "PRUNE", "KEEP"};
  for (auto kw : kKeywords) {
    if (line.size() <= kw.size() || line.substr(0, kw.size()) != kw || line[kw.size()] != ' ') continue;
    auto rest = trim(line.substr(kw.size()));
    std::size_t digits = 0;
    while (digits < rest.size() && rest[digits] >= '0' && rest[digits] <= '9') ++digits;
    if (digits == 0 || digits > 9) return std::nullopt;
    int id = 0;
    std::from_chars(rest.data(), rest.data() + digits, id);
    rest = trim(rest.substr(digits));
    if (rest.empty() || rest.front() != ':') return std::nullopt;
    return LineHead{kw, id, trim(rest.substr(1))};
  }
  return std::nullopt;
}

std::string_view clean_line(std::string_view line) {
  line = trim(line);
  // Tolerate markdown list markers and inline code fences around a line.
  while (!line.empty() && (line.front() == '-' || line.front() == '*' || line.front() == '`')) {
    line = trim(line.substr(1));
  }
  while (!line.empty() && (line.back() == '`' || line.back() == '*')) line = trim(line.substr(0, line.size() - 1));
  return line;
}

}  // namespace

ParsedResponse parse_response(std::string_view text, Phase phase, const RuleSet& rs, const FeatureSchema& schema) {
  ParsedResponse out;
  std::map<int, RefinerEdit> verdicts;
  std::map<int, std::string> contexts;

  auto reject = [&](std::size_t line_no, std::string_view line, std::string cause) {
    out.rejected.push_back({phase, line_no, std::string(line), std::move(cause)});
  };
  auto known_active = [&](int id) {
    const Rule* r = rs.find(id);
    return r != nullptr && r->active;
  };

  std::size_t line_no = 0;
  for (auto raw : split(text, '\n')) {
    ++line_no;
    const auto line = clean_line(raw);
    if (line.empty()) continue;
    const auto head = parse_head(line);
    if (!head) {
      reject(line_no, raw, "unrecognized-line");
      continue;
    }
    const bool adaptation_line = head->keyword == "RULE" || head->keyword == "CONTEXT";
    if (adaptation_line != (phase == Phase::Adaptation)) {
      reject(line_no, raw, "phase-violation");
      continue;
    }
    if (!known_active(head->id)) {
      reject(line_no, raw, "unknown-rule");
      continue;
    }

    if (head->keyword == "CONTEXT") {
      if (contexts.count(head->id)) {
        reject(line_no, raw, "duplicate-context");
      } else {
        contexts[head->id] = std::string(head->rest);
      }
      continue;
    }

    RefinerEdit edit;
    edit.rule_id = head->id;
    if (head->keyword == "RULE") {
      if (head->rest == "KEEP") {
        edit.kind = EditKind::Keep;
      } else if (head->rest.substr(0, 6) == "MODIFY") {
        auto body = trim(head->rest.substr(6));
        if (body.substr(0, 2) != "->") {
          reject(line_no, raw, "unrecognized-line");
          continue;
        }
        body = trim(body.substr(2));
        try {
          edit.replacement = parse_rule(body, schema);
        } catch (const RuleParseError& e) {
          reject(line_no, raw, std::string(to_string(e.kind())));
          continue;
        }
        edit.kind = EditKind::Modify;
        edit.replacement_text = std::string(body);
      } else {
        reject(line_no, raw, "unrecognized-line");
        continue;
      }
    } else if (head->keyword == "PRUNE") {
      if (head->rest.empty()) {
        reject(line_no, raw, "missing-reason");
        continue;
      }
      edit.kind = EditKind::Prune;
      edit.reason = std::string(head->rest);
    } else {  // KEEP (pruning phase)
      edit.kind = EditKind::Keep;
      edit.reason = std::string(head->rest);
    }
    if (verdicts.count(edit.rule_id)) {
      reject(line_no, raw, "duplicate-verdict");
      continue;
    }
    verdicts.emplace(edit.rule_id, std::move(edit));
  }

  for (const auto& r : rs.rules()) {
    if (!r.active) continue;
    auto it = verdicts.find(r.id);
    RefinerEdit edit = it != verdicts.end() ? it->second : RefinerEdit{EditKind::Keep, r.id, std::nullopt, {}, {}};
    if (auto c = contexts.find(r.id); c != contexts.end()) edit.reason = c->second;
    out.edits.push_back(std::move(edit));
  }
  std::sort(out.edits.begin(), out.edits.end(), [](const auto& a, const auto& b) { return a.rule_id < b.rule_id; });
  return out;
}

RuleSet apply_edits(const RuleSet& rs, const std::vector<RefinerEdit>& edits) {
  RuleSet out = rs;
  for (const auto& e : edits) {
    Rule* r = out.find(e.rule_id);
    if (r == nullptr) continue;
    switch (e.kind) {
      case EditKind::Modify:
        if (e.replacement) {
          r->predicates = e.replacement->predicates;
          r->class_index = e.replacement->class_index;
          r->llm_adapted = true;
        }
        if (!e.reason.empty()) r->context = e.reason;
        break;
      case EditKind::Prune:
        r->active = false;
        r->context = e.reason;
        break;
      case EditKind::Keep:
        if (!e.reason.empty()) r->context = e.reason;
        break;
    }
  }
  return out;
}

std::string build_adaptation_prompt(const RuleSet& rs, const FeatureSchema& schema) {
  std::ostringstream out;
  out << kPhaseAdaptation << "\n\n"
      << "The rules below were extracted as local surrogates of a classifier predicting '" << schema.target_name()
      << "'. Align each rule with domain knowledge. You may change thresholds, operators, categories and the "
         "predicted class, and you may remove predicates from a rule. Deleting a whole rule is forbidden in this "
         "step: every rule id must stay. Do not invent features, operators, categories or classes.\n\n";
  write_vocabulary(out, schema);
  write_rules(out, rs, schema);
  out << "\nRESPONSE FORMAT\n"
      << "For every rule id above write exactly one verdict line followed by one context line:\n"
      << "RULE <id>: KEEP\n"
      << "RULE <id>: MODIFY -> IF <feature> <operator> <value> [AND ...] THEN <class>\n"
      << "CONTEXT <id>: <one sentence explaining the rule in domain terms>\n"
      << "Do not write any other lines. Deleting rules is not allowed.\n";
  return out.str();
}

std::string build_pruning_prompt(const RuleSet& rs, const FeatureSchema& schema) {
  std::ostringstream out;
  out << kPhasePruning << "\n\n"
      << "The rules below classify '" << schema.target_name()
      << "'. Decide for each rule whether it should be removed, for example because it is over-specific, too "
         "simple, contradicts domain knowledge, or contradicts or duplicates another rule in this set. Compare "
         "the rules with each other. Give a reason for every decision.\n\n";
  write_vocabulary(out, schema);
  write_rules(out, rs, schema);
  out << "\nRESPONSE FORMAT\n"
      << "For every rule id above write exactly one line:\n"
      << "PRUNE <id>: <reason>\n"
      << "KEEP <id>: <reason>\n"
      << "Do not write any other lines.\n";
  return out.str();
}

nlohmann::json RefinementTranscript::to_json(const FeatureSchema& schema) const {
  nlohmann::json applied_json = nlohmann::json::array();
  for (const auto& [phase, e] : applied) {
    nlohmann::json je = {{"phase", to_string(phase)}, {"kind", to_string(e.kind)}, {"rule_id", e.rule_id},
                         {"reason", e.reason}};
    if (e.replacement) {
      Rule tmp;
      tmp.predicates = e.replacement->predicates;
      tmp.class_index = e.replacement->class_index;
      je["rule_text"] = canonical_text(tmp, schema);
    }
    applied_json.push_back(std::move(je));
  }
  nlohmann::json rejected_json = nlohmann::json::array();
  for (const auto& r : rejected) {
    rejected_json.push_back({{"phase", to_string(r.phase)}, {"line_no", r.line_no}, {"line", r.line}, {"cause", r.cause}});
  }
  return {{"iteration", iteration},
          {"system_prompt", system_prompt},
          {"adaptation", {{"prompt", adaptation_prompt}, {"response", adaptation_response}}},
          {"pruning", {{"prompt", pruning_prompt}, {"response", pruning_response}}},
          {"applied", applied_json},
          {"rejected", rejected_json},
          {"error", error}};
}

namespace {

std::string feature_list(const std::vector<Predicate>& preds, const FeatureSchema& schema) {
  std::string out;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if (i > 0) out += i + 1 == preds.size() ? " and " : ", ";
    out += schema.feature(preds[i].feature).name;
  }
  return out;
}

}  // namespace

std::vector<RefinerEdit> stub_refine(const RuleSet& rs, const FeatureSchema& schema, Phase phase) {
  std::vector<RefinerEdit> edits;
  if (phase == Phase::Adaptation) {
    for (const auto& r : rs.rules()) {
      if (!r.active) continue;
      auto preds = r.predicates;
      bool rounded = false;
      for (auto& p : preds) {
        Predicate q = p;
        q.lo = round_significant(p.lo, 2);
        q.hi = round_significant(p.hi, 2);
        if (q.op == Op::RANGE && !(q.lo < q.hi)) continue;  // would collapse the interval
        if (!(q == p)) {
          p = q;
          rounded = true;
        }
      }
      std::string dropped;
      if (!r.llm_adapted && preds.size() > 3) {
        dropped = schema.feature(preds.back().feature).name;
        preds.pop_back();
      }
      if (!rounded && dropped.empty()) {
        std::string reason;
        if (r.context.empty()) {
          reason = "The conditions on " + feature_list(r.predicates, schema) + " are kept as discovered for class " +
                   schema.classes()[static_cast<std::size_t>(r.class_index)] + ".";
        }
        edits.push_back({EditKind::Keep, r.id, std::nullopt, {}, std::move(reason)});
        continue;
      }
      RefinerEdit e{EditKind::Modify, r.id, ParsedRule{preds, r.class_index}, {}, {}};
      Rule tmp;
      tmp.predicates = preds;
      tmp.class_index = r.class_index;
      e.replacement_text = canonical_text(tmp, schema);
      if (rounded) e.reason = "Thresholds rounded to two significant digits for readability.";
      if (!dropped.empty()) {
        e.reason += std::string(e.reason.empty() ? "" : " ") + "The condition on " + dropped +
                    " was dropped as over-specific.";
      }
      edits.push_back(std::move(e));
    }
    return edits;
  }

  std::vector<const Rule*> active;
  for (const auto& r : rs.rules()) {
    if (r.active) active.push_back(&r);
  }
  std::sort(active.begin(), active.end(), [](const Rule* a, const Rule* b) { return a->id < b->id; });
  std::set<int> pruned;
  for (std::size_t j = 0; j < active.size(); ++j) {
    const auto key = canonical_predicates(active[j]->predicates);
    std::optional<int> contradicted;
    for (std::size_t i = 0; i < j && !contradicted; ++i) {
      if (pruned.count(active[i]->id)) continue;
      if (active[i]->class_index != active[j]->class_index && canonical_predicates(active[i]->predicates) == key) {
        contradicted = active[i]->id;
      }
    }
    if (contradicted) {
      pruned.insert(active[j]->id);
      edits.push_back({EditKind::Prune, active[j]->id, std::nullopt, {}, "contradicts rule " + std::to_string(*contradicted)});
    } else {
      edits.push_back({EditKind::Keep, active[j]->id, std::nullopt, {}, {}});
    }
  }
  return edits;
}

std::string render_response(const std::vector<RefinerEdit>& edits, Phase phase, const FeatureSchema& schema) {
  std::ostringstream out;
  for (const auto& e : edits) {
    if (phase == Phase::Adaptation) {
      if (e.kind == EditKind::Modify && e.replacement) {
        Rule tmp;
        tmp.predicates = e.replacement->predicates;
        tmp.class_index = e.replacement->class_index;
        out << "RULE " << e.rule_id << ": MODIFY -> " << canonical_text(tmp, schema) << '\n';
      } else {
        out << "RULE " << e.rule_id << ": KEEP\n";
      }
      if (!e.reason.empty()) out << "CONTEXT " << e.rule_id << ": " << one_line(e.reason) << '\n';
    } else {
      out << (e.kind == EditKind::Prune ? "PRUNE " : "KEEP ") << e.rule_id << ":";
      if (!e.reason.empty()) out << ' ' << one_line(e.reason);
      out << '\n';
    }
  }
  return out.str();
}

std::string StubClient::complete(const std::vector<ChatMessage>& messages) {
  if (messages.empty()) return {};
  const std::string_view prompt = messages.back().content;
  const Phase phase = prompt.find(kPhasePruning) != std::string_view::npos ? Phase::Pruning : Phase::Adaptation;

  // Rebuild the listed rules from "#<id>: <rule> | origin=... | ..." lines.
  RuleSet listed;
  std::vector<Rule> rules;
  bool in_rules = false;
  for (auto line : split(prompt, '\n')) {
    line = trim(line);
    if (line == "RULES") {
      in_rules = true;
      continue;
    }
    if (!in_rules) continue;
    if (line.empty() || line.front() != '#') break;
    const auto colon = line.find(": ");
    const auto bar = line.find(" | origin=");
    if (colon == std::string_view::npos || bar == std::string_view::npos) continue;
    Rule r;
    std::from_chars(line.data() + 1, line.data() + colon, r.id);
    try {
      auto parsed = parse_rule(line.substr(colon + 2, bar - colon - 2), schema_);
      r.predicates = std::move(parsed.predicates);
      r.class_index = parsed.class_index;
    } catch (const RuleParseError&) {
      continue;
    }
    r.llm_adapted = line.substr(bar + 10, 7) == "adapted";
    if (const auto ctx = line.find(" | context="); ctx != std::string_view::npos) {
      r.context = std::string(line.substr(ctx + 11));
    }
    rules.push_back(std::move(r));
  }
  for (auto& r : rules) listed.rules().push_back(std::move(r));
  return render_response(stub_refine(listed, schema_, phase), phase, schema_);
}

std::pair<RuleSet, RefinementTranscript> ProtocolRefiner::refine(const RuleSet& rs, const FeatureSchema& schema) {
  RefinementTranscript t;
  t.system_prompt = kSystemPrompt;
  if (rs.active_count() == 0) return {rs, t};

  t.adaptation_prompt = build_adaptation_prompt(rs, schema);
  t.adaptation_response = client_->complete({{"system", kSystemPrompt}, {"user", t.adaptation_prompt}});
  auto adapted = parse_response(t.adaptation_response, Phase::Adaptation, rs, schema);
  RuleSet after_adaptation = apply_edits(rs, adapted.edits);
  for (auto& e : adapted.edits) t.applied.emplace_back(Phase::Adaptation, std::move(e));
  t.rejected = std::move(adapted.rejected);

  t.pruning_prompt = build_pruning_prompt(after_adaptation, schema);
  t.pruning_response = client_->complete({{"system", kSystemPrompt}, {"user", t.pruning_prompt}});
  auto pruned = parse_response(t.pruning_response, Phase::Pruning, after_adaptation, schema);
  RuleSet out = apply_edits(after_adaptation, pruned.edits);
  for (auto& e : pruned.edits) t.applied.emplace_back(Phase::Pruning, std::move(e));
  t.rejected.insert(t.rejected.end(), pruned.rejected.begin(), pruned.rejected.end());
  return {std::move(out), std::move(t)};
}

}  // namespace more
