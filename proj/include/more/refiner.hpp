#pragma once

#include <chrono>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "more/rules.hpp"
#include "more/schema.hpp"

namespace more {

enum class Phase { Adaptation, Pruning };
enum class EditKind { Modify, Keep, Prune };

std::string_view to_string(Phase phase);
std::string_view to_string(EditKind kind);

struct RefinerEdit {
  EditKind kind = EditKind::Keep;
  int rule_id = -1;
  std::optional<ParsedRule> replacement;  // Modify only
  std::string replacement_text;           // Modify only, as received
  std::string reason;
};

struct RejectedEdit {
  Phase phase = Phase::Adaptation;
  std::size_t line_no = 0;
  std::string line;
  std::string cause;
};

struct ParsedResponse {
  std::vector<RefinerEdit> edits;  // one per active rule, in id order
  std::vector<RejectedEdit> rejected;
};

/// Line-oriented parse of a model response. Never throws: malformed lines,
/// unknown ids, schema violations, phase violations and repeated verdicts
/// end up in `rejected`. Active rules without a verdict default to Keep.
///
/// Adaptation lines:  RULE <id>: KEEP
///                    RULE <id>: MODIFY -> IF ... THEN <class>
///                    CONTEXT <id>: <sentence>
/// Pruning lines:     PRUNE <id>: <reason>   (reason required)
///                    KEEP <id>: <reason>
ParsedResponse parse_response(std::string_view text, Phase phase, const RuleSet& rs, const FeatureSchema& schema);

/// Modify replaces predicates and class, marks the rule adapted and stores
/// the context; Prune deactivates and stores the reason; Keep stores a
/// non-empty reason. Ids never change.
RuleSet apply_edits(const RuleSet& rs, const std::vector<RefinerEdit>& edits);

extern const char* const kSystemPrompt;

std::string build_adaptation_prompt(const RuleSet& rs, const FeatureSchema& schema);
std::string build_pruning_prompt(const RuleSet& rs, const FeatureSchema& schema);

struct RefinementTranscript {
  int iteration = 0;
  std::string system_prompt;
  std::string adaptation_prompt;
  std::string adaptation_response;
  std::string pruning_prompt;
  std::string pruning_response;
  std::vector<std::pair<Phase, RefinerEdit>> applied;
  std::vector<RejectedEdit> rejected;
  std::string error;  // set when refinement failed and the rule set was left as is

  nlohmann::json to_json(const FeatureSchema& schema) const;
};

struct ChatMessage {
  std::string role;
  std::string content;
};

/// Text completion backend. Implementations throw RefinementUnavailable
/// when no answer can be obtained.
class LlmClient {
 public:
  virtual ~LlmClient() = default;
  virtual std::string complete(const std::vector<ChatMessage>& messages) = 0;
};

/// Offline stand-in for a language model. Reads the rule listing and the
/// phase marker from the prompt and answers in the response grammar.
class StubClient : public LlmClient {
 public:
  explicit StubClient(FeatureSchema schema) : schema_(std::move(schema)) {}
  std::string complete(const std::vector<ChatMessage>& messages) override;

 private:
  FeatureSchema schema_;
};

/// Deterministic edits the stub answers with:
///  adaptation: numeric thresholds rounded to 2 significant digits; the last
///    predicate dropped from not-yet-adapted rules with more than 3
///    predicates; classes and features never change; kept rules without a
///    stored context get a one-sentence context;
///  pruning: the higher id of any two active rules with the same predicate
///    set but different classes is pruned ("contradicts rule <id>").
std::vector<RefinerEdit> stub_refine(const RuleSet& rs, const FeatureSchema& schema, Phase phase);

/// Renders edits in the response grammar.
std::string render_response(const std::vector<RefinerEdit>& edits, Phase phase, const FeatureSchema& schema);

struct LlmClientConfig {
  std::string endpoint = "https://api.openai.com/v1/chat/completions";
  std::string model = "gpt-4";
  std::string api_key_env = "MORE_LLM_API_KEY";
  double timeout_seconds = 60.0;
  std::size_t max_retries = 2;
  double temperature = 0.0;

  void validate() const;
};

/// Chat-completions client: POST {model, messages, temperature}, reads
/// choices[0].message.content. Retries with exponential backoff (1 s, 2 s,
/// 4 s, ...); `sleep` is injectable for tests.
class RemoteClient : public LlmClient {
 public:
  using Sleeper = std::function<void(std::chrono::milliseconds)>;

  explicit RemoteClient(LlmClientConfig cfg, Sleeper sleep = {});
  std::string complete(const std::vector<ChatMessage>& messages) override;

  std::size_t attempts() const { return attempts_; }

 private:
  LlmClientConfig cfg_;
  Sleeper sleep_;
  std::size_t attempts_ = 0;
};

class Refiner {
 public:
  virtual ~Refiner() = default;
  /// Throws RefinementUnavailable when the backend cannot be reached.
  virtual std::pair<RuleSet, RefinementTranscript> refine(const RuleSet& rs, const FeatureSchema& schema) = 0;
};

/// Two-step protocol (adaptation, then pruning) over any LlmClient.
class ProtocolRefiner : public Refiner {
 public:
  explicit ProtocolRefiner(std::shared_ptr<LlmClient> client) : client_(std::move(client)) {}
  std::pair<RuleSet, RefinementTranscript> refine(const RuleSet& rs, const FeatureSchema& schema) override;

 private:
  std::shared_ptr<LlmClient> client_;
};

}  // namespace more
