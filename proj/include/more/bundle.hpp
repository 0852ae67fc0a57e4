#pragma once

#include <filesystem>
#include <vector>

#include <json.hpp>

#include "more/discovery.hpp"

namespace more {

/// On-disk layout of a trained model, one directory with fixed file names.
namespace bundle_files {
inline constexpr const char* kSchema = "schema.json";
inline constexpr const char* kF = "f.json";
inline constexpr const char* kG = "g.json";
inline constexpr const char* kBaseline = "baseline.json";
inline constexpr const char* kRuleSet = "ruleset.json";
inline constexpr const char* kStandardizer = "standardizer.json";
inline constexpr const char* kMetrics = "metrics.csv";
inline constexpr const char* kTranscript = "transcript.json";
inline constexpr const char* kEpochs = "epochs.csv";  // per-epoch training loss vs. bound
inline constexpr const char* kTrace = "trace.csv";    // per-batch DBGD trace
inline constexpr const char* kTrain = "train.csv";
inline constexpr const char* kTest = "test.csv";
}  // namespace bundle_files

struct Bundle {
  MixtureModel model;
  BaselineSnapshot baseline;
  std::vector<IterationMetrics> metrics;
  nlohmann::json transcripts = nlohmann::json::array();
};

/// Writes every bundle file into `dir` (created if needed).
void save_bundle(const std::filesystem::path& dir, const RunState& state, const Dataset& train, const Dataset& test);

/// Loads the deployment part of a bundle (schema, f, g, rules, standardizer,
/// baseline) plus metrics and transcripts when present. Throws DataError.
Bundle load_bundle(const std::filesystem::path& dir);

/// Reads `metrics.csv` as stored, byte for byte.
std::string read_metrics_text(const std::filesystem::path& dir);

}  // namespace more
