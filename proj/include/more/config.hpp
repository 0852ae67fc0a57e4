#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>

#include "more/discovery.hpp"
#include "more/refiner.hpp"

namespace more {

enum class RefinerKind { None, Stub, Remote };

std::string_view to_string(RefinerKind kind);

/// Everything `train` needs. Relative paths are resolved against the
/// directory of the config file.
struct RunConfig {
  std::filesystem::path data;       // labelled CSV
  std::filesystem::path schema;     // schema JSON
  std::optional<std::filesystem::path> test_data;  // explicit test CSV; otherwise a split of `data`
  double test_fraction = 0.2;
  std::uint64_t seed = 0;
  DiscoveryConfig discovery;
  RefinerKind refiner = RefinerKind::Stub;
  bool refiner_fallback = false;  // remote failures degrade to "no refinement" instead of exit 4
  LlmClientConfig llm;
  std::filesystem::path output = "bundle";

  void validate() const;
};

/// Key/value file with [sections]:
///
///   [data]       csv, schema, test_csv, test_fraction
///   [model]      hidden = [50, 50] ([] for logistic regression), gate_bias
///   [training]   learning_rate, batch_size, epochs
///   [dbgd]       epsilon, alpha, beta, learning_rate, batch_size, epochs, delta
///   [anchor]     tau, n_samples, max_predicates, n_bins
///   [discovery]  iterations, exploit, explore
///   [refiner]    kind = none | stub | remote, fallback, endpoint, model,
///                api_key_env, timeout, max_retries, temperature
///   [run]        seed, output
///
/// '#' and ';' start comments, string values may be double-quoted. Unknown
/// sections or keys are errors. Throws ConfigError.
RunConfig parse_config(std::istream& in, const std::filesystem::path& base_dir = {});
RunConfig load_config(const std::filesystem::path& path);

}  // namespace more
