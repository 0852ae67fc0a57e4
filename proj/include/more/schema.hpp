#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

namespace more {

enum class FeatureKind { Numeric, Categorical };

struct FeatureSpec {
  std::string name;
  FeatureKind kind = FeatureKind::Numeric;
  std::vector<std::string> categories;  // categorical only

  bool operator==(const FeatureSpec&) const = default;
};

/// Raw feature values in schema order. Numeric features hold the value,
/// categorical features hold the category index.
using Instance = std::vector<double>;

/// Feature vocabulary and target classes. Every rule, prompt and data file
/// is validated against this.
class FeatureSchema {
 public:
  FeatureSchema() = default;
  FeatureSchema(std::vector<FeatureSpec> features, std::string target_name,
                std::vector<std::string> classes);

  static FeatureSchema from_json(const nlohmann::json& j);
  static FeatureSchema load(const std::filesystem::path& path);
  nlohmann::json to_json() const;

  const std::vector<FeatureSpec>& features() const { return features_; }
  const FeatureSpec& feature(std::size_t i) const { return features_.at(i); }
  std::size_t num_features() const { return features_.size(); }
  const std::string& target_name() const { return target_name_; }
  const std::vector<std::string>& classes() const { return classes_; }
  int num_classes() const { return static_cast<int>(classes_.size()); }

  std::optional<std::size_t> find_feature(std::string_view name) const;
  std::optional<int> find_class(std::string_view label) const;
  std::optional<int> find_category(std::size_t feature, std::string_view value) const;

  /// Width of the model input: #numeric + sum of category counts.
  std::size_t encoded_width() const;

  /// Throws DataError if `x` has the wrong arity or an invalid category index.
  void validate(const Instance& x) const;

  bool operator==(const FeatureSchema&) const = default;

 private:
  std::vector<FeatureSpec> features_;
  std::string target_name_;
  std::vector<std::string> classes_;
};

struct Dataset {
  FeatureSchema schema;
  std::vector<Instance> rows;
  std::vector<int> labels;

  std::size_t size() const { return rows.size(); }
  Dataset subset(std::span<const std::size_t> indices) const;
};

/// Parses CSV text with a header row matching the schema's feature order
/// followed by the target column. `source` names the input in errors.
Dataset read_csv(std::istream& in, const FeatureSchema& schema, const std::string& source = "<stream>");
Dataset load_csv(const std::filesystem::path& path, const FeatureSchema& schema);
void write_csv(std::ostream& out, const Dataset& data);
void save_csv(const std::filesystem::path& path, const Dataset& data);

/// Instance from a JSON object {feature name: number | category string}.
Instance instance_from_json(const nlohmann::json& j, const FeatureSchema& schema);
nlohmann::json instance_to_json(const Instance& x, const FeatureSchema& schema);

/// Training-set mean and population standard deviation of each numeric
/// feature. Constant features get std = 1.
class Standardizer {
 public:
  struct Moments {
    double mean = 0.0;
    double std = 1.0;
    bool operator==(const Moments&) const = default;
  };

  Standardizer() = default;
  static Standardizer fit(const Dataset& train);

  /// Per-feature moments; empty for categorical features.
  const std::vector<std::optional<Moments>>& moments() const { return moments_; }
  bool empty() const;

  /// Standardized value of numeric feature `i`; categorical values pass through.
  double transform(std::size_t i, double value) const;

  nlohmann::json to_json() const;
  static Standardizer from_json(const nlohmann::json& j);

  bool operator==(const Standardizer&) const = default;

 private:
  std::vector<std::optional<Moments>> moments_;
};

/// Model input vector: standardized numerics, one-hot categoricals, in
/// schema order.
Eigen::VectorXd encode(const Instance& x, const Standardizer& standardizer, const FeatureSchema& schema);
std::vector<Eigen::VectorXd> encode_all(const Dataset& data, const Standardizer& standardizer);

/// Stratified, seeded train/test partition.
std::pair<Dataset, Dataset> split(const Dataset& data, double test_fraction, std::uint64_t seed);

/// Index form of `split`: (train indices, test indices), each sorted.
std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_indices(
    const Dataset& data, double test_fraction, std::uint64_t seed);

}  // namespace more
