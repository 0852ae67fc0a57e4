#include "more/schema.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "more/error.hpp"
#include "more/random.hpp"
#include "more/text.hpp"

namespace more {

namespace {

std::string kind_name(FeatureKind kind) {
  return kind == FeatureKind::Numeric ? "numeric" : "categorical";
}

}  // namespace

FeatureSchema::FeatureSchema(std::vector<FeatureSpec> features, std::string target_name,
                             std::vector<std::string> classes)
    : features_(std::move(features)), target_name_(std::move(target_name)), classes_(std::move(classes)) {
  std::set<std::string> names;
  for (const auto& f : features_) {
    if (f.name.empty()) throw DataError("schema: empty feature name");
    if (!names.insert(f.name).second) throw DataError("schema: duplicate feature name '" + f.name + "'");
    if (f.kind == FeatureKind::Categorical) {
      if (f.categories.size() < 2) {
        throw DataError("schema: categorical feature '" + f.name + "' needs at least 2 categories");
      }
      std::set<std::string> cats(f.categories.begin(), f.categories.end());
      if (cats.size() != f.categories.size()) {
        throw DataError("schema: duplicate category in feature '" + f.name + "'");
      }
    } else if (!f.categories.empty()) {
      throw DataError("schema: numeric feature '" + f.name + "' must not list categories");
    }
  }
  if (classes_.size() < 2) throw DataError("schema: at least 2 classes required");
  std::set<std::string> cls(classes_.begin(), classes_.end());
  if (cls.size() != classes_.size()) throw DataError("schema: duplicate class label");
}

FeatureSchema FeatureSchema::from_json(const nlohmann::json& j) {
  try {
    std::vector<FeatureSpec> features;
    for (const auto& jf : j.at("features")) {
      FeatureSpec spec;
      spec.name = jf.at("name").get<std::string>();
      const auto kind = jf.at("kind").get<std::string>();
      if (kind == "numeric") {
        spec.kind = FeatureKind::Numeric;
      } else if (kind == "categorical") {
        spec.kind = FeatureKind::Categorical;
        spec.categories = jf.at("categories").get<std::vector<std::string>>();
      } else {
        throw DataError("schema: unknown feature kind '" + kind + "' for '" + spec.name + "'");
      }
      features.push_back(std::move(spec));
    }
    return FeatureSchema(std::move(features), j.at("target_name").get<std::string>(),
                         j.at("classes").get<std::vector<std::string>>());
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("schema: ") + e.what());
  }
}

FeatureSchema FeatureSchema::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open schema file " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw DataError("schema file " + path.string() + ": " + e.what());
  }
  return from_json(j);
}

nlohmann::json FeatureSchema::to_json() const {
  nlohmann::json features = nlohmann::json::array();
  for (const auto& f : features_) {
    nlohmann::json jf = {{"name", f.name}, {"kind", kind_name(f.kind)}};
    if (f.kind == FeatureKind::Categorical) jf["categories"] = f.categories;
    features.push_back(std::move(jf));
  }
  return {{"features", features}, {"target_name", target_name_}, {"classes", classes_}};
}

std::optional<std::size_t> FeatureSchema::find_feature(std::string_view name) const {
  for (std::size_t i = 0; i < features_.size(); ++i) {
    if (features_[i].name == name) return i;
  }
  return std::nullopt;
}

std::optional<int> FeatureSchema::find_class(std::string_view label) const {
  for (std::size_t i = 0; i < classes_.size(); ++i) {
    if (classes_[i] == label) return static_cast<int>(i);
  }
  return std::nullopt;
}

std::optional<int> FeatureSchema::find_category(std::size_t feature, std::string_view value) const {
  const auto& cats = features_.at(feature).categories;
  for (std::size_t i = 0; i < cats.size(); ++i) {
    if (cats[i] == value) return static_cast<int>(i);
  }
  return std::nullopt;
}

std::size_t FeatureSchema::encoded_width() const {
  std::size_t width = 0;
  for (const auto& f : features_) {
    width += f.kind == FeatureKind::Numeric ? 1 : f.categories.size();
  }
  return width;
}

void FeatureSchema::validate(const Instance& x) const {
  if (x.size() != features_.size()) {
    throw DataError("instance has " + std::to_string(x.size()) + " values, schema has " +
                    std::to_string(features_.size()) + " features");
  }
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!std::isfinite(x[i])) throw DataError("non-finite value for feature '" + features_[i].name + "'");
    if (features_[i].kind == FeatureKind::Categorical) {
      const double v = x[i];
      if (v < 0 || v != std::floor(v) || v >= static_cast<double>(features_[i].categories.size())) {
        throw DataError("category index " + format_number(v) + " out of range for feature '" +
                        features_[i].name + "'");
      }
    }
  }
}

Dataset Dataset::subset(std::span<const std::size_t> indices) const {
  Dataset out{schema, {}, {}};
  out.rows.reserve(indices.size());
  out.labels.reserve(indices.size());
  for (auto i : indices) {
    out.rows.push_back(rows.at(i));
    out.labels.push_back(labels.at(i));
  }
  return out;
}

namespace {

std::string unquote(std::string_view field) {
  field = trim(field);
  if (field.size() >= 2 && field.front() == '"' && field.back() == '"') {
    field = field.substr(1, field.size() - 2);
  }
  return std::string(field);
}

}  // namespace

Dataset read_csv(std::istream& in, const FeatureSchema& schema, const std::string& source) {
  std::string line;
  std::size_t line_no = 0;
  if (!std::getline(in, line)) throw DataError(source + ": empty file");
  ++line_no;
  if (line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);

  const std::size_t d = schema.num_features();
  auto header = split(line, ',');
  for (std::size_t i = 0; i <= d; ++i) {
    const std::string expected = i < d ? schema.feature(i).name : schema.target_name();
    if (i >= header.size()) {
      throw DataError(source + ": schema mismatch, missing column '" + expected + "'");
    }
    const auto found = unquote(header[i]);
    if (found != expected) {
      throw DataError(source + ": schema mismatch, expected column '" + expected + "' at position " +
                      std::to_string(i + 1) + ", found '" + found + "'");
    }
  }
  if (header.size() != d + 1) {
    throw DataError(source + ": schema mismatch, unexpected extra column '" + unquote(header[d + 1]) + "'");
  }

  Dataset data{schema, {}, {}};
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    auto fields = split(line, ',');
    const std::string where = source + ":" + std::to_string(line_no);
    if (fields.size() != d + 1) {
      throw DataError(where + ": expected " + std::to_string(d + 1) + " fields, found " +
                      std::to_string(fields.size()));
    }
    Instance x(d);
    for (std::size_t i = 0; i < d; ++i) {
      const auto value = unquote(fields[i]);
      const auto& spec = schema.feature(i);
      if (value.empty() || value == "?") {
        throw DataError(where + ": missing value for feature '" + spec.name + "'");
      }
      if (spec.kind == FeatureKind::Numeric) {
        auto v = parse_number(value);
        if (!v) throw DataError(where + ": cannot parse '" + value + "' as a number for feature '" + spec.name + "'");
        x[i] = *v;
      } else {
        auto c = schema.find_category(i, value);
        if (!c) throw DataError(where + ": unknown category '" + value + "' for feature '" + spec.name + "'");
        x[i] = *c;
      }
    }
    const auto label = unquote(fields[d]);
    auto y = schema.find_class(label);
    if (!y) throw DataError(where + ": unknown class '" + label + "' for target '" + schema.target_name() + "'");
    data.rows.push_back(std::move(x));
    data.labels.push_back(*y);
  }
  if (data.rows.empty()) throw DataError(source + ": no data rows");
  return data;
}

Dataset load_csv(const std::filesystem::path& path, const FeatureSchema& schema) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open data file " + path.string());
  return read_csv(in, schema, path.string());
}

void write_csv(std::ostream& out, const Dataset& data) {
  const auto& schema = data.schema;
  for (const auto& f : schema.features()) out << f.name << ',';
  out << schema.target_name() << '\n';
  for (std::size_t n = 0; n < data.size(); ++n) {
    for (std::size_t i = 0; i < schema.num_features(); ++i) {
      const double v = data.rows[n][i];
      if (schema.feature(i).kind == FeatureKind::Numeric) {
        out << format_number(v);
      } else {
        out << schema.feature(i).categories.at(static_cast<std::size_t>(v));
      }
      out << ',';
    }
    out << schema.classes().at(static_cast<std::size_t>(data.labels[n])) << '\n';
  }
}

void save_csv(const std::filesystem::path& path, const Dataset& data) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  write_csv(out, data);
}

Instance instance_from_json(const nlohmann::json& j, const FeatureSchema& schema) {
  if (!j.is_object()) throw DataError("instance must be a JSON object keyed by feature name");
  Instance x(schema.num_features());
  for (std::size_t i = 0; i < schema.num_features(); ++i) {
    const auto& spec = schema.feature(i);
    auto it = j.find(spec.name);
    if (it == j.end()) throw DataError("instance is missing feature '" + spec.name + "'");
    if (spec.kind == FeatureKind::Numeric) {
      if (!it->is_number()) throw DataError("feature '" + spec.name + "' must be a number");
      x[i] = it->get<double>();
    } else {
      if (!it->is_string()) throw DataError("feature '" + spec.name + "' must be a category string");
      auto c = schema.find_category(i, it->get<std::string>());
      if (!c) throw DataError("unknown category '" + it->get<std::string>() + "' for feature '" + spec.name + "'");
      x[i] = *c;
    }
  }
  for (const auto& [key, value] : j.items()) {
    if (!schema.find_feature(key)) throw DataError("instance has unknown feature '" + key + "'");
  }
  schema.validate(x);
  return x;
}

nlohmann::json instance_to_json(const Instance& x, const FeatureSchema& schema) {
  nlohmann::json j = nlohmann::json::object();
  for (std::size_t i = 0; i < schema.num_features(); ++i) {
    const auto& spec = schema.feature(i);
    if (spec.kind == FeatureKind::Numeric) {
      j[spec.name] = x.at(i);
    } else {
      j[spec.name] = spec.categories.at(static_cast<std::size_t>(x.at(i)));
    }
  }
  return j;
}

Standardizer Standardizer::fit(const Dataset& train) {
  Standardizer s;
  const auto& schema = train.schema;
  s.moments_.resize(schema.num_features());
  if (train.size() == 0) return s;
  const double n = static_cast<double>(train.size());
  for (std::size_t i = 0; i < schema.num_features(); ++i) {
    if (schema.feature(i).kind != FeatureKind::Numeric) continue;
    double sum = 0.0;
    for (const auto& row : train.rows) sum += row[i];
    const double mean = sum / n;
    double ss = 0.0;
    for (const auto& row : train.rows) ss += (row[i] - mean) * (row[i] - mean);
    double sd = std::sqrt(ss / n);
    if (!(sd > 0.0)) sd = 1.0;
    s.moments_[i] = Moments{mean, sd};
  }
  return s;
}

bool Standardizer::empty() const {
  return std::none_of(moments_.begin(), moments_.end(), [](const auto& m) { return m.has_value(); });
}

double Standardizer::transform(std::size_t i, double value) const {
  if (i >= moments_.size() || !moments_[i]) return value;
  return (value - moments_[i]->mean) / moments_[i]->std;
}

nlohmann::json Standardizer::to_json() const {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& m : moments_) {
    if (m) {
      arr.push_back({{"mean", m->mean}, {"std", m->std}});
    } else {
      arr.push_back(nullptr);
    }
  }
  return {{"features", arr}};
}

Standardizer Standardizer::from_json(const nlohmann::json& j) {
  Standardizer s;
  try {
    for (const auto& m : j.at("features")) {
      if (m.is_null()) {
        s.moments_.emplace_back();
      } else {
        s.moments_.emplace_back(Moments{m.at("mean").get<double>(), m.at("std").get<double>()});
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("standardizer: ") + e.what());
  }
  return s;
}

Eigen::VectorXd encode(const Instance& x, const Standardizer& standardizer, const FeatureSchema& schema) {
  schema.validate(x);
  Eigen::VectorXd out = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(schema.encoded_width()));
  Eigen::Index pos = 0;
  for (std::size_t i = 0; i < schema.num_features(); ++i) {
    const auto& spec = schema.feature(i);
    if (spec.kind == FeatureKind::Numeric) {
      out[pos++] = standardizer.transform(i, x[i]);
    } else {
      out[pos + static_cast<Eigen::Index>(x[i])] = 1.0;
      pos += static_cast<Eigen::Index>(spec.categories.size());
    }
  }
  return out;
}

std::vector<Eigen::VectorXd> encode_all(const Dataset& data, const Standardizer& standardizer) {
  std::vector<Eigen::VectorXd> out;
  out.reserve(data.size());
  for (const auto& row : data.rows) out.push_back(encode(row, standardizer, data.schema));
  return out;
}

std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_indices(
    const Dataset& data, double test_fraction, std::uint64_t seed) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) {
    throw DataError("test fraction must lie strictly between 0 and 1");
  }
  const int num_classes = data.schema.num_classes();
  std::vector<std::vector<std::size_t>> by_class(static_cast<std::size_t>(num_classes));
  for (std::size_t n = 0; n < data.size(); ++n) by_class.at(static_cast<std::size_t>(data.labels[n])).push_back(n);
  for (int c = 0; c < num_classes; ++c) {
    const auto count = by_class[static_cast<std::size_t>(c)].size();
    if (count > 0 && count < 2) {
      throw DataError("cannot stratify: class '" + data.schema.classes()[static_cast<std::size_t>(c)] +
                      "' has fewer than 2 instances");
    }
  }

  // Largest-remainder allocation of the overall test size across classes.
  const double total = static_cast<double>(data.size());
  auto test_total = static_cast<std::size_t>(std::llround(total * test_fraction));
  test_total = std::clamp<std::size_t>(test_total, 1, data.size() - 1);
  std::vector<std::size_t> quota(by_class.size());
  std::vector<std::pair<double, std::size_t>> remainders;
  std::size_t assigned = 0;
  for (std::size_t c = 0; c < by_class.size(); ++c) {
    const double exact = static_cast<double>(by_class[c].size()) * static_cast<double>(test_total) / total;
    quota[c] = static_cast<std::size_t>(std::floor(exact));
    assigned += quota[c];
    remainders.emplace_back(exact - std::floor(exact), c);
  }
  std::stable_sort(remainders.begin(), remainders.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t k = 0; assigned < test_total && k < remainders.size(); ++k) {
    const auto c = remainders[k].second;
    if (quota[c] < by_class[c].size()) {
      ++quota[c];
      ++assigned;
    }
  }

  Rng rng(seed);
  std::vector<std::size_t> train_idx, test_idx;
  for (std::size_t c = 0; c < by_class.size(); ++c) {
    auto members = by_class[c];
    rng.shuffle(members);
    test_idx.insert(test_idx.end(), members.begin(), members.begin() + static_cast<std::ptrdiff_t>(quota[c]));
    train_idx.insert(train_idx.end(), members.begin() + static_cast<std::ptrdiff_t>(quota[c]), members.end());
  }
  std::sort(train_idx.begin(), train_idx.end());
  std::sort(test_idx.begin(), test_idx.end());
  return {std::move(train_idx), std::move(test_idx)};
}

std::pair<Dataset, Dataset> split(const Dataset& data, double test_fraction, std::uint64_t seed) {
  auto [train_idx, test_idx] = split_indices(data, test_fraction, seed);
  return {data.subset(train_idx), data.subset(test_idx)};
}

}  // namespace more
