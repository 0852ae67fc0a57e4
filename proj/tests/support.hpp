#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <unistd.h>

#include <Eigen/Dense>

#include "more/model.hpp"
#include "more/random.hpp"
#include "more/rules.hpp"
#include "more/schema.hpp"

namespace testing {

inline std::filesystem::path source_dir() { return MORE_SOURCE_DIR; }

/// Fresh empty directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("more_test_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

/// Two numeric features (age, glucose), one categorical (color: red, green,
/// blue), binary target.
inline more::FeatureSchema mixed_schema() {
  using more::FeatureKind;
  return more::FeatureSchema({{"age", FeatureKind::Numeric, {}},
                              {"glucose", FeatureKind::Numeric, {}},
                              {"color", FeatureKind::Categorical, {"red", "green", "blue"}}},
                             "label", {"no", "yes"});
}

inline more::FeatureSchema numeric_schema(std::size_t d, std::size_t classes = 2) {
  std::vector<more::FeatureSpec> f;
  for (std::size_t i = 0; i < d; ++i) f.push_back({"x" + std::to_string(i), more::FeatureKind::Numeric, {}});
  std::vector<std::string> c;
  for (std::size_t k = 0; k < classes; ++k) c.push_back("c" + std::to_string(k));
  return more::FeatureSchema(std::move(f), "y", std::move(c));
}

/// Random schema-valid instance of the mixed schema.
inline more::Instance random_mixed_instance(more::Rng& rng) {
  return {std::round(rng.uniform(18, 80)), std::round(rng.uniform(50, 200) * 10) / 10,
          static_cast<double>(rng.index(3))};
}

inline more::Dataset random_mixed_dataset(std::size_t n, std::uint64_t seed) {
  more::Rng rng(seed);
  more::Dataset d;
  d.schema = mixed_schema();
  for (std::size_t i = 0; i < n; ++i) {
    auto x = random_mixed_instance(rng);
    d.labels.push_back(x[1] > 125 ? 1 : 0);
    d.rows.push_back(std::move(x));
  }
  return d;
}

/// Random valid predicate on the mixed schema.
inline more::Predicate random_mixed_predicate(more::Rng& rng, std::size_t feature) {
  using more::Predicate;
  if (feature == 2) return Predicate::eq(2, static_cast<int>(rng.index(3)));
  const double a = std::round(rng.uniform(0, 200) * 100) / 100;
  const double b = a + 0.5 + std::round(rng.uniform(0, 50) * 100) / 100;
  switch (rng.index(3)) {
    case 0: return Predicate::le(feature, a);
    case 1: return Predicate::gt(feature, a);
    default: return Predicate::range(feature, a, b);
  }
}

/// Random valid rule: 1-3 predicates on distinct features.
inline more::Rule random_mixed_rule(more::Rng& rng) {
  more::Rule r;
  std::vector<std::size_t> features = {0, 1, 2};
  rng.shuffle(features);
  const std::size_t k = 1 + rng.index(3);
  for (std::size_t i = 0; i < k; ++i) r.predicates.push_back(random_mixed_predicate(rng, features[i]));
  r.class_index = static_cast<int>(rng.index(2));
  r.anchor = random_mixed_instance(rng);
  r.precision = rng.uniform01();
  return r;
}

/// Norm-relative discrepancy ||a - b|| / max(||a||, ||b||, floor).
inline double relative_error(const Eigen::VectorXd& a, const Eigen::VectorXd& b, double floor = 1e-8) {
  return (a - b).norm() / std::max({a.norm(), b.norm(), floor});
}

/// Central differences of `loss` around `theta` with step h.
inline Eigen::VectorXd numeric_gradient(const std::function<double(const Eigen::VectorXd&)>& loss,
                                        const Eigen::VectorXd& theta, double h = 1e-5) {
  Eigen::VectorXd g(theta.size());
  Eigen::VectorXd t = theta;
  for (Eigen::Index i = 0; i < theta.size(); ++i) {
    const double orig = t[i];
    t[i] = orig + h;
    const double up = loss(t);
    t[i] = orig - h;
    const double down = loss(t);
    t[i] = orig;
    g[i] = (up - down) / (2 * h);
  }
  return g;
}

// Forward pass written against the flat parameter layout with plain loops:
// per layer, weights row-major (out x in) then bias; tanh between layers.
inline Eigen::VectorXd reference_probs(const more::Architecture& arch, const Eigen::VectorXd& theta, const Eigen::VectorXd& x) {
  std::vector<std::size_t> sizes = {arch.input_dim};
  sizes.insert(sizes.end(), arch.hidden.begin(), arch.hidden.end());
  sizes.push_back(arch.output_dim);
  std::vector<double> a(x.data(), x.data() + x.size());
  Eigen::Index k = 0;
  for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
    std::vector<double> z(sizes[l + 1], 0.0);
    for (std::size_t o = 0; o < sizes[l + 1]; ++o)
      for (std::size_t i = 0; i < sizes[l]; ++i) z[o] += theta[k++] * a[i];
    for (std::size_t o = 0; o < sizes[l + 1]; ++o) z[o] += theta[k++];
    if (l + 2 < sizes.size())
      for (auto& v : z) v = std::tanh(v);
    a = z;
  }
  const double m = *std::max_element(a.begin(), a.end());
  double s = 0;
  for (auto& v : a) s += (v = std::exp(v - m));
  Eigen::VectorXd p(static_cast<Eigen::Index>(a.size()));
  for (std::size_t i = 0; i < a.size(); ++i) p[static_cast<Eigen::Index>(i)] = a[i] / s;
  return p;
}

}  // namespace testing
