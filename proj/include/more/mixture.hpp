#pragma once

#include <cstddef>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "more/model.hpp"
#include "more/random.hpp"
#include "more/rules.hpp"
#include "more/schema.hpp"

namespace more {

/// Grey-box classifier: black-box expert f, rule expert over `rules`, and a
/// two-output gate g weighing them (g1 -> f, g2 -> rules).
struct MixtureModel {
  FeatureSchema schema;
  Standardizer standardizer;
  DiffClassifier f;
  DiffClassifier g;
  RuleSet rules;
  bool hard_gate = false;  // inference only
};

/// g1 * f + g2 * r when the rule expert fires (sum r == 1), else f.
/// With `hard_gate` the gate is first one-hot encoded at the 0.5 threshold.
Eigen::VectorXd mix(const Eigen::VectorXd& f_probs, const Eigen::VectorXd& g_probs, const Eigen::VectorXd& rule_out,
                    bool hard_gate);

Eigen::VectorXd mixture_predict(const MixtureModel& m, const Instance& x);

/// -log(clamp(g2(x), 1e-12, 1)) on an encoded input.
double interpretability_loss(const DiffClassifier& g, const Eigen::VectorXd& x);

/// Encoded inputs with the rule expert's output precomputed. The rule set
/// does not change within an epoch, so this is built once per training phase.
struct TrainingView {
  std::vector<Eigen::VectorXd> inputs;
  std::vector<int> labels;
  std::vector<Eigen::VectorXd> rule_outputs;
  std::vector<bool> covered;

  std::size_t size() const { return inputs.size(); }
};

TrainingView make_view(const MixtureModel& m, const Dataset& data);

/// Soft-gate mixture cross-entropy of sample i.
double mixture_sample_loss(const DiffClassifier& f, const DiffClassifier& g, const TrainingView& view, std::size_t i);

/// Mean soft-gate mixture cross-entropy over the view.
double mixture_loss(const DiffClassifier& f, const DiffClassifier& g, const TrainingView& view);

/// Gradient w.r.t. the gate parameters of l_int at sample i.
GradientVector interpretability_gradient(const DiffClassifier& g, const Eigen::VectorXd& x);

/// Gradient w.r.t. the gate parameters of the mixture task loss at sample i.
/// The rule output is a constant.
GradientVector gate_task_gradient(const DiffClassifier& f, const DiffClassifier& g, const TrainingView& view,
                                  std::size_t i);

/// Loss on f's probabilities for the mixture task loss with the gate held fixed.
LossFn mixture_theta_loss(const DiffClassifier& g, const TrainingView& view);

/// Frozen copy of the unconstrained black-box model and its mean training
/// cross-entropy.
struct BaselineSnapshot {
  DiffClassifier f;
  double train_loss = 0.0;

  nlohmann::json to_json() const;
  static BaselineSnapshot from_json(const nlohmann::json& j);
};

/// Trains f by mini-batch SGD on cross-entropy, then freezes a snapshot.
BaselineSnapshot init_train(DiffClassifier& f, const std::vector<Eigen::VectorXd>& inputs,
                            const std::vector<int>& labels, const SgdConfig& cfg, Rng& rng);

struct DbgdConfig {
  double epsilon = 0.1;
  double alpha = 1.0;
  double beta = 1.0;
  double learning_rate = 0.01;
  std::size_t epochs = 5;
  std::size_t batch_size = 32;
  double delta = 1e-12;
  bool record_gradients = false;  // keep I and T in every trace

  void validate() const;
};

struct DbgdStepTrace {
  std::size_t iteration = 0;  // set by the discovery loop
  std::size_t epoch = 0;
  std::size_t batch = 0;
  std::size_t covered = 0;
  double batch_loss = 0.0;           // mixture loss, batch mean
  double baseline_batch_loss = 0.0;  // frozen baseline, same batch
  double phi = 0.0;
  double lambda = 0.0;
  double interp_dot_task = 0.0;  // I . T
  double task_norm_sq = 0.0;     // ||T||^2
  GradientVector interp_grad;    // I, only with record_gradients
  GradientVector task_grad;      // T, only with record_gradients
};

/// min(alpha * (batch_loss - (1 + eps) * baseline_batch_loss), beta * ||T||^2).
double compute_phi(double batch_loss, double baseline_batch_loss, const GradientVector& task_grad,
                   const DbgdConfig& cfg);

/// max((phi - I.T) / max(||T||^2, delta), 0), and 0 when ||T||^2 < delta.
double compute_lambda(const GradientVector& interp_grad, const GradientVector& task_grad, double phi, double delta);

/// One epoch of the constrained optimization. Per batch:
///  1. f descends the mixture task loss over all batch samples;
///  2. I and T (batch means of the l_int and task-loss gate gradients) are
///     accumulated over samples the rule expert covers;
///  3. g <- g - eta * (I + lambda_t T). Without covered samples g is untouched.
std::vector<DbgdStepTrace> dbgd_epoch(MixtureModel& m, const TrainingView& view, const BaselineSnapshot& baseline,
                                      const DbgdConfig& cfg, Rng& rng, std::size_t epoch_index = 0);

/// Comparison optimizer: f as in dbgd_epoch, g descends I + lambda_static T.
void linear_combo_epoch(MixtureModel& m, const TrainingView& view, double lambda_static, const DbgdConfig& cfg,
                        Rng& rng);

}  // namespace more
