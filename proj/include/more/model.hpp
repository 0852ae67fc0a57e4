#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "more/random.hpp"

namespace more {

/// Flat view of all parameter partials, layer by layer, each layer as its
/// weight matrix in row-major order followed by its bias.
using GradientVector = Eigen::VectorXd;

/// Empty `hidden` means logistic regression.
struct Architecture {
  std::size_t input_dim = 0;
  std::vector<std::size_t> hidden;
  std::size_t output_dim = 2;

  bool operator==(const Architecture&) const = default;
};

/// Softmax classifier with tanh hidden layers and hand-written backprop.
/// Used for the black-box expert, its frozen baseline copy and the gate.
class DiffClassifier {
 public:
  struct Layer {
    Eigen::MatrixXd weights;  // out x in
    Eigen::VectorXd bias;
  };

  DiffClassifier() = default;

  /// Weights and biases uniform in (-r, r), r = 1/sqrt(fan_in).
  DiffClassifier(Architecture arch, Rng& rng);

  static DiffClassifier zeros(Architecture arch);

  const Architecture& architecture() const { return arch_; }
  std::size_t input_dim() const { return arch_.input_dim; }
  std::size_t output_dim() const { return arch_.output_dim; }
  std::size_t num_parameters() const;

  const std::vector<Layer>& layers() const { return layers_; }
  std::vector<Layer>& layers() { return layers_; }

  Eigen::VectorXd logits(const Eigen::VectorXd& x) const;
  Eigen::VectorXd forward(const Eigen::VectorXd& x) const;

  /// Adds the parameter gradient of a loss with logit gradient `dlogits` at
  /// input `x` into `grad`.
  void backward(const Eigen::VectorXd& x, const Eigen::VectorXd& dlogits, GradientVector& grad) const;

  GradientVector parameters() const;
  void set_parameters(const GradientVector& flat);

  nlohmann::json to_json() const;
  static DiffClassifier from_json(const nlohmann::json& j);

  bool operator==(const DiffClassifier& other) const;

 private:
  void check_input(const Eigen::VectorXd& x) const;

  Architecture arch_;
  std::vector<Layer> layers_;
};

Eigen::VectorXd softmax(const Eigen::VectorXd& logits);

/// -log(max(probs[y], 1e-12)).
double ce_loss(const Eigen::VectorXd& probs, int y);

/// -sum p log p, with 0 log 0 = 0.
double predictive_entropy(const Eigen::VectorXd& probs);

std::size_t argmax(const Eigen::VectorXd& v);

/// Per-sample loss on the model's output probabilities. Returns the loss and
/// writes dloss/dprobs into `dprobs` (already sized and zeroed).
using LossFn = std::function<double(std::size_t sample, const Eigen::VectorXd& probs, Eigen::VectorXd& dprobs)>;

/// Cross-entropy against `labels[sample]`.
LossFn ce_loss_fn(const std::vector<int>& labels);

/// Logit gradient from a probability gradient through the softmax Jacobian.
Eigen::VectorXd softmax_backward(const Eigen::VectorXd& probs, const Eigen::VectorXd& dprobs);

struct LossAndGradient {
  double loss = 0.0;  // batch mean
  GradientVector grad;  // batch mean
};

/// Mean loss and gradient over `batch` (indices into `inputs`).
/// Throws DivergenceError on a non-finite result.
LossAndGradient grad_params(const DiffClassifier& model, const std::vector<Eigen::VectorXd>& inputs,
                            std::span<const std::size_t> batch, const LossFn& loss);

/// parameters <- parameters - learning_rate * grad.
void sgd_step(DiffClassifier& model, const GradientVector& grad, double learning_rate);

struct SgdConfig {
  double learning_rate = 0.05;
  std::size_t batch_size = 32;
  std::size_t epochs = 100;
};

/// Shuffled mini-batches of [0, n).
std::vector<std::vector<std::size_t>> make_batches(std::size_t n, std::size_t batch_size, Rng& rng);

/// One epoch of plain mini-batch SGD on cross-entropy. Returns the mean
/// batch loss.
double sgd_epoch(DiffClassifier& model, const std::vector<Eigen::VectorXd>& inputs, const std::vector<int>& labels,
                 const SgdConfig& cfg, Rng& rng);

/// Mean cross-entropy over a whole data set.
double mean_ce(const DiffClassifier& model, const std::vector<Eigen::VectorXd>& inputs, const std::vector<int>& labels);

double accuracy(const DiffClassifier& model, const std::vector<Eigen::VectorXd>& inputs, const std::vector<int>& labels);

}  // namespace more
