#include "more/model.hpp"

#include <cmath>
#include <numeric>
#include <string>

#include "more/error.hpp"

namespace more {

namespace {

constexpr double kProbFloor = 1e-12;

std::vector<std::size_t> layer_sizes(const Architecture& arch) {
  std::vector<std::size_t> sizes{arch.input_dim};
  sizes.insert(sizes.end(), arch.hidden.begin(), arch.hidden.end());
  sizes.push_back(arch.output_dim);
  return sizes;
}

void check_architecture(const Architecture& arch) {
  if (arch.input_dim == 0) throw DataError("model input dimension must be positive");
  if (arch.output_dim < 2) throw DataError("model output dimension must be at least 2");
  for (auto h : arch.hidden) {
    if (h == 0) throw DataError("hidden layer sizes must be positive");
  }
}

}  // namespace

DiffClassifier::DiffClassifier(Architecture arch, Rng& rng) : arch_(std::move(arch)) {
  check_architecture(arch_);
  const auto sizes = layer_sizes(arch_);
  for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
    const auto in = static_cast<Eigen::Index>(sizes[l]);
    const auto out = static_cast<Eigen::Index>(sizes[l + 1]);
    const double r = 1.0 / std::sqrt(static_cast<double>(in));
    Layer layer{Eigen::MatrixXd(out, in), Eigen::VectorXd(out)};
    for (Eigen::Index i = 0; i < out; ++i) {
      for (Eigen::Index j = 0; j < in; ++j) layer.weights(i, j) = rng.uniform(-r, r);
    }
    for (Eigen::Index i = 0; i < out; ++i) layer.bias[i] = rng.uniform(-r, r);
    layers_.push_back(std::move(layer));
  }
}

DiffClassifier DiffClassifier::zeros(Architecture arch) {
  check_architecture(arch);
  DiffClassifier model;
  model.arch_ = std::move(arch);
  const auto sizes = layer_sizes(model.arch_);
  for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
    const auto in = static_cast<Eigen::Index>(sizes[l]);
    const auto out = static_cast<Eigen::Index>(sizes[l + 1]);
    model.layers_.push_back(Layer{Eigen::MatrixXd::Zero(out, in), Eigen::VectorXd::Zero(out)});
  }
  return model;
}

std::size_t DiffClassifier::num_parameters() const {
  std::size_t n = 0;
  for (const auto& l : layers_) n += static_cast<std::size_t>(l.weights.size() + l.bias.size());
  return n;
}

void DiffClassifier::check_input(const Eigen::VectorXd& x) const {
  if (static_cast<std::size_t>(x.size()) != arch_.input_dim) {
    throw DataError("input has dimension " + std::to_string(x.size()) + ", model expects " +
                    std::to_string(arch_.input_dim));
  }
}

Eigen::VectorXd DiffClassifier::logits(const Eigen::VectorXd& x) const {
  check_input(x);
  Eigen::VectorXd a = x;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    Eigen::VectorXd z = layers_[l].weights * a + layers_[l].bias;
    a = (l + 1 < layers_.size()) ? Eigen::VectorXd(z.array().tanh()) : z;
  }
  return a;
}

Eigen::VectorXd DiffClassifier::forward(const Eigen::VectorXd& x) const { return softmax(logits(x)); }

void DiffClassifier::backward(const Eigen::VectorXd& x, const Eigen::VectorXd& dlogits, GradientVector& grad) const {
  check_input(x);
  // Forward pass keeping every layer input.
  std::vector<Eigen::VectorXd> acts;
  acts.reserve(layers_.size());
  acts.push_back(x);
  for (std::size_t l = 0; l + 1 < layers_.size(); ++l) {
    acts.push_back((layers_[l].weights * acts.back() + layers_[l].bias).array().tanh().matrix());
  }

  std::vector<Eigen::Index> offsets(layers_.size());
  Eigen::Index off = 0;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    offsets[l] = off;
    off += layers_[l].weights.size() + layers_[l].bias.size();
  }

  Eigen::VectorXd delta = dlogits;
  for (std::size_t l = layers_.size(); l-- > 0;) {
    const auto& layer = layers_[l];
    const auto rows = layer.weights.rows();
    const auto cols = layer.weights.cols();
    Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> gw(
        grad.data() + offsets[l], rows, cols);
    gw.noalias() += delta * acts[l].transpose();
    grad.segment(offsets[l] + rows * cols, rows) += delta;
    if (l > 0) {
      Eigen::VectorXd back = layer.weights.transpose() * delta;
      delta = back.array() * (1.0 - acts[l].array().square());
    }
  }
}

GradientVector DiffClassifier::parameters() const {
  GradientVector flat(static_cast<Eigen::Index>(num_parameters()));
  Eigen::Index off = 0;
  for (const auto& l : layers_) {
    Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
        flat.data() + off, l.weights.rows(), l.weights.cols()) = l.weights;
    off += l.weights.size();
    flat.segment(off, l.bias.size()) = l.bias;
    off += l.bias.size();
  }
  return flat;
}

void DiffClassifier::set_parameters(const GradientVector& flat) {
  if (static_cast<std::size_t>(flat.size()) != num_parameters()) {
    throw DataError("parameter vector has " + std::to_string(flat.size()) + " entries, model has " +
                    std::to_string(num_parameters()));
  }
  Eigen::Index off = 0;
  for (auto& l : layers_) {
    l.weights = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
        flat.data() + off, l.weights.rows(), l.weights.cols());
    off += l.weights.size();
    l.bias = flat.segment(off, l.bias.size());
    off += l.bias.size();
  }
}

nlohmann::json DiffClassifier::to_json() const {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& l : layers_) {
    std::vector<double> w;
    w.reserve(static_cast<std::size_t>(l.weights.size()));
    for (Eigen::Index i = 0; i < l.weights.rows(); ++i) {
      for (Eigen::Index j = 0; j < l.weights.cols(); ++j) w.push_back(l.weights(i, j));
    }
    layers.push_back({{"rows", l.weights.rows()},
                      {"cols", l.weights.cols()},
                      {"weights", w},
                      {"bias", std::vector<double>(l.bias.data(), l.bias.data() + l.bias.size())}});
  }
  return {{"architecture",
           {{"input_dim", arch_.input_dim},
            {"hidden", arch_.hidden},
            {"output_dim", arch_.output_dim},
            {"activation", "tanh"},
            {"type", arch_.hidden.empty() ? "lr" : "mlp"}}},
          {"layers", layers}};
}

DiffClassifier DiffClassifier::from_json(const nlohmann::json& j) {
  try {
    const auto& ja = j.at("architecture");
    Architecture arch{ja.at("input_dim").get<std::size_t>(), ja.at("hidden").get<std::vector<std::size_t>>(),
                      ja.at("output_dim").get<std::size_t>()};
    auto model = zeros(arch);
    const auto& jl = j.at("layers");
    if (jl.size() != model.layers_.size()) throw DataError("model JSON: layer count does not match architecture");
    for (std::size_t l = 0; l < model.layers_.size(); ++l) {
      auto& layer = model.layers_[l];
      const auto w = jl[l].at("weights").get<std::vector<double>>();
      const auto b = jl[l].at("bias").get<std::vector<double>>();
      if (jl[l].at("rows").get<Eigen::Index>() != layer.weights.rows() ||
          jl[l].at("cols").get<Eigen::Index>() != layer.weights.cols() ||
          w.size() != static_cast<std::size_t>(layer.weights.size()) ||
          b.size() != static_cast<std::size_t>(layer.bias.size())) {
        throw DataError("model JSON: layer " + std::to_string(l) + " shape does not match architecture");
      }
      std::size_t k = 0;
      for (Eigen::Index r = 0; r < layer.weights.rows(); ++r) {
        for (Eigen::Index c = 0; c < layer.weights.cols(); ++c) layer.weights(r, c) = w[k++];
      }
      for (std::size_t i = 0; i < b.size(); ++i) layer.bias[static_cast<Eigen::Index>(i)] = b[i];
    }
    return model;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("model JSON: ") + e.what());
  }
}

bool DiffClassifier::operator==(const DiffClassifier& other) const {
  if (!(arch_ == other.arch_) || layers_.size() != other.layers_.size()) return false;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    if (layers_[l].weights != other.layers_[l].weights || layers_[l].bias != other.layers_[l].bias) return false;
  }
  return true;
}

Eigen::VectorXd softmax(const Eigen::VectorXd& logits) {
  const double m = logits.maxCoeff();
  Eigen::VectorXd e = (logits.array() - m).exp();
  return e / e.sum();
}

double ce_loss(const Eigen::VectorXd& probs, int y) {
  return -std::log(std::max(probs[y], kProbFloor));
}

double predictive_entropy(const Eigen::VectorXd& probs) {
  double h = 0.0;
  for (Eigen::Index i = 0; i < probs.size(); ++i) {
    if (probs[i] > 0.0) h -= probs[i] * std::log(probs[i]);
  }
  return h;
}

std::size_t argmax(const Eigen::VectorXd& v) {
  Eigen::Index best = 0;
  v.maxCoeff(&best);
  return static_cast<std::size_t>(best);
}

LossFn ce_loss_fn(const std::vector<int>& labels) {
  return [&labels](std::size_t sample, const Eigen::VectorXd& probs, Eigen::VectorXd& dprobs) {
    const int y = labels[sample];
    if (probs[y] > kProbFloor) dprobs[y] = -1.0 / probs[y];
    return ce_loss(probs, y);
  };
}

Eigen::VectorXd softmax_backward(const Eigen::VectorXd& probs, const Eigen::VectorXd& dprobs) {
  const double inner = probs.dot(dprobs);
  return (probs.array() * (dprobs.array() - inner)).matrix();
}

LossAndGradient grad_params(const DiffClassifier& model, const std::vector<Eigen::VectorXd>& inputs,
                            std::span<const std::size_t> batch, const LossFn& loss) {
  if (batch.empty()) throw DataError("gradient requested for an empty batch");
  LossAndGradient out{0.0, GradientVector::Zero(static_cast<Eigen::Index>(model.num_parameters()))};
  Eigen::VectorXd dprobs(static_cast<Eigen::Index>(model.output_dim()));
  for (auto i : batch) {
    const auto probs = model.forward(inputs[i]);
    dprobs.setZero();
    out.loss += loss(i, probs, dprobs);
    model.backward(inputs[i], softmax_backward(probs, dprobs), out.grad);
  }
  const double scale = 1.0 / static_cast<double>(batch.size());
  out.loss *= scale;
  out.grad *= scale;
  if (!std::isfinite(out.loss) || !out.grad.allFinite()) {
    throw DivergenceError("non-finite loss or gradient; try a smaller learning rate");
  }
  return out;
}

void sgd_step(DiffClassifier& model, const GradientVector& grad, double learning_rate) {
  if (static_cast<std::size_t>(grad.size()) != model.num_parameters()) {
    throw DataError("gradient dimension does not match the model");
  }
  Eigen::Index off = 0;
  for (auto& l : model.layers()) {
    l.weights -= learning_rate * Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
                                     grad.data() + off, l.weights.rows(), l.weights.cols());
    off += l.weights.size();
    l.bias -= learning_rate * grad.segment(off, l.bias.size());
    off += l.bias.size();
  }
}

std::vector<std::vector<std::size_t>> make_batches(std::size_t n, std::size_t batch_size, Rng& rng) {
  if (batch_size == 0) throw DataError("batch size must be positive");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  rng.shuffle(order);
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t start = 0; start < n; start += batch_size) {
    const auto end = std::min(n, start + batch_size);
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                         order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return batches;
}

double sgd_epoch(DiffClassifier& model, const std::vector<Eigen::VectorXd>& inputs, const std::vector<int>& labels,
                 const SgdConfig& cfg, Rng& rng) {
  const auto loss = ce_loss_fn(labels);
  double total = 0.0;
  const auto batches = make_batches(inputs.size(), cfg.batch_size, rng);
  for (const auto& batch : batches) {
    auto lg = grad_params(model, inputs, batch, loss);
    sgd_step(model, lg.grad, cfg.learning_rate);
    total += lg.loss;
  }
  return batches.empty() ? 0.0 : total / static_cast<double>(batches.size());
}

double mean_ce(const DiffClassifier& model, const std::vector<Eigen::VectorXd>& inputs, const std::vector<int>& labels) {
  double total = 0.0;
  for (std::size_t i = 0; i < inputs.size(); ++i) total += ce_loss(model.forward(inputs[i]), labels[i]);
  return inputs.empty() ? 0.0 : total / static_cast<double>(inputs.size());
}

double accuracy(const DiffClassifier& model, const std::vector<Eigen::VectorXd>& inputs, const std::vector<int>& labels) {
  std::size_t hits = 0;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    if (static_cast<int>(argmax(model.forward(inputs[i]))) == labels[i]) ++hits;
  }
  return inputs.empty() ? 0.0 : static_cast<double>(hits) / static_cast<double>(inputs.size());
}

}  // namespace more
