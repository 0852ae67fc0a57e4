#include "more/mixture.hpp"

#include <cmath>

#include "more/error.hpp"

namespace more {

namespace {

constexpr double kProbFloor = 1e-12;

Eigen::VectorXd gate_weights(const Eigen::VectorXd& g_probs, bool hard_gate) {
  if (!hard_gate) return g_probs;
  Eigen::VectorXd one_hot = Eigen::VectorXd::Zero(2);
  one_hot[g_probs[1] > 0.5 ? 1 : 0] = 1.0;
  return one_hot;
}

void check_finite(double v, const char* what) {
  if (!std::isfinite(v)) throw DivergenceError(std::string("non-finite ") + what + "; try a smaller learning rate");
}

// f step shared by the DBGD and linear-combination optimizers.
void theta_step(MixtureModel& m, const TrainingView& view, std::span<const std::size_t> batch, double lr) {
  const auto lg = grad_params(m.f, view.inputs, batch, mixture_theta_loss(m.g, view));
  sgd_step(m.f, lg.grad, lr);
}

struct GateAccumulation {
  GradientVector interp;
  GradientVector task;
  std::size_t covered = 0;
};

GateAccumulation accumulate_gate(const MixtureModel& m, const TrainingView& view, std::span<const std::size_t> batch) {
  const auto p = static_cast<Eigen::Index>(m.g.num_parameters());
  GateAccumulation acc{GradientVector::Zero(p), GradientVector::Zero(p), 0};
  for (auto i : batch) {
    if (!view.covered[i]) continue;
    ++acc.covered;
    acc.interp += interpretability_gradient(m.g, view.inputs[i]);
    acc.task += gate_task_gradient(m.f, m.g, view, i);
  }
  const double scale = 1.0 / static_cast<double>(batch.size());
  acc.interp *= scale;
  acc.task *= scale;
  if (!acc.interp.allFinite() || !acc.task.allFinite()) {
    throw DivergenceError("non-finite gate gradient; try a smaller learning rate");
  }
  return acc;
}

}  // namespace

Eigen::VectorXd mix(const Eigen::VectorXd& f_probs, const Eigen::VectorXd& g_probs, const Eigen::VectorXd& rule_out,
                    bool hard_gate) {
  if (rule_out.sum() != 1.0) return f_probs;
  const auto w = gate_weights(g_probs, hard_gate);
  return w[0] * f_probs + w[1] * rule_out;
}

Eigen::VectorXd mixture_predict(const MixtureModel& m, const Instance& x) {
  const auto enc = encode(x, m.standardizer, m.schema);
  const auto r = rule_predict(m.rules, x, m.standardizer, m.schema);
  return mix(m.f.forward(enc), m.g.forward(enc), r, m.hard_gate);
}

double interpretability_loss(const DiffClassifier& g, const Eigen::VectorXd& x) {
  return -std::log(std::clamp(g.forward(x)[1], kProbFloor, 1.0));
}

TrainingView make_view(const MixtureModel& m, const Dataset& data) {
  TrainingView view;
  view.inputs = encode_all(data, m.standardizer);
  view.labels = data.labels;
  view.rule_outputs.reserve(data.size());
  view.covered.reserve(data.size());
  for (const auto& x : data.rows) {
    auto r = rule_predict(m.rules, x, m.standardizer, m.schema);
    view.covered.push_back(r.sum() > 0.0);
    view.rule_outputs.push_back(std::move(r));
  }
  return view;
}

double mixture_sample_loss(const DiffClassifier& f, const DiffClassifier& g, const TrainingView& view, std::size_t i) {
  const auto fp = f.forward(view.inputs[i]);
  if (!view.covered[i]) return ce_loss(fp, view.labels[i]);
  return ce_loss(mix(fp, g.forward(view.inputs[i]), view.rule_outputs[i], false), view.labels[i]);
}

double mixture_loss(const DiffClassifier& f, const DiffClassifier& g, const TrainingView& view) {
  double total = 0.0;
  for (std::size_t i = 0; i < view.size(); ++i) total += mixture_sample_loss(f, g, view, i);
  return view.size() == 0 ? 0.0 : total / static_cast<double>(view.size());
}

GradientVector interpretability_gradient(const DiffClassifier& g, const Eigen::VectorXd& x) {
  const auto gp = g.forward(x);
  Eigen::VectorXd dprobs = Eigen::VectorXd::Zero(2);
  if (gp[1] > kProbFloor) dprobs[1] = -1.0 / gp[1];
  GradientVector grad = GradientVector::Zero(static_cast<Eigen::Index>(g.num_parameters()));
  g.backward(x, softmax_backward(gp, dprobs), grad);
  return grad;
}

GradientVector gate_task_gradient(const DiffClassifier& f, const DiffClassifier& g, const TrainingView& view,
                                  std::size_t i) {
  GradientVector grad = GradientVector::Zero(static_cast<Eigen::Index>(g.num_parameters()));
  if (!view.covered[i]) return grad;
  const auto& x = view.inputs[i];
  const int y = view.labels[i];
  const auto fp = f.forward(x);
  const auto gp = g.forward(x);
  const double mixed = gp[0] * fp[y] + gp[1] * view.rule_outputs[i][y];
  if (mixed <= kProbFloor) return grad;
  Eigen::VectorXd dprobs(2);
  dprobs << -fp[y] / mixed, -view.rule_outputs[i][y] / mixed;
  g.backward(x, softmax_backward(gp, dprobs), grad);
  return grad;
}

LossFn mixture_theta_loss(const DiffClassifier& g, const TrainingView& view) {
  return [&g, &view](std::size_t i, const Eigen::VectorXd& probs, Eigen::VectorXd& dprobs) {
    const int y = view.labels[i];
    if (!view.covered[i]) {
      if (probs[y] > kProbFloor) dprobs[y] = -1.0 / probs[y];
      return ce_loss(probs, y);
    }
    const auto gp = g.forward(view.inputs[i]);
    const double mixed = gp[0] * probs[y] + gp[1] * view.rule_outputs[i][y];
    if (mixed > kProbFloor) dprobs[y] = -gp[0] / mixed;
    return -std::log(std::max(mixed, kProbFloor));
  };
}

nlohmann::json BaselineSnapshot::to_json() const { return {{"train_loss", train_loss}, {"model", f.to_json()}}; }

BaselineSnapshot BaselineSnapshot::from_json(const nlohmann::json& j) {
  try {
    return {DiffClassifier::from_json(j.at("model")), j.at("train_loss").get<double>()};
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("baseline JSON: ") + e.what());
  }
}

BaselineSnapshot init_train(DiffClassifier& f, const std::vector<Eigen::VectorXd>& inputs,
                            const std::vector<int>& labels, const SgdConfig& cfg, Rng& rng) {
  if (inputs.empty()) throw DataError("initial training needs a non-empty training set");
  for (std::size_t e = 0; e < cfg.epochs; ++e) {
    try {
      check_finite(sgd_epoch(f, inputs, labels, cfg, rng), "training loss");
    } catch (const DivergenceError&) {
      throw DivergenceError("initial training diverged in epoch " + std::to_string(e + 1) +
                            "; try a smaller learning rate");
    }
  }
  const double loss = mean_ce(f, inputs, labels);
  check_finite(loss, "baseline loss");
  return {f, loss};
}

void DbgdConfig::validate() const {
  if (!(epsilon >= 0.0)) throw ConfigError("dbgd epsilon must be >= 0");
  if (!(alpha > 0.0) || !(beta > 0.0)) throw ConfigError("dbgd alpha and beta must be > 0");
  if (!(delta > 0.0)) throw ConfigError("dbgd delta must be > 0");
  if (!(learning_rate > 0.0)) throw ConfigError("dbgd learning rate must be > 0");
  if (batch_size == 0) throw ConfigError("dbgd batch size must be > 0");
}

double compute_phi(double batch_loss, double baseline_batch_loss, const GradientVector& task_grad,
                   const DbgdConfig& cfg) {
  const double violation = cfg.alpha * (batch_loss - (1.0 + cfg.epsilon) * baseline_batch_loss);
  return std::min(violation, cfg.beta * task_grad.squaredNorm());
}

double compute_lambda(const GradientVector& interp_grad, const GradientVector& task_grad, double phi, double delta) {
  const double norm_sq = task_grad.squaredNorm();
  if (norm_sq < delta) return 0.0;
  return std::max((phi - interp_grad.dot(task_grad)) / std::max(norm_sq, delta), 0.0);
}

std::vector<DbgdStepTrace> dbgd_epoch(MixtureModel& m, const TrainingView& view, const BaselineSnapshot& baseline,
                                      const DbgdConfig& cfg, Rng& rng, std::size_t epoch_index) {
  cfg.validate();
  std::vector<DbgdStepTrace> traces;
  const auto batches = make_batches(view.size(), cfg.batch_size, rng);
  for (std::size_t b = 0; b < batches.size(); ++b) {
    const auto& batch = batches[b];
    theta_step(m, view, batch, cfg.learning_rate);

    auto acc = accumulate_gate(m, view, batch);
    DbgdStepTrace t;
    t.epoch = epoch_index;
    t.batch = b;
    t.covered = acc.covered;
    for (auto i : batch) {
      t.batch_loss += mixture_sample_loss(m.f, m.g, view, i);
      t.baseline_batch_loss += ce_loss(baseline.f.forward(view.inputs[i]), view.labels[i]);
    }
    t.batch_loss /= static_cast<double>(batch.size());
    t.baseline_batch_loss /= static_cast<double>(batch.size());
    t.phi = compute_phi(t.batch_loss, t.baseline_batch_loss, acc.task, cfg);
    t.interp_dot_task = acc.interp.dot(acc.task);
    t.task_norm_sq = acc.task.squaredNorm();
    t.lambda = acc.covered > 0 ? compute_lambda(acc.interp, acc.task, t.phi, cfg.delta) : 0.0;
    check_finite(t.phi, "barrier value");
    check_finite(t.lambda, "barrier coefficient");
    check_finite(t.batch_loss, "mixture loss");

    if (acc.covered > 0) {
      sgd_step(m.g, acc.interp + t.lambda * acc.task, cfg.learning_rate);
    }
    if (cfg.record_gradients) {
      t.interp_grad = std::move(acc.interp);
      t.task_grad = std::move(acc.task);
    }
    traces.push_back(std::move(t));
  }
  return traces;
}

void linear_combo_epoch(MixtureModel& m, const TrainingView& view, double lambda_static, const DbgdConfig& cfg,
                        Rng& rng) {
  if (!(lambda_static >= 0.0)) throw ConfigError("static lambda must be >= 0");
  const auto batches = make_batches(view.size(), cfg.batch_size, rng);
  for (const auto& batch : batches) {
    theta_step(m, view, batch, cfg.learning_rate);
    auto acc = accumulate_gate(m, view, batch);
    if (acc.covered > 0) sgd_step(m.g, acc.interp + lambda_static * acc.task, cfg.learning_rate);
  }
}

}  // namespace more
