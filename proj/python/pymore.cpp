#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>

#include "more/commands.hpp"
#include "more/error.hpp"

namespace py = pybind11;
using namespace more;

namespace {

// Values cross the boundary as JSON text; Python's own json module does the
// conversion on its side.
nlohmann::json to_json(const py::handle& obj) {
  const auto text = py::module_::import("json").attr("dumps")(obj).cast<std::string>();
  return nlohmann::json::parse(text);
}

py::object from_json(const nlohmann::json& j) { return py::module_::import("json").attr("loads")(j.dump()); }

py::dict metrics_row(const IterationMetrics& m) {
  py::dict d;
  d["iteration"] = m.iteration;
  d["train_loss"] = m.train_loss;
  d["test_loss"] = m.test_loss;
  d["test_acc"] = m.test_acc;
  d["rule_acc"] = m.rule_acc;
  d["coverage"] = m.coverage;
  d["usage"] = m.usage;
  d["n_rules"] = m.n_rules;
  return d;
}

class PyBundle {
 public:
  explicit PyBundle(const std::filesystem::path& dir) : b_(load_bundle(dir)) {}

  Instance instance(const py::handle& obj) const { return instance_from_json(to_json(obj), b_.model.schema); }

  std::vector<double> predict_proba(const py::handle& obj) const {
    const auto p = mixture_predict(b_.model, instance(obj));
    return {p.data(), p.data() + p.size()};
  }

  std::string predict(const py::handle& obj) const {
    const auto p = mixture_predict(b_.model, instance(obj));
    return b_.model.schema.classes()[argmax(p)];
  }

  py::dict explain_instance(const py::handle& obj) const {
    const auto e = explain(b_, instance(obj));
    py::dict d;
    d["prediction"] = b_.model.schema.classes()[static_cast<std::size_t>(e.predicted)];
    d["from_rule"] = e.from_rule;
    d["rule_id"] = e.from_rule ? py::object(py::int_(e.rule_id)) : py::object(py::none());
    d["gate_rules"] = e.gate_rules;
    d["text"] = e.text;
    return d;
  }

  py::list rules() const {
    py::list out;
    for (const auto& r : b_.model.rules.rules()) {
      py::dict d;
      d["id"] = r.id;
      d["text"] = canonical_text(r, b_.model.schema);
      d["active"] = r.active;
      d["precision"] = r.precision;
      d["iteration"] = r.iteration;
      d["context"] = r.context;
      out.append(d);
    }
    return out;
  }

  py::list metrics() const {
    py::list out;
    for (const auto& m : b_.metrics) out.append(metrics_row(m));
    return out;
  }

  py::object evaluate(const std::filesystem::path& csv, bool hard_gate) const {
    return from_json(evaluate_bundle(b_, load_csv(csv, b_.model.schema), hard_gate).to_json());
  }

  std::vector<std::string> classes() const { return b_.model.schema.classes(); }

 private:
  Bundle b_;
};

}  // namespace

PYBIND11_MODULE(pymore, m) {
  m.doc() = "Train, evaluate and explain grey-box rule/neural mixtures";

  auto base = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<ConfigError>(m, "ConfigError", base.ptr());
  py::register_exception<DataError>(m, "DataError", base.ptr());
  py::register_exception<DivergenceError>(m, "DivergenceError", base.ptr());
  py::register_exception<RefinementUnavailable>(m, "RefinementUnavailable", base.ptr());

  m.def(
      "train",
      [](const std::filesystem::path& config) {
        std::ostringstream sink;
        const auto outcome = [&] {
          py::gil_scoped_release release;
          return cmd_train(load_config(config), sink);
        }();
        return metrics_row(outcome.state.metrics.back());
      },
      py::arg("config"), "Runs discovery from a config file, writes the bundle and returns the final metrics row.");

  py::class_<PyBundle>(m, "Bundle")
      .def(py::init<const std::filesystem::path&>(), py::arg("path"))
      .def_property_readonly("classes", &PyBundle::classes)
      .def("predict_proba", &PyBundle::predict_proba, py::arg("instance"),
           "Mixture class probabilities for a dict keyed by feature name.")
      .def("predict", &PyBundle::predict, py::arg("instance"))
      .def("explain", &PyBundle::explain_instance, py::arg("instance"))
      .def("rules", &PyBundle::rules)
      .def("metrics", &PyBundle::metrics)
      .def("evaluate", &PyBundle::evaluate, py::arg("csv"), py::arg("hard_gate") = false);
}
