#include "hardpinn/runner.hpp"

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <memory>

namespace py = pybind11;
using namespace hardpinn;

namespace {

// A model built from a config: the ansatz plus its training objective.
class Model {
 public:
  explicit Model(const std::string& config)
      : config_(cli::parse_config(config, "config")),
        ansatz_(std::make_unique<ansatz::Ansatz>(cli::make_problem(config_.problem), config_.ansatz_options())),
        objective_(std::make_unique<train::Objective>(
            *ansatz_, train::sample_training_data(*ansatz_, config_.sample_sizes(), config_.seed))) {}

  std::vector<double> parameters() const { return ansatz_->parameters(); }

  void set_parameters(const std::vector<double>& theta) {
    if (theta.size() != ansatz_->parameter_count()) throw py::value_error("wrong parameter count");
    ansatz_->set_parameters(theta);
  }

  Eigen::MatrixXd predict(const Eigen::MatrixXd& xt) const {
    if (xt.rows() != ansatz_->directions()) throw py::value_error("inputs must have one row per coordinate");
    return ansatz_->predict(xt);
  }

  py::tuple loss(const std::vector<double>& theta) {
    if (theta.size() != objective_->size()) throw py::value_error("wrong parameter count");
    std::vector<double> grad(theta.size());
    const auto l = objective_->evaluate(theta, grad);
    py::dict groups;
    for (const auto& [name, value] : l.groups) groups[py::str(name)] = value;
    groups["total"] = l.total;
    return py::make_tuple(l.total, grad, groups);
  }

  py::list boundary_report(int n, std::uint64_t seed) const {
    py::list out;
    for (const auto& r : ansatz_->boundary_report(n, seed)) {
      py::dict d;
      d["label"] = r.label;
      d["max_residual"] = r.max_residual;
      d["bound"] = r.bound;
      out.append(d);
    }
    return out;
  }

  int directions() const { return ansatz_->directions(); }

 private:
  cli::RunConfig config_;
  std::unique_ptr<ansatz::Ansatz> ansatz_;
  std::unique_ptr<train::Objective> objective_;
};

py::dict outcome(const cli::RunOutcome& o) {
  py::dict d;
  d["dir"] = o.dir;
  d["final_loss"] = o.result.final_loss.total;
  d["parameters"] = o.parameters;
  py::dict metrics;
  if (o.metrics) {
    for (const auto& s : o.metrics->slices) {
      py::dict fields;
      for (std::size_t f = 0; f < s.fields.size(); ++f) {
        py::dict e;
        e["mae"] = s.fields[f].mae;
        e["mape"] = s.fields[f].mape;
        e["wmape"] = s.fields[f].wmape;
        fields[py::str(o.metrics->field_names[f])] = e;
      }
      metrics[py::str(s.slice)] = fields;
    }
  }
  d["metrics"] = metrics;
  py::list boundary;
  for (const auto& r : o.boundary) {
    py::dict b;
    b["label"] = r.label;
    b["max_residual"] = r.max_residual;
    b["bound"] = r.bound;
    boundary.append(b);
  }
  d["boundary"] = boundary;
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "C++ core of hardpinn";
  py::register_exception<cli::ConfigError>(m, "ConfigError", PyExc_ValueError);

  m.def("householder_basis", [](const Eigen::VectorXd& n) { return bc::householder_basis(n); }, py::arg("n"),
        "I - n n^T for a unit vector n.");
  m.def(
      "general_solution",
      [](const std::vector<double>& n, double g, const std::vector<double>& v) {
        if (n.size() != v.size()) throw py::value_error("n and v must have the same length");
        return bc::general_solution<double, double>(n, g, v);
      },
      py::arg("n"), py::arg("g"), py::arg("v"), "Point p with n . p = g, moved from v along the plane.");

  m.def("canonical_config", [](const std::string& text) { return cli::serialize(cli::parse_config(text)); },
        py::arg("config"), "Validated config with every default filled in, as JSON text.");

  m.def(
      "run",
      [](const std::string& text, const std::filesystem::path& dir) {
        const auto c = cli::parse_config(text);
        cli::RunOutcome o;
        {
          py::gil_scoped_release release;
          o = cli::run(c, dir);
        }
        return outcome(o);
      },
      py::arg("config"), py::arg("output_dir"));

  m.def(
      "ablate",
      [](const std::string& text, const std::filesystem::path& dir) {
        const auto c = cli::parse_config(text);
        cli::AblationOutcome a;
        {
          py::gil_scoped_release release;
          a = cli::ablate(c, dir);
        }
        py::dict d;
        d["original"] = outcome(a.original);
        d["extra"] = outcome(a.extra);
        py::list ratio;
        for (const auto& r : a.ratio) ratio.append(r ? py::cast(*r) : py::none());
        d["ratio"] = ratio;
        d["warmup"] = a.warmup;
        d["fraction_above_one"] = a.fraction_above_one;
        return d;
      },
      py::arg("config"), py::arg("output_dir"));

  py::class_<Model>(m, "Model")
      .def(py::init<const std::string&>(), py::arg("config"))
      .def_property_readonly("directions", &Model::directions)
      .def("parameters", &Model::parameters)
      .def("set_parameters", &Model::set_parameters, py::arg("theta"))
      .def("predict", &Model::predict, py::arg("xt"), "Outputs (components x N) at inputs (coordinates x N).")
      .def("loss", &Model::loss, py::arg("theta"), "(total, gradient, per-group losses)")
      .def("boundary_report", &Model::boundary_report, py::arg("n") = 1000, py::arg("seed") = 0);
}
