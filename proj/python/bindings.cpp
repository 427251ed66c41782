#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fvnce/experiment.hpp"
#include "fvnce/oracle.hpp"
#include "fvnce/psr.hpp"

namespace py = pybind11;
using fvnce::psr::ScoringPair;

namespace {

fvnce::cli::RunConfig parse_config(const std::string& text) {
  return fvnce::cli::config_from_json(text.empty() ? nlohmann::json::object() : nlohmann::json::parse(text));
}

py::dict metrics_dict(const std::vector<fvnce::cli::MetricsRow>& rows) {
  std::vector<int> epoch;
  std::vector<double> loss, data, noise, diff, dd, dn;
  std::vector<std::size_t> clip;
  for (const auto& r : rows) {
    epoch.push_back(r.epoch);
    loss.push_back(r.loss);
    data.push_back(r.data_loglik);
    noise.push_back(r.noise_loglik);
    diff.push_back(r.difference);
    clip.push_back(r.clip_count);
    dd.push_back(r.mean_delta_data);
    dn.push_back(r.mean_delta_noise);
  }
  py::dict d;
  d["epoch"] = epoch;
  d["loss"] = loss;
  d["data_loglik"] = data;
  d["noise_loglik"] = noise;
  d["difference"] = diff;
  d["clip_count"] = clip;
  d["mean_delta_data"] = dd;
  d["mean_delta_noise"] = dn;
  return d;
}

// Applies f elementwise; floats in, float out; arrays in, array out.
template <class F>
auto elementwise(F f) {
  return [f](const ScoringPair& p, const py::object& x) -> py::object {
    if (py::isinstance<py::float_>(x) || py::isinstance<py::int_>(x)) return py::float_(f(p, x.cast<double>()));
    auto in = py::array_t<double, py::array::c_style | py::array::forcecast>::ensure(x);
    if (!in) throw py::type_error("expected a float or an array of floats");
    py::array_t<double> out(in.request().shape);
    const double* src = in.data();
    double* dst = out.mutable_data();
    for (py::ssize_t i = 0; i < in.size(); ++i) dst[i] = f(p, src[i]);
    return std::move(out);
  };
}

}  // namespace

PYBIND11_MODULE(_fvnce, m) {
  m.doc() = "Scoring rules, exact oracles and training drivers";

  py::class_<ScoringPair>(m, "ScoringPair")
      .def(py::init<double, double, bool>(), py::arg("alpha"), py::arg("beta"), py::arg("normalized") = false)
      .def_property_readonly("normalized", &ScoringPair::normalized)
      .def("describe", &ScoringPair::describe)
      .def("__repr__", [](const ScoringPair& p) { return "ScoringPair(" + p.describe() + ")"; })
      .def("f1", elementwise([](const ScoringPair& p, double r) { return fvnce::psr::eval_f1(p, r); }))
      .def("f0", elementwise([](const ScoringPair& p, double r) { return fvnce::psr::eval_f0(p, r); }))
      .def("grad_f1", elementwise([](const ScoringPair& p, double r) { return fvnce::psr::grad_f1(p, r); }))
      .def("grad_f0", elementwise([](const ScoringPair& p, double r) { return fvnce::psr::grad_f0(p, r); }))
      .def("G", elementwise([](const ScoringPair& p, double mu) { return fvnce::psr::eval_G(p, mu); }))
      .def("G_second",
           elementwise([](const ScoringPair& p, double mu) { return fvnce::psr::eval_G_second(p, mu); }))
      .def("logit_loss", [](const ScoringPair& p, int outcome, double delta, double threshold) {
             if (outcome != 0 && outcome != 1) throw py::value_error("outcome must be 0 or 1");
             return fvnce::psr::logit_loss(p, static_cast<fvnce::psr::Outcome>(outcome), delta, threshold);
           },
           py::arg("outcome"), py::arg("delta"), py::arg("threshold") = fvnce::psr::kDefaultClip);

  m.def("combine", [](const std::vector<ScoringPair>& pairs, const std::vector<double>& weights) {
    return fvnce::psr::combine(pairs, weights);
  });
  m.def("stabilized_pair", &fvnce::psr::stabilized_pair, py::arg("alpha"), py::arg("normalized") = true);
  m.def("exp_clipped", py::vectorize([](double u, double t) { return fvnce::psr::exp_clipped(u, t); }),
        py::arg("u"), py::arg("threshold") = fvnce::psr::kDefaultClip);

  m.def("_verify_report", [] { return fvnce::oracle::verify_report().dump(); });
  m.def("_default_config", [] { return fvnce::cli::to_json(fvnce::cli::RunConfig{}).dump(); });
  m.def(
      "_train",
      [](const std::string& config) {
        fvnce::cli::RunConfig cfg = parse_config(config);
        cfg.validate();
        fvnce::cli::TrainResult res;
        {
          py::gil_scoped_release release;
          res = fvnce::cli::train(fvnce::cli::prepare(cfg));
        }
        return metrics_dict(res.rows);
      },
      py::arg("config"));
  m.def(
      "_sweep",
      [](const std::string& config) {
        fvnce::cli::RunConfig cfg = parse_config(config);
        cfg.out_dir.clear();
        cfg.validate();
        std::vector<fvnce::cli::SweepRow> rows;
        {
          py::gil_scoped_release release;
          rows = fvnce::cli::run_sweep(cfg);
        }
        py::list out;
        for (const auto& r : rows) {
          py::dict d;
          d["seed"] = r.seed;
          d["variant"] = r.variant;
          d["data_loglik"] = r.final.data_loglik;
          d["noise_loglik"] = r.final.noise_loglik;
          d["difference"] = r.final.difference;
          d["initial_hash"] = r.initial_hash;
          out.append(d);
        }
        return out;
      },
      py::arg("config"));
}
