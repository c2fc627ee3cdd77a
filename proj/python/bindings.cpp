#include <pybind11/eigen.h>
#include <pybind11/functional.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "qualsynth/error.hpp"
#include "qualsynth/inference.hpp"
#include "qualsynth/io.hpp"
#include "qualsynth/pipeline.hpp"
#include "qualsynth/residualizer.hpp"
#include "qualsynth/sampler.hpp"
#include "qualsynth/simgen.hpp"
#include "qualsynth/synth.hpp"
#include "qualsynth/trend_filter.hpp"

namespace py = pybind11;
using namespace qualsynth;

namespace {

py::array_t<double> to_array(const std::vector<double>& v) { return py::array_t<double>(v.size(), v.data()); }

py::dict series_dict(const YearSeries& s) {
  py::dict d;
  d["first_year"] = s.first_year;
  d["values"] = to_array(s.values);
  return d;
}

// region x year matrix of one outcome.
py::array_t<double> outcome_matrix(const PanelDataset& ds, std::size_t outcome) {
  py::array_t<double> out({ds.n_regions(), ds.n_years()});
  auto m = out.mutable_unchecked<2>();
  for (std::size_t r = 0; r < ds.n_regions(); ++r)
    for (std::size_t t = 0; t < ds.n_years(); ++t) m(r, t) = ds.value(r, outcome, ds.years().first + static_cast<int>(t));
  return out;
}

std::size_t outcome_of(const PanelDataset& ds, const py::object& outcome) {
  if (py::isinstance<py::str>(outcome)) return ds.outcome_index(outcome.cast<std::string>());
  return outcome.cast<std::size_t>();
}

std::size_t region_of(const PanelDataset& ds, const py::object& region) {
  if (py::isinstance<py::str>(region)) return ds.region_index(region.cast<std::string>());
  return region.cast<std::size_t>();
}

py::dict solution_dict(const SynthSolution& s) {
  py::dict d;
  d["treated"] = s.treated.code;
  d["outcome"] = s.outcome.name;
  d["t0"] = s.t0;
  py::dict w;
  for (const auto& [code, weight] : s.weights.sorted()) w[py::str(code)] = weight;
  d["weights"] = w;
  py::dict v;
  for (std::size_t k = 0; k < s.v.predictors.size(); ++k) v[py::str(s.v.predictors[k])] = s.v.diag[k];
  d["v"] = v;
  d["observed"] = series_dict(s.observed);
  d["synthetic"] = series_dict(s.synthetic_path);
  d["gaps"] = series_dict(s.gaps.values);
  d["rmse_pre"] = s.rmse_pre;
  d["rmse_post"] = s.rmse_post;
  d["warnings"] = s.warnings;
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Synthetic-control analysis of latent regional quality series";
  m.attr("__version__") = QUALSYNTH_VERSION;

  static py::exception<Error> error_type(m, "QualsynthError", PyExc_RuntimeError);
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      py::object exc = py::handle(error_type.ptr())(e.what());
      exc.attr("code") = std::string(to_string(e.code()));
      PyErr_SetObject(error_type.ptr(), exc.ptr());
    }
  });

  py::class_<PanelDataset>(m, "Panel")
      .def_property_readonly("regions",
                             [](const PanelDataset& ds) {
                               std::vector<std::string> codes;
                               for (const auto& r : ds.regions()) codes.push_back(r.code);
                               return codes;
                             })
      .def_property_readonly("treated",
                             [](const PanelDataset& ds) {
                               std::vector<bool> t;
                               for (const auto& r : ds.regions()) t.push_back(r.treated);
                               return t;
                             })
      .def_property_readonly("years", [](const PanelDataset& ds) { return py::make_tuple(ds.years().first, ds.years().last); })
      .def_property_readonly("outcomes",
                             [](const PanelDataset& ds) {
                               std::vector<std::string> names;
                               for (const auto& o : ds.outcomes()) names.push_back(o.name);
                               return names;
                             })
      .def_property_readonly("covariate_names", &PanelDataset::covariate_names)
      .def_property_readonly("t0", &PanelDataset::t0)
      .def("values", [](const PanelDataset& ds, const py::object& o) { return outcome_matrix(ds, outcome_of(ds, o)); },
           py::arg("outcome") = 0, "Region x year matrix of one outcome.")
      .def("covariate", [](const PanelDataset& ds, const py::object& r, const std::string& name) {
        return ds.covariate(region_of(ds, r), name);
      })
      .def("to_csv", [](const PanelDataset& ds) { return panel_to_csv(ds); })
      .def("with_t0", &PanelDataset::with_t0)
      .def("__len__", &PanelDataset::n_regions);

  m.def("load_panel", [](const std::filesystem::path& path, int t0) { return ingest_panel(path, ColumnSchema{}, t0); },
        py::arg("path"), py::arg("t0"));
  m.def("parse_panel", [](const std::string& text, int t0) { return parse_panel(text, ColumnSchema{}, t0); },
        py::arg("text"), py::arg("t0"));

  m.def(
      "simgen",
      [](const std::string& config_json) {
        auto sim = generate(dgp_from_json(config_json));
        return py::make_tuple(std::move(sim.panel), truth_to_json(sim.truth));
      },
      py::arg("config_json") = "{}", "Simulated panel and its ground truth (JSON text).");

  m.def(
      "hp_filter",
      [](const std::vector<double>& values, double phi) {
        const auto d = hp_filter(YearSeries(0, values), phi);
        return py::make_tuple(to_array(d.trend.values), to_array(d.cycle.values));
      },
      py::arg("values"), py::arg("phi") = annual_phi());
  m.def("annual_phi", &annual_phi);

  m.def(
      "residualize",
      [](const PanelDataset& ds, const py::object& o) {
        const auto res = residualize(ds, ds.outcomes()[outcome_of(ds, o)]);
        py::array_t<double> out({ds.n_regions(), ds.n_years()});
        auto a = out.mutable_unchecked<2>();
        for (std::size_t r = 0; r < res.series.size(); ++r)
          for (std::size_t t = 0; t < ds.n_years(); ++t) a(r, t) = res.series[r].values.values[t];
        std::vector<double> r2;
        for (const auto& mdl : res.models) r2.push_back(mdl.r_squared);
        return py::make_tuple(out, to_array(r2));
      },
      py::arg("panel"), py::arg("outcome") = 0, "Residual matrix and per-year R-squared.");

  m.def(
      "mh_chain",
      [](const std::function<double(double)>& log_density, double init, int iterations, int burn_in,
         std::uint64_t seed) {
        SamplerConfig cfg;
        cfg.iterations = iterations;
        cfg.burn_in = burn_in;
        cfg.seed = seed;
        const auto chain = mh_chain(TargetDensity{log_density}, init, cfg);
        const auto kept = chain.kept();
        return py::make_tuple(to_array({kept.begin(), kept.end()}), chain.acceptance_rate);
      },
      py::arg("log_density"), py::arg("init") = 0.0, py::arg("iterations") = 12500, py::arg("burn_in") = 2500,
      py::arg("seed") = 0, "Kept draws and acceptance rate of an adaptive random-walk chain.");

  m.def(
      "solve_simplex_qp",
      [](const Eigen::MatrixXd& a, const Eigen::VectorXd& b) {
        const auto r = solve_simplex_qp(a, b);
        return py::make_tuple(Eigen::VectorXd(r.w), r.objective);
      },
      py::arg("a"), py::arg("b"), "Minimize ||A w - b||^2 over the unit simplex.");

  m.def(
      "fit_synth",
      [](const PanelDataset& ds, const py::object& treated, const py::object& outcome, int evaluation_budget,
         int random_starts, std::uint64_t seed) {
        SynthOptions opts;
        opts.evaluation_budget = evaluation_budget;
        opts.random_starts = random_starts;
        opts.seed = seed;
        return solution_dict(fit_synth(ds, region_of(ds, treated), outcome_of(ds, outcome), PredictorSpec{}, opts));
      },
      py::arg("panel"), py::arg("treated"), py::arg("outcome") = 0, py::arg("evaluation_budget") = 2000,
      py::arg("random_starts") = 5, py::arg("seed") = 0);

  m.def(
      "placebo_pvalues",
      [](const PanelDataset& ds, const py::object& outcome, int evaluation_budget, int random_starts,
         std::uint64_t seed) {
        SynthOptions opts;
        opts.evaluation_budget = evaluation_budget;
        opts.random_starts = random_starts;
        opts.seed = seed;
        const auto inf = placebo_run(ds, outcome_of(ds, outcome), PredictorSpec{}, opts, PlaceboBudget{});
        py::dict out;
        for (const auto& t : inf.treated) {
          py::dict d;
          d["ratio"] = t.stats.ratio;
          d["p_exact"] = t.p_rmse_J1;
          d["p_weighted"] = t.p_weighted;
          out[py::str(t.region.code)] = d;
        }
        return out;
      },
      py::arg("panel"), py::arg("outcome") = 0, py::arg("evaluation_budget") = 2000, py::arg("random_starts") = 5,
      py::arg("seed") = 0, "Per treated unit: RMSE ratio, exact and weighted permutation p-values.");

  m.def("ks_statistic", [](const std::vector<double>& a, const std::vector<double>& b) { return ks_statistic(a, b); });
  m.def("kolmogorov_survival", &kolmogorov_survival);

  m.def(
      "run",
      [](const std::string& config_json, const std::filesystem::path& base_dir, const std::string& last) {
        const auto result = run_pipeline(parse_run_config(config_json, base_dir), stage_from_name(last));
        py::dict d;
        d["ok"] = result.ok;
        d["error"] = result.error;
        d["files"] = result.files;
        py::list stages;
        for (const auto& s : result.stages) stages.append(py::make_tuple(s.stage, s.status, s.message));
        d["stages"] = stages;
        return d;
      },
      py::arg("config_json"), py::arg("base_dir") = std::filesystem::path{}, py::arg("last") = "report",
      "Runs the pipeline from a JSON configuration string.");
  m.def("report", [](const std::filesystem::path& run_dir) { return write_report(run_dir); }, py::arg("run_dir"));
}
