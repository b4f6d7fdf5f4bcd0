#include "l2gmom/backtest.hpp"
#include "l2gmom/cli.hpp"
#include "l2gmom/data.hpp"
#include "l2gmom/errors.hpp"
#include "l2gmom/features.hpp"
#include "l2gmom/gradcheck.hpp"
#include "l2gmom/graph_solver.hpp"
#include "l2gmom/training.hpp"
#include "l2gmom/unroll.hpp"

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

namespace py = pybind11;
using namespace l2gmom;

namespace {

// Dates and tickers as lists, prices as a dates x assets array with NaN holes.
py::dict panel_dict(const data::PricePanel& p) {
  std::vector<std::string> dates;
  for (auto d : p.dates) dates.push_back(format_date(d));
  py::dict out;
  out["dates"] = dates;
  out["tickers"] = p.tickers;
  out["prices"] = p.prices;
  return out;
}

data::PricePanel panel_from(const std::vector<std::string>& dates, const std::vector<std::string>& tickers,
                            const Matrix& prices) {
  data::PricePanel p;
  for (const auto& d : dates) p.dates.push_back(parse_date(d));
  p.tickers = tickers;
  p.prices = prices;
  p.available = prices.array().isFinite();
  return p;
}

py::dict metrics_dict(const backtest::MetricsTable& m) {
  auto opt = [](const std::optional<double>& x) { return x ? py::object(py::float_(*x)) : py::object(py::none()); };
  py::dict d;
  d["days"] = m.days;
  d["return"] = m.ann_return;
  d["vol"] = opt(m.vol);
  d["sharpe"] = opt(m.sharpe);
  d["downside_deviation"] = opt(m.downside_deviation);
  d["mdd"] = m.mdd;
  d["mdd_duration"] = m.mdd_duration;
  d["sortino"] = opt(m.sortino);
  d["calmar"] = opt(m.calmar);
  d["hit_rate"] = m.hit_rate;
  d["avg_profit_over_loss"] = opt(m.avg_profit_over_loss);
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Native core of l2gmom";

  py::register_exception<ValidationError>(m, "ValidationError", PyExc_ValueError);
  py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);
  py::register_exception<IoError>(m, "IoError", PyExc_OSError);

  m.def(
      "generate_synthetic",
      [](const std::string& spec_json) {
        return panel_dict(data::generate_synthetic(data::synthetic_spec_from_json(nlohmann::json::parse(spec_json))));
      },
      py::arg("spec_json"));
  m.def(
      "load_csv", [](const std::string& path) { return panel_dict(data::load_csv(path)); }, py::arg("path"));

  m.def(
      "build_features",
      [](const std::vector<std::string>& dates, const std::vector<std::string>& tickers, const Matrix& prices) {
        const auto p = panel_from(dates, tickers, prices);
        const auto r = data::compute_returns(p);
        const auto u = features::build_U(r, data::ewm_volatility(r), p, {});
        py::dict out;
        for (int f = 0; f < features::kNumFeatures; ++f)
          out[py::str(std::string(features::kFeatureNames[static_cast<std::size_t>(f)]))] = u.values[static_cast<std::size_t>(f)];
        out["valid"] = Matrix(u.valid.cast<double>());
        return out;
      },
      py::arg("dates"), py::arg("tickers"), py::arg("prices"));

  m.def(
      "learn_graph",
      [](const Matrix& v, double alpha, double beta, double gamma, int max_iters, double tol) {
        graph::SolverConfig cfg;
        cfg.alpha = alpha;
        cfg.beta = beta;
        cfg.gamma = gamma;
        cfg.max_iters = max_iters;
        cfg.tol = tol;
        const auto res = graph::pds_solve(graph::pairwise_distances(v), cfg);
        py::dict out;
        out["adjacency"] = res.graph.adjacency;
        out["iterations"] = res.iterations;
        out["converged"] = res.converged;
        return out;
      },
      py::arg("features"), py::arg("alpha") = 1.0, py::arg("beta") = 1.0, py::arg("gamma") = 0.1,
      py::arg("max_iters") = 2000, py::arg("tol") = 1e-6);

  m.def(
      "unrolled_graph",
      [](const Matrix& v, int depth, double alpha, double beta, double gamma) {
        return unroll::forward(v, unroll::UnrollParams::constant(depth, alpha, beta, gamma)).graph.adjacency;
      },
      py::arg("features"), py::arg("depth"), py::arg("alpha") = 1.0, py::arg("beta") = 1.0, py::arg("gamma") = 0.1);

  m.def(
      "metrics", [](const Vector& r) { return metrics_dict(backtest::metrics(r)); }, py::arg("returns"));
  m.def("neg_sharpe", &training::neg_sharpe_of, py::arg("returns"));
  m.def("mse", &training::loss_mse, py::arg("predictions"), py::arg("targets"));
  m.def("position_scale", &features::position_scale, py::arg("y"));

  m.def(
      "gradcheck",
      [](std::uint64_t seed, bool inject_fault) {
        gradcheck::GradcheckConfig cfg;
        cfg.seed = seed;
        cfg.inject_fault = inject_fault;
        return gradcheck::to_json(gradcheck::run_gradcheck(cfg)).dump();
      },
      py::arg("seed") = 0, py::arg("inject_fault") = false);

  m.def(
      "run_cli",
      [](std::vector<std::string> args) {
        args.insert(args.begin(), "l2gmom");
        std::vector<char*> argv;
        for (auto& a : args) argv.push_back(a.data());
        py::gil_scoped_release release;
        return cli::run(static_cast<int>(argv.size()), argv.data());
      },
      py::arg("args"));
}
