#include "l2gmom/gradcheck.hpp"

#include "l2gmom/errors.hpp"
#include "l2gmom/random.hpp"
#include "l2gmom/unroll.hpp"

#include <nlohmann/json.hpp>

namespace l2gmom::gradcheck {

void GradcheckConfig::validate() const {
  if (nodes < 2 || nodes > 8) throw ValidationError("gradcheck: nodes must lie in [2, 8]");
  if (features < 1) throw ValidationError("gradcheck: features must be >= 1");
  if (depth < 1 || depth > 6) throw ValidationError("gradcheck: depth must lie in [1, 6]");
  if (!(eps > 0.0) || !(rtol > 0.0) || !(atol >= 0.0) || !(kink_tol >= 0.0))
    throw ValidationError("gradcheck: eps and tolerances must be positive");
  if (!(min_pass_fraction > 0.0 && min_pass_fraction <= 1.0))
    throw ValidationError("gradcheck: min_pass_fraction must lie in (0, 1]");
}

namespace {

struct Instance {
  Matrix v;
  unroll::UnrollParams params;
  Matrix upstream;
};

double loss(const Matrix& v, const unroll::UnrollParams& p, const Matrix& g, unroll::UnrollTape* tape = nullptr) {
  auto res = unroll::forward(v, p);
  if (tape) *tape = std::move(res.tape);
  return g.cwiseProduct(res.graph.adjacency).sum();
}

}  // namespace

GradcheckReport run_gradcheck(const GradcheckConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.seed);
  Instance in;
  in.v.resize(cfg.nodes, cfg.features);
  for (Eigen::Index k = 0; k < in.v.size(); ++k) in.v.data()[k] = rng.normal();
  in.params = unroll::UnrollParams::constant(cfg.depth, 1.0, 1.0, 0.1);
  for (auto* raw : {&in.params.raw_alpha, &in.params.raw_beta, &in.params.raw_gamma})
    for (Eigen::Index l = 0; l < raw->size(); ++l) (*raw)(l) += 0.2 * rng.normal();
  in.upstream = Matrix::Zero(cfg.nodes, cfg.nodes);
  if (!cfg.zero_upstream)
    for (Eigen::Index k = 0; k < in.upstream.size(); ++k) in.upstream.data()[k] = rng.normal();

  unroll::UnrollTape tape;
  loss(in.v, in.params, in.upstream, &tape);
  auto grads = unroll::backward(tape, in.upstream);
  if (cfg.inject_fault) grads.raw.raw_alpha(0) = 1.5 * grads.raw.raw_alpha(0) + 1e-3;
  const auto base_pattern = unroll::kink_pattern(tape);
  const bool near_kink = unroll::kink_distance(tape) < cfg.kink_tol;

  GradcheckReport report;
  auto check = [&](const std::string& name, double analytic, auto&& eval_at) {
    CoordinateCheck c;
    c.name = name;
    c.analytic = analytic;
    unroll::UnrollTape tp, tm;
    const double fp = eval_at(cfg.eps, &tp);
    const double fm = eval_at(-cfg.eps, &tm);
    c.numeric = (fp - fm) / (2.0 * cfg.eps);
    c.abs_error = std::abs(c.analytic - c.numeric);
    const double scale = std::max(std::abs(c.analytic), std::abs(c.numeric));
    c.rel_error = scale > 0.0 ? c.abs_error / scale : 0.0;
    c.kink_adjacent =
        near_kink || unroll::kink_pattern(tp) != base_pattern || unroll::kink_pattern(tm) != base_pattern;
    c.passed = c.abs_error <= cfg.rtol * scale || c.abs_error <= cfg.atol;
    if (c.kink_adjacent) {
      ++report.excluded;
    } else {
      ++report.checked;
      report.passed += c.passed;
      report.worst_rel_error = std::max(report.worst_rel_error, c.rel_error);
    }
    report.coordinates.push_back(std::move(c));
  };

  const Vector flat = in.params.flatten();
  const Vector gflat = grads.raw.flatten();
  const auto layers = in.params.layers();
  static const char* kNames[] = {"raw_alpha", "raw_beta", "raw_gamma"};
  for (Eigen::Index k = 0; k < flat.size(); ++k) {
    const std::string name = std::string(kNames[k / layers]) + "[" + std::to_string(k % layers) + "]";
    check(name, gflat(k), [&](double d, unroll::UnrollTape* t) {
      Vector p = flat;
      p(k) += d;
      return loss(in.v, unroll::UnrollParams::unflatten(p, cfg.depth), in.upstream, t);
    });
  }
  if (cfg.check_features) {
    for (Eigen::Index i = 0; i < in.v.rows(); ++i)
      for (Eigen::Index f = 0; f < in.v.cols(); ++f)
        check("V[" + std::to_string(i) + "," + std::to_string(f) + "]", grads.features(i, f),
              [&](double d, unroll::UnrollTape* t) {
                Matrix v = in.v;
                v(i, f) += d;
                return loss(v, in.params, in.upstream, t);
              });
  }
  report.pass = report.checked > 0 && report.pass_fraction() >= cfg.min_pass_fraction;
  return report;
}

nlohmann::json to_json(const GradcheckConfig& c) {
  return {{"nodes", c.nodes},       {"features", c.features},   {"depth", c.depth},
          {"eps", c.eps},           {"rtol", c.rtol},           {"atol", c.atol},
          {"kink_tol", c.kink_tol}, {"min_pass_fraction", c.min_pass_fraction},
          {"seed", c.seed},         {"zero_upstream", c.zero_upstream},
          {"check_features", c.check_features}, {"inject_fault", c.inject_fault}};
}

GradcheckConfig gradcheck_config_from_json(const nlohmann::json& j, GradcheckConfig c) {
  if (!j.is_object()) throw ValidationError("gradcheck config must be a JSON object");
  const auto known = to_json(c);
  for (const auto& [key, _] : j.items())
    if (!known.contains(key)) throw ValidationError("gradcheck config: unknown key '" + key + "'");
  try {
    auto get = [&](const char* key, auto& field) {
      if (j.contains(key)) field = j[key].get<std::decay_t<decltype(field)>>();
    };
    get("nodes", c.nodes);
    get("features", c.features);
    get("depth", c.depth);
    get("eps", c.eps);
    get("rtol", c.rtol);
    get("atol", c.atol);
    get("kink_tol", c.kink_tol);
    get("min_pass_fraction", c.min_pass_fraction);
    get("seed", c.seed);
    get("zero_upstream", c.zero_upstream);
    get("check_features", c.check_features);
    get("inject_fault", c.inject_fault);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("gradcheck config: ") + e.what());
  }
  c.validate();
  return c;
}

nlohmann::json to_json(const GradcheckReport& r) {
  nlohmann::json coords = nlohmann::json::array();
  for (const auto& c : r.coordinates)
    coords.push_back({{"name", c.name},
                      {"analytic", c.analytic},
                      {"numeric", c.numeric},
                      {"abs_error", c.abs_error},
                      {"rel_error", c.rel_error},
                      {"kink_adjacent", c.kink_adjacent},
                      {"passed", c.passed}});
  return {{"pass", r.pass},
          {"checked", r.checked},
          {"passed", r.passed},
          {"excluded_kink_adjacent", r.excluded},
          {"pass_fraction", r.pass_fraction()},
          {"worst_rel_error", r.worst_rel_error},
          {"coordinates", coords}};
}

}  // namespace l2gmom::gradcheck
