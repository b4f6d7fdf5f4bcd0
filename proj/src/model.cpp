#include "l2gmom/model.hpp"

#include "l2gmom/errors.hpp"

#include <nlohmann/json.hpp>

#include <array>

namespace l2gmom::model {

namespace {

constexpr std::array<std::pair<ModelKind, std::string_view>, 6> kKindNames{{
    {ModelKind::long_only, "long_only"},
    {ModelKind::macd, "macd"},
    {ModelKind::linreg, "linreg"},
    {ModelKind::glinreg, "glinreg"},
    {ModelKind::l2gmom, "l2gmom"},
    {ModelKind::l2gmom_sr, "l2gmom_sr"},
}};

Vector inv_sqrt_degrees(const Matrix& a) {
  const Vector d = a.rowwise().sum();
  Vector s(d.size());
  for (Eigen::Index i = 0; i < d.size(); ++i) s(i) = d(i) > 0.0 ? 1.0 / std::sqrt(d(i)) : 0.0;
  return s;
}

}  // namespace

std::string_view to_string(ModelKind kind) {
  for (const auto& [k, name] : kKindNames)
    if (k == kind) return name;
  return "unknown";
}

ModelKind model_kind_from_string(std::string_view name) {
  for (const auto& [k, n] : kKindNames)
    if (n == name) return k;
  throw ValidationError("unknown strategy '" + std::string(name) + "'");
}

std::string_view to_string(HeadInput input) { return input == HeadInput::features ? "features" : "lookback"; }

HeadInput head_input_from_string(std::string_view name) {
  if (name == "features") return HeadInput::features;
  if (name == "lookback") return HeadInput::lookback;
  throw ValidationError("unknown head input '" + std::string(name) + "'");
}

void HeadParams::validate() const {
  if (theta.size() == 0) throw ValidationError("head theta is empty");
  if (!theta.allFinite() || !std::isfinite(b)) throw ValidationError("head parameters must be finite");
}

Matrix normalize_graph(const Matrix& a) {
  if (a.rows() != a.cols()) throw ValidationError("normalize_graph needs a square matrix");
  const Vector s = inv_sqrt_degrees(a);
  return s.asDiagonal() * a * s.asDiagonal();
}

Matrix normalize_graph_backward(const Matrix& a, const Matrix& grad_normalized) {
  const Vector s = inv_sqrt_degrees(a);
  const auto n = a.rows();
  // dL/dA_ij through the direct product s_i A_ij s_j.
  Matrix grad = s.asDiagonal() * grad_normalized * s.asDiagonal();
  // dL/ds_i collects row i and column i of the product.
  const Matrix ga = grad_normalized.cwiseProduct(a);
  const Vector g_s = ga * s + ga.transpose() * s;
  // s_i = d_i^{-1/2}, d_i = sum_j A_ij.
  Vector g_d(n);
  for (Eigen::Index i = 0; i < n; ++i) g_d(i) = s(i) > 0.0 ? -0.5 * s(i) * s(i) * s(i) * g_s(i) : 0.0;
  grad.colwise() += g_d;
  return grad;
}

Vector head_forward(const Matrix& graph_norm, const Matrix& inputs, const HeadParams& head) {
  if (inputs.cols() != head.theta.size())
    throw ValidationError("head expects " + std::to_string(head.theta.size()) + " input columns, got " +
                          std::to_string(inputs.cols()));
  if (graph_norm.rows() != inputs.rows()) throw ValidationError("graph and inputs cover different assets");
  return (graph_norm * (inputs * head.theta)).array() + head.b;
}

ModelOutput l2gmom_forward(const Matrix& v, const Matrix& u, const unroll::UnrollParams& unroll,
                           const HeadParams& head) {
  if (v.rows() != u.rows()) throw ValidationError("V and U cover different assets");
  ModelOutput out;
  out.graph = normalize_graph(unroll::forward(v, unroll).graph.adjacency);
  out.value = head_forward(out.graph, u, head);
  return out;
}

ModelOutput l2gmom_sr_forward(const Matrix& v, const Matrix& u, const unroll::UnrollParams& unroll,
                              const HeadParams& head, HeadInput input) {
  if (v.rows() != u.rows()) throw ValidationError("V and U cover different assets");
  ModelOutput out;
  out.graph = normalize_graph(unroll::forward(v, unroll).graph.adjacency);
  out.value = head_forward(out.graph, input == HeadInput::features ? u : v, head).array().tanh();
  return out;
}

Vector sign_positions(const Vector& y) {
  return y.unaryExpr([](double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}

HeadParams linreg_fit(const Matrix& inputs, const Vector& targets, double ridge) {
  const auto n = inputs.rows();
  const auto p = inputs.cols();
  if (targets.size() != n) throw ValidationError("linreg_fit: inputs and targets differ in length");
  if (n < p + 1) throw ValidationError("linreg_fit needs at least " + std::to_string(p + 1) + " samples");
  if (!inputs.allFinite() || !targets.allFinite()) throw ValidationError("linreg_fit: non-finite data");
  // Center so the intercept decouples from the ridge-penalized slopes.
  const Eigen::RowVectorXd mean_x = inputs.colwise().mean();
  const double mean_y = targets.mean();
  const Matrix xc = inputs.rowwise() - mean_x;
  const Vector yc = targets.array() - mean_y;
  Matrix gram = xc.transpose() * xc;
  gram.diagonal().array() += ridge;
  Eigen::LDLT<Matrix> ldlt(gram);
  if (ldlt.info() != Eigen::Success || !(ldlt.vectorD().array() > 0.0).all())
    throw NumericError("linreg_fit: normal equations are singular");
  HeadParams head;
  head.theta = ldlt.solve(xc.transpose() * yc);
  head.b = mean_y - mean_x.dot(head.theta);
  if (!head.theta.allFinite() || !std::isfinite(head.b)) throw NumericError("linreg_fit: non-finite solution");
  return head;
}

Vector linreg_predict(const Matrix& inputs, const HeadParams& head) {
  if (inputs.cols() != head.theta.size()) throw ValidationError("linreg_predict: input width mismatch");
  return (inputs * head.theta).array() + head.b;
}

HeadParams fit_on_graphs(std::span<const Matrix> graphs_norm, std::span<const Matrix> inputs,
                         std::span<const Vector> targets, double ridge) {
  if (graphs_norm.size() != inputs.size() || inputs.size() != targets.size())
    throw ValidationError("fit_on_graphs: history lengths differ");
  Eigen::Index rows = 0;
  Eigen::Index cols = -1;
  for (std::size_t t = 0; t < inputs.size(); ++t) {
    rows += inputs[t].rows();
    if (cols < 0) cols = inputs[t].cols();
    if (inputs[t].cols() != cols) throw ValidationError("fit_on_graphs: inconsistent input width");
  }
  if (cols < 0) throw ValidationError("fit_on_graphs: empty history");
  Matrix x(rows, cols);
  Vector y(rows);
  Eigen::Index r = 0;
  for (std::size_t t = 0; t < inputs.size(); ++t) {
    const auto n = inputs[t].rows();
    x.middleRows(r, n) = graphs_norm[t] * inputs[t];
    y.segment(r, n) = targets[t];
    r += n;
  }
  return linreg_fit(x, y, ridge);
}

GlinregFit glinreg_fit(std::span<const Matrix> v, std::span<const Matrix> u, std::span<const Vector> targets,
                       const graph::SolverConfig& solver, double ridge) {
  if (v.size() != u.size()) throw ValidationError("glinreg_fit: V and U histories differ in length");
  std::vector<Matrix> graphs, inputs;
  std::vector<Vector> kept_targets;
  GlinregFit fit;
  for (std::size_t t = 0; t < v.size(); ++t) {
    const auto res = graph::pds_solve(graph::pairwise_distances(v[t]), solver);
    if (!res.converged) {
      ++fit.excluded_dates;
      continue;
    }
    graphs.push_back(normalize_graph(res.graph.adjacency));
    inputs.push_back(u[t]);
    kept_targets.push_back(targets[t]);
  }
  fit.head = fit_on_graphs(graphs, inputs, kept_targets, ridge);
  return fit;
}

nlohmann::json to_json(const HeadParams& head) {
  return {{"theta", std::vector<double>(head.theta.data(), head.theta.data() + head.theta.size())},
          {"b", head.b}};
}

HeadParams head_params_from_json(const nlohmann::json& j) {
  HeadParams head;
  try {
    const auto theta = j.at("theta").get<std::vector<double>>();
    head.theta = Eigen::Map<const Vector>(theta.data(), static_cast<Eigen::Index>(theta.size()));
    head.b = j.at("b").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("head params: ") + e.what());
  }
  head.validate();
  return head;
}

}  // namespace l2gmom::model
