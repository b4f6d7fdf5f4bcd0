#include "l2gmom/graph_solver.hpp"

#include "l2gmom/errors.hpp"

#include <algorithm>

namespace l2gmom::graph {

EdgeLayout::EdgeLayout(Eigen::Index n_nodes) : n_(n_nodes) {
  if (n_nodes < 1) throw ValidationError("graph needs at least one node");
  const auto e = n_nodes * (n_nodes - 1) / 2;
  src_.reserve(static_cast<std::size_t>(e));
  dst_.reserve(static_cast<std::size_t>(e));
  for (Eigen::Index i = 0; i < n_nodes; ++i) {
    for (Eigen::Index j = i + 1; j < n_nodes; ++j) {
      src_.push_back(static_cast<int>(i));
      dst_.push_back(static_cast<int>(j));
    }
  }
}

Eigen::Index EdgeLayout::index(Eigen::Index i, Eigen::Index j) const {
  if (i > j) std::swap(i, j);
  if (i == j || i < 0 || j >= n_) throw ValidationError("invalid edge");
  // Edges before row i: sum_{r<i} (n - 1 - r).
  return i * (2 * n_ - i - 1) / 2 + (j - i - 1);
}

Eigen::Index EdgeLayout::nodes_for_edges(Eigen::Index e) {
  const auto n = static_cast<Eigen::Index>(std::llround((1.0 + std::sqrt(1.0 + 8.0 * static_cast<double>(e))) / 2.0));
  if (n * (n - 1) / 2 != e) throw ValidationError("edge count " + std::to_string(e) + " is not n(n-1)/2");
  return n;
}

Vector degree_apply(const EdgeLayout& layout, const Vector& w) {
  if (w.size() != layout.edges()) throw ValidationError("degree_apply: edge vector size mismatch");
  Vector d = Vector::Zero(layout.nodes());
  for (Eigen::Index k = 0; k < layout.edges(); ++k) {
    d(layout.src(k)) += w(k);
    d(layout.dst(k)) += w(k);
  }
  return d;
}

Vector degree_adjoint(const EdgeLayout& layout, const Vector& v) {
  if (v.size() != layout.nodes()) throw ValidationError("degree_adjoint: node vector size mismatch");
  Vector out(layout.edges());
  for (Eigen::Index k = 0; k < layout.edges(); ++k) out(k) = v(layout.src(k)) + v(layout.dst(k));
  return out;
}

Vector vech(const Matrix& a) {
  if (a.rows() != a.cols()) throw ValidationError("vech needs a square matrix");
  const EdgeLayout layout(a.rows());
  Vector w(layout.edges());
  for (Eigen::Index k = 0; k < layout.edges(); ++k) w(k) = a(layout.src(k), layout.dst(k));
  return w;
}

Matrix unvech(const EdgeLayout& layout, const Vector& w) {
  if (w.size() != layout.edges()) throw ValidationError("unvech: edge vector size mismatch");
  Matrix a = Matrix::Zero(layout.nodes(), layout.nodes());
  for (Eigen::Index k = 0; k < layout.edges(); ++k) {
    a(layout.src(k), layout.dst(k)) = w(k);
    a(layout.dst(k), layout.src(k)) = w(k);
  }
  return a;
}

DistanceVector pairwise_distances(const Matrix& v, std::span<const std::string> names) {
  const auto n = v.rows();
  if (n < 2) throw ValidationError("pairwise_distances needs at least two rows");
  for (Eigen::Index i = 0; i < n; ++i) {
    if (!v.row(i).allFinite()) {
      const std::string who = i < static_cast<Eigen::Index>(names.size()) ? names[i] : "row " + std::to_string(i);
      throw ValidationError("non-finite feature row for " + who);
    }
  }
  const EdgeLayout layout(n);
  DistanceVector out;
  out.h.resize(layout.edges());
  for (Eigen::Index k = 0; k < layout.edges(); ++k)
    out.h(k) = (v.row(layout.src(k)) - v.row(layout.dst(k))).squaredNorm();
  const double mean = out.h.mean();
  if (mean > 0.0) {
    out.scale = mean;
    out.h /= mean;
  }
  return out;
}

GraphEstimate GraphEstimate::from_edges(const EdgeLayout& layout, const Vector& w) {
  GraphEstimate g;
  g.adjacency = unvech(layout, w);
  g.degrees = g.adjacency.rowwise().sum();
  return g;
}

void SolverConfig::validate() const {
  if (!(alpha > 0.0) || !(beta > 0.0) || !(gamma > 0.0))
    throw ValidationError("solver alpha, beta, gamma must be positive");
  if (max_iters < 1) throw ValidationError("solver max_iters must be >= 1");
  if (!(tol > 0.0)) throw ValidationError("solver tol must be positive");
  if (max_step_halvings < 0 || divergence_window < 1) throw ValidationError("invalid divergence guard settings");
}

SolveResult pds_solve(const DistanceVector& dist, const SolverConfig& cfg, const SolveOptions& options) {
  cfg.validate();
  const Vector& h = dist.h;
  const EdgeLayout layout(EdgeLayout::nodes_for_edges(h.size()));
  const auto e = layout.edges();
  const auto n = layout.nodes();
  if (n < 2) throw ValidationError("pds_solve needs at least two nodes");
  if (options.warm_w && options.warm_w->size() != e) throw ValidationError("warm start primal has wrong size");
  if (options.warm_v && options.warm_v->size() != n) throw ValidationError("warm start dual has wrong size");

  const double alpha = cfg.alpha;
  const double beta = cfg.beta;
  double gamma = cfg.gamma;

  SolveResult result;
  for (int attempt = 0; attempt <= cfg.max_step_halvings; ++attempt) {
    Vector w = options.warm_w ? *options.warm_w : Vector::Zero(e);
    Vector v = options.warm_v ? *options.warm_v : Vector::Zero(n);
    Vector r1(e), q1(e), p1(e), r2(n), p2(n), q2(n);
    double residual = std::numeric_limits<double>::infinity();
    double previous = residual;
    int growth_run = 0;
    bool diverged = false;
    int it = 0;
    bool converged = false;
    while (it < cfg.max_iters) {
      r1 = w - gamma * (4.0 * beta * w + 2.0 * h + degree_adjoint(layout, v));
      r2 = v + gamma * degree_apply(layout, w);
      p1 = r1.cwiseMax(0.0);
      p2 = (r2.array() - (r2.array().square() + 4.0 * alpha * gamma).sqrt()) / 2.0;
      q1 = p1 - gamma * (4.0 * beta * p1 + 2.0 * h + degree_adjoint(layout, p2));
      q2 = p2 + gamma * degree_apply(layout, p1);
      Vector w_next = w - r1 + q1;
      v = v - r2 + q2;
      residual = (w_next - w).cwiseAbs().maxCoeff();
      w = std::move(w_next);
      ++it;
      if (options.observer) options.observer(it, w);
      if (!std::isfinite(residual) || !w.allFinite() || !v.allFinite()) {
        diverged = true;
        break;
      }
      if (residual < cfg.tol) {
        converged = true;
        break;
      }
      growth_run = residual > previous ? growth_run + 1 : 0;
      previous = residual;
      if (growth_run >= cfg.divergence_window && residual > 1.0) {
        diverged = true;
        break;
      }
    }
    if (diverged && attempt < cfg.max_step_halvings) {
      gamma /= 2.0;
      continue;
    }
    if (diverged) throw NumericError("pds_solve diverged after " + std::to_string(attempt) + " step halvings");
    result.min_primal_before_clamp = w.minCoeff();
    result.w = w.cwiseMax(0.0);
    result.v = v;
    result.iterations = it;
    result.residual = residual;
    result.converged = converged;
    result.gamma = gamma;
    result.step_halvings = attempt;
    result.graph = GraphEstimate::from_edges(layout, result.w);
    return result;
  }
  throw NumericError("pds_solve: unreachable");
}

double objective(const Vector& w, const Vector& h, double alpha, double beta) {
  if (w.size() != h.size()) throw ValidationError("objective: w and h differ in size");
  const EdgeLayout layout(EdgeLayout::nodes_for_edges(w.size()));
  constexpr double inf = std::numeric_limits<double>::infinity();
  if ((w.array() < 0.0).any()) return inf;
  double value = 2.0 * w.dot(h) + 2.0 * beta * w.squaredNorm();
  if (alpha != 0.0) {
    const Vector d = degree_apply(layout, w);
    if ((d.array() <= 0.0).any()) return inf;
    value -= alpha * d.array().log().sum();
  }
  return value;
}

}  // namespace l2gmom::graph
