#pragma once

#include "l2gmom/common.hpp"

#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace l2gmom::graph {

/// Half-vectorization layout of an n-node undirected graph.
///
/// Edge k corresponds to the pair (i, j), i < j, enumerated row-major over
/// the strict upper triangle: (0,1), (0,2), ..., (0,n-1), (1,2), ...
class EdgeLayout {
public:
  explicit EdgeLayout(Eigen::Index n_nodes);

  Eigen::Index nodes() const { return n_; }
  Eigen::Index edges() const { return static_cast<Eigen::Index>(src_.size()); }
  Eigen::Index index(Eigen::Index i, Eigen::Index j) const;
  Eigen::Index src(Eigen::Index k) const { return src_[k]; }
  Eigen::Index dst(Eigen::Index k) const { return dst_[k]; }

  /// Node count for a given edge count; throws if e is not triangular.
  static Eigen::Index nodes_for_edges(Eigen::Index e);

private:
  Eigen::Index n_;
  std::vector<int> src_;
  std::vector<int> dst_;
};

/// d = D w: each node's summed incident edge weight.
Vector degree_apply(const EdgeLayout& layout, const Vector& w);
/// (D^T v)_(i,j) = v_i + v_j.
Vector degree_adjoint(const EdgeLayout& layout, const Vector& v);

/// Edge weights from / to a symmetric adjacency.
Vector vech(const Matrix& a);
Matrix unvech(const EdgeLayout& layout, const Vector& w);

/// Squared pairwise distances, stored rescaled to unit mean.
/// raw distance = h * scale.
struct DistanceVector {
  Vector h;
  double scale = 1.0;
};

/// h_k = ||V_i - V_j||^2 for edge k = (i, j), then divided by its mean (the
/// rescale is skipped, scale = 1, when every distance is zero).
/// `names` labels rows in error messages.
DistanceVector pairwise_distances(const Matrix& v, std::span<const std::string> names = {});

struct GraphEstimate {
  Matrix adjacency;
  Vector degrees;

  static GraphEstimate from_edges(const EdgeLayout& layout, const Vector& w);
  Eigen::Index nodes() const { return adjacency.rows(); }
};

struct SolverConfig {
  double alpha = 1.0;
  double beta = 1.0;
  double gamma = 0.1;
  int max_iters = 2000;
  double tol = 1e-6;
  int max_step_halvings = 5;
  int divergence_window = 10;

  void validate() const;
};

struct SolveResult {
  GraphEstimate graph;
  Vector w;
  Vector v;
  int iterations = 0;
  double residual = 0.0;
  bool converged = false;
  double gamma = 0.0;
  int step_halvings = 0;
  double min_primal_before_clamp = 0.0;
};

struct SolveOptions {
  std::optional<Vector> warm_w;
  std::optional<Vector> warm_v;
  /// Called after every iteration with (iteration, primal iterate).
  std::function<void(int, const Vector&)> observer;
};

/// Primal-dual splitting solve of
///   min_w 2<w,h> - alpha * sum_i log (Dw)_i + 2 beta ||w||^2,  w >= 0,
/// from w = 0, v = 0 unless a warm start is given. Stops when
/// ||w_{l+1} - w_l||_inf < tol or after max_iters (converged = false).
/// The step size is halved and the run restarted when the residual grows for
/// divergence_window consecutive iterations or turns non-finite.
SolveResult pds_solve(const DistanceVector& h, const SolverConfig& cfg, const SolveOptions& options = {});

/// 2<w,h> - alpha * sum log d + 2 beta ||w||^2 ; +inf if some degree is not
/// positive while alpha > 0 or w has a negative entry.
double objective(const Vector& w, const Vector& h, double alpha, double beta);

}  // namespace l2gmom::graph
