#pragma once

#include "l2gmom/common.hpp"
#include "l2gmom/graph_solver.hpp"

#include <nlohmann/json_fwd.hpp>

#include <vector>

namespace l2gmom::unroll {

/// Learnable per-layer (alpha, beta, gamma), stored unconstrained.
/// Effective values are exp(raw). A network of depth L runs L + 1 layers,
/// so each vector has L + 1 entries.
struct UnrollParams {
  Vector raw_alpha;
  Vector raw_beta;
  Vector raw_gamma;

  int depth() const { return static_cast<int>(raw_alpha.size()) - 1; }
  int layers() const { return static_cast<int>(raw_alpha.size()); }

  Vector alpha() const { return raw_alpha.array().exp(); }
  Vector beta() const { return raw_beta.array().exp(); }
  Vector gamma() const { return raw_gamma.array().exp(); }

  /// Same effective (alpha, beta, gamma) in every layer.
  static UnrollParams constant(int depth, double alpha, double beta, double gamma);
  /// Default initialization: alpha = 1, beta = 1, gamma = 0.1.
  static UnrollParams initial(int depth) { return constant(depth, 1.0, 1.0, 0.1); }
  static UnrollParams zeros_like(const UnrollParams& p);

  void validate() const;

  /// Flattened as [alpha..., beta..., gamma...].
  Vector flatten() const;
  static UnrollParams unflatten(const Vector& flat, int depth);
};

struct LayerRecord {
  Vector w, v, r1, r2, p1, p2;
};

/// Everything the backward pass needs from one forward call.
struct UnrollTape {
  UnrollParams params;
  graph::DistanceVector distances;
  Matrix features;  // V; empty when the forward started from distances
  std::vector<LayerRecord> layers;
  Vector w_final;   // w_{L+1} before projection
  Vector w_out;     // max(0, w_final)
};

struct UnrollResult {
  graph::GraphEstimate graph;
  UnrollTape tape;
};

/// Runs the L + 1 unrolled primal-dual layers from w = 0, v = 0 on the
/// unit-mean squared distances of the rows of V.
UnrollResult forward(const Matrix& v, const UnrollParams& params);
UnrollResult forward_distances(const graph::DistanceVector& h, const UnrollParams& params);

/// Recomputes the output from the tape's inputs.
graph::GraphEstimate replay(const UnrollTape& tape);

struct UnrollGradients {
  UnrollParams raw;  // d/d raw_alpha, raw_beta, raw_gamma
  Vector h;          // d/d normalized distances
  Matrix features;   // d/d V; empty when the tape has no features
};

/// Reverse-mode derivative of <grad_A, A> through every layer.
UnrollGradients backward(const UnrollTape& tape, const Matrix& grad_a);
UnrollGradients backward_edges(const UnrollTape& tape, const Vector& grad_w);

/// Signs of every max(0, .) argument on the tape: r1 of each layer followed by
/// the final projection. Used to detect kink crossings in gradient checks.
std::vector<signed char> kink_pattern(const UnrollTape& tape);
/// Smallest |argument| over every max(0, .) on the tape.
double kink_distance(const UnrollTape& tape);

nlohmann::json to_json(const UnrollParams& p);
UnrollParams unroll_params_from_json(const nlohmann::json& j);

}  // namespace l2gmom::unroll
