#pragma once

#include "l2gmom/common.hpp"
#include "l2gmom/graph_solver.hpp"
#include "l2gmom/unroll.hpp"

#include <nlohmann/json_fwd.hpp>

#include <span>
#include <string>
#include <string_view>

namespace l2gmom::model {

enum class ModelKind { long_only, macd, linreg, glinreg, l2gmom, l2gmom_sr };

std::string_view to_string(ModelKind kind);
ModelKind model_kind_from_string(std::string_view name);

/// What the linear head multiplies: the 8 momentum features U_t (default) or
/// the stacked lookback rows V_t (literal reading of the position model, with
/// an 8*lookback-dimensional theta).
enum class HeadInput { features, lookback };

std::string_view to_string(HeadInput input);
HeadInput head_input_from_string(std::string_view name);

struct HeadParams {
  Vector theta;
  double b = 0.0;

  void validate() const;
};

/// D^{-1/2} A D^{-1/2}; nodes with zero degree get zero rows and columns.
Matrix normalize_graph(const Matrix& a);

/// Gradient with respect to A of <grad_normalized, normalize_graph(A)>.
/// Zero-degree nodes receive zero gradient.
Matrix normalize_graph_backward(const Matrix& a, const Matrix& grad_normalized);

struct ModelOutput {
  Vector value;  // trend y (L2GMOM) or position x (L2GMOM_SR)
  Matrix graph;  // normalized adjacency used by the head
};

/// y = A_norm X theta + b
Vector head_forward(const Matrix& graph_norm, const Matrix& inputs, const HeadParams& head);

/// y = normalize(L2G(V)) U theta + b; positions are sign(y).
ModelOutput l2gmom_forward(const Matrix& v, const Matrix& u, const unroll::UnrollParams& unroll,
                           const HeadParams& head);

/// x = tanh(normalize(L2G(V)) X theta + b) with X = U (HeadInput::features)
/// or X = V (HeadInput::lookback).
ModelOutput l2gmom_sr_forward(const Matrix& v, const Matrix& u, const unroll::UnrollParams& unroll,
                              const HeadParams& head, HeadInput input = HeadInput::features);

/// sign with sign(0) = 0.
Vector sign_positions(const Vector& y);

/// Ridge-stabilized least squares of targets on [inputs, 1]; the ridge applies
/// to theta only. Needs at least cols + 1 rows.
HeadParams linreg_fit(const Matrix& inputs, const Vector& targets, double ridge = 1e-6);
Vector linreg_predict(const Matrix& inputs, const HeadParams& head);

/// Pooled least squares of targets on A_norm,t U_t for every date t.
HeadParams fit_on_graphs(std::span<const Matrix> graphs_norm, std::span<const Matrix> inputs,
                         std::span<const Vector> targets, double ridge = 1e-6);

struct GlinregFit {
  HeadParams head;
  int excluded_dates = 0;  // solver did not converge
};

/// Learns each date's graph with pds_solve on V_t, normalizes it, and fits the
/// head on the stacked A_norm U rows. Non-converged dates are left out.
GlinregFit glinreg_fit(std::span<const Matrix> v, std::span<const Matrix> u, std::span<const Vector> targets,
                       const graph::SolverConfig& solver, double ridge = 1e-6);

nlohmann::json to_json(const HeadParams& head);
HeadParams head_params_from_json(const nlohmann::json& j);

}  // namespace l2gmom::model
