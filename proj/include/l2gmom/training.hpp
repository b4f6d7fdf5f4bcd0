#pragma once

#include "l2gmom/common.hpp"
#include "l2gmom/dataset.hpp"
#include "l2gmom/graph_solver.hpp"
#include "l2gmom/model.hpp"
#include "l2gmom/unroll.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace l2gmom::training {

inline constexpr int kCheckpointSchemaVersion = 1;

enum class LossKind { mse, neg_sharpe };

std::string_view to_string(LossKind kind);
LossKind loss_kind_from_string(std::string_view name);

/// MSE for L2GMOM, negative Sharpe for L2GMOM_SR.
LossKind default_loss(model::ModelKind kind);

// ---------------------------------------------------------------- losses

/// Mean of squared residuals. Throws on empty or misaligned input.
double loss_mse(const Vector& y, const Vector& targets);

/// R = x * sigma_tgt / sigma_ann * r.
Vector scaled_returns(const Vector& x, const Vector& returns, const Vector& sigma_ann, double sigma_tgt = 0.15);

/// -mean(R) sqrt(252) / sqrt(mean(R^2) - mean(R)^2). Throws "degenerate
/// Sharpe" on zero variance and on fewer than two samples.
double loss_neg_sharpe(const Vector& x, const Vector& returns, const Vector& sigma_ann, double sigma_tgt = 0.15);
double neg_sharpe_of(const Vector& r_scaled);

struct LossValue {
  double value = 0.0;
  Vector grad;  // d loss / d input
};

LossValue mse_with_grad(const Vector& y, const Vector& targets);

/// Negative Sharpe of R with eps added inside the root; gradient is w.r.t. R.
LossValue neg_sharpe_with_grad(const Vector& r_scaled, double eps = 1e-12);

// ------------------------------------------------------------- optimizer

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

class Adam {
public:
  Adam(AdamConfig cfg, Eigen::Index n_params);
  void step(Vector& params, const Vector& grad);
  long steps() const { return t_; }

private:
  AdamConfig cfg_;
  Vector m_, v_;
  long t_ = 0;
};

// --------------------------------------------------------------- network

/// Learnable parameters of L2GMOM / L2GMOM_SR.
struct Network {
  model::ModelKind kind = model::ModelKind::l2gmom;
  model::HeadInput input = model::HeadInput::features;
  unroll::UnrollParams unroll;
  model::HeadParams head;

  int depth() const { return unroll.depth(); }
  Vector flatten() const;
  void assign(const Vector& flat);
  void validate() const;
};

/// Initial parameters: alpha = beta = 1, gamma = 0.1, each times
/// exp(N(0, init_scale^2)); theta ~ N(0, head_init_scale^2), b = 0.
Network init_network(model::ModelKind kind, int depth, model::HeadInput input, Eigen::Index head_width,
                     double init_scale, double head_init_scale, std::uint64_t seed);

/// Output for one cross-section: y (L2GMOM) or x (L2GMOM_SR).
Vector network_predict(const Network& net, const DateSample& s);

/// Forward + backward on one cross-section; `upstream` maps the output to
/// d loss / d output (called with the output). Returns the output and adds the
/// flat parameter gradient into grad.
Vector network_backprop(const Network& net, const DateSample& s,
                        const std::function<Vector(const Vector&)>& upstream, Vector& grad);

/// Normalized graph used by the head at one cross-section.
Matrix network_graph(const Network& net, const DateSample& s);

nlohmann::json to_json(const Network& net);
Network network_from_json(const nlohmann::json& j);

// -------------------------------------------------------------- training

struct TrainConfig {
  std::optional<LossKind> loss;  // default_loss(kind) when unset
  AdamConfig adam{};
  int batch_size = 16;
  int max_epochs = 100;
  int patience = 10;
  double min_delta = 1e-4;
  int ensemble_size = 5;
  std::uint64_t seed = 0;
  int depth = 20;
  double valid_fraction = 0.1;
  double sigma_tgt = 0.15;
  double init_scale = 0.1;
  double head_init_scale = 0.01;
  model::HeadInput head_input = model::HeadInput::features;
  int threads = 1;

  // Empty grids fall back to the scalar setting above.
  std::vector<int> depth_grid;
  std::vector<int> batch_grid;
  std::vector<double> lr_grid;

  std::vector<double> glinreg_alpha_grid{0.1, 0.5, 1.0, 2.0};
  std::vector<double> glinreg_beta_grid{0.1, 0.5, 1.0, 2.0};
  graph::SolverConfig solver{};
  double ridge = 1e-6;

  void validate() const;
  LossKind loss_for(model::ModelKind kind) const { return loss.value_or(default_loss(kind)); }
};

nlohmann::json to_json(const TrainConfig& cfg);
/// Overlays the keys present in j onto base.
TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig base = {});

/// Samples grouped by date, restricted to assets with observed targets.
struct SampleSet {
  std::vector<DateSample> dates;

  std::size_t size() const { return dates.size(); }
  bool empty() const { return dates.empty(); }
  Eigen::Index observations() const;
};

/// Keeps only rows with an observed next-day return; drops empty dates.
SampleSet make_sample_set(std::vector<DateSample> samples);

/// Chronological split; the validation part holds the most recent
/// ceil(valid_fraction * dates) dates and at least one.
std::pair<SampleSet, SampleSet> split_validation(const SampleSet& all, double valid_fraction);

struct EpochLog {
  int epoch = 0;
  double train_loss = kNaN;
  double valid_loss = kNaN;
};

struct TrainResult {
  Network network;
  std::vector<EpochLog> curve;
  int best_epoch = 0;
  double best_valid_loss = kNaN;
  std::uint64_t seed = 0;
};

/// Pooled loss of a network over a sample set.
double evaluate_loss(const Network& net, const SampleSet& set, LossKind loss, double sigma_tgt);

/// Adam on date mini-batches with early stopping; returns the parameters of
/// the trained epoch with the lowest validation loss. Epoch 0 in the curve is
/// the initialization.
TrainResult train_one(model::ModelKind kind, const SampleSet& train, const SampleSet& valid,
                      const TrainConfig& cfg, std::uint64_t seed);

struct Ensemble {
  model::ModelKind kind = model::ModelKind::l2gmom;
  std::vector<Network> members;

  /// Member-averaged output (y or x) for one cross-section.
  Vector predict(const DateSample& s) const;
  /// sign of the averaged y for L2GMOM, the averaged x for L2GMOM_SR.
  Vector positions(const DateSample& s) const;
};

struct EnsembleResult {
  Ensemble ensemble;
  std::vector<TrainResult> members;
};

/// Members use seeds cfg.seed + k. Reuses `first` as member 0 when given.
EnsembleResult train_ensemble(model::ModelKind kind, const SampleSet& train, const SampleSet& valid,
                              const TrainConfig& cfg, std::optional<TrainResult> first = std::nullopt);

nlohmann::json checkpoint_json(const Ensemble& e, const nlohmann::json& hyperparameters);
Ensemble ensemble_from_checkpoint(const nlohmann::json& j);

// ---------------------------------------------------------- walk-forward

struct Window {
  Date train_start;
  Date train_end;
  Date test_start;
  Date test_end;
  double valid_fraction = 0.1;
};

struct WalkForwardPlan {
  std::vector<Window> windows;

  /// Checks ordering, disjoint consecutive tests and expanding train windows,
  /// all within the given calendar.
  void validate(const std::vector<Date>& dates) const;
};

/// Expanding windows on trading-day rows: the first training period has
/// initial_train_days rows, each test period test_days rows; the last test
/// window is truncated at the end of the data. max_windows = 0 means no limit.
WalkForwardPlan expanding_plan(const std::vector<Date>& dates, int initial_train_days, int test_days,
                               double valid_fraction = 0.1, int max_windows = 0);

/// Calendar-year windows: train from the first date up to the end of
/// first_test_year - 1, then test blocks of test_years years.
WalkForwardPlan yearly_plan(const std::vector<Date>& dates, int first_test_year, int test_years,
                            double valid_fraction = 0.1);

nlohmann::json to_json(const WalkForwardPlan& plan);
WalkForwardPlan walk_forward_plan_from_json(const nlohmann::json& j);

struct WalkForwardResult {
  std::vector<Eigen::Index> test_rows;  // union of test windows, ascending
  /// n_dates x n_assets positions per strategy; NaN outside test rows and
  /// where the strategy has no signal.
  std::map<model::ModelKind, Matrix> positions;
  std::vector<nlohmann::json> window_logs;
  std::map<model::ModelKind, std::vector<nlohmann::json>> checkpoints;
};

using ProgressFn = std::function<void(const std::string&)>;

WalkForwardResult walk_forward(const Dataset& data, const WalkForwardPlan& plan,
                               std::span<const model::ModelKind> strategies, const TrainConfig& cfg,
                               const ProgressFn& progress = {});

/// Rows of `dates` within [first, last].
std::pair<Eigen::Index, Eigen::Index> row_range(const std::vector<Date>& dates, Date first, Date last);

}  // namespace l2gmom::training
