#include "l2gmom/training.hpp"

#include "l2gmom/errors.hpp"
#include "l2gmom/random.hpp"

#include <algorithm>
#include <cmath>
#include <future>
#include <numeric>
#include <sstream>

namespace l2gmom::training {

using model::ModelKind;

std::string_view to_string(LossKind kind) { return kind == LossKind::mse ? "mse" : "neg_sharpe"; }

LossKind loss_kind_from_string(std::string_view name) {
  if (name == "mse") return LossKind::mse;
  if (name == "neg_sharpe") return LossKind::neg_sharpe;
  throw ValidationError("unknown loss '" + std::string(name) + "'");
}

LossKind default_loss(ModelKind kind) { return kind == ModelKind::l2gmom_sr ? LossKind::neg_sharpe : LossKind::mse; }

// ------------------------------------------------------------------ losses

double loss_mse(const Vector& y, const Vector& targets) { return mse_with_grad(y, targets).value; }

LossValue mse_with_grad(const Vector& y, const Vector& targets) {
  if (y.size() != targets.size()) throw ValidationError("loss_mse: predictions and targets differ in length");
  if (y.size() == 0) throw ValidationError("loss_mse: empty sample set");
  const Vector resid = y - targets;
  const double n = static_cast<double>(y.size());
  return {resid.squaredNorm() / n, 2.0 * resid / n};
}

Vector scaled_returns(const Vector& x, const Vector& returns, const Vector& sigma_ann, double sigma_tgt) {
  if (x.size() != returns.size() || x.size() != sigma_ann.size())
    throw ValidationError("scaled_returns: inputs differ in length");
  return x.array() * sigma_tgt / sigma_ann.array() * returns.array();
}

double neg_sharpe_of(const Vector& r) {
  if (r.size() < 2) throw NumericError("degenerate Sharpe: fewer than two samples");
  const double m = r.mean();
  const double var = (r.array() - m).square().mean();
  if (!(var > 1e-12 * r.squaredNorm() / static_cast<double>(r.size())))
    throw NumericError("degenerate Sharpe: zero variance");
  return -m * std::sqrt(static_cast<double>(kTradingDays)) / std::sqrt(var);
}

double loss_neg_sharpe(const Vector& x, const Vector& returns, const Vector& sigma_ann, double sigma_tgt) {
  return neg_sharpe_of(scaled_returns(x, returns, sigma_ann, sigma_tgt));
}

LossValue neg_sharpe_with_grad(const Vector& r, double eps) {
  if (r.size() < 2) throw NumericError("degenerate Sharpe: fewer than two samples");
  const double n = static_cast<double>(r.size());
  const double m = r.mean();
  const double var = (r.array() - m).square().mean() + eps;
  if (!(var > 0.0)) throw NumericError("degenerate Sharpe: zero variance");
  const double s = std::sqrt(var);
  const double root = std::sqrt(static_cast<double>(kTradingDays));
  LossValue out;
  out.value = -m * root / s;
  out.grad = -root / (n * s) * (1.0 - m * (r.array() - m) / var);
  return out;
}

// ---------------------------------------------------------------- optimizer

Adam::Adam(AdamConfig cfg, Eigen::Index n_params)
    : cfg_(cfg), m_(Vector::Zero(n_params)), v_(Vector::Zero(n_params)) {}

void Adam::step(Vector& params, const Vector& grad) {
  if (grad.size() != params.size() || params.size() != m_.size()) throw ValidationError("Adam: size mismatch");
  ++t_;
  m_ = cfg_.beta1 * m_ + (1.0 - cfg_.beta1) * grad;
  v_ = cfg_.beta2 * v_ + (1.0 - cfg_.beta2) * grad.cwiseAbs2();
  const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  params.array() -= cfg_.learning_rate * (m_.array() / c1) / ((v_.array() / c2).sqrt() + cfg_.eps);
}

// ------------------------------------------------------------------ network

Vector Network::flatten() const {
  const Vector u = unroll.flatten();
  Vector flat(u.size() + head.theta.size() + 1);
  flat << u, head.theta, head.b;
  return flat;
}

void Network::assign(const Vector& flat) {
  const auto nu = 3 * static_cast<Eigen::Index>(unroll.layers());
  const auto nt = head.theta.size();
  if (flat.size() != nu + nt + 1) throw ValidationError("network parameter size mismatch");
  unroll = unroll::UnrollParams::unflatten(flat.head(nu), unroll.depth());
  head.theta = flat.segment(nu, nt);
  head.b = flat(nu + nt);
}

void Network::validate() const {
  if (kind != ModelKind::l2gmom && kind != ModelKind::l2gmom_sr)
    throw ValidationError("network kind must be l2gmom or l2gmom_sr");
  unroll.validate();
  head.validate();
}

Network init_network(ModelKind kind, int depth, model::HeadInput input, Eigen::Index head_width,
                     double init_scale, double head_init_scale, std::uint64_t seed) {
  if (depth < 1) throw ValidationError("depth must be >= 1, got " + std::to_string(depth));
  if (kind != ModelKind::l2gmom && kind != ModelKind::l2gmom_sr)
    throw ValidationError("no unrolled network for model " + std::string(model::to_string(kind)));
  Rng rng(seed);
  Network net;
  net.kind = kind;
  net.input = input;
  net.unroll = unroll::UnrollParams::constant(depth, 1.0, 1.0, 0.1);
  for (auto* raw : {&net.unroll.raw_alpha, &net.unroll.raw_beta, &net.unroll.raw_gamma})
    for (Eigen::Index l = 0; l < raw->size(); ++l) (*raw)(l) += init_scale * rng.normal();
  net.head.theta.resize(head_width);
  for (Eigen::Index k = 0; k < head_width; ++k) net.head.theta(k) = head_init_scale * rng.normal();
  net.head.b = 0.0;
  return net;
}

namespace {

const Matrix& head_inputs(const Network& net, const DateSample& s) {
  if (net.input == model::HeadInput::lookback) {
    if (s.v.size() == 0) throw ValidationError("lookback head input requires samples built with V");
    return s.v;
  }
  return s.u;
}

struct ForwardState {
  unroll::UnrollResult unrolled;
  Matrix graph_norm;
  Vector x_theta;
  Vector out;
};

ForwardState network_forward(const Network& net, const DateSample& s) {
  ForwardState st;
  st.unrolled = unroll::forward_distances(s.distances, net.unroll);
  st.graph_norm = model::normalize_graph(st.unrolled.graph.adjacency);
  const Matrix& x = head_inputs(net, s);
  if (x.cols() != net.head.theta.size()) throw ValidationError("head width does not match its inputs");
  st.x_theta = x * net.head.theta;
  st.out = (st.graph_norm * st.x_theta).array() + net.head.b;
  if (net.kind == ModelKind::l2gmom_sr) st.out = st.out.array().tanh();
  return st;
}

void network_backward(const Network& net, const DateSample& s, const ForwardState& st, const Vector& g_out,
                      Vector& grad) {
  Vector g_z = g_out;
  if (net.kind == ModelKind::l2gmom_sr) g_z.array() *= 1.0 - st.out.array().square();
  const Matrix& x = head_inputs(net, s);
  const Matrix g_norm = g_z * st.x_theta.transpose();
  const Matrix g_a = model::normalize_graph_backward(st.unrolled.graph.adjacency, g_norm);
  const auto g_unroll = unroll::backward(st.unrolled.tape, g_a);

  const auto nu = 3 * static_cast<Eigen::Index>(net.unroll.layers());
  const auto nt = net.head.theta.size();
  grad.head(nu) += g_unroll.raw.flatten();
  grad.segment(nu, nt) += x.transpose() * (st.graph_norm.transpose() * g_z);
  grad(nu + nt) += g_z.sum();
}

}  // namespace

Vector network_predict(const Network& net, const DateSample& s) { return network_forward(net, s).out; }

Matrix network_graph(const Network& net, const DateSample& s) { return network_forward(net, s).graph_norm; }

Vector network_backprop(const Network& net, const DateSample& s, const std::function<Vector(const Vector&)>& upstream,
                        Vector& grad) {
  auto st = network_forward(net, s);
  network_backward(net, s, st, upstream(st.out), grad);
  return st.out;
}

nlohmann::json to_json(const Network& net) {
  return {{"kind", model::to_string(net.kind)},
          {"head_input", model::to_string(net.input)},
          {"unroll", unroll::to_json(net.unroll)},
          {"head", model::to_json(net.head)}};
}

Network network_from_json(const nlohmann::json& j) {
  Network net;
  try {
    net.kind = model::model_kind_from_string(j.at("kind").get<std::string>());
    net.input = model::head_input_from_string(j.value("head_input", std::string("features")));
    net.unroll = unroll::unroll_params_from_json(j.at("unroll"));
    net.head = model::head_params_from_json(j.at("head"));
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("network checkpoint: ") + e.what());
  }
  net.validate();
  return net;
}

// ------------------------------------------------------------------ config

void TrainConfig::validate() const {
  auto positive = [](bool ok, const char* name) {
    if (!ok) throw ValidationError(std::string("train config: ") + name + " must be positive");
  };
  positive(adam.learning_rate >= 0.0, "learning_rate");
  positive(adam.beta1 >= 0.0 && adam.beta1 < 1.0 && adam.beta2 >= 0.0 && adam.beta2 < 1.0, "adam betas");
  positive(adam.eps > 0.0, "adam eps");
  positive(batch_size >= 1, "batch_size");
  positive(max_epochs >= 1, "max_epochs");
  positive(patience >= 1, "patience");
  positive(min_delta >= 0.0, "min_delta");
  positive(ensemble_size >= 1, "ensemble_size");
  positive(sigma_tgt > 0.0, "sigma_tgt");
  positive(init_scale >= 0.0, "init_scale");
  positive(head_init_scale >= 0.0, "head_init_scale");
  positive(threads >= 1, "threads");
  if (depth < 1) throw ValidationError("train config: depth must be >= 1, got " + std::to_string(depth));
  for (int d : depth_grid)
    if (d < 1) throw ValidationError("train config: depth must be >= 1, got " + std::to_string(d));
  for (int b : batch_grid) positive(b >= 1, "batch_size");
  for (double lr : lr_grid) positive(lr >= 0.0, "learning_rate");
  for (double a : glinreg_alpha_grid) positive(a > 0.0, "glinreg alpha");
  for (double b : glinreg_beta_grid) positive(b > 0.0, "glinreg beta");
  if (glinreg_alpha_grid.empty() || glinreg_beta_grid.empty())
    throw ValidationError("train config: glinreg grids must not be empty");
  if (!(valid_fraction > 0.0 && valid_fraction < 1.0))
    throw ValidationError("train config: valid_fraction must lie in (0, 1)");
  solver.validate();
}

nlohmann::json to_json(const TrainConfig& c) {
  nlohmann::json j{{"learning_rate", c.adam.learning_rate},
                   {"adam_beta1", c.adam.beta1},
                   {"adam_beta2", c.adam.beta2},
                   {"adam_eps", c.adam.eps},
                   {"batch_size", c.batch_size},
                   {"max_epochs", c.max_epochs},
                   {"patience", c.patience},
                   {"min_delta", c.min_delta},
                   {"ensemble_size", c.ensemble_size},
                   {"seed", c.seed},
                   {"depth", c.depth},
                   {"valid_fraction", c.valid_fraction},
                   {"sigma_tgt", c.sigma_tgt},
                   {"init_scale", c.init_scale},
                   {"head_init_scale", c.head_init_scale},
                   {"head_input", model::to_string(c.head_input)},
                   {"threads", c.threads},
                   {"depth_grid", c.depth_grid},
                   {"batch_grid", c.batch_grid},
                   {"lr_grid", c.lr_grid},
                   {"glinreg_alpha_grid", c.glinreg_alpha_grid},
                   {"glinreg_beta_grid", c.glinreg_beta_grid},
                   {"solver_max_iters", c.solver.max_iters},
                   {"solver_tol", c.solver.tol},
                   {"solver_gamma", c.solver.gamma},
                   {"ridge", c.ridge}};
  j["loss"] = c.loss ? nlohmann::json(std::string(to_string(*c.loss))) : nlohmann::json(nullptr);
  return j;
}

TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig c) {
  if (!j.is_object()) throw ValidationError("train config must be a JSON object");
  static const std::vector<std::string> known{
      "loss",       "learning_rate", "adam_beta1", "adam_beta2",  "adam_eps",         "batch_size",
      "max_epochs", "patience",      "min_delta",  "ensemble_size", "seed",          "depth",
      "valid_fraction", "sigma_tgt", "init_scale", "head_init_scale", "head_input", "threads",          "depth_grid",
      "batch_grid", "lr_grid",       "glinreg_alpha_grid", "glinreg_beta_grid", "solver_max_iters",
      "solver_tol", "solver_gamma",  "ridge"};
  for (const auto& [key, _] : j.items())
    if (std::find(known.begin(), known.end(), key) == known.end())
      throw ValidationError("train config: unknown key '" + key + "'");
  try {
    if (j.contains("loss")) {
      if (j["loss"].is_null()) c.loss.reset();
      else c.loss = loss_kind_from_string(j["loss"].get<std::string>());
    }
    auto get = [&](const char* key, auto& field) {
      if (j.contains(key)) field = j[key].get<std::decay_t<decltype(field)>>();
    };
    get("learning_rate", c.adam.learning_rate);
    get("adam_beta1", c.adam.beta1);
    get("adam_beta2", c.adam.beta2);
    get("adam_eps", c.adam.eps);
    get("batch_size", c.batch_size);
    get("max_epochs", c.max_epochs);
    get("patience", c.patience);
    get("min_delta", c.min_delta);
    get("ensemble_size", c.ensemble_size);
    get("seed", c.seed);
    get("depth", c.depth);
    get("valid_fraction", c.valid_fraction);
    get("sigma_tgt", c.sigma_tgt);
    get("init_scale", c.init_scale);
    get("head_init_scale", c.head_init_scale);
    get("threads", c.threads);
    get("depth_grid", c.depth_grid);
    get("batch_grid", c.batch_grid);
    get("lr_grid", c.lr_grid);
    get("glinreg_alpha_grid", c.glinreg_alpha_grid);
    get("glinreg_beta_grid", c.glinreg_beta_grid);
    get("solver_max_iters", c.solver.max_iters);
    get("solver_tol", c.solver.tol);
    get("solver_gamma", c.solver.gamma);
    get("ridge", c.ridge);
    if (j.contains("head_input")) c.head_input = model::head_input_from_string(j["head_input"].get<std::string>());
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("train config: ") + e.what());
  }
  c.validate();
  return c;
}

// ----------------------------------------------------------------- samples

Eigen::Index SampleSet::observations() const {
  Eigen::Index n = 0;
  for (const auto& s : dates) n += static_cast<Eigen::Index>(s.target_rows().size());
  return n;
}

SampleSet make_sample_set(std::vector<DateSample> samples) {
  SampleSet set;
  for (auto& s : samples)
    if (!s.target_rows().empty()) set.dates.push_back(std::move(s));
  return set;
}

std::pair<SampleSet, SampleSet> split_validation(const SampleSet& all, double valid_fraction) {
  if (all.size() < 2) throw ValidationError("need at least two training dates to hold out validation");
  auto n_valid = static_cast<std::size_t>(std::ceil(valid_fraction * static_cast<double>(all.size())));
  n_valid = std::clamp<std::size_t>(n_valid, 1, all.size() - 1);
  const auto cut = all.size() - n_valid;
  SampleSet train, valid;
  train.dates.assign(all.dates.begin(), all.dates.begin() + static_cast<std::ptrdiff_t>(cut));
  valid.dates.assign(all.dates.begin() + static_cast<std::ptrdiff_t>(cut), all.dates.end());
  return {std::move(train), std::move(valid)};
}

namespace {

Vector select(const Vector& x, const std::vector<Eigen::Index>& rows) {
  Vector out(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t k = 0; k < rows.size(); ++k) out(static_cast<Eigen::Index>(k)) = x(rows[k]);
  return out;
}

Vector scatter(const Vector& g, const std::vector<Eigen::Index>& rows, Eigen::Index n) {
  Vector out = Vector::Zero(n);
  for (std::size_t k = 0; k < rows.size(); ++k) out(rows[k]) = g(static_cast<Eigen::Index>(k));
  return out;
}

Vector mse_targets(const DateSample& s, const std::vector<Eigen::Index>& rows) {
  return select(s.next_return, rows).array() / select(s.sigma_daily, rows).array();
}

bool usable(const DateSample& s, LossKind loss) {
  return loss == LossKind::mse || s.target_rows().size() >= 2;
}

// Pooled loss and (optionally) gradient over a group of dates.
double batch_loss(const Network& net, const std::vector<const DateSample*>& batch, LossKind loss, double sigma_tgt,
                  Vector* grad) {
  std::vector<std::vector<Eigen::Index>> rows;
  std::vector<ForwardState> states;
  Eigen::Index total = 0;
  for (const auto* s : batch) {
    rows.push_back(s->target_rows());
    total += static_cast<Eigen::Index>(rows.back().size());
    states.push_back(network_forward(net, *s));
  }
  if (total == 0) throw ValidationError("empty training batch");

  Vector pred(total), aux(total);
  Eigen::Index off = 0;
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const auto n = static_cast<Eigen::Index>(rows[b].size());
    pred.segment(off, n) = select(states[b].out, rows[b]);
    if (loss == LossKind::mse) {
      aux.segment(off, n) = mse_targets(*batch[b], rows[b]);
    } else {
      aux.segment(off, n) = sigma_tgt * select(batch[b]->next_return, rows[b]).array() /
                            select(batch[b]->sigma_ann, rows[b]).array();
    }
    off += n;
  }

  LossValue lv;
  Vector g_pred;
  if (loss == LossKind::mse) {
    lv = mse_with_grad(pred, aux);
    g_pred = lv.grad;
  } else {
    lv = neg_sharpe_with_grad(pred.cwiseProduct(aux));
    g_pred = lv.grad.cwiseProduct(aux);
  }
  if (grad) {
    off = 0;
    for (std::size_t b = 0; b < batch.size(); ++b) {
      const auto n = static_cast<Eigen::Index>(rows[b].size());
      network_backward(net, *batch[b], states[b], scatter(g_pred.segment(off, n), rows[b], batch[b]->size()), *grad);
      off += n;
    }
  }
  return lv.value;
}

std::vector<const DateSample*> usable_dates(const SampleSet& set, LossKind loss) {
  std::vector<const DateSample*> out;
  for (const auto& s : set.dates)
    if (usable(s, loss)) out.push_back(&s);
  return out;
}

}  // namespace

double evaluate_loss(const Network& net, const SampleSet& set, LossKind loss, double sigma_tgt) {
  const auto dates = usable_dates(set, loss);
  if (dates.empty()) throw ValidationError("no usable dates to evaluate the loss on");
  return batch_loss(net, dates, loss, sigma_tgt, nullptr);
}

TrainResult train_one(ModelKind kind, const SampleSet& train, const SampleSet& valid, const TrainConfig& cfg,
                      std::uint64_t seed) {
  cfg.validate();
  if (kind != ModelKind::l2gmom && kind != ModelKind::l2gmom_sr)
    throw ValidationError("train_one trains l2gmom or l2gmom_sr, got " + std::string(model::to_string(kind)));
  const auto loss = cfg.loss_for(kind);
  const auto train_dates = usable_dates(train, loss);
  if (train_dates.empty()) throw ValidationError("no usable training dates");
  if (usable_dates(valid, loss).empty()) throw ValidationError("training needs at least one validation date");

  const auto& first = *train_dates.front();
  const auto width = cfg.head_input == model::HeadInput::lookback ? first.v.cols() : first.u.cols();
  Network net = init_network(kind, cfg.depth, cfg.head_input, width, cfg.init_scale, cfg.head_init_scale, seed);

  TrainResult result;
  result.seed = seed;
  result.network = net;
  const double initial = evaluate_loss(net, valid, loss, cfg.sigma_tgt);
  if (!std::isfinite(initial))
    throw NumericError("validation loss is not finite at initialization (seed " + std::to_string(seed) + ")");
  result.curve.push_back({0, kNaN, initial});
  result.best_valid_loss = std::numeric_limits<double>::infinity();

  Vector params = net.flatten();
  Adam adam(cfg.adam, params.size());
  Rng rng(seed ^ 0x9e3779b97f4a7c15ULL);
  std::vector<const DateSample*> order = train_dates;
  double patience_ref = initial;
  int stale = 0;

  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    for (std::size_t k = order.size(); k > 1; --k) std::swap(order[k - 1], order[rng.index(k)]);
    double sum = 0.0;
    int batches = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      const auto stop = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      std::vector<const DateSample*> batch(order.begin() + static_cast<std::ptrdiff_t>(start),
                                           order.begin() + static_cast<std::ptrdiff_t>(stop));
      Vector grad = Vector::Zero(params.size());
      const double value = batch_loss(net, batch, loss, cfg.sigma_tgt, &grad);
      if (!std::isfinite(value) || !grad.allFinite()) {
        std::ostringstream msg;
        msg << "training diverged (seed " << seed << ", epoch " << epoch << ", batch " << batches
            << "): loss " << value << ", gradient norm " << grad.norm() << ", parameter norm " << params.norm();
        throw NumericError(msg.str());
      }
      adam.step(params, grad);
      net.assign(params);
      sum += value;
      ++batches;
    }
    const double v = evaluate_loss(net, valid, loss, cfg.sigma_tgt);
    if (!std::isfinite(v))
      throw NumericError("validation loss became non-finite (seed " + std::to_string(seed) + ", epoch " +
                         std::to_string(epoch) + ")");
    result.curve.push_back({epoch, sum / batches, v});
    if (v < result.best_valid_loss) {
      result.best_valid_loss = v;
      result.best_epoch = epoch;
      result.network = net;
    }
    if (v < patience_ref - cfg.min_delta * std::abs(patience_ref)) {
      patience_ref = v;
      stale = 0;
    } else if (++stale >= cfg.patience) {
      break;
    }
  }
  return result;
}

Vector Ensemble::predict(const DateSample& s) const {
  if (members.empty()) throw ValidationError("ensemble has no members");
  Vector sum = Vector::Zero(s.size());
  for (const auto& m : members) sum += network_predict(m, s);
  return sum / static_cast<double>(members.size());
}

Vector Ensemble::positions(const DateSample& s) const {
  const Vector avg = predict(s);
  return kind == ModelKind::l2gmom ? model::sign_positions(avg) : avg;
}

EnsembleResult train_ensemble(ModelKind kind, const SampleSet& train, const SampleSet& valid, const TrainConfig& cfg,
                              std::optional<TrainResult> first) {
  cfg.validate();
  EnsembleResult out;
  out.ensemble.kind = kind;
  out.members.resize(static_cast<std::size_t>(cfg.ensemble_size));
  std::vector<std::string> failures;
  const int start = first ? 1 : 0;
  if (first) out.members[0] = std::move(*first);

  auto run = [&](int k) { return train_one(kind, train, valid, cfg, cfg.seed + static_cast<std::uint64_t>(k)); };
  for (int k = start; k < cfg.ensemble_size; k += cfg.threads) {
    std::vector<std::future<TrainResult>> jobs;
    for (int j = k; j < std::min(cfg.ensemble_size, k + cfg.threads); ++j)
      jobs.push_back(std::async(cfg.threads > 1 ? std::launch::async : std::launch::deferred, run, j));
    for (std::size_t j = 0; j < jobs.size(); ++j) {
      const auto idx = static_cast<std::size_t>(k) + j;
      try {
        out.members[idx] = jobs[j].get();
      } catch (const std::exception& e) {
        failures.push_back("member " + std::to_string(idx) + ": " + e.what());
      }
    }
  }
  if (!failures.empty()) {
    std::string msg = "ensemble training failed";
    for (const auto& f : failures) msg += "; " + f;
    throw NumericError(msg);
  }
  for (const auto& m : out.members) out.ensemble.members.push_back(m.network);
  return out;
}

nlohmann::json checkpoint_json(const Ensemble& e, const nlohmann::json& hyperparameters) {
  nlohmann::json members = nlohmann::json::array();
  for (const auto& m : e.members) members.push_back(to_json(m));
  return {{"schema_version", kCheckpointSchemaVersion},
          {"kind", model::to_string(e.kind)},
          {"hyperparameters", hyperparameters},
          {"members", members}};
}

Ensemble ensemble_from_checkpoint(const nlohmann::json& j) {
  Ensemble e;
  try {
    const int version = j.at("schema_version").get<int>();
    if (version != kCheckpointSchemaVersion)
      throw ValidationError("unsupported checkpoint schema_version " + std::to_string(version));
    e.kind = model::model_kind_from_string(j.at("kind").get<std::string>());
    for (const auto& m : j.at("members")) e.members.push_back(network_from_json(m));
  } catch (const nlohmann::json::exception& ex) {
    throw ValidationError(std::string("checkpoint: ") + ex.what());
  }
  if (e.members.empty()) throw ValidationError("checkpoint has no members");
  for (const auto& m : e.members)
    if (m.kind != e.kind) throw ValidationError("checkpoint member kind differs from the ensemble kind");
  return e;
}

// ------------------------------------------------------------ walk-forward

std::pair<Eigen::Index, Eigen::Index> row_range(const std::vector<Date>& dates, Date first, Date last) {
  const auto lo = std::lower_bound(dates.begin(), dates.end(), first);
  const auto hi = std::upper_bound(dates.begin(), dates.end(), last);
  if (lo >= hi)
    throw ValidationError("no trading dates between " + format_date(first) + " and " + format_date(last));
  return {static_cast<Eigen::Index>(lo - dates.begin()), static_cast<Eigen::Index>(hi - dates.begin()) - 1};
}

void WalkForwardPlan::validate(const std::vector<Date>& dates) const {
  if (windows.empty()) throw ValidationError("walk-forward plan has no windows");
  if (dates.empty()) throw ValidationError("walk-forward plan needs a non-empty calendar");
  Eigen::Index prev_test_end = -1;
  Eigen::Index prev_train_start = -1;
  Eigen::Index prev_train_end = -1;
  for (std::size_t k = 0; k < windows.size(); ++k) {
    const auto& w = windows[k];
    const std::string tag = "window " + std::to_string(k) + ": ";
    if (!(w.train_start <= w.train_end && w.train_end < w.test_start && w.test_start <= w.test_end))
      throw ValidationError(tag + "dates must satisfy train_start <= train_end < test_start <= test_end");
    if (w.train_start < dates.front() || w.test_end > dates.back())
      throw ValidationError(tag + "outside the data range " + format_date(dates.front()) + " to " +
                            format_date(dates.back()));
    if (!(w.valid_fraction > 0.0 && w.valid_fraction < 1.0))
      throw ValidationError(tag + "valid_fraction must lie in (0, 1)");
    const auto [tr0, tr1] = row_range(dates, w.train_start, w.train_end);
    const auto [te0, te1] = row_range(dates, w.test_start, w.test_end);
    if (tr1 >= te0) throw ValidationError(tag + "training overlaps the test period");
    if (k > 0) {
      if (te0 != prev_test_end + 1) throw ValidationError(tag + "test windows must be consecutive and disjoint");
      if (tr0 > prev_train_start || tr1 < prev_train_end)
        throw ValidationError(tag + "training windows must expand");
    }
    prev_test_end = te1;
    prev_train_start = tr0;
    prev_train_end = tr1;
  }
}

WalkForwardPlan expanding_plan(const std::vector<Date>& dates, int initial_train_days, int test_days,
                               double valid_fraction, int max_windows) {
  if (initial_train_days < 2 || test_days < 1) throw ValidationError("expanding plan needs positive window sizes");
  const auto n = static_cast<Eigen::Index>(dates.size());
  if (n <= initial_train_days)
    throw ValidationError("expanding plan: " + std::to_string(initial_train_days) + " training days leave no test data");
  WalkForwardPlan plan;
  Eigen::Index train_end = initial_train_days - 1;
  while (train_end + 1 < n && (max_windows == 0 || static_cast<int>(plan.windows.size()) < max_windows)) {
    const auto test_end = std::min(n - 1, train_end + test_days);
    plan.windows.push_back({dates.front(), dates[static_cast<std::size_t>(train_end)],
                            dates[static_cast<std::size_t>(train_end + 1)], dates[static_cast<std::size_t>(test_end)],
                            valid_fraction});
    train_end = test_end;
  }
  return plan;
}

WalkForwardPlan yearly_plan(const std::vector<Date>& dates, int first_test_year, int test_years, double valid_fraction) {
  using namespace std::chrono;
  if (test_years < 1) throw ValidationError("yearly plan: test_years must be >= 1");
  if (dates.empty()) throw ValidationError("yearly plan needs a non-empty calendar");
  WalkForwardPlan plan;
  int year = first_test_year;
  while (true) {
    const Date start = sys_days(std::chrono::year(year) / January / 1);
    const Date end = sys_days(std::chrono::year(year + test_years - 1) / December / 31);
    const auto lo = std::lower_bound(dates.begin(), dates.end(), start);
    if (lo == dates.end()) break;
    if (lo == dates.begin()) throw ValidationError("yearly plan: no training data before " + format_date(start));
    const auto hi = std::upper_bound(dates.begin(), dates.end(), end);
    plan.windows.push_back({dates.front(), *(lo - 1), *lo, *(hi - 1), valid_fraction});
    year += test_years;
  }
  if (plan.windows.empty()) throw ValidationError("yearly plan: no test dates from " + std::to_string(first_test_year));
  return plan;
}

nlohmann::json to_json(const WalkForwardPlan& plan) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& w : plan.windows)
    arr.push_back({{"train_start", format_date(w.train_start)},
                   {"train_end", format_date(w.train_end)},
                   {"test_start", format_date(w.test_start)},
                   {"test_end", format_date(w.test_end)},
                   {"valid_fraction", w.valid_fraction}});
  return {{"windows", arr}};
}

WalkForwardPlan walk_forward_plan_from_json(const nlohmann::json& j) {
  WalkForwardPlan plan;
  try {
    for (const auto& w : j.at("windows"))
      plan.windows.push_back({parse_date(w.at("train_start").get<std::string>()),
                              parse_date(w.at("train_end").get<std::string>()),
                              parse_date(w.at("test_start").get<std::string>()),
                              parse_date(w.at("test_end").get<std::string>()), w.value("valid_fraction", 0.1)});
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("walk-forward plan: ") + e.what());
  }
  return plan;
}

namespace {

nlohmann::json curve_json(const TrainResult& r) {
  nlohmann::json curve = nlohmann::json::array();
  for (const auto& e : r.curve)
    curve.push_back({{"epoch", e.epoch},
                     {"train_loss", std::isfinite(e.train_loss) ? nlohmann::json(e.train_loss) : nlohmann::json()},
                     {"valid_loss", e.valid_loss}});
  return {{"seed", r.seed}, {"best_epoch", r.best_epoch}, {"best_valid_loss", r.best_valid_loss}, {"curve", curve}};
}

struct LinearRows {
  Matrix x;
  Vector y;
};

// Head inputs (A_norm U or U) and MSE targets stacked over observed rows.
LinearRows stack_rows(const SampleSet& set, const std::vector<Matrix>& inputs) {
  Eigen::Index total = 0;
  for (const auto& s : set.dates) total += static_cast<Eigen::Index>(s.target_rows().size());
  const auto width = inputs.empty() ? 0 : inputs.front().cols();
  LinearRows out{Matrix(total, width), Vector(total)};
  Eigen::Index r = 0;
  for (std::size_t d = 0; d < set.size(); ++d) {
    const auto rows = set.dates[d].target_rows();
    const Vector t = mse_targets(set.dates[d], rows);
    for (std::size_t k = 0; k < rows.size(); ++k, ++r) {
      out.x.row(r) = inputs[d].row(rows[k]);
      out.y(r) = t(static_cast<Eigen::Index>(k));
    }
  }
  return out;
}

struct GraphInputs {
  std::vector<Matrix> inputs;
  int not_converged = 0;
};

GraphInputs graph_inputs(const std::vector<DateSample>& samples, const graph::SolverConfig& solver) {
  GraphInputs out;
  out.inputs.reserve(samples.size());
  for (const auto& s : samples) {
    const auto res = graph::pds_solve(s.distances, solver);
    if (!res.converged) ++out.not_converged;
    out.inputs.push_back(model::normalize_graph(res.graph.adjacency) * s.u);
  }
  return out;
}

std::vector<Matrix> plain_inputs(const std::vector<DateSample>& samples) {
  std::vector<Matrix> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(s.u);
  return out;
}

// Converged-only subset of a training set for GLinReg.
std::pair<SampleSet, std::vector<Matrix>> converged_subset(const SampleSet& set, const graph::SolverConfig& solver,
                                                           int& excluded) {
  std::pair<SampleSet, std::vector<Matrix>> out;
  for (const auto& s : set.dates) {
    const auto res = graph::pds_solve(s.distances, solver);
    if (!res.converged) {
      ++excluded;
      continue;
    }
    out.first.dates.push_back(s);
    out.second.push_back(model::normalize_graph(res.graph.adjacency) * s.u);
  }
  return out;
}

void write_positions(Matrix& positions, const DateSample& s, const Vector& x) {
  for (Eigen::Index k = 0; k < s.size(); ++k) positions(s.date, s.assets[static_cast<std::size_t>(k)]) = x(k);
}

bool is_learned(ModelKind k) {
  return k == ModelKind::linreg || k == ModelKind::glinreg || k == ModelKind::l2gmom || k == ModelKind::l2gmom_sr;
}

}  // namespace

WalkForwardResult walk_forward(const Dataset& data, const WalkForwardPlan& plan, std::span<const ModelKind> strategies,
                               const TrainConfig& cfg, const ProgressFn& progress) {
  cfg.validate();
  plan.validate(data.prices.dates);
  for (auto k : strategies)
    if (!is_learned(k))
      throw ValidationError("walk_forward trains learned strategies only, got " + std::string(model::to_string(k)));
  auto say = [&](const std::string& msg) {
    if (progress) progress(msg);
  };

  WalkForwardResult result;
  for (auto k : strategies) result.positions[k] = Matrix::Constant(data.n_dates(), data.n_assets(), kNaN);

  const bool need_v = cfg.head_input == model::HeadInput::lookback;
  for (std::size_t wi = 0; wi < plan.windows.size(); ++wi) {
    const auto& w = plan.windows[wi];
    const auto [tr0, tr1] = row_range(data.prices.dates, w.train_start, w.train_end);
    const auto [te0, te1] = row_range(data.prices.dates, w.test_start, w.test_end);
    for (auto t = te0; t <= te1; ++t) result.test_rows.push_back(t);
    const std::string tag = "window " + std::to_string(wi);
    nlohmann::json log{{"window", to_json(WalkForwardPlan{{w}})["windows"][0]}, {"strategies", nlohmann::json::object()}};

    auto training_set = [&](Universe u, bool keep_v) {
      auto set = make_sample_set(collect_samples(data, tr0, tr1 - 1, u, tr1, keep_v));
      if (set.empty()) throw ValidationError(tag + " has no valid training dates");
      return set;
    };

    for (auto kind : strategies) {
      const auto name = std::string(model::to_string(kind));
      say(tag + ": " + name);
      nlohmann::json slog;
      auto& pos = result.positions[kind];

      if (kind == ModelKind::linreg) {
        const auto all = training_set(Universe::features, false);
        const auto fit = stack_rows(all, plain_inputs(all.dates));
        const auto head = model::linreg_fit(fit.x, fit.y, cfg.ridge);
        for (const auto& s : collect_samples(data, te0, te1, Universe::features, -1))
          write_positions(pos, s, model::sign_positions(model::linreg_predict(s.u, head)));
        slog["observations"] = fit.y.size();
        result.checkpoints[kind].push_back(
            {{"schema_version", kCheckpointSchemaVersion}, {"kind", name}, {"head", model::to_json(head)}});
      } else if (kind == ModelKind::glinreg) {
        const auto all = training_set(Universe::lookback, false);
        const auto [train, valid] = split_validation(all, w.valid_fraction);
        double best = std::numeric_limits<double>::infinity();
        double best_alpha = 0.0, best_beta = 0.0;
        nlohmann::json grid = nlohmann::json::array();
        for (double a : cfg.glinreg_alpha_grid) {
          for (double b : cfg.glinreg_beta_grid) {
            auto solver = cfg.solver;
            solver.alpha = a;
            solver.beta = b;
            int excluded = 0;
            const auto [conv, inputs] = converged_subset(train, solver, excluded);
            double score = std::numeric_limits<double>::infinity();
            if (conv.observations() > 9) {
              const auto fit = stack_rows(conv, inputs);
              const auto head = model::linreg_fit(fit.x, fit.y, cfg.ridge);
              const auto vin = graph_inputs(valid.dates, solver);
              const auto vrows = stack_rows(valid, vin.inputs);
              score = loss_mse(model::linreg_predict(vrows.x, head), vrows.y);
            }
            grid.push_back({{"alpha", a}, {"beta", b}, {"valid_mse", score}, {"excluded_dates", excluded}});
            if (score < best) {
              best = score;
              best_alpha = a;
              best_beta = b;
            }
          }
        }
        if (!std::isfinite(best)) throw NumericError(tag + ": glinreg found no usable (alpha, beta)");
        auto solver = cfg.solver;
        solver.alpha = best_alpha;
        solver.beta = best_beta;
        int excluded = 0;
        const auto [conv, inputs] = converged_subset(all, solver, excluded);
        const auto fit = stack_rows(conv, inputs);
        const auto head = model::linreg_fit(fit.x, fit.y, cfg.ridge);
        const auto test = collect_samples(data, te0, te1, Universe::lookback, -1);
        const auto tin = graph_inputs(test, solver);
        for (std::size_t d = 0; d < test.size(); ++d)
          write_positions(pos, test[d], model::sign_positions(model::linreg_predict(tin.inputs[d], head)));
        slog = {{"alpha", best_alpha},       {"beta", best_beta},
                {"valid_mse", best},         {"grid", grid},
                {"excluded_dates", excluded}, {"test_not_converged", tin.not_converged}};
        result.checkpoints[kind].push_back({{"schema_version", kCheckpointSchemaVersion},
                                            {"kind", name},
                                            {"alpha", best_alpha},
                                            {"beta", best_beta},
                                            {"head", model::to_json(head)}});
      } else {
        const auto all = training_set(Universe::lookback, need_v);
        const auto [train, valid] = split_validation(all, w.valid_fraction);
        const auto depths = cfg.depth_grid.empty() ? std::vector<int>{cfg.depth} : cfg.depth_grid;
        const auto batches = cfg.batch_grid.empty() ? std::vector<int>{cfg.batch_size} : cfg.batch_grid;
        const auto rates = cfg.lr_grid.empty() ? std::vector<double>{cfg.adam.learning_rate} : cfg.lr_grid;
        std::optional<TrainResult> best;
        TrainConfig chosen = cfg;
        nlohmann::json grid = nlohmann::json::array();
        for (int depth : depths) {
          for (int batch : batches) {
            for (double lr : rates) {
              TrainConfig c = cfg;
              c.depth = depth;
              c.batch_size = batch;
              c.adam.learning_rate = lr;
              auto r = train_one(kind, train, valid, c, cfg.seed);
              grid.push_back({{"depth", depth}, {"batch_size", batch}, {"learning_rate", lr},
                              {"valid_loss", r.best_valid_loss}});
              if (!best || r.best_valid_loss < best->best_valid_loss) {
                best = std::move(r);
                chosen = c;
              }
            }
          }
        }
        say(tag + ": " + name + " ensemble");
        auto ens = train_ensemble(kind, train, valid, chosen, std::move(best));
        for (const auto& s : collect_samples(data, te0, te1, Universe::lookback, -1, need_v))
          write_positions(pos, s, ens.ensemble.positions(s));
        nlohmann::json hyper{{"depth", chosen.depth},
                             {"batch_size", chosen.batch_size},
                             {"learning_rate", chosen.adam.learning_rate},
                             {"loss", to_string(chosen.loss_for(kind))},
                             {"head_input", model::to_string(chosen.head_input)}};
        nlohmann::json members = nlohmann::json::array();
        for (const auto& m : ens.members) members.push_back(curve_json(m));
        slog = {{"hyperparameters", hyper}, {"grid", grid}, {"members", members}};
        result.checkpoints[kind].push_back(checkpoint_json(ens.ensemble, hyper));
      }
      log["strategies"][name] = slog;
    }
    result.window_logs.push_back(std::move(log));
  }
  return result;
}

}  // namespace l2gmom::training
