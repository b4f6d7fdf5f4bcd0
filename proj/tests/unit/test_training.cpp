#include "l2gmom/errors.hpp"
#include "l2gmom/random.hpp"
#include "l2gmom/training.hpp"

#include "../oracles/oracles.hpp"

#include <doctest.h>

#include <cmath>
#include <set>

using namespace l2gmom;
using namespace l2gmom::training;
using model::ModelKind;

namespace {

Vector random_vector(Eigen::Index n, Rng& rng) {
  Vector v(n);
  for (Eigen::Index k = 0; k < n; ++k) v(k) = rng.normal();
  return v;
}

features::FeatureConfig small_features() {
  features::FeatureConfig f;
  f.lookback = 5;
  return f;
}

data::PricePanel panel(std::uint64_t seed, int n_days = 520) {
  data::SyntheticSpec s;
  s.n_assets = 6;
  s.n_days = n_days;
  s.seed = seed;
  s.shock_coupling = 0.0;
  s.planted_graph = data::block_graph(6, 2);
  return data::generate_synthetic(s);
}

Dataset small_dataset(std::uint64_t seed = 1) { return prepare_dataset(panel(seed), small_features()); }

TrainConfig quick(int epochs = 4) {
  TrainConfig c;
  c.depth = 3;
  c.max_epochs = epochs;
  c.ensemble_size = 1;
  c.batch_size = 8;
  return c;
}

// Training and validation sets over every usable row with observed targets.
std::pair<SampleSet, SampleSet> sets(const Dataset& d) {
  const auto last = d.n_dates() - 1;
  auto all = make_sample_set(collect_samples(d, 0, last - 1, Universe::lookback, last));
  return split_validation(all, 0.2);
}

}  // namespace

TEST_SUITE("training") {
  TEST_CASE("mse examples") {
    Vector t(2);
    t << 0.5, -1.0;
    CHECK(loss_mse(t, t) == 0.0);
    CHECK(loss_mse(t.array() + 1.0, t) == doctest::Approx(1.0).epsilon(1e-15));
    Vector y(2);
    y << 1.5, -4.0;
    CHECK(loss_mse(y, t) == doctest::Approx(5.0).epsilon(1e-15));
    CHECK_THROWS_AS(loss_mse(Vector(), Vector()), ValidationError);
    CHECK_THROWS_AS(loss_mse(Vector::Zero(2), Vector::Zero(3)), ValidationError);
    Rng rng(1);
    for (int k = 0; k < 100; ++k) CHECK(loss_mse(random_vector(7, rng), random_vector(7, rng)) > 0.0);
  }

  TEST_CASE("negative Sharpe examples") {
    Vector alt(6);
    alt << 0.2, -0.2, 0.2, -0.2, 0.2, -0.2;
    CHECK(neg_sharpe_of(alt) == 0.0);
    Rng rng(2);
    std::vector<double> draws;
    Vector r(500);
    for (Eigen::Index k = 0; k < 500; ++k) {
      r(k) = 0.001 + 0.01 * rng.normal();
      draws.push_back(r(k));
    }
    CHECK(neg_sharpe_of(r) == doctest::Approx(-oracle::sharpe_two_pass(draws)).epsilon(1e-10));
    CHECK(std::abs(neg_sharpe_of(r) - neg_sharpe_of(3.7 * r)) < 1e-12);
    CHECK(neg_sharpe_of(-r) == doctest::Approx(-neg_sharpe_of(r)).epsilon(1e-12));
    CHECK_THROWS_WITH_AS(neg_sharpe_of(Vector::Constant(4, 0.1)), doctest::Contains("degenerate Sharpe"), NumericError);
    CHECK_THROWS_AS(neg_sharpe_of(Vector::Constant(1, 0.1)), NumericError);
  }

  TEST_CASE("negative Sharpe on positions scales returns by the volatility target") {
    Rng rng(3);
    const Vector x = random_vector(50, rng).array().tanh();
    const Vector ret = 0.01 * random_vector(50, rng);
    const Vector sig = (0.1 + 0.2 * random_vector(50, rng).array().abs()).matrix();
    const Vector scaled = scaled_returns(x, ret, sig, 0.15);
    for (Eigen::Index k = 0; k < 50; ++k) CHECK(scaled(k) == doctest::Approx(x(k) * 0.15 / sig(k) * ret(k)));
    CHECK(loss_neg_sharpe(x, ret, sig) == doctest::Approx(neg_sharpe_of(scaled)).epsilon(1e-14));
    CHECK(loss_neg_sharpe(-x, ret, sig) == doctest::Approx(-loss_neg_sharpe(x, ret, sig)).epsilon(1e-12));
  }

  TEST_CASE("loss gradients match finite differences") {
    Rng rng(4);
    const Vector r = 0.01 * random_vector(12, rng);
    const Vector t = random_vector(12, rng);
    const auto ns = neg_sharpe_with_grad(r);
    const auto ms = mse_with_grad(r, t);
    const double eps = 1e-7;
    for (Eigen::Index k = 0; k < 12; ++k) {
      Vector rp = r, rm = r;
      rp(k) += eps * 0.01;
      rm(k) -= eps * 0.01;
      const double fd = (neg_sharpe_with_grad(rp).value - neg_sharpe_with_grad(rm).value) / (2.0 * eps * 0.01);
      CHECK(ns.grad(k) == doctest::Approx(fd).epsilon(1e-5));
      Vector yp = r, ym = r;
      yp(k) += eps;
      ym(k) -= eps;
      CHECK(ms.grad(k) == doctest::Approx((loss_mse(yp, t) - loss_mse(ym, t)) / (2.0 * eps)).epsilon(1e-6));
    }
  }

  TEST_CASE("adam first step has the textbook size") {
    AdamConfig cfg;
    cfg.learning_rate = 0.01;
    Adam adam(cfg, 3);
    Vector p = Vector::Zero(3);
    Vector g(3);
    g << 2.0, -0.5, 0.0;
    adam.step(p, g);
    // Bias-corrected moments equal g and g^2 after one step.
    for (Eigen::Index k = 0; k < 3; ++k) CHECK(p(k) == doctest::Approx(-0.01 * g(k) / (std::abs(g(k)) + 1e-8)));
    CHECK(adam.steps() == 1);
  }

  TEST_CASE("network initialization and parameter layout") {
    const auto net = init_network(ModelKind::l2gmom, 4, model::HeadInput::features, 8, 0.1, 0.01, 5);
    CHECK(net.depth() == 4);
    CHECK(net.flatten().size() == 3 * 5 + 8 + 1);
    CHECK(net.head.b == 0.0);
    CHECK(net.head.theta.cwiseAbs().maxCoeff() < 0.1);
    CHECK((net.unroll.alpha().array().log()).abs().maxCoeff() < 0.6);
    auto copy = net;
    copy.assign(net.flatten() * 2.0);
    CHECK(copy.flatten() == net.flatten() * 2.0);
    CHECK_THROWS_AS(init_network(ModelKind::l2gmom, 0, model::HeadInput::features, 8, 0.1, 0.01, 5), ValidationError);
    CHECK_THROWS_AS(init_network(ModelKind::linreg, 2, model::HeadInput::features, 8, 0.1, 0.01, 5), ValidationError);
    const auto a = init_network(ModelKind::l2gmom_sr, 3, model::HeadInput::features, 8, 0.1, 0.01, 9);
    const auto b = init_network(ModelKind::l2gmom_sr, 3, model::HeadInput::features, 8, 0.1, 0.01, 9);
    CHECK(a.flatten() == b.flatten());
    CHECK(network_from_json(to_json(a)).flatten() == a.flatten());
  }

  TEST_CASE("network gradient matches finite differences") {
    const auto d = small_dataset();
    const auto [train, valid] = sets(d);
    const auto& s = train.dates[train.size() / 2];
    Rng rng(6);
    for (auto kind : {ModelKind::l2gmom, ModelKind::l2gmom_sr}) {
      auto net = init_network(kind, 3, model::HeadInput::features, 8, 0.1, 0.3, 6);
      const Vector g_out = random_vector(s.size(), rng);
      Vector grad = Vector::Zero(net.flatten().size());
      network_backprop(net, s, [&](const Vector&) { return g_out; }, grad);
      const Vector base = net.flatten();
      const double eps = 1e-6;
      int ok = 0;
      for (Eigen::Index k = 0; k < base.size(); ++k) {
        Vector p = base, m = base;
        p(k) += eps;
        m(k) -= eps;
        auto np = net, nm = net;
        np.assign(p);
        nm.assign(m);
        const double fd = (g_out.dot(network_predict(np, s)) - g_out.dot(network_predict(nm, s))) / (2.0 * eps);
        ok += std::abs(fd - grad(k)) <= 1e-4 * std::max(std::abs(fd), std::abs(grad(k))) + 1e-8;
      }
      CHECK(ok >= static_cast<int>(0.99 * static_cast<double>(base.size())));
    }
  }

  TEST_CASE("train config validation") {
    for (auto mutate : {+[](TrainConfig& c) { c.depth = 0; }, +[](TrainConfig& c) { c.patience = 0; },
                        +[](TrainConfig& c) { c.batch_size = 0; }, +[](TrainConfig& c) { c.ensemble_size = 0; },
                        +[](TrainConfig& c) { c.adam.learning_rate = -1.0; },
                        +[](TrainConfig& c) { c.valid_fraction = 1.0; }, +[](TrainConfig& c) { c.depth_grid = {5, 0}; }}) {
      TrainConfig c;
      mutate(c);
      CHECK_THROWS_AS(c.validate(), ValidationError);
    }
    const auto c = train_config_from_json(to_json(TrainConfig{}));
    CHECK(to_json(c).dump() == to_json(TrainConfig{}).dump());
    CHECK_THROWS_AS(train_config_from_json(nlohmann::json{{"epochs", 3}}), ValidationError);
  }

  TEST_CASE("sample sets hold only observed targets") {
    const auto d = small_dataset();
    const auto last = d.n_dates() - 1;
    const auto raw = collect_samples(d, 0, last, Universe::lookback, last - 10);
    const auto set = make_sample_set(raw);
    for (const auto& s : set.dates) {
      CHECK(s.next_return.allFinite());
      CHECK(s.sigma_daily.allFinite());
      CHECK(s.date + 1 <= last - 10);
      CHECK(s.size() >= 2);
    }
    for (const auto& s : raw)
      if (s.date + 1 > last - 10) CHECK_FALSE(s.next_return.array().isFinite().any());
    const auto [tr, va] = split_validation(set, 0.1);
    CHECK(va.size() == static_cast<std::size_t>(std::ceil(0.1 * static_cast<double>(set.size()))));
    CHECK(tr.size() + va.size() == set.size());
    CHECK(tr.dates.back().date < va.dates.front().date);
  }

  TEST_CASE("zero learning rate freezes parameters") {
    const auto d = small_dataset();
    const auto [train, valid] = sets(d);
    auto cfg = quick(3);
    cfg.adam.learning_rate = 0.0;
    const auto res = train_one(ModelKind::l2gmom, train, valid, cfg, 11);
    const auto init = init_network(ModelKind::l2gmom, cfg.depth, cfg.head_input, 8, cfg.init_scale,
                                   cfg.head_init_scale, 11);
    CHECK(res.network.flatten() == init.flatten());
  }

  TEST_CASE("training is deterministic and keeps the best checkpoint") {
    const auto d = small_dataset();
    const auto [train, valid] = sets(d);
    for (auto kind : {ModelKind::l2gmom, ModelKind::l2gmom_sr}) {
      const auto a = train_one(kind, train, valid, quick(6), 3);
      const auto b = train_one(kind, train, valid, quick(6), 3);
      CHECK(to_json(a.network).dump() == to_json(b.network).dump());
      double best = std::numeric_limits<double>::infinity();
      int best_epoch = 0;
      for (const auto& e : a.curve)
        if (e.epoch >= 1 && e.valid_loss < best) best = e.valid_loss, best_epoch = e.epoch;
      CHECK(a.best_valid_loss == best);
      CHECK(a.best_epoch == best_epoch);
      CHECK(evaluate_loss(a.network, valid, default_loss(kind), 0.15) == doctest::Approx(best).epsilon(1e-12));
    }
  }

  TEST_CASE("training beats the intercept-only floor on a learnable target") {
    // Targets are a fixed linear function of the neighbour-averaged features,
    // so a fitted head should do better than predicting the mean.
    const auto d = small_dataset(4);
    auto [train, valid] = sets(d);
    const Vector theta = (Vector(8) << 0.5, -0.3, 0.2, 0.0, 0.4, 0.1, -0.2, 0.3).finished();
    for (auto* set : {&train, &valid})
      for (auto& s : set->dates) {
        const Vector y = s.u * theta;
        s.next_return = y.cwiseProduct(s.sigma_daily);
      }
    auto cfg = quick(40);
    cfg.adam.learning_rate = 1e-2;
    cfg.patience = 40;
    const auto res = train_one(ModelKind::l2gmom, train, valid, cfg, 2);
    double mean = 0.0, count = 0.0;
    for (const auto& s : train.dates) {
      mean += (s.u * theta).sum();
      count += static_cast<double>(s.size());
    }
    mean /= count;
    double floor = 0.0;
    for (const auto& s : train.dates) floor += ((s.u * theta).array() - mean).square().sum();
    floor /= count;
    CHECK(evaluate_loss(res.network, train, LossKind::mse, 0.15) < floor);
  }

  TEST_CASE("ensemble of one equals a single run") {
    const auto d = small_dataset();
    const auto [train, valid] = sets(d);
    auto cfg = quick(3);
    cfg.seed = 7;
    const auto ens = train_ensemble(ModelKind::l2gmom_sr, train, valid, cfg);
    const auto one = train_one(ModelKind::l2gmom_sr, train, valid, cfg, 7);
    REQUIRE(ens.ensemble.members.size() == 1);
    CHECK(ens.ensemble.members[0].flatten() == one.network.flatten());
    cfg.ensemble_size = 3;
    cfg.threads = 2;
    const auto three = train_ensemble(ModelKind::l2gmom_sr, train, valid, cfg);
    CHECK(three.ensemble.members[0].flatten() == one.network.flatten());
    CHECK(three.members[2].seed == 9);
    const auto& s = valid.dates.front();
    Vector avg = Vector::Zero(s.size());
    for (const auto& m : three.ensemble.members) avg += network_predict(m, s);
    CHECK((three.ensemble.predict(s) - avg / 3.0).cwiseAbs().maxCoeff() < 1e-15);
  }

  TEST_CASE("ensemble averaging happens before the sign") {
    const auto d = small_dataset();
    const auto [train, valid] = sets(d);
    const auto& s = valid.dates.front();
    auto up = init_network(ModelKind::l2gmom, 2, model::HeadInput::features, 8, 0.0, 0.0, 1);
    auto down = up;
    up.head.b = 1.0;
    down.head.b = -1.0;
    Ensemble e{ModelKind::l2gmom, {up, down}};
    CHECK(e.predict(s) == Vector::Zero(s.size()));
    CHECK(e.positions(s) == Vector::Zero(s.size()));
    Ensemble same{ModelKind::l2gmom, {up, up}};
    CHECK(same.predict(s) == network_predict(up, s));
    const auto back = ensemble_from_checkpoint(checkpoint_json(e, nlohmann::json::object()));
    CHECK(back.members.size() == 2);
    CHECK(back.members[1].flatten() == down.flatten());
    auto bad = checkpoint_json(e, nlohmann::json::object());
    bad["schema_version"] = 99;
    CHECK_THROWS_AS(ensemble_from_checkpoint(bad), ValidationError);
  }

  TEST_CASE("expanding plans") {
    const auto dates = panel(1, 300).dates;
    const auto plan = expanding_plan(dates, 100, 80);
    REQUIRE(plan.windows.size() == 3);
    CHECK(plan.windows[0].train_start == dates[0]);
    CHECK(plan.windows[0].train_end == dates[99]);
    CHECK(plan.windows[0].test_start == dates[100]);
    CHECK(plan.windows[2].test_end == dates[299]);
    CHECK(plan.windows[1].train_end == dates[179]);
    plan.validate(dates);
    CHECK(expanding_plan(dates, 100, 80, 0.1, 1).windows.size() == 1);
    CHECK(walk_forward_plan_from_json(to_json(plan)).windows.size() == 3);

    auto overlap = plan;
    overlap.windows[1].test_start = dates[170];
    CHECK_THROWS_AS(overlap.validate(dates), ValidationError);
    auto leak = plan;
    leak.windows[0].train_end = dates[120];
    CHECK_THROWS_AS(leak.validate(dates), ValidationError);
    auto shrink = plan;
    shrink.windows[1].train_start = dates[5];
    CHECK_THROWS_AS(shrink.validate(dates), ValidationError);
    CHECK_THROWS_AS(expanding_plan(dates, 300, 10), ValidationError);
  }

  TEST_CASE("walk-forward covers the union of test windows and rejects baselines") {
    const auto d = small_dataset();
    const auto plan = expanding_plan(d.prices.dates, 440, 40);
    const std::vector<ModelKind> kinds{ModelKind::linreg, ModelKind::glinreg, ModelKind::l2gmom};
    auto cfg = quick(2);
    cfg.glinreg_alpha_grid = {1.0};
    cfg.glinreg_beta_grid = {0.5, 1.0};
    const auto res = walk_forward(d, plan, kinds, cfg);
    std::set<Eigen::Index> rows(res.test_rows.begin(), res.test_rows.end());
    CHECK(rows.size() == res.test_rows.size());
    CHECK(*rows.begin() == 440);
    CHECK(*rows.rbegin() == d.n_dates() - 1);
    CHECK(static_cast<Eigen::Index>(rows.size()) == d.n_dates() - 440);
    for (auto k : kinds) {
      const auto& pos = res.positions.at(k);
      for (Eigen::Index t = 0; t < d.n_dates(); ++t)
        for (Eigen::Index i = 0; i < d.n_assets(); ++i) {
          if (!rows.count(t)) CHECK(std::isnan(pos(t, i)));
          else if (std::isfinite(pos(t, i))) CHECK(std::abs(pos(t, i)) <= 1.0);
        }
      CHECK(res.checkpoints.at(k).size() == plan.windows.size());
    }
    const std::vector<ModelKind> base{ModelKind::macd};
    CHECK_THROWS_AS(walk_forward(d, plan, base, cfg), ValidationError);
  }

  TEST_CASE("fitted checkpoints ignore prices after the training window") {
    const auto p = panel(5);
    const auto d = prepare_dataset(p, small_features());
    const auto plan = expanding_plan(d.prices.dates, 440, 40, 0.1, 1);
    auto moved_prices = p;
    Rng rng(3);
    for (Eigen::Index t = 440; t < moved_prices.n_dates(); ++t)
      for (Eigen::Index i = 0; i < moved_prices.n_assets(); ++i) moved_prices.prices(t, i) *= std::exp(0.2 * rng.normal());
    const auto moved = prepare_dataset(moved_prices, small_features());
    const std::vector<ModelKind> kinds{ModelKind::linreg, ModelKind::glinreg, ModelKind::l2gmom, ModelKind::l2gmom_sr};
    auto cfg = quick(2);
    cfg.glinreg_alpha_grid = {1.0};
    cfg.glinreg_beta_grid = {1.0};
    const auto a = walk_forward(d, plan, kinds, cfg);
    const auto b = walk_forward(moved, plan, kinds, cfg);
    for (auto k : kinds) CHECK(a.checkpoints.at(k)[0].dump() == b.checkpoints.at(k)[0].dump());
    // Test-period positions do change because test features moved.
    CHECK_FALSE(a.positions.at(ModelKind::linreg) == b.positions.at(ModelKind::linreg));
  }
}
