#include "l2gmom/backtest.hpp"
#include "l2gmom/errors.hpp"
#include "l2gmom/random.hpp"

#include "../oracles/oracles.hpp"
#include "support.hpp"

#include <doctest.h>

#include <cmath>
#include <sstream>

using namespace l2gmom;
using namespace l2gmom::backtest;

namespace {

Vector vec(std::initializer_list<double> xs) {
  Vector v(static_cast<Eigen::Index>(xs.size()));
  Eigen::Index k = 0;
  for (double x : xs) v(k++) = x;
  return v;
}

void check_optional(const std::optional<double>& got, const std::optional<double>& want) {
  REQUIRE(got.has_value() == want.has_value());
  if (want) CHECK(std::abs(*got - *want) <= 1e-12 * std::max(1.0, std::abs(*want)));
}

// Every line of a written table is either a '#' note, the header, or data.
void check_units_line(const std::string& text) {
  REQUIRE_FALSE(text.empty());
  CHECK(text[0] == '#');
}

}  // namespace

TEST_SUITE("backtest") {
  TEST_CASE("metrics agree with direct formulas on random series") {
    Rng rng(1);
    for (int trial = 0; trial < 200; ++trial) {
      const auto n = static_cast<std::size_t>(5 + trial % 60);
      std::vector<double> r(n);
      for (auto& x : r) x = 0.0005 + 0.01 * rng.normal();
      const auto got = metrics(Eigen::Map<const Vector>(r.data(), static_cast<Eigen::Index>(n)));
      const auto want = oracle::metrics(r);
      CHECK(got.days == static_cast<Eigen::Index>(n));
      CHECK(std::abs(got.ann_return - want.ann_return) < 1e-12);
      check_optional(got.vol, want.vol);
      check_optional(got.sharpe, want.sharpe);
      check_optional(got.downside_deviation, want.downside);
      check_optional(got.sortino, want.sortino);
      check_optional(got.calmar, want.calmar);
      check_optional(got.avg_profit_over_loss, want.avg_pl);
      CHECK(std::abs(got.mdd - want.mdd) < 1e-12);
      CHECK(std::abs(got.mdd_duration - want.mdd_duration) < 1e-12);
      CHECK(got.hit_rate == want.hit_rate);
    }
  }

  TEST_CASE("metric examples") {
    const auto m = metrics(vec({0.1, -0.2, 0.1}));
    CHECK(m.mdd == doctest::Approx(0.2).epsilon(1e-14));
    CHECK(m.mdd_duration == doctest::Approx(1.0 / 3.0));
    CHECK(m.hit_rate == doctest::Approx(2.0 / 3.0));
    CHECK_FALSE(m.sortino.has_value());
    CHECK(m.avg_profit_over_loss == doctest::Approx(0.5));

    const auto up = metrics(vec({0.01, 0.02, 0.03}));
    CHECK(up.mdd == 0.0);
    CHECK_FALSE(up.calmar.has_value());
    CHECK_FALSE(up.downside_deviation.has_value());
    CHECK_FALSE(up.avg_profit_over_loss.has_value());
    CHECK(up.hit_rate == 1.0);

    const auto flat = metrics(vec({0.01, 0.01}));
    CHECK(flat.vol == 0.0);
    CHECK_FALSE(flat.sharpe.has_value());

    CHECK_THROWS_AS(metrics(Vector()), ValidationError);
    CHECK_THROWS_AS(metrics(vec({0.1, kNaN})), ValidationError);
  }

  TEST_CASE("portfolio return examples") {
    Matrix x(2, 2), nr(2, 2), sig(2, 2);
    x << 1.0, -1.0, 0.5, kNaN;
    nr << 0.01, 0.02, 0.04, 0.03;
    sig << 0.15, 0.30, 0.10, 0.10;
    const auto p = portfolio_returns(x, nr, sig);
    CHECK(p(0) == doctest::Approx((0.01 - 0.5 * 0.02) / 2.0).epsilon(1e-15));
    CHECK(p(1) == doctest::Approx(0.5 * 1.5 * 0.04).epsilon(1e-15));
    x.row(1).setConstant(kNaN);
    CHECK(std::isnan(portfolio_returns(x, nr, sig)(1)));
    CHECK_THROWS_AS(portfolio_returns(x, nr.topRows(1), sig), ValidationError);
  }

  TEST_CASE("portfolio returns do not depend on asset order") {
    Rng rng(2);
    Matrix x(30, 5), nr(30, 5), sig(30, 5);
    for (Eigen::Index k = 0; k < x.size(); ++k) {
      x.data()[k] = std::tanh(rng.normal());
      nr.data()[k] = 0.01 * rng.normal();
      sig.data()[k] = 0.1 + rng.uniform();
    }
    x(3, 2) = kNaN;
    const Eigen::VectorXi perm = (Eigen::VectorXi(5) << 3, 0, 4, 1, 2).finished();
    auto shuffle = [&](const Matrix& m) {
      Matrix out(m.rows(), m.cols());
      for (Eigen::Index j = 0; j < 5; ++j) out.col(j) = m.col(perm(j));
      return out;
    };
    const Vector a = portfolio_returns(x, nr, sig);
    const Vector b = portfolio_returns(shuffle(x), shuffle(nr), shuffle(sig));
    CHECK((a - b).cwiseAbs().maxCoeff() < 1e-15);
  }

  TEST_CASE("target volatility rescaling") {
    Rng rng(3);
    Vector r(300);
    for (Eigen::Index k = 0; k < r.size(); ++k) r(k) = 0.0003 + 0.005 * rng.normal();
    const Vector s = target_vol_rescale(r);
    CHECK(*metrics(s).vol == doctest::Approx(0.15).epsilon(1e-12));
    CHECK(std::abs(*metrics(s).sharpe - *metrics(r).sharpe) < 1e-12);
    const Vector doubled = target_vol_rescale(0.5 * s);
    CHECK((doubled - s).cwiseAbs().maxCoeff() < 1e-15);
    Vector holes = r;
    holes(4) = kNaN;
    const Vector h = target_vol_rescale(holes);
    CHECK(std::isnan(h(4)));
    CHECK(*metrics(compact(h)).vol == doctest::Approx(0.15).epsilon(1e-12));
    CHECK_THROWS_AS(target_vol_rescale(Vector::Constant(5, 0.01)), NumericError);
  }

  TEST_CASE("ex-ante rescaling is causal") {
    Rng rng(4);
    Vector r(200);
    for (Eigen::Index k = 0; k < r.size(); ++k) r(k) = 0.01 * rng.normal();
    const Vector a = rolling_vol_rescale(r);
    Vector moved = r;
    moved.tail(50) *= 7.0;
    const Vector b = rolling_vol_rescale(moved);
    for (Eigen::Index k = 0; k < 20; ++k) CHECK(std::isnan(a(k)));
    for (Eigen::Index k = 20; k < 150; ++k) CHECK(a(k) == b(k));
  }

  TEST_CASE("transaction cost examples") {
    Matrix x(3, 1), nr(3, 1), sig(3, 1);
    x << 1.0, 1.0, -1.0;
    nr << 0.0, 0.0, 0.0;
    sig << 0.2, 0.2, 0.2;
    const Vector c = cost_adjusted_returns(x, nr, sig, 2.0);
    // Entry from flat, no turnover, then a full flip.
    CHECK(c(0) == doctest::Approx(-2e-4 * 0.2 * (1.0 / 0.2)).epsilon(1e-14));
    CHECK(c(1) == 0.0);
    CHECK(c(2) == doctest::Approx(-2e-4 * 0.2 * (2.0 / 0.2)).epsilon(1e-14));
    const Vector t = cost_adjusted_returns(x, nr, sig, 2.0, 0.15, CostVolatility::target);
    CHECK(t(2) == doctest::Approx(-2e-4 * 0.15 * 10.0).epsilon(1e-14));
    CHECK(cost_adjusted_returns(x, nr, sig, 0.0) == portfolio_returns(x, nr, sig));
    CHECK_THROWS_AS(cost_adjusted_returns(x, nr, sig, -1.0), ValidationError);
  }

  TEST_CASE("sharpe falls as costs rise") {
    Rng rng(5);
    Matrix x(400, 4), nr(400, 4), sig(400, 4);
    for (Eigen::Index k = 0; k < x.size(); ++k) {
      x.data()[k] = std::tanh(2.0 * rng.normal());
      sig.data()[k] = 0.1 + 0.2 * rng.uniform();
    }
    for (Eigen::Index t = 0; t < 400; ++t)
      for (Eigen::Index i = 0; i < 4; ++i) nr(t, i) = 0.002 * x(t, i) + 0.01 * rng.normal();
    const auto curve = cost_curve(x, nr, sig);
    REQUIRE(curve.size() == kCostLevelsBps.size());
    for (std::size_t k = 1; k < curve.size(); ++k) CHECK(*curve[k].sharpe < *curve[k - 1].sharpe);
  }

  TEST_CASE("diversification identities") {
    Rng rng(6);
    Matrix x(100, 3);
    Vector r(100);
    for (Eigen::Index k = 0; k < x.size(); ++k) x.data()[k] = rng.normal();
    for (Eigen::Index k = 0; k < r.size(); ++k) r(k) = rng.normal();
    x(5, 1) = kNaN;
    r(7) = kNaN;
    const auto d = diversification({{"a", x, r}, {"neg", -x, -r}});
    CHECK(d.correlation(0, 0) == doctest::Approx(1.0).epsilon(1e-14));
    CHECK(d.correlation(0, 1) == doctest::Approx(-1.0).epsilon(1e-14));
    CHECK(d.sign_agreement(0, 1) == 0.0);
    CHECK(d.sign_agreement(0, 0) == 1.0);
    CHECK(d.correlation == d.correlation.transpose());

    std::vector<double> ra, rb;
    Matrix y(100, 3);
    Vector s(100);
    for (Eigen::Index k = 0; k < y.size(); ++k) y.data()[k] = rng.normal();
    for (Eigen::Index k = 0; k < s.size(); ++k) s(k) = rng.normal();
    for (Eigen::Index k = 0; k < 100; ++k)
      if (std::isfinite(r(k))) ra.push_back(r(k)), rb.push_back(s(k));
    const auto e = diversification({{"a", x, r}, {"b", y, s}});
    CHECK(e.correlation(0, 1) == doctest::Approx(oracle::correlation(ra, rb)).epsilon(1e-12));
    CHECK_THROWS_AS(diversification({{"a", x, r}, {"short", x.topRows(5), r.head(5)}}), ValidationError);
  }

  TEST_CASE("independent positions agree on about half the signs") {
    Rng rng(7);
    Matrix a(2000, 5), b(2000, 5);
    for (Eigen::Index k = 0; k < a.size(); ++k) {
      a.data()[k] = rng.normal();
      b.data()[k] = rng.normal();
    }
    const Vector r = Vector::NullaryExpr(2000, [&](Eigen::Index) { return rng.normal(); });
    const Vector s = Vector::NullaryExpr(2000, [&](Eigen::Index) { return rng.normal(); });
    const auto d = diversification({{"a", a, r}, {"b", b, s}});
    CHECK(std::abs(d.sign_agreement(0, 1) - 0.5) < 0.05);
    CHECK(std::abs(d.correlation(0, 1)) < 0.1);
  }

  TEST_CASE("baseline strategies") {
    data::SyntheticSpec spec;
    spec.n_assets = 3;
    spec.n_days = 500;
    const auto p = data::generate_synthetic(spec);
    const auto r = data::compute_returns(p);
    const auto v = data::ewm_volatility(r);
    const Matrix lo = strategy_long_only(v);
    for (Eigen::Index t = 0; t < lo.rows(); ++t)
      for (Eigen::Index i = 0; i < 3; ++i) CHECK((v.defined(t, i) ? lo(t, i) == 1.0 : std::isnan(lo(t, i))));

    const auto u = features::build_U(r, v, p, {});
    const Matrix m = strategy_macd(u);
    int finite = 0;
    for (Eigen::Index t = 0; t < m.rows(); ++t)
      for (Eigen::Index i = 0; i < 3; ++i) {
        if (!std::isfinite(m(t, i))) continue;
        ++finite;
        const std::array<double, 3> y{u.values[5](t, i), u.values[6](t, i), u.values[7](t, i)};
        CHECK(m(t, i) == features::macd_position(y));
        CHECK(std::abs(m(t, i)) <= 1.0);
      }
    CHECK(finite > 0);

    const std::vector<Eigen::Index> rows{100, 101};
    const Matrix kept = restrict_rows(lo, rows);
    CHECK(kept.row(100) == lo.row(100));
    CHECK(kept.row(102).array().isNaN().all());
  }

  TEST_CASE("csv tables carry a units line") {
    const auto m = metrics(vec({0.01, -0.02, 0.03}));
    std::ostringstream a, b, c, d;
    write_metrics_csv(a, {{"x", m}}, {{"x", m}});
    check_units_line(a.str());
    CHECK(a.str().find("return,vol,sharpe") != std::string::npos);
    StrategyRecord s{"x", Matrix::Zero(3, 1), vec({0.01, kNaN, 0.02})};
    write_cumulative_csv(b, test_support::days(3), {s}, false);
    check_units_line(b.str());
    write_matrix_csv(c, "correlation of daily returns", {"x"}, Matrix::Identity(1, 1));
    check_units_line(c.str());
    write_cost_curves_csv(d, {{"x", {{0.5, 1.2}, {1.0, std::nullopt}}}});
    check_units_line(d.str());
  }
}
