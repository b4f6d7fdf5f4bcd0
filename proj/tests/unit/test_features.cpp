#include "l2gmom/errors.hpp"
#include "l2gmom/features.hpp"
#include "l2gmom/random.hpp"

#include "../oracles/oracles.hpp"
#include "support.hpp"

#include <doctest.h>

#include <array>
#include <cmath>
#include <numbers>
#include <sstream>

using namespace l2gmom;
using namespace l2gmom::features;

namespace {

data::PricePanel synthetic(int n_assets, int n_days, std::uint64_t seed) {
  data::SyntheticSpec s;
  s.n_assets = n_assets;
  s.n_days = n_days;
  s.seed = seed;
  return data::generate_synthetic(s);
}

FeaturePanel features_of(const data::PricePanel& p, const FeatureConfig& cfg = {}) {
  const auto r = data::compute_returns(p);
  const auto v = data::ewm_volatility(r, cfg.vol);
  return build_U(r, v, p, cfg);
}

// One-asset return and volatility panels with hand-set values.
std::pair<data::ReturnPanel, data::VolPanel> hand_panels(const std::vector<double>& r, double sigma) {
  const auto n = static_cast<Eigen::Index>(r.size());
  data::ReturnPanel rp{test_support::days(n), {"X"}, Matrix(n, 1), Mask::Constant(n, 1, true)};
  for (Eigen::Index t = 0; t < n; ++t) {
    rp.returns(t, 0) = r[static_cast<std::size_t>(t)];
    if (std::isnan(rp.returns(t, 0))) rp.available(t, 0) = false;
  }
  rp.available(0, 0) = false;
  data::VolPanel vp{rp.dates, rp.tickers, Matrix::Constant(n, 1, sigma), Matrix::Constant(n, 1, sigma * std::sqrt(252.0)),
                    Mask::Constant(n, 1, true)};
  return {rp, vp};
}

}  // namespace

TEST_SUITE("features") {
  TEST_CASE("flat prices give zero normalized returns") {
    const auto p = test_support::panel(Matrix::Constant(300, 1, 40.0));
    const auto r = data::compute_returns(p);
    const auto v = data::ewm_volatility(r);
    for (int h : kReturnHorizons) {
      const auto m = norm_return(r, v, h);
      CHECK(m(299, 0) == 0.0);
    }
  }

  TEST_CASE("normalized return arithmetic") {
    auto [r, v] = hand_panels({kNaN, 0.0, 1.0, 0.5, -0.2}, 0.01);
    const auto one = norm_return(r, v, 1);
    CHECK(one(2, 0) == doctest::Approx(100.0).epsilon(1e-14));
    for (Eigen::Index t = 1; t < 5; ++t) CHECK(one(t, 0) == r.returns(t, 0) / 0.01);
    const auto two = norm_return(r, v, 2);
    CHECK(two(3, 0) == doctest::Approx((2.0 * 1.5 - 1.0) / (0.01 * std::sqrt(2.0))).epsilon(1e-14));
    CHECK(std::isnan(two(1, 0)));
  }

  TEST_CASE("window across an unavailable day is masked") {
    auto [r, v] = hand_panels({kNaN, 0.01, 0.02, kNaN, 0.01, 0.02, 0.03}, 0.01);
    const auto m = norm_return(r, v, 2);
    CHECK(std::isfinite(m(2, 0)));
    CHECK(std::isnan(m(3, 0)));
    CHECK(std::isnan(m(4, 0)));
    CHECK(std::isfinite(m(5, 0)));
  }

  TEST_CASE("macd of a constant price is zero") {
    const auto p = test_support::panel(Matrix::Constant(400, 1, 25.0));
    const auto y = macd_feature(p, 8, 24);
    CHECK(std::isnan(y(100, 0)));
    for (Eigen::Index t = 320; t < 400; ++t) CHECK(y(t, 0) == 0.0);
  }

  TEST_CASE("macd on a linear ramp matches an explicit EWM recursion and is positive") {
    Matrix px(200, 1);
    for (Eigen::Index t = 0; t < 200; ++t) px(t, 0) = 10.0 + static_cast<double>(t);
    const auto p = test_support::panel(px);
    for (auto [s, l] : kMacdScales) {
      const auto c = macd_components(p, s, l);
      std::vector<double> hist;
      for (Eigen::Index t = 0; t < 200; ++t) {
        hist.push_back(px(t, 0));
        const double ms = oracle::ewm_explicit(hist, 1.0 - 1.0 / s).mean;
        const double ml = oracle::ewm_explicit(hist, 1.0 - 1.0 / l).mean;
        CHECK(c.macd(t, 0) == doctest::Approx(ms - ml).epsilon(1e-10));
        if (t > 0) CHECK(c.macd(t, 0) > 0.0);
      }
    }
  }

  TEST_CASE("macd scale precondition") {
    const auto p = test_support::panel(Matrix::Constant(10, 1, 1.0));
    CHECK_THROWS_AS(macd_feature(p, 24, 24), ValidationError);
    CHECK_THROWS_AS(macd_feature(p, 48, 16), ValidationError);
  }

  TEST_CASE("position scaling") {
    const std::array<double, 3> zero{0.0, 0.0, 0.0};
    CHECK(macd_position(zero) == 0.0);
    const double r2 = std::numbers::sqrt2;
    const std::array<double, 3> peak{r2, r2, r2};
    CHECK(macd_position(peak) == doctest::Approx(r2 * std::exp(-0.5) / 0.89).epsilon(1e-15));
    CHECK(std::abs(macd_position(peak) - 0.9638) < 1e-4);
    Rng rng(3);
    for (int k = 0; k < 1000; ++k) {
      const std::array<double, 3> y{3 * rng.normal(), 3 * rng.normal(), 3 * rng.normal()};
      const std::array<double, 3> neg{-y[0], -y[1], -y[2]};
      CHECK(macd_position(neg) == -macd_position(y));
      CHECK(std::abs(macd_position(y)) <= position_scale(r2));
    }
    for (double y = -10.0; y <= 10.0; y += 1e-3) CHECK(std::abs(position_scale(y)) <= position_scale(r2) + 1e-15);
    const std::array<double, 3> bad{0.0, kNaN, 0.0};
    CHECK_THROWS_AS(macd_position(bad), ValidationError);
  }

  TEST_CASE("short history assets are never valid") {
    auto p = synthetic(2, 700, 5);
    for (Eigen::Index t = 0; t < 500; ++t) {
      p.prices(t, 1) = kNaN;
      p.available(t, 1) = false;
    }
    const auto u = features_of(p);
    CHECK_FALSE(u.valid.col(1).any());
    CHECK(u.valid.col(0).any());
    for (Eigen::Index t = 0; t < u.n_dates(); ++t)
      if (u.valid(t, 0)) CHECK(u.row(t, 0).allFinite());
  }

  TEST_CASE("all-valid asset has eight finite features per day") {
    const auto u = features_of(synthetic(1, 700, 6));
    int valid_days = 0;
    for (Eigen::Index t = 0; t < u.n_dates(); ++t) {
      if (!u.valid(t, 0)) continue;
      ++valid_days;
      CHECK(u.row(t, 0).size() == kNumFeatures);
      CHECK(u.row(t, 0).allFinite());
    }
    CHECK(valid_days > 300);
    CHECK(kFeatureNames[0] == "ret_1d");
    CHECK(kFeatureNames[7] == "macd_32_96");
  }

  TEST_CASE("winsorized features stay within five EWM standard deviations of the raw series") {
    const auto p = synthetic(2, 600, 7);
    FeatureConfig raw_cfg;
    raw_cfg.winsorize = false;
    const auto raw = features_of(p, raw_cfg);
    const auto u = features_of(p);
    const double decay = std::exp(std::log(0.5) / 252.0);
    for (int f = 0; f < kNumFeatures; ++f)
      for (Eigen::Index i = 0; i < 2; ++i) {
        std::vector<double> hist;
        for (Eigen::Index t = 0; t < raw.n_dates(); ++t) {
          const double x = raw.values[f](t, i);
          if (!std::isfinite(x)) continue;
          hist.push_back(x);
          if (hist.size() < 2 || t % 25 != 0) continue;
          const auto o = oracle::ewm_explicit(hist, decay);
          CHECK(std::abs(u.values[f](t, i) - o.mean) <= 5.0 * std::sqrt(o.var) * (1.0 + 1e-9) + 1e-12);
        }
      }
  }

  TEST_CASE("lookback stacking") {
    const auto u = features_of(synthetic(2, 600, 8));
    const auto v1 = build_V(u, 1);
    for (Eigen::Index t = 0; t < u.n_dates(); ++t)
      for (Eigen::Index i = 0; i < 2; ++i) {
        CHECK(v1.valid()(t, i) == u.valid(t, i));
        if (u.valid(t, i)) CHECK(v1.row(t, i) == u.row(t, i));
      }
    const auto v2 = build_V(u, 2);
    CHECK(v2.width() == 16);
    for (Eigen::Index t = 1; t < u.n_dates(); ++t) {
      CHECK(v2.valid()(t, 0) == (u.valid(t, 0) && u.valid(t - 1, 0)));
      if (!v2.valid()(t, 0)) continue;
      const Vector row = v2.row(t, 0);
      CHECK(row.head(8) == u.row(t - 1, 0));
      CHECK(row.tail(8) == u.row(t, 0));
    }
    CHECK_THROWS_AS(build_V(u, 0), ValidationError);
  }

  TEST_CASE("missing day inside the lookback window invalidates the row") {
    auto u = features_of(synthetic(1, 600, 9));
    Eigen::Index hole = 500;
    REQUIRE(u.valid(hole, 0));
    u.values[3](hole, 0) = kNaN;
    u.valid(hole, 0) = false;
    const auto v = build_V(u, 5);
    for (Eigen::Index t = hole; t < hole + 5; ++t) CHECK_FALSE(v.valid()(t, 0));
    CHECK(v.valid()(hole + 5, 0));
  }

  TEST_CASE("features are causal") {
    const auto p = synthetic(3, 650, 10);
    const auto base = features_of(p);
    const Eigen::Index cut = 520;
    auto q = p;
    Rng rng(1);
    for (Eigen::Index t = cut + 1; t < q.n_dates(); ++t)
      for (Eigen::Index i = 0; i < 3; ++i) q.prices(t, i) *= std::exp(0.3 * rng.normal());
    const auto moved = features_of(q);
    for (int f = 0; f < kNumFeatures; ++f)
      for (Eigen::Index t = 0; t <= cut; ++t)
        for (Eigen::Index i = 0; i < 3; ++i) {
          const double a = base.values[f](t, i), b = moved.values[f](t, i);
          CHECK((a == b || (std::isnan(a) && std::isnan(b))));
        }
    const auto va = build_V(base, 10), vb = build_V(moved, 10);
    for (Eigen::Index t = 0; t <= cut; ++t)
      if (va.valid()(t, 0)) CHECK(va.row(t, 0) == vb.row(t, 0));
  }

  TEST_CASE("feature csv lists valid rows only") {
    const auto u = features_of(synthetic(1, 400, 11));
    std::ostringstream out;
    write_csv(u, out);
    std::istringstream in(out.str());
    std::string line;
    int rows = 0;
    while (std::getline(in, line))
      if (!line.empty() && line[0] != '#' && line.rfind("date,", 0) != 0) ++rows;
    CHECK(rows == u.valid.count() * kNumFeatures);
  }
}
