#include "l2gmom/features.hpp"

#include "l2gmom/errors.hpp"
#include "l2gmom/ewm.hpp"

#include <algorithm>
#include <ostream>

namespace l2gmom::features {

namespace {

// Sample std of column c over rows [end - window + 1, end]; NaN if any entry
// is non-finite or the window starts before row 0.
double trailing_std(const Matrix& m, Eigen::Index c, Eigen::Index end, int window) {
  const Eigen::Index start = end - window + 1;
  if (start < 0 || window < 2) return kNaN;
  double mean = 0.0;
  for (Eigen::Index r = start; r <= end; ++r) {
    const double x = m(r, c);
    if (!std::isfinite(x)) return kNaN;
    mean += x;
  }
  mean /= window;
  double ss = 0.0;
  for (Eigen::Index r = start; r <= end; ++r) {
    const double d = m(r, c) - mean;
    ss += d * d;
  }
  return std::sqrt(ss / (window - 1));
}

}  // namespace

Matrix FeaturePanel::rows(Eigen::Index t, std::span<const Eigen::Index> assets) const {
  Matrix out(static_cast<Eigen::Index>(assets.size()), kNumFeatures);
  for (Eigen::Index k = 0; k < out.rows(); ++k)
    for (int f = 0; f < kNumFeatures; ++f) out(k, f) = values[f](t, assets[k]);
  return out;
}

Vector FeaturePanel::row(Eigen::Index t, Eigen::Index asset) const {
  Vector out(kNumFeatures);
  for (int f = 0; f < kNumFeatures; ++f) out(f) = values[f](t, asset);
  return out;
}

LookbackPanel::LookbackPanel(FeaturePanel u, int lookback) : u_(std::move(u)), lookback_(lookback) {
  if (lookback < 1) throw ValidationError("lookback must be >= 1");
  const auto t_len = u_.n_dates();
  const auto n = u_.n_assets();
  valid_ = Mask::Constant(t_len, n, false);
  for (Eigen::Index i = 0; i < n; ++i) {
    int run = 0;
    for (Eigen::Index t = 0; t < t_len; ++t) {
      run = u_.valid(t, i) ? run + 1 : 0;
      valid_(t, i) = run >= lookback;
    }
  }
}

Vector LookbackPanel::row(Eigen::Index t, Eigen::Index asset) const {
  Vector out(width());
  const Eigen::Index first = t - lookback_ + 1;
  for (int k = 0; k < lookback_; ++k) {
    const Eigen::Index day = first + k;
    for (int f = 0; f < kNumFeatures; ++f)
      out(k * kNumFeatures + f) = day >= 0 ? u_.values[f](day, asset) : kNaN;
  }
  return out;
}

Matrix LookbackPanel::rows(Eigen::Index t, std::span<const Eigen::Index> assets) const {
  Matrix out(static_cast<Eigen::Index>(assets.size()), width());
  for (Eigen::Index k = 0; k < out.rows(); ++k) out.row(k) = row(t, assets[k]).transpose();
  return out;
}

Matrix norm_return(const data::ReturnPanel& returns, const data::VolPanel& vols, int horizon_days) {
  if (horizon_days < 1) throw ValidationError("return horizon must be >= 1");
  const auto t_len = returns.returns.rows();
  const auto n = returns.returns.cols();
  Matrix out = Matrix::Constant(t_len, n, kNaN);
  const double root_h = std::sqrt(static_cast<double>(horizon_days));
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index t = horizon_days; t < t_len; ++t) {
      if (!vols.defined(t, i)) continue;
      double growth = 1.0;
      bool ok = true;
      for (Eigen::Index s = t - horizon_days + 1; s <= t; ++s) {
        if (!returns.available(s, i)) {
          ok = false;
          break;
        }
        growth *= 1.0 + returns.returns(s, i);
      }
      if (!ok) continue;
      // A one-day window is the return itself; avoids rounding in (1 + r) - 1.
      const double window = horizon_days == 1 ? returns.returns(t, i) : growth - 1.0;
      out(t, i) = window / (vols.sigma_daily(t, i) * root_h);
    }
  }
  return out;
}

MacdSeries macd_components(const data::PricePanel& prices, int short_scale, int long_scale,
                           const FeatureConfig& config) {
  if (short_scale < 2 || short_scale >= long_scale)
    throw ValidationError("MACD scales require 2 <= S < L");
  const auto t_len = prices.n_dates();
  const auto n = prices.n_assets();
  MacdSeries out{Matrix::Constant(t_len, n, kNaN), Matrix::Constant(t_len, n, kNaN),
                 Matrix::Constant(t_len, n, kNaN)};
  for (Eigen::Index i = 0; i < n; ++i) {
    EwmStats fast(1.0 - 1.0 / short_scale);
    EwmStats slow(1.0 - 1.0 / long_scale);
    for (Eigen::Index t = 0; t < t_len; ++t) {
      if (!prices.available(t, i)) continue;
      fast.push(prices.prices(t, i));
      slow.push(prices.prices(t, i));
      out.macd(t, i) = fast.mean() - slow.mean();
      const double price_sd = trailing_std(prices.prices, i, t, config.price_std_window);
      if (std::isnan(price_sd)) continue;
      out.macd_norm(t, i) = out.macd(t, i) / std::max(price_sd, config.std_floor);
    }
    for (Eigen::Index t = 0; t < t_len; ++t) {
      if (!std::isfinite(out.macd_norm(t, i))) continue;
      const double sd = trailing_std(out.macd_norm, i, t, config.macd_std_window);
      if (std::isnan(sd)) continue;
      out.y(t, i) = out.macd_norm(t, i) / std::max(sd, config.std_floor);
    }
  }
  return out;
}

Matrix macd_feature(const data::PricePanel& prices, int short_scale, int long_scale,
                    const FeatureConfig& config) {
  return macd_components(prices, short_scale, long_scale, config).y;
}

double position_scale(double y) { return y * std::exp(-y * y / 4.0) / 0.89; }

double macd_position(std::span<const double, 3> y) {
  double sum = 0.0;
  for (double v : y) {
    if (!std::isfinite(v)) throw ValidationError("macd_position requires finite inputs");
    sum += position_scale(v);
  }
  return sum / 3.0;
}

FeaturePanel build_U(const data::ReturnPanel& returns, const data::VolPanel& vols,
                     const data::PricePanel& prices, const FeatureConfig& config) {
  if (returns.returns.rows() != prices.n_dates() || vols.sigma_daily.rows() != prices.n_dates() ||
      returns.returns.cols() != prices.n_assets() || vols.sigma_daily.cols() != prices.n_assets())
    throw ValidationError("build_U inputs are not aligned");
  FeaturePanel u;
  u.dates = prices.dates;
  u.tickers = prices.tickers;
  int f = 0;
  for (int h : kReturnHorizons) u.values[f++] = norm_return(returns, vols, h);
  for (auto [s, l] : kMacdScales) u.values[f++] = macd_feature(prices, s, l, config);
  if (config.winsorize) {
    for (auto& m : u.values) m = data::winsorize(m, config.winsor_half_life, config.winsor_sigmas);
  }
  u.valid = Mask::Constant(u.n_dates(), u.n_assets(), true);
  for (const auto& m : u.values) u.valid = u.valid && m.array().isFinite();
  return u;
}

LookbackPanel build_V(const FeaturePanel& u, int lookback) { return LookbackPanel(u, lookback); }

void write_csv(const FeaturePanel& u, std::ostream& out) {
  out << "date,ticker,feature,value\n";
  for (Eigen::Index t = 0; t < u.n_dates(); ++t) {
    const auto date = format_date(u.dates[t]);
    for (Eigen::Index i = 0; i < u.n_assets(); ++i) {
      if (!u.valid(t, i)) continue;
      for (int f = 0; f < kNumFeatures; ++f)
        out << date << ',' << u.tickers[i] << ',' << kFeatureNames[f] << ','
            << format_double(u.values[f](t, i)) << '\n';
    }
  }
}

}  // namespace l2gmom::features
