#include "l2gmom/backtest.hpp"

#include "l2gmom/errors.hpp"
#include "l2gmom/ewm.hpp"

#include <algorithm>
#include <ostream>

namespace l2gmom::backtest {

namespace {

const double kRootDays = std::sqrt(kTradingDays);

void check_shapes(const Matrix& a, const Matrix& b, const Matrix& c) {
  if (a.rows() != b.rows() || a.cols() != b.cols() || a.rows() != c.rows() || a.cols() != c.cols())
    throw ValidationError("positions, returns and volatilities must share the same dates x assets shape");
}

double sample_std(const std::vector<double>& x) {
  const double n = static_cast<double>(x.size());
  double mean = 0.0;
  for (double v : x) mean += v;
  mean /= n;
  double ss = 0.0;
  for (double v : x) ss += (v - mean) * (v - mean);
  return std::sqrt(ss / (n - 1.0));
}

bool active(const Matrix& positions, const Matrix& next_ret, const Matrix& sigma, Eigen::Index t, Eigen::Index i) {
  return std::isfinite(positions(t, i)) && std::isfinite(next_ret(t, i)) && std::isfinite(sigma(t, i)) &&
         sigma(t, i) > 0.0;
}

std::string opt(const std::optional<double>& v) { return v ? format_double(*v) : ""; }

}  // namespace

Matrix next_returns(const data::ReturnPanel& returns) {
  const auto n = returns.returns.rows();
  Matrix out = Matrix::Constant(n, returns.returns.cols(), kNaN);
  for (Eigen::Index t = 0; t + 1 < n; ++t)
    for (Eigen::Index i = 0; i < out.cols(); ++i)
      if (returns.available(t + 1, i)) out(t, i) = returns.returns(t + 1, i);
  return out;
}

Vector portfolio_returns(const Matrix& positions, const Matrix& next_ret, const Matrix& sigma_ann, double sigma_tgt) {
  check_shapes(positions, next_ret, sigma_ann);
  Vector out = Vector::Constant(positions.rows(), kNaN);
  for (Eigen::Index t = 0; t < positions.rows(); ++t) {
    double sum = 0.0;
    int n = 0;
    for (Eigen::Index i = 0; i < positions.cols(); ++i) {
      if (!active(positions, next_ret, sigma_ann, t, i)) continue;
      sum += positions(t, i) * sigma_tgt / sigma_ann(t, i) * next_ret(t, i);
      ++n;
    }
    if (n > 0) out(t) = sum / n;
  }
  return out;
}

Vector portfolio_returns(const Matrix& positions, const data::ReturnPanel& returns, const data::VolPanel& vols,
                         double sigma_tgt) {
  return portfolio_returns(positions, next_returns(returns), vols.sigma_ann, sigma_tgt);
}

Vector compact(const Vector& series) {
  std::vector<double> kept;
  for (double v : series)
    if (std::isfinite(v)) kept.push_back(v);
  return Eigen::Map<const Vector>(kept.data(), static_cast<Eigen::Index>(kept.size()));
}

Vector target_vol_rescale(const Vector& series, double sigma_tgt) {
  const Vector c = compact(series);
  if (c.size() < 2) throw ValidationError("target_vol_rescale needs at least two defined days");
  const double vol = sample_std({c.data(), c.data() + c.size()}) * kRootDays;
  if (!(vol > 0.0)) throw NumericError("target_vol_rescale: series has zero variance");
  return series * (sigma_tgt / vol);
}

Vector rolling_vol_rescale(const Vector& series, double sigma_tgt, double span, int min_periods) {
  auto stats = EwmStats::from_span(span);
  Vector out = Vector::Constant(series.size(), kNaN);
  for (Eigen::Index t = 0; t < series.size(); ++t) {
    if (!std::isfinite(series(t))) continue;
    if (static_cast<int>(stats.count()) >= min_periods) {
      const double vol = stats.stddev() * kRootDays;
      if (vol > 0.0) out(t) = series(t) * sigma_tgt / vol;
    }
    stats.push(series(t));
  }
  return out;
}

MetricsTable metrics(const Vector& series) {
  if (series.size() == 0) throw ValidationError("metrics needs a non-empty series");
  if (!series.allFinite()) throw ValidationError("metrics needs a finite series");
  MetricsTable m;
  const auto n = series.size();
  m.days = n;
  const double mean = series.mean();
  m.ann_return = mean * kTradingDays;

  std::vector<double> all(series.data(), series.data() + n), gains, losses;
  for (double r : all) {
    if (r > 0.0) gains.push_back(r);
    if (r < 0.0) losses.push_back(r);
  }
  if (n >= 2) {
    m.vol = sample_std(all) * kRootDays;
    if (*m.vol > 0.0) m.sharpe = m.ann_return / *m.vol;
  }
  if (losses.size() >= 2) {
    m.downside_deviation = sample_std(losses) * kRootDays;
    if (*m.downside_deviation > 0.0) m.sortino = m.ann_return / *m.downside_deviation;
  }

  // Equity starts at 1 before the first day.
  double equity = 1.0, peak = 1.0;
  Eigen::Index peak_idx = 0;
  for (Eigen::Index k = 0; k < n; ++k) {
    equity *= 1.0 + series(k);
    const auto idx = k + 1;
    if (equity > peak) {
      peak = equity;
      peak_idx = idx;
    } else {
      const double dd = (peak - equity) / peak;
      if (dd > m.mdd) {
        m.mdd = dd;
        m.mdd_duration = static_cast<double>(idx - peak_idx) / static_cast<double>(n);
      }
    }
  }
  if (m.mdd > 0.0) m.calmar = m.ann_return / m.mdd;
  m.hit_rate = static_cast<double>(gains.size()) / static_cast<double>(n);
  if (!gains.empty() && !losses.empty()) {
    double g = 0.0, l = 0.0;
    for (double v : gains) g += v;
    for (double v : losses) l += v;
    m.avg_profit_over_loss = (g / static_cast<double>(gains.size())) / std::abs(l / static_cast<double>(losses.size()));
  }
  return m;
}

Vector cost_adjusted_returns(const Matrix& positions, const Matrix& next_ret, const Matrix& sigma_ann, double c_bps,
                             double sigma_tgt, CostVolatility mode) {
  check_shapes(positions, next_ret, sigma_ann);
  if (!(c_bps >= 0.0)) throw ValidationError("cost level must be non-negative");
  const double c = c_bps * 1e-4;
  Vector out = Vector::Constant(positions.rows(), kNaN);
  for (Eigen::Index t = 0; t < positions.rows(); ++t) {
    double sum = 0.0;
    int n = 0;
    for (Eigen::Index i = 0; i < positions.cols(); ++i) {
      if (!active(positions, next_ret, sigma_ann, t, i)) continue;
      const double sigma = sigma_ann(t, i);
      double prev = 0.0;
      if (t > 0 && std::isfinite(positions(t - 1, i)) && std::isfinite(sigma_ann(t - 1, i)) && sigma_ann(t - 1, i) > 0.0)
        prev = positions(t - 1, i) / sigma_ann(t - 1, i);
      const double scale = mode == CostVolatility::asset ? sigma : sigma_tgt;
      const double penalty = c * scale * std::abs(positions(t, i) / sigma - prev);
      sum += positions(t, i) * sigma_tgt / sigma * next_ret(t, i) - penalty;
      ++n;
    }
    if (n > 0) out(t) = sum / n;
  }
  return out;
}

Vector cost_adjusted_returns(const Matrix& positions, const data::ReturnPanel& returns, const data::VolPanel& vols,
                             double c_bps, double sigma_tgt, CostVolatility mode) {
  return cost_adjusted_returns(positions, next_returns(returns), vols.sigma_ann, c_bps, sigma_tgt, mode);
}

std::vector<CostPoint> cost_curve(const Matrix& positions, const Matrix& next_ret, const Matrix& sigma_ann,
                                  std::span<const double> levels_bps, double sigma_tgt, CostVolatility mode) {
  std::vector<CostPoint> out;
  for (double c : levels_bps) {
    const Vector r = compact(cost_adjusted_returns(positions, next_ret, sigma_ann, c, sigma_tgt, mode));
    out.push_back({c, r.size() > 0 ? metrics(r).sharpe : std::nullopt});
  }
  return out;
}

Diversification diversification(const std::vector<StrategyRecord>& s) {
  Diversification d;
  const auto k = static_cast<Eigen::Index>(s.size());
  d.correlation = Matrix::Identity(k, k);
  d.sign_agreement = Matrix::Identity(k, k);
  for (const auto& r : s) d.names.push_back(r.name);
  auto sign = [](double x) { return (x > 0.0) - (x < 0.0); };
  for (Eigen::Index a = 0; a < k; ++a) {
    for (Eigen::Index b = a; b < k; ++b) {
      const auto& ra = s[static_cast<std::size_t>(a)];
      const auto& rb = s[static_cast<std::size_t>(b)];
      if (ra.returns.size() != rb.returns.size() || ra.positions.rows() != rb.positions.rows() ||
          ra.positions.cols() != rb.positions.cols())
        throw ValidationError("diversification: strategies " + ra.name + " and " + rb.name + " are not aligned");
      std::vector<double> xa, xb;
      for (Eigen::Index t = 0; t < ra.returns.size(); ++t)
        if (std::isfinite(ra.returns(t)) && std::isfinite(rb.returns(t))) {
          xa.push_back(ra.returns(t));
          xb.push_back(rb.returns(t));
        }
      if (xa.size() < 2)
        throw ValidationError("diversification: " + ra.name + " and " + rb.name + " overlap on fewer than two days");
      const auto ma = Eigen::Map<const Vector>(xa.data(), static_cast<Eigen::Index>(xa.size()));
      const auto mb = Eigen::Map<const Vector>(xb.data(), static_cast<Eigen::Index>(xb.size()));
      const Vector ca = ma.array() - ma.mean();
      const Vector cb = mb.array() - mb.mean();
      const double denom = ca.norm() * cb.norm();
      const double corr = denom > 0.0 ? ca.dot(cb) / denom : kNaN;

      long agree = 0, total = 0;
      for (Eigen::Index t = 0; t < ra.positions.rows(); ++t)
        for (Eigen::Index i = 0; i < ra.positions.cols(); ++i) {
          const double pa = ra.positions(t, i), pb = rb.positions(t, i);
          if (!std::isfinite(pa) || !std::isfinite(pb)) continue;
          ++total;
          agree += sign(pa) == sign(pb);
        }
      if (total == 0)
        throw ValidationError("diversification: " + ra.name + " and " + rb.name + " share no asset-days");
      const double agreement = static_cast<double>(agree) / static_cast<double>(total);
      d.correlation(a, b) = d.correlation(b, a) = corr;
      d.sign_agreement(a, b) = d.sign_agreement(b, a) = agreement;
    }
  }
  return d;
}

Matrix strategy_long_only(const data::VolPanel& vols) {
  Matrix x = Matrix::Constant(vols.sigma_ann.rows(), vols.sigma_ann.cols(), kNaN);
  for (Eigen::Index t = 0; t < x.rows(); ++t)
    for (Eigen::Index i = 0; i < x.cols(); ++i)
      if (vols.defined(t, i)) x(t, i) = 1.0;
  return x;
}

Matrix strategy_macd(const features::FeaturePanel& u) {
  constexpr int first = static_cast<int>(features::kReturnHorizons.size());
  Matrix x = Matrix::Constant(u.n_dates(), u.n_assets(), kNaN);
  for (Eigen::Index t = 0; t < x.rows(); ++t)
    for (Eigen::Index i = 0; i < x.cols(); ++i) {
      const std::array<double, 3> y{u.values[first](t, i), u.values[first + 1](t, i), u.values[first + 2](t, i)};
      if (std::all_of(y.begin(), y.end(), [](double v) { return std::isfinite(v); }))
        x(t, i) = features::macd_position(y);
    }
  return x;
}

Matrix restrict_rows(const Matrix& positions, std::span<const Eigen::Index> rows) {
  Matrix out = Matrix::Constant(positions.rows(), positions.cols(), kNaN);
  for (auto t : rows) out.row(t) = positions.row(t);
  return out;
}

void write_metrics_csv(std::ostream& out, const std::vector<std::pair<std::string, MetricsTable>>& raw,
                       const std::vector<std::pair<std::string, MetricsTable>>& rescaled) {
  out << "# return, vol, downside_deviation: annualized decimals; sharpe, sortino, calmar: annualized ratios; "
         "mdd: fraction of peak equity (compounded); mdd_duration: peak-to-trough days / days; hit_rate: share "
         "of days with return > 0; empty cell: undefined\n";
  out << "block,strategy,days";
  for (const char* c : kMetricColumns) out << ',' << c;
  out << '\n';
  auto block = [&](const char* name, const auto& rows) {
    for (const auto& [strategy, m] : rows) {
      out << name << ',' << strategy << ',' << m.days << ',' << format_double(m.ann_return) << ',' << opt(m.vol) << ','
          << opt(m.sharpe) << ',' << opt(m.downside_deviation) << ',' << format_double(m.mdd) << ','
          << format_double(m.mdd_duration) << ',' << opt(m.sortino) << ',' << opt(m.calmar) << ','
          << format_double(m.hit_rate) << ',' << opt(m.avg_profit_over_loss) << '\n';
    }
  };
  block("raw", raw);
  block("rescaled_15pct", rescaled);
}

void write_cumulative_csv(std::ostream& out, const std::vector<Date>& dates, const std::vector<StrategyRecord>& strategies,
                          bool rescaled) {
  out << "# cumulative compounded return from 0 at the first test date; daily returns "
      << (rescaled ? "rescaled to 15% annualized volatility" : "raw") << "; row date t holds returns through t+1\n";
  out << "date";
  std::vector<Vector> series;
  for (const auto& s : strategies) {
    out << ',' << s.name;
    series.push_back(rescaled ? target_vol_rescale(s.returns) : s.returns);
  }
  out << '\n';
  std::vector<double> equity(strategies.size(), 1.0);
  std::vector<bool> started(strategies.size(), false);
  for (std::size_t t = 0; t < dates.size(); ++t) {
    bool any = false;
    for (const auto& s : series) any = any || std::isfinite(s(static_cast<Eigen::Index>(t)));
    if (!any) continue;
    out << format_date(dates[t]);
    for (std::size_t k = 0; k < series.size(); ++k) {
      const double r = series[k](static_cast<Eigen::Index>(t));
      if (std::isfinite(r)) {
        equity[k] *= 1.0 + r;
        started[k] = true;
      }
      out << ',' << (started[k] ? format_double(equity[k] - 1.0) : "");
    }
    out << '\n';
  }
}

void write_matrix_csv(std::ostream& out, const std::string& units, const std::vector<std::string>& names,
                      const Matrix& m) {
  out << "# " << units << '\n';
  out << "strategy";
  for (const auto& n : names) out << ',' << n;
  out << '\n';
  for (Eigen::Index a = 0; a < m.rows(); ++a) {
    out << names[static_cast<std::size_t>(a)];
    for (Eigen::Index b = 0; b < m.cols(); ++b) out << ',' << format_double(m(a, b));
    out << '\n';
  }
}

void write_cost_curves_csv(std::ostream& out, const std::vector<std::pair<std::string, std::vector<CostPoint>>>& curves) {
  out << "# c_bps: cost per unit of volatility-scaled turnover in basis points; sharpe: annualized, cost-adjusted\n";
  out << "strategy,c_bps,sharpe\n";
  for (const auto& [name, points] : curves)
    for (const auto& p : points) out << name << ',' << format_double(p.c_bps) << ',' << opt(p.sharpe) << '\n';
}

}  // namespace l2gmom::backtest
