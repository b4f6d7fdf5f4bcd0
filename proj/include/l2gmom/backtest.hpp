#pragma once

#include "l2gmom/common.hpp"
#include "l2gmom/data.hpp"
#include "l2gmom/features.hpp"

#include <array>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace l2gmom::backtest {

inline constexpr double kSigmaTarget = 0.15;
inline constexpr std::array<double, 6> kCostLevelsBps{0.5, 1.0, 2.0, 3.0, 4.0, 5.0};

/// Positions and returns of one strategy over a common calendar.
/// positions is dates x assets, NaN where the strategy holds no position;
/// returns(t) is the portfolio return from t to t+1, NaN when undefined.
struct StrategyRecord {
  std::string name;
  Matrix positions;
  Vector returns;
};

/// r_{i,t:t+1} placed on row t; NaN where either day is unavailable.
Matrix next_returns(const data::ReturnPanel& returns);

/// Volatility-targeted portfolio return per row:
///   (1/N_t) sum_i x_{i,t} (sigma_tgt / sigma_{i,t}) r_{i,t:t+1}
/// over assets with finite position, sigma and next-day return. NaN when N_t = 0.
Vector portfolio_returns(const Matrix& positions, const Matrix& next_ret, const Matrix& sigma_ann,
                         double sigma_tgt = kSigmaTarget);
Vector portfolio_returns(const Matrix& positions, const data::ReturnPanel& returns, const data::VolPanel& vols,
                         double sigma_tgt = kSigmaTarget);

/// Finite entries of a series, in order.
Vector compact(const Vector& series);

/// Scales the finite entries so their annualized sample std equals sigma_tgt.
Vector target_vol_rescale(const Vector& series, double sigma_tgt = kSigmaTarget);

/// Ex-ante variant: each day is scaled by sigma_tgt over the annualized EWM
/// std of the preceding days (NaN until min_periods days are seen).
Vector rolling_vol_rescale(const Vector& series, double sigma_tgt = kSigmaTarget, double span = 60.0,
                           int min_periods = 20);

/// Performance summary of a daily return series. Fields that are undefined
/// for the series (for example Sortino without losing days) are empty.
struct MetricsTable {
  Eigen::Index days = 0;
  double ann_return = kNaN;                 // daily mean * 252
  std::optional<double> vol;                // daily std * sqrt(252)
  std::optional<double> sharpe;             // ann_return / vol
  std::optional<double> downside_deviation; // sqrt(252) * std of losing days
  double mdd = 0.0;                         // on the compounded equity curve
  double mdd_duration = 0.0;                // peak-to-trough days / days
  std::optional<double> sortino;
  std::optional<double> calmar;
  double hit_rate = 0.0;                    // share of days with return > 0
  std::optional<double> avg_profit_over_loss;
};

/// Throws on an empty or non-finite series.
MetricsTable metrics(const Vector& series);

inline constexpr std::array<const char*, 10> kMetricColumns{
    "return", "vol", "sharpe", "downside_deviation", "mdd", "mdd_duration", "sortino", "calmar", "hit_rate",
    "avg_profit_over_loss"};

enum class CostVolatility { asset, target };

/// Portfolio returns net of  c * s * |x_t / sigma_t - x_{t-1} / sigma_{t-1}|
/// per asset, with s = sigma_{i,t} (asset) or sigma_tgt (target) and c in bps.
/// An undefined previous position counts as flat.
Vector cost_adjusted_returns(const Matrix& positions, const Matrix& next_ret, const Matrix& sigma_ann, double c_bps,
                             double sigma_tgt = kSigmaTarget, CostVolatility mode = CostVolatility::asset);
Vector cost_adjusted_returns(const Matrix& positions, const data::ReturnPanel& returns, const data::VolPanel& vols,
                             double c_bps, double sigma_tgt = kSigmaTarget, CostVolatility mode = CostVolatility::asset);

struct CostPoint {
  double c_bps = 0.0;
  std::optional<double> sharpe;
};

std::vector<CostPoint> cost_curve(const Matrix& positions, const Matrix& next_ret, const Matrix& sigma_ann,
                                  std::span<const double> levels_bps = kCostLevelsBps,
                                  double sigma_tgt = kSigmaTarget, CostVolatility mode = CostVolatility::asset);

/// Pairwise return correlation and position sign agreement.
struct Diversification {
  std::vector<std::string> names;
  Matrix correlation;
  Matrix sign_agreement;
};

/// Correlation uses days where both returns are finite; sign agreement uses
/// asset-days where both positions are finite. Throws when a pair has fewer
/// than two common days or no common asset-day.
Diversification diversification(const std::vector<StrategyRecord>& strategies);

/// x = 1 wherever volatility is defined.
Matrix strategy_long_only(const data::VolPanel& vols);

/// Mean of phi over the three MACD features where they are valid.
Matrix strategy_macd(const features::FeaturePanel& u);

/// Restricts positions to the given rows; other rows become NaN.
Matrix restrict_rows(const Matrix& positions, std::span<const Eigen::Index> rows);

// CSV writers; each table starts with a '#' line stating units.
void write_metrics_csv(std::ostream& out, const std::vector<std::pair<std::string, MetricsTable>>& raw,
                       const std::vector<std::pair<std::string, MetricsTable>>& rescaled);
void write_cumulative_csv(std::ostream& out, const std::vector<Date>& dates, const std::vector<StrategyRecord>& strategies,
                          bool rescaled);
void write_matrix_csv(std::ostream& out, const std::string& units, const std::vector<std::string>& names,
                      const Matrix& m);
void write_cost_curves_csv(std::ostream& out, const std::vector<std::pair<std::string, std::vector<CostPoint>>>& curves);

}  // namespace l2gmom::backtest
