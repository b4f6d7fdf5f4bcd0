#pragma once

#include "l2gmom/common.hpp"
#include "l2gmom/data.hpp"

#include <array>
#include <iosfwd>
#include <span>
#include <string_view>
#include <utility>
#include <vector>

namespace l2gmom::features {

inline constexpr int kNumFeatures = 8;
inline constexpr std::array<int, 5> kReturnHorizons{1, 21, 63, 126, 252};
inline constexpr std::array<std::pair<int, int>, 3> kMacdScales{{{8, 24}, {16, 48}, {32, 96}}};
inline constexpr std::array<std::string_view, kNumFeatures> kFeatureNames{
    "ret_1d", "ret_21d", "ret_63d", "ret_126d", "ret_252d", "macd_8_24", "macd_16_48", "macd_32_96"};

struct FeatureConfig {
  data::VolConfig vol{};
  int price_std_window = 63;
  int macd_std_window = 252;
  double std_floor = 1e-8;
  bool winsorize = true;
  double winsor_half_life = 252.0;
  double winsor_sigmas = 5.0;
  int lookback = 252;
};

/// Momentum features per asset-day.
///
/// values[f] is the dates x assets matrix of feature f in kFeatureNames
/// order; valid(t, i) holds iff all eight features are finite.
struct FeaturePanel {
  std::vector<Date> dates;
  std::vector<std::string> tickers;
  std::array<Matrix, kNumFeatures> values;
  Mask valid;

  Eigen::Index n_dates() const { return static_cast<Eigen::Index>(dates.size()); }
  Eigen::Index n_assets() const { return static_cast<Eigen::Index>(tickers.size()); }

  /// U_t restricted to the given assets, one row per asset.
  Matrix rows(Eigen::Index t, std::span<const Eigen::Index> assets) const;
  Vector row(Eigen::Index t, Eigen::Index asset) const;
};

/// Stacked lookback representation built from a FeaturePanel.
///
/// Row i of V_t has kNumFeatures * lookback entries laid out in day blocks,
/// oldest day first; within a block the features follow kFeatureNames order,
/// so entry (k * 8 + f) is feature f on day t - lookback + 1 + k.
class LookbackPanel {
public:
  LookbackPanel(FeaturePanel u, int lookback);

  int lookback() const { return lookback_; }
  Eigen::Index width() const { return static_cast<Eigen::Index>(kNumFeatures) * lookback_; }
  const Mask& valid() const { return valid_; }
  const FeaturePanel& features() const { return u_; }

  Vector row(Eigen::Index t, Eigen::Index asset) const;
  Matrix rows(Eigen::Index t, std::span<const Eigen::Index> assets) const;

private:
  FeaturePanel u_;
  int lookback_;
  Mask valid_;
};

/// r_{t-h:t} / (sigma_t * sqrt(h)) with compounded window return and daily
/// EWM sigma; NaN when any day of the window or sigma_t is undefined.
Matrix norm_return(const data::ReturnPanel& returns, const data::VolPanel& vols, int horizon_days);

struct MacdSeries {
  Matrix macd;       // m_S - m_L
  Matrix macd_norm;  // macd / trailing price std
  Matrix y;          // macd_norm / trailing std of macd_norm
};

/// Both EWM price averages use weight (1 - 1/scale)^k, i.e. a half-life of
/// log(0.5) / log(1 - 1/scale) days.
MacdSeries macd_components(const data::PricePanel& prices, int short_scale, int long_scale,
                           const FeatureConfig& config = {});
Matrix macd_feature(const data::PricePanel& prices, int short_scale, int long_scale,
                    const FeatureConfig& config = {});

/// phi(y) = y exp(-y^2 / 4) / 0.89
double position_scale(double y);

/// Mean of position_scale over the three MACD signals.
double macd_position(std::span<const double, 3> y);

FeaturePanel build_U(const data::ReturnPanel& returns, const data::VolPanel& vols,
                     const data::PricePanel& prices, const FeatureConfig& config = {});

LookbackPanel build_V(const FeaturePanel& u, int lookback);

/// Long format `date,ticker,feature,value`, valid rows only.
void write_csv(const FeaturePanel& u, std::ostream& out);

}  // namespace l2gmom::features
