#pragma once

#include "l2gmom/common.hpp"
#include "l2gmom/data.hpp"
#include "l2gmom/features.hpp"
#include "l2gmom/graph_solver.hpp"

#include <memory>
#include <optional>
#include <vector>

namespace l2gmom::training {

/// One cross-section: the assets tradable at a date and everything a model
/// needs about them.
struct DateSample {
  Eigen::Index date = 0;              // row in the panel
  std::vector<Eigen::Index> assets;   // panel columns, in node order
  Matrix u;                           // N x 8
  Matrix v;                           // N x 8*lookback, only kept when requested
  graph::DistanceVector distances;    // empty h for the feature universe
  Vector sigma_daily;
  Vector sigma_ann;
  Vector next_return;                 // r_{t:t+1}; NaN when not observed

  Eigen::Index size() const { return static_cast<Eigen::Index>(assets.size()); }
  /// Rows with an observed next-day return.
  std::vector<Eigen::Index> target_rows() const;
};

/// Which assets enter a date's cross-section.
///  features: valid U row and defined volatility (LinReg).
///  lookback: additionally a valid V row; graph models need >= 2 such assets.
enum class Universe { features, lookback };

/// Prices with every derived panel needed by the strategies.
struct Dataset {
  data::PricePanel prices;
  data::ReturnPanel returns;
  data::VolPanel vols;
  features::FeatureConfig feature_config;
  std::shared_ptr<const features::LookbackPanel> lookback;  // owns the FeaturePanel

  const features::FeaturePanel& u() const { return lookback->features(); }
  Eigen::Index n_dates() const { return prices.n_dates(); }
  Eigen::Index n_assets() const { return prices.n_assets(); }

  /// Cross-section at row t, or nullopt when it has no assets (fewer than two
  /// for the lookback universe). The next-day return is exposed only when
  /// t + 1 <= observe_until.
  std::optional<DateSample> sample(Eigen::Index t, Universe universe, Eigen::Index observe_until,
                                   bool keep_v = false) const;
};

Dataset prepare_dataset(data::PricePanel prices, const features::FeatureConfig& config = {});

/// Samples for rows [first, last], skipping empty cross-sections.
std::vector<DateSample> collect_samples(const Dataset& data, Eigen::Index first, Eigen::Index last,
                                        Universe universe, Eigen::Index observe_until, bool keep_v = false);

}  // namespace l2gmom::training
