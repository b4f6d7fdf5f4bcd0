#pragma once

#include "l2gmom/common.hpp"

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

namespace l2gmom::data {

/// Daily adjusted prices aligned on the union calendar of all assets.
/// prices is dates x assets; entries where available is false hold NaN.
struct PricePanel {
  std::vector<Date> dates;
  std::vector<std::string> tickers;
  Matrix prices;
  Mask available;

  Eigen::Index n_dates() const { return static_cast<Eigen::Index>(dates.size()); }
  Eigen::Index n_assets() const { return static_cast<Eigen::Index>(tickers.size()); }

  /// Throws ValidationError if any panel invariant is broken.
  void validate() const;
};

/// returns(t, i) = prices(t, i) / prices(t-1, i) - 1 where both days are available.
struct ReturnPanel {
  std::vector<Date> dates;
  std::vector<std::string> tickers;
  Matrix returns;
  Mask available;
};

struct VolPanel {
  std::vector<Date> dates;
  std::vector<std::string> tickers;
  Matrix sigma_daily;  // NaN where undefined
  Matrix sigma_ann;    // sigma_daily * sqrt(252)
  Mask defined;
};

struct IngestConfig {
  char delimiter = ',';
};

struct VolConfig {
  int span_days = 60;
  int min_periods = 20;
  double vol_floor = 1e-4;
};

PricePanel load_csv(const std::filesystem::path& path, const IngestConfig& config = {});
PricePanel parse_csv(std::istream& in, const IngestConfig& config = {});

/// Long format `date,ticker,price`, rows sorted by date then ticker order.
void write_csv(const PricePanel& panel, std::ostream& out);

ReturnPanel compute_returns(const PricePanel& panel);

/// EWM standard deviation of daily returns, computed per asset over its
/// available observations only (unavailable days are skipped, not zeroed).
VolPanel ewm_volatility(const ReturnPanel& returns, const VolConfig& config = {});
VolPanel ewm_volatility(const ReturnPanel& returns, int span_days);

/// Causal clipping band around the EWM mean of each column.
/// NaN entries are undefined and skipped; bounds there are NaN.
struct WinsorBounds {
  Matrix lower;
  Matrix upper;
};

WinsorBounds winsor_bounds(const Matrix& values, double half_life, double n_sigmas);
Matrix apply_bounds(const Matrix& values, const WinsorBounds& bounds);

/// Clips each column (a time series) to [m - n*sd, m + n*sd], with m and sd
/// the EWM mean and std of the raw column up to and including the row.
Matrix winsorize(const Matrix& values, double half_life, double n_sigmas);

/// Parameters of the synthetic panel generator.
///
/// Each asset owns a persistent latent trend z_i (unit-variance AR(1)). The
/// expected return of asset i is trend_strength times a diffused trend
/// (M z)_i, with M the row-normalized (I + planted_graph), so connected assets
/// share momentum. Daily shocks mix idiosyncratic noise with the same
/// diffusion, weighted by shock_coupling. With a zero graph, assets are
/// independent.
struct SyntheticSpec {
  int n_assets = 20;
  int n_days = 3000;
  Matrix planted_graph;  // empty means zero graph
  double trend_strength = 0.1;
  double noise_scale = 1.0;
  double trend_persistence = 0.99;
  double shock_coupling = 0.5;
  double daily_vol = 0.01;
  std::uint64_t seed = 1;
  std::string start_date = "2000-01-03";

  void validate() const;
};

/// n assets split into contiguous equal-size blocks; complete graph with the
/// given weight inside a block, nothing across.
Matrix block_graph(int n_assets, int n_blocks, double weight = 1.0);

/// Block label of each asset under block_graph's layout.
std::vector<int> block_labels(int n_assets, int n_blocks);

PricePanel generate_synthetic(const SyntheticSpec& spec);

SyntheticSpec synthetic_spec_from_json(const nlohmann::json& j);
nlohmann::json to_json(const SyntheticSpec& spec);

}  // namespace l2gmom::data
