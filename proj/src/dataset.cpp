#include "l2gmom/dataset.hpp"

#include "l2gmom/errors.hpp"

namespace l2gmom::training {

std::vector<Eigen::Index> DateSample::target_rows() const {
  std::vector<Eigen::Index> rows;
  for (Eigen::Index k = 0; k < next_return.size(); ++k)
    if (std::isfinite(next_return(k))) rows.push_back(k);
  return rows;
}

Dataset prepare_dataset(data::PricePanel prices, const features::FeatureConfig& config) {
  prices.validate();
  Dataset d;
  d.returns = data::compute_returns(prices);
  d.vols = data::ewm_volatility(d.returns, config.vol);
  auto u = features::build_U(d.returns, d.vols, prices, config);
  d.lookback = std::make_shared<const features::LookbackPanel>(std::move(u), config.lookback);
  d.prices = std::move(prices);
  d.feature_config = config;
  return d;
}

std::optional<DateSample> Dataset::sample(Eigen::Index t, Universe universe, Eigen::Index observe_until,
                                          bool keep_v) const {
  if (t < 0 || t >= n_dates()) throw ValidationError("sample date out of range");
  DateSample s;
  s.date = t;
  const auto& feats = u();
  for (Eigen::Index i = 0; i < n_assets(); ++i) {
    if (!vols.defined(t, i) || !feats.valid(t, i)) continue;
    if (universe == Universe::lookback && !lookback->valid()(t, i)) continue;
    s.assets.push_back(i);
  }
  const Eigen::Index min_assets = universe == Universe::lookback ? 2 : 1;
  if (s.size() < min_assets) return std::nullopt;

  s.u = feats.rows(t, s.assets);
  const auto n = s.size();
  s.sigma_daily.resize(n);
  s.sigma_ann.resize(n);
  s.next_return = Vector::Constant(n, kNaN);
  for (Eigen::Index k = 0; k < n; ++k) {
    const auto i = s.assets[static_cast<std::size_t>(k)];
    s.sigma_daily(k) = vols.sigma_daily(t, i);
    s.sigma_ann(k) = vols.sigma_ann(t, i);
    if (t + 1 < n_dates() && t + 1 <= observe_until && returns.available(t + 1, i))
      s.next_return(k) = returns.returns(t + 1, i);
  }
  if (universe == Universe::lookback) {
    Matrix v = lookback->rows(t, s.assets);
    std::vector<std::string> names;
    names.reserve(s.assets.size());
    for (auto i : s.assets) names.push_back(prices.tickers[static_cast<std::size_t>(i)]);
    s.distances = graph::pairwise_distances(v, names);
    if (keep_v) s.v = std::move(v);
  }
  return s;
}

std::vector<DateSample> collect_samples(const Dataset& data, Eigen::Index first, Eigen::Index last,
                                        Universe universe, Eigen::Index observe_until, bool keep_v) {
  std::vector<DateSample> out;
  first = std::max<Eigen::Index>(first, 0);
  last = std::min<Eigen::Index>(last, data.n_dates() - 1);
  for (Eigen::Index t = first; t <= last; ++t) {
    if (auto s = data.sample(t, universe, observe_until, keep_v)) out.push_back(std::move(*s));
  }
  return out;
}

}  // namespace l2gmom::training
