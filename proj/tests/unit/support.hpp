#pragma once

#include "l2gmom/data.hpp"

#include <string>
#include <vector>

namespace test_support {

using l2gmom::Date;
using l2gmom::Matrix;

/// Consecutive calendar days from 2000-01-03.
inline std::vector<Date> days(Eigen::Index n) {
  std::vector<Date> out;
  const Date start = l2gmom::parse_date("2000-01-03");
  for (Eigen::Index k = 0; k < n; ++k) out.push_back(start + std::chrono::days(k));
  return out;
}

/// Panel from a dates x assets price matrix; NaN marks unavailable.
inline l2gmom::data::PricePanel panel(const Matrix& prices) {
  l2gmom::data::PricePanel p;
  p.dates = days(prices.rows());
  for (Eigen::Index i = 0; i < prices.cols(); ++i) p.tickers.push_back("T" + std::to_string(i));
  p.prices = prices;
  p.available = prices.array().isFinite();
  return p;
}

}  // namespace test_support
