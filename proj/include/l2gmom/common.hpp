#pragma once

#include <Eigen/Dense>

#include <chrono>
#include <cmath>
#include <limits>
#include <string>
#include <string_view>

namespace l2gmom {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Mask = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>;
using Date = std::chrono::sys_days;

inline constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
inline constexpr double kTradingDays = 252.0;

// Strict ISO-8601 calendar date, YYYY-MM-DD.
Date parse_date(std::string_view text);
std::string format_date(Date d);

// Shortest round-trip-stable decimal used by every CSV/JSON writer so reruns
// are byte-identical.
std::string format_double(double x);

}  // namespace l2gmom
