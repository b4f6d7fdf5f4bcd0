#pragma once

#include <cmath>
#include <cstddef>

namespace l2gmom {

/// Exponentially weighted running mean/variance over an observation stream.
///
/// Observation k steps in the past carries weight decay^k (pandas adjust=True
/// semantics). The weighted second moment is updated with the weighted
/// Welford recurrence so a constant stream has exactly zero variance.
/// variance() applies the reliability-weights bias correction
/// (sum w)^2 / ((sum w)^2 - sum w^2), matching pandas' ewm(...).var().
class EwmStats {
public:
  explicit EwmStats(double decay) : decay_(decay) {}

  static EwmStats from_span(double span) { return EwmStats(1.0 - 2.0 / (span + 1.0)); }
  static EwmStats from_half_life(double half_life) {
    return EwmStats(std::exp(std::log(0.5) / half_life));
  }

  void push(double x) {
    const double old_w = decay_ * sum_w_;
    sum_w_ = old_w + 1.0;
    sum_w2_ = decay_ * decay_ * sum_w2_ + 1.0;
    const double delta = x - mean_;
    mean_ += delta / sum_w_;
    m2_ = decay_ * m2_ + old_w * delta * delta / sum_w_;
    ++count_;
  }

  std::size_t count() const { return count_; }
  double mean() const { return mean_; }
  double decay() const { return decay_; }

  /// Bias-corrected weighted variance; NaN with fewer than two observations.
  double variance() const {
    if (count_ < 2) return std::nan("");
    const double denom = sum_w_ * sum_w_ - sum_w2_;
    if (denom <= 0.0) return std::nan("");
    const double v = m2_ * sum_w_ / denom;
    return v > 0.0 ? v : 0.0;
  }

  double stddev() const { return std::sqrt(variance()); }

private:
  double decay_;
  double sum_w_ = 0.0;
  double sum_w2_ = 0.0;
  double mean_ = 0.0;
  double m2_ = 0.0;
  std::size_t count_ = 0;
};

}  // namespace l2gmom
