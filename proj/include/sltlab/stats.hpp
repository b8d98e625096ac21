#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

namespace sltlab {

/// Neumaier-compensated running sum.
class CompensatedSum {
 public:
  void add(double x) noexcept {
    const double t = sum_ + x;
    if (std::abs(sum_) >= std::abs(x)) {
      comp_ += (sum_ - t) + x;
    } else {
      comp_ += (x - t) + sum_;
    }
    sum_ = t;
  }
  double value() const noexcept { return sum_ + comp_; }

 private:
  double sum_ = 0.0;
  double comp_ = 0.0;
};

/// One-pass weighted mean and centered second moment (West's weighted Welford).
/// Weights need not be normalized.
class WeightedMoments {
 public:
  void add(double x, double weight = 1.0) noexcept {
    if (weight <= 0.0) return;
    if (total_weight_ == 0.0) {
      total_weight_ = weight;
      mean_ = x;
      return;
    }
    total_weight_ += weight;
    const double delta = x - mean_;
    mean_ += delta * weight / total_weight_;
    m2_ += weight * delta * (x - mean_);
  }
  double mean() const noexcept { return mean_; }
  /// Population (weighted) variance, never negative.
  double variance() const noexcept {
    return total_weight_ > 0.0 && m2_ > 0.0 ? m2_ / total_weight_ : 0.0;
  }
  double total_weight() const noexcept { return total_weight_; }

 private:
  double total_weight_ = 0.0;
  double mean_ = 0.0;
  double m2_ = 0.0;
};

/// Sample mean and standard error of the mean.
struct MeanSe {
  double mean = 0.0;
  double se = 0.0;
  std::size_t count = 0;
};

inline MeanSe mean_se(std::span<const double> xs) {
  MeanSe out;
  out.count = xs.size();
  if (xs.empty()) return out;
  CompensatedSum s;
  for (double x : xs) s.add(x);
  out.mean = s.value() / static_cast<double>(xs.size());
  if (xs.size() > 1) {
    CompensatedSum ss;
    for (double x : xs) ss.add((x - out.mean) * (x - out.mean));
    const double var = ss.value() / static_cast<double>(xs.size() - 1);
    out.se = std::sqrt(var / static_cast<double>(xs.size()));
  }
  return out;
}

/// Covariance of the two sample means (sample covariance / count).
inline double covariance_of_means(std::span<const double> xs, std::span<const double> ys) {
  const std::size_t n = xs.size();
  if (n < 2 || ys.size() != n) return 0.0;
  const double mx = mean_se(xs).mean;
  const double my = mean_se(ys).mean;
  CompensatedSum s;
  for (std::size_t i = 0; i < n; ++i) s.add((xs[i] - mx) * (ys[i] - my));
  return s.value() / static_cast<double>(n - 1) / static_cast<double>(n);
}

/// sqrt(a^2 + b^2) for independent standard errors.
inline double combined_se(double a, double b) noexcept { return std::hypot(a, b); }

}  // namespace sltlab
