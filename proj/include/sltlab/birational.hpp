#pragma once

#include <compare>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "sltlab/model.hpp"

namespace sltlab {

/// Exact rational number with positive denominator in lowest terms.
class Fraction {
 public:
  Fraction(std::int64_t num, std::int64_t den);

  std::int64_t num() const noexcept { return num_; }
  std::int64_t den() const noexcept { return den_; }
  double value() const noexcept { return static_cast<double>(num_) / static_cast<double>(den_); }
  std::string str() const;

  friend bool operator==(const Fraction&, const Fraction&) = default;
  friend std::strong_ordering operator<=>(const Fraction& a, const Fraction& b) noexcept {
    return static_cast<__int128>(a.num_) * b.den_ <=> static_cast<__int128>(b.num_) * a.den_;
  }

 private:
  std::int64_t num_;
  std::int64_t den_;
};

/// Normal-crossing chart: K = u^(2k) and prior Jacobian u^h.
struct Chart {
  std::vector<std::uint32_t> k;
  std::vector<std::uint32_t> h;
};

struct ChartSet {
  std::vector<Chart> charts;

  /// Throws ValidationError: empty set, mismatched lengths, or a chart with all k_j = 0.
  void validate() const;

  /// JSON list of {"k": [...], "h": [...]}.
  static ChartSet from_json_text(const std::string& text);
};

struct ChartRlct {
  Fraction lambda;
  std::size_t multiplicity;
};

/// lambda = min over charts and coordinates of (h_j + 1) / (2 k_j) (k_j = 0 gives +infinity);
/// m = max over charts of the number of coordinates attaining lambda.
ChartRlct rlct_from_charts(const ChartSet& charts);

struct VolumePoint {
  double t = 0.0;
  double fraction = 0.0;
  std::size_t count = 0;
};

/// Prior{w : K(w) <= t} on a decreasing t grid, estimated from shared prior draws.
struct VolumeProfile {
  std::vector<VolumePoint> points;
  std::size_t n_draws = 0;  // 0 for synthetic profiles (unit fit weights)
  double median_k = 0.0;
  std::vector<std::string> warnings;
};

/// n logarithmic points from scale*hi_rel down to scale*lo_rel (decreasing).
std::vector<double> log_t_grid(double scale, double lo_rel, double hi_rel, std::size_t points);

/// Sorted K values of n prior draws (K over the quadrature nodes).
std::vector<double> prior_k_values(const ModelSpec& model, const TrueProcess& truth, const XQuadrature& xq,
                                   std::size_t n_prior_samples, std::uint64_t seed);

/// Fraction of the (sorted) K values at or below each t. Monotone in t by construction.
VolumeProfile profile_from_k_values(const std::vector<double>& sorted_k, const std::vector<double>& t_grid);

/// Draws n_prior_samples (>= 1e5) from the prior and builds the profile on t_grid (decreasing, positive).
/// Warns when fewer than 100 draws fall below the smallest t.
VolumeProfile volume_profile(const ModelSpec& model, const TrueProcess& truth, const XQuadrature& xq,
                             const std::vector<double>& t_grid, std::size_t n_prior_samples, std::uint64_t seed);

struct InvariantEstimate {
  enum class Method { chart_exact, volume_fit, error_inversion, v_limit };

  Method method = Method::chart_exact;
  std::optional<double> lambda;
  std::optional<double> lambda_se;
  std::optional<std::size_t> multiplicity;
  std::optional<double> nu;
  std::optional<double> nu_se;
  std::vector<std::string> flags;
};

std::string method_name(InvariantEstimate::Method m);

struct VolumeFitOptions {
  /// Points with fewer prior draws below t are not used (ignored for synthetic profiles).
  std::size_t min_count = 10;
};

/// For each m in 1..d, weighted least squares of log V(t) - (m-1) log log(1/t) on [1, log t];
/// returns the (lambda, m) with the smallest residual. Throws std::runtime_error when fewer than
/// 8 points are usable or they span less than 2 decades of t.
InvariantEstimate rlct_volume_fit(const VolumeProfile& profile, std::size_t d, const VolumeFitOptions& options = {});

/// nu = beta * mean_V / 2.
InvariantEstimate nu_from_v(double mean_v, double beta, double se_v);

/// Inverts the generalization/training limits:
///   nu = (g - t) / (2 sigma^2),  lambda = nu + beta (g + t) / 2,
/// with g = n(E[G]-S), t = n(E[T]-S). Standard errors propagate through the linear map.
InvariantEstimate invariants_from_errors(double g_scaled, double t_scaled, double beta, double sigma,
                                         double se_g = 0.0, double se_t = 0.0, double cov_gt = 0.0);

}  // namespace sltlab
