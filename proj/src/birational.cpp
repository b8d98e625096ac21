#include "sltlab/birational.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

#include <Eigen/Dense>
#include <json.hpp>

#include "sltlab/io.hpp"

namespace sltlab {

// Fraction --------------------------------------------------------------------

Fraction::Fraction(std::int64_t num, std::int64_t den) {
  if (den == 0) throw std::invalid_argument("fraction with zero denominator");
  if (den < 0) {
    num = -num;
    den = -den;
  }
  const std::int64_t g = std::gcd(num, den);
  num_ = num / g;
  den_ = den / g;
}

std::string Fraction::str() const {
  return den_ == 1 ? std::to_string(num_) : std::to_string(num_) + "/" + std::to_string(den_);
}

// Charts ----------------------------------------------------------------------

void ChartSet::validate() const {
  if (charts.empty()) throw ValidationError("chart set is empty");
  const std::size_t d = charts.front().k.size();
  for (const auto& c : charts) {
    if (c.k.size() != d || c.h.size() != d || d == 0) {
      throw ValidationError("every chart needs k and h of the same length d");
    }
    if (std::all_of(c.k.begin(), c.k.end(), [](std::uint32_t v) { return v == 0; })) {
      throw ValidationError("chart with all k_j = 0: K does not vanish there");
    }
  }
}

ChartSet ChartSet::from_json_text(const std::string& text) {
  ChartSet cs;
  try {
    const auto doc = nlohmann::json::parse(text);
    if (!doc.is_array()) throw ValidationError("chart file must be a JSON list");
    for (const auto& entry : doc) {
      for (const auto& [key, value] : entry.items()) {
        if (key != "k" && key != "h") throw ValidationError("unknown chart key '" + key + "'");
      }
      cs.charts.push_back({entry.at("k").get<std::vector<std::uint32_t>>(),
                           entry.at("h").get<std::vector<std::uint32_t>>()});
    }
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("bad chart file: ") + e.what());
  }
  cs.validate();
  return cs;
}

ChartRlct rlct_from_charts(const ChartSet& cs) {
  cs.validate();
  std::optional<Fraction> best;
  for (const auto& c : cs.charts) {
    for (std::size_t j = 0; j < c.k.size(); ++j) {
      if (c.k[j] == 0) continue;
      const Fraction r(static_cast<std::int64_t>(c.h[j]) + 1, 2 * static_cast<std::int64_t>(c.k[j]));
      if (!best || r < *best) best = r;
    }
  }
  std::size_t mult = 0;
  for (const auto& c : cs.charts) {
    std::size_t count = 0;
    for (std::size_t j = 0; j < c.k.size(); ++j) {
      if (c.k[j] != 0 &&
          Fraction(static_cast<std::int64_t>(c.h[j]) + 1, 2 * static_cast<std::int64_t>(c.k[j])) == *best) {
        ++count;
      }
    }
    mult = std::max(mult, count);
  }
  return {*best, mult};
}

// Volume profile --------------------------------------------------------------

std::vector<double> log_t_grid(double scale, double lo_rel, double hi_rel, std::size_t points) {
  if (points < 2 || !(lo_rel > 0.0) || !(hi_rel > lo_rel) || !(scale > 0.0)) {
    throw std::invalid_argument("log_t_grid: need points >= 2 and 0 < lo < hi");
  }
  std::vector<double> grid(points);
  const double a = std::log10(hi_rel), b = std::log10(lo_rel);
  for (std::size_t i = 0; i < points; ++i) {
    grid[i] = scale * std::pow(10.0, a + (b - a) * static_cast<double>(i) / static_cast<double>(points - 1));
  }
  return grid;
}

std::vector<double> prior_k_values(const ModelSpec& model, const TrueProcess& truth, const XQuadrature& xq,
                                   std::size_t n_prior_samples, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> ks;
  ks.reserve(n_prior_samples);
  if (model.linear_in_w) {
    const LinearKForm kform(model, truth, xq);
    for (std::size_t i = 0; i < n_prior_samples; ++i) ks.push_back(kform(model.prior.sample(rng)));
  } else {
    for (std::size_t i = 0; i < n_prior_samples; ++i) ks.push_back(population_k(model, truth, model.prior.sample(rng), xq));
  }
  std::sort(ks.begin(), ks.end());
  return ks;
}

VolumeProfile profile_from_k_values(const std::vector<double>& sorted_k, const std::vector<double>& t_grid) {
  if (sorted_k.empty()) throw std::invalid_argument("no K values");
  for (std::size_t i = 0; i < t_grid.size(); ++i) {
    if (!(t_grid[i] > 0.0) || (i > 0 && !(t_grid[i] < t_grid[i - 1]))) {
      throw std::invalid_argument("t grid must be positive and strictly decreasing");
    }
  }
  VolumeProfile p;
  p.n_draws = sorted_k.size();
  p.median_k = sorted_k[sorted_k.size() / 2];
  for (double t : t_grid) {
    const auto count = static_cast<std::size_t>(std::upper_bound(sorted_k.begin(), sorted_k.end(), t) - sorted_k.begin());
    p.points.push_back({t, static_cast<double>(count) / static_cast<double>(sorted_k.size()), count});
  }
  if (!p.points.empty() && p.points.back().count < 100) {
    p.warnings.push_back("only " + std::to_string(p.points.back().count) +
                         " prior draws below the smallest t; fit unreliable");
  }
  return p;
}

VolumeProfile volume_profile(const ModelSpec& model, const TrueProcess& truth, const XQuadrature& xq,
                             const std::vector<double>& t_grid, std::size_t n_prior_samples, std::uint64_t seed) {
  if (n_prior_samples < 100000) throw std::invalid_argument("volume_profile needs >= 1e5 prior samples");
  return profile_from_k_values(prior_k_values(model, truth, xq, n_prior_samples, seed), t_grid);
}

// Fits ------------------------------------------------------------------------

std::string method_name(InvariantEstimate::Method m) {
  switch (m) {
    case InvariantEstimate::Method::chart_exact: return "chart-exact";
    case InvariantEstimate::Method::volume_fit: return "volume-fit";
    case InvariantEstimate::Method::error_inversion: return "error-inversion";
    case InvariantEstimate::Method::v_limit: return "v-limit";
  }
  return "unknown";
}

InvariantEstimate rlct_volume_fit(const VolumeProfile& profile, std::size_t d, const VolumeFitOptions& options) {
  if (d == 0) throw std::invalid_argument("rlct_volume_fit: d must be >= 1");
  std::vector<VolumePoint> usable;
  for (const auto& p : profile.points) {
    if (!(p.fraction > 0.0 && p.fraction < 1.0 && p.t < 1.0)) continue;
    if (profile.n_draws > 0 && p.count < options.min_count) continue;
    usable.push_back(p);
  }
  if (usable.size() < 8) {
    throw std::runtime_error("volume fit needs >= 8 usable points, have " + std::to_string(usable.size()));
  }
  const auto [tmin, tmax] = std::minmax_element(usable.begin(), usable.end(),
                                                [](const auto& a, const auto& b) { return a.t < b.t; });
  if (std::log10(tmax->t / tmin->t) < 2.0) throw std::runtime_error("ill-conditioned fit: t range spans < 2 decades");

  const auto k = static_cast<Eigen::Index>(usable.size());
  Eigen::MatrixXd x(k, 2);
  Eigen::VectorXd wsqrt(k);
  for (Eigen::Index i = 0; i < k; ++i) {
    x(i, 0) = 1.0;
    x(i, 1) = std::log(usable[static_cast<std::size_t>(i)].t);
    wsqrt(i) = profile.n_draws > 0 ? std::sqrt(static_cast<double>(usable[static_cast<std::size_t>(i)].count)) : 1.0;
  }
  const Eigen::MatrixXd xw = wsqrt.asDiagonal() * x;
  const Eigen::MatrixXd xtx_inv = (xw.transpose() * xw).inverse();

  InvariantEstimate best{.method = InvariantEstimate::Method::volume_fit};
  double best_rss = std::numeric_limits<double>::infinity();
  for (std::size_t m = 1; m <= d; ++m) {
    Eigen::VectorXd y(k);
    for (Eigen::Index i = 0; i < k; ++i) {
      const auto& p = usable[static_cast<std::size_t>(i)];
      y(i) = std::log(p.fraction) - static_cast<double>(m - 1) * std::log(std::log(1.0 / p.t));
    }
    const Eigen::VectorXd yw = wsqrt.asDiagonal() * y;
    const Eigen::VectorXd beta = xw.colPivHouseholderQr().solve(yw);
    const double rss = (yw - xw * beta).squaredNorm();
    if (rss < best_rss) {
      best_rss = rss;
      const double sigma2 = k > 2 ? rss / static_cast<double>(k - 2) : 0.0;
      best.lambda = beta(1);
      best.lambda_se = std::sqrt(sigma2 * xtx_inv(1, 1));
      best.multiplicity = m;
    }
  }
  if (!(*best.lambda > 0.0)) best.flags.push_back("non-positive lambda from volume fit");
  best.flags.insert(best.flags.end(), profile.warnings.begin(), profile.warnings.end());
  return best;
}

InvariantEstimate nu_from_v(double mean_v, double beta, double se_v) {
  if (!(beta > 0.0)) throw std::invalid_argument("nu_from_v: beta must be positive");
  return {.method = InvariantEstimate::Method::v_limit, .nu = beta * mean_v / 2.0, .nu_se = beta * se_v / 2.0};
}

InvariantEstimate invariants_from_errors(double g_scaled, double t_scaled, double beta, double sigma, double se_g,
                                         double se_t, double cov_gt) {
  if (!(beta > 0.0) || !(sigma > 0.0)) throw std::invalid_argument("invariants_from_errors: beta, sigma must be positive");
  const double a = 1.0 / (2.0 * sigma * sigma);
  // nu = a g - a t ; lambda = (a + beta/2) g + (beta/2 - a) t
  const double nu_g = a, nu_t = -a;
  const double la_g = a + beta / 2.0, la_t = beta / 2.0 - a;
  auto propagate = [&](double cg, double ct) {
    const double var = cg * cg * se_g * se_g + ct * ct * se_t * se_t + 2.0 * cg * ct * cov_gt;
    return std::sqrt(std::max(var, 0.0));
  };
  InvariantEstimate est{.method = InvariantEstimate::Method::error_inversion};
  est.nu = nu_g * g_scaled + nu_t * t_scaled;
  est.lambda = *est.nu + beta * (g_scaled + t_scaled) / 2.0;
  est.nu_se = propagate(nu_g, nu_t);
  est.lambda_se = propagate(la_g, la_t);
  if (*est.nu < 0.0 || *est.lambda <= 0.0) est.flags.push_back("inconsistent with theory at this n");
  return est;
}

}  // namespace sltlab
