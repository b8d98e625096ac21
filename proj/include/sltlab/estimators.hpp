#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sltlab/dataset.hpp"
#include "sltlab/model.hpp"
#include "sltlab/posterior.hpp"

namespace sltlab {

/// Posterior predictive moments at a list of input points.
struct PredictiveMoments {
  std::size_t points = 0;
  std::size_t n_out = 0;
  std::vector<double> mean;      // points * n_out: E_w[r(x_p, w)]
  std::vector<double> variance;  // points: sum over outputs of Var_w[r_o(x_p, w)]
};

/// One pass over the draws. Models linear in w use the posterior mean and covariance of w
/// instead, which is the same quantity computed exactly.
PredictiveMoments predictive_moments(const PosteriorSamples& samples, const ModelSpec& model,
                                     std::span<const double> xs);

struct EstimatorOptions {
  /// Cap on draws used for expectations over the x-quadrature (0 = all draws).
  /// Ignored for models linear in w, which always use every draw.
  std::size_t xq_max_draws = 0;
};

struct DStatistics {
  double d1 = 0.0;  // n E_w[E_X |f|^2]
  double d2 = 0.0;  // n E_X |E_w f|^2
  double d3 = 0.0;  // sum_i E_w |f(X_i, w)|^2
  double d4 = 0.0;  // sum_i |E_w f(X_i, w)|^2

  bool operator==(const DStatistics&) const = default;
};

struct ErrorReport {
  std::size_t n = 0;
  double beta = 0.0;
  std::size_t replication = 0;
  double T = 0.0;
  double G = 0.0;
  double V = 0.0;
  double S = 0.0;
  double G_hat = 0.0;
  std::optional<DStatistics> D;
  double stein_lhs = 0.0;
  std::uint64_t seed = 0;
  bool converged = true;
  double max_rhat = 1.0;

  bool operator==(const ErrorReport&) const = default;
};

/// T = 1/(2n) sum_i |Y_i - E_w[r(X_i, w)]|^2
double training_error(const PosteriorSamples& samples, const Dataset& data, const ModelSpec& model);

/// G = S + 1/2 mean_k |E_w[r(x_k, w)] - r0(x_k)|^2 over the quadrature nodes; always >= S.
double generalization_error(const PosteriorSamples& samples, const TrueProcess& truth, const ModelSpec& model,
                            const XQuadrature& xq, const EstimatorOptions& options = {});

/// V = sum_i (E_w|r(X_i, w)|^2 - |E_w r(X_i, w)|^2)
double functional_variance(const PosteriorSamples& samples, const Dataset& data, const ModelSpec& model);

/// V computed from f = r - r0 by a direct per-draw pass (no linear shortcut).
double functional_variance_of_residual(const PosteriorSamples& samples, const Dataset& data,
                                       const ModelSpec& model, const TrueProcess& truth);

/// G_hat = (1 + 2 beta V / (n N)) T
double waic_estimate(double T, double V, std::size_t n, std::size_t n_out, double beta);

DStatistics d_statistics(const PosteriorSamples& samples, const Dataset& data, const TrueProcess& truth,
                         const ModelSpec& model, const XQuadrature& xq, const EstimatorOptions& options = {});

/// sum_i (Y_i - r0(X_i)) . E_w[f(X_i, w)]; averages to sigma^2 beta E[V] across replications.
double stein_diagnostic(const PosteriorSamples& samples, const Dataset& data, const TrueProcess& truth,
                        const ModelSpec& model);

/// Every estimator for one replication, sharing the predictive moments.
ErrorReport compute_report(const PosteriorSamples& samples, const Dataset& data, const TrueProcess& truth,
                           const ModelSpec& model, const XQuadrature& xq, const EstimatorOptions& options = {});

/// Column names of the per-replication CSV row.
const std::vector<std::string>& report_columns();
std::vector<std::string> report_row(const ErrorReport& report);
ErrorReport report_from_row(const std::vector<std::string>& header, const std::vector<std::string>& row);

}  // namespace sltlab
