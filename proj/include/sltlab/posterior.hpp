#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <vector>

#include "sltlab/dataset.hpp"
#include "sltlab/model.hpp"

namespace sltlab {

/// exp(-beta H(w)) phi(w) for one dataset. Holds references: model and data must outlive it.
/// An empty dataset is accepted and gives H == 0 (prior recovery in tests).
/// For models linear in w, H is evaluated from the sufficient statistics X'X, X'Y, Y'Y.
class GibbsTarget {
 public:
  GibbsTarget(const ModelSpec& model, const Dataset& data, double beta);

  const ModelSpec& model() const noexcept { return *model_; }
  const Dataset& data() const noexcept { return *data_; }
  double beta() const noexcept { return beta_; }

  /// H(w); w must be inside the region.
  double square_error(std::span<const double> w) const;

  /// -beta H(w) + log phi(w); exactly -infinity outside the region.
  double log_unnormalized(std::span<const double> w) const;

 private:
  const ModelSpec* model_;
  const Dataset* data_;
  double beta_;
  bool quadratic_ = false;
  std::vector<double> gram_;  // d * d
  std::vector<double> xty_;   // d
  double yty_ = 0.0;
};

struct TemperingConfig {
  bool enabled = false;
  std::size_t n_temperatures = 4;
  /// Geometric ladder beta_k = beta * ratio^k.
  double ratio = 0.5;
  std::size_t swap_every = 50;
};

struct McmcConfig {
  std::size_t n_chains = 4;
  std::size_t burn_in = 5000;
  std::size_t draws_per_chain = 20000;
  std::size_t thinning = 1;
  double rhat_limit = 1.05;
  /// Initial proposal stddev as a fraction of each coordinate's extent.
  double initial_scale = 0.1;
  /// Burn-in iterations between proposal-scale updates.
  std::size_t adapt_window = 50;
  TemperingConfig tempering;
};

struct McmcDiagnostics {
  std::vector<double> acceptance_rate;  // per chain, post burn-in
  std::vector<double> ess;              // per coordinate, all chains combined
  std::vector<double> rhat;             // per coordinate, split chains
  std::size_t n_chains = 0;
  std::size_t burn_in = 0;
  std::size_t thinning = 1;
  double swap_acceptance = 0.0;  // parallel tempering only
  bool converged = true;

  double max_rhat() const;
  double min_ess() const;
};

/// Empirical (optionally weighted) measure representing E_w[.].
class PosteriorSamples {
 public:
  /// draws: count * dim values. weights empty means equal weights.
  PosteriorSamples(const ParameterRegion& region, std::vector<double> draws, std::vector<double> weights,
                   double beta, McmcDiagnostics diagnostics = {}, std::vector<std::uint32_t> chain = {},
                   std::vector<std::uint32_t> iteration = {});

  /// Single draw with unit mass.
  static PosteriorSamples point_mass(const ParameterRegion& region, std::vector<double> w, double beta);

  std::size_t dim() const noexcept { return dim_; }
  std::size_t size() const noexcept { return count_; }
  double beta() const noexcept { return beta_; }
  bool weighted() const noexcept { return !weights_.empty(); }

  std::span<const double> draw(std::size_t i) const { return {draws_.data() + i * dim_, dim_}; }
  double weight(std::size_t i) const noexcept { return weights_.empty() ? 1.0 : weights_[i]; }
  const std::vector<double>& raw_draws() const noexcept { return draws_; }
  const McmcDiagnostics& diagnostics() const noexcept { return diagnostics_; }
  const std::vector<std::uint32_t>& chain_index() const noexcept { return chain_; }
  const std::vector<std::uint32_t>& iteration_index() const noexcept { return iteration_; }

  /// Evenly strided subset of at most max_draws draws (weights carried over).
  PosteriorSamples thinned(std::size_t max_draws) const;

 private:
  std::size_t dim_;
  std::size_t count_;
  double beta_;
  std::vector<double> draws_;
  std::vector<double> weights_;
  McmcDiagnostics diagnostics_;
  std::vector<std::uint32_t> chain_;
  std::vector<std::uint32_t> iteration_;
};

/// Random-walk Metropolis on the Gibbs posterior. Deterministic in (target, mcmc, seed).
/// Non-convergence (any split R-hat above rhat_limit) is reported via diagnostics().converged.
PosteriorSamples sample_posterior(const GibbsTarget& target, const McmcConfig& mcmc, std::uint64_t seed);

/// Vector-valued function of w writing into out.
using ParamFn = std::function<void(std::span<const double> w, std::span<double> out)>;

/// Mean of f over the draws (weighted when the samples are).
std::vector<double> expectation(const PosteriorSamples& samples, std::size_t k, const ParamFn& f);

struct GridConfig {
  std::size_t points_per_axis = 64;
  /// Nodes whose weight relative to the heaviest node falls below this are dropped.
  double prune_relative = 1e-18;
};

/// Tensor midpoint grid over the region's bounding box, weighted by exp(-beta H) phi and
/// normalized after a max shift. Rejects d > 4 and fewer than 16 points per axis.
PosteriorSamples grid_posterior(const GibbsTarget& target, const GridConfig& grid);

/// E_w[f] by grid quadrature; independent of the MCMC path.
std::vector<double> quadrature_expectation(const GibbsTarget& target, std::size_t k, const ParamFn& f,
                                           const GridConfig& grid);

/// Split-chain potential scale reduction for one coordinate; chains are equal-length series.
double split_rhat(std::span<const std::vector<double>> chains);

/// Multi-chain effective sample size (Geyer initial monotone sequence).
double effective_sample_size(std::span<const std::vector<double>> chains);

/// CSV with columns w_1..w_d, chain, iteration.
void write_draws_csv(const std::filesystem::path& path, const PosteriorSamples& samples);

}  // namespace sltlab
