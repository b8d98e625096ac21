#include "sltlab/posterior.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "sltlab/io.hpp"
#include "sltlab/random.hpp"
#include "sltlab/stats.hpp"

namespace sltlab {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double sample_variance(std::span<const double> xs, double mean) {
  CompensatedSum s;
  for (double x : xs) s.add((x - mean) * (x - mean));
  return s.value() / static_cast<double>(xs.size() - 1);
}

double plain_mean(std::span<const double> xs) {
  CompensatedSum s;
  for (double x : xs) s.add(x);
  return s.value() / static_cast<double>(xs.size());
}

// Lag-k autocovariance (biased, divide by n).
double autocovariance(std::span<const double> xs, double mean, std::size_t lag) {
  const std::size_t n = xs.size();
  double acc = 0.0;
  for (std::size_t i = 0; i + lag < n; ++i) acc += (xs[i] - mean) * (xs[i + lag] - mean);
  return acc / static_cast<double>(n);
}

struct ChainState {
  std::vector<double> w;
  double h = 0.0;
  double log_prior = 0.0;
  double beta = 1.0;
  std::vector<double> scale;
  std::size_t window_accepts = 0;
  std::size_t accepts = 0;
};

}  // namespace

// GibbsTarget -----------------------------------------------------------------

GibbsTarget::GibbsTarget(const ModelSpec& model, const Dataset& data, double beta)
    : model_(&model), data_(&data), beta_(beta) {
  if (!(beta >= 0.0) || !std::isfinite(beta)) throw std::invalid_argument("beta must be finite and >= 0");
  if (data.n > 0 && (data.m_in != model.m_in || data.n_out != model.n_out)) {
    throw std::invalid_argument("dataset dimensions do not match the model");
  }
  if (!model.linear_in_w || data.n == 0) return;
  const std::size_t d = model.dim, no = model.n_out;
  quadratic_ = true;
  gram_.assign(d * d, 0.0);
  xty_.assign(d, 0.0);
  std::vector<double> basis(d, 0.0), phi(d * no);
  for (std::size_t i = 0; i < data.n; ++i) {
    for (std::size_t j = 0; j < d; ++j) {
      basis[j] = 1.0;
      model.evaluate(data.x(i), basis, std::span<double>(phi.data() + j * no, no));
      basis[j] = 0.0;
    }
    const auto y = data.y(i);
    for (std::size_t a = 0; a < d; ++a) {
      for (std::size_t b = 0; b < d; ++b) {
        for (std::size_t o = 0; o < no; ++o) gram_[a * d + b] += phi[a * no + o] * phi[b * no + o];
      }
      for (std::size_t o = 0; o < no; ++o) xty_[a] += phi[a * no + o] * y[o];
    }
    for (double v : y) yty_ += v * v;
  }
}

double GibbsTarget::square_error(std::span<const double> w) const {
  if (data_->n == 0) return 0.0;
  if (!quadratic_) return square_error_unchecked(*model_, *data_, w);
  const std::size_t d = w.size();
  double quad = 0.0, lin = 0.0;
  for (std::size_t a = 0; a < d; ++a) {
    double row = 0.0;
    for (std::size_t b = 0; b < d; ++b) row += gram_[a * d + b] * w[b];
    quad += w[a] * row;
    lin += w[a] * xty_[a];
  }
  return std::max(0.0, 0.5 * (yty_ - 2.0 * lin + quad));
}

double GibbsTarget::log_unnormalized(std::span<const double> w) const {
  const double lp = model_->prior.log_density(w);
  if (lp == kNegInf) return kNegInf;
  return -beta_ * square_error(w) + lp;
}

// Diagnostics -----------------------------------------------------------------

double McmcDiagnostics::max_rhat() const {
  double m = 1.0;
  for (double r : rhat) m = std::max(m, r);
  return m;
}

double McmcDiagnostics::min_ess() const {
  if (ess.empty()) return 0.0;
  return *std::min_element(ess.begin(), ess.end());
}

double split_rhat(std::span<const std::vector<double>> chains) {
  std::vector<std::span<const double>> halves;
  for (const auto& c : chains) {
    const std::size_t half = c.size() / 2;
    if (half < 2) throw std::invalid_argument("split_rhat needs at least 4 draws per chain");
    halves.emplace_back(c.data(), half);
    halves.emplace_back(c.data() + c.size() - half, half);
  }
  const double len = static_cast<double>(halves.front().size());
  std::vector<double> means, vars;
  for (auto h : halves) {
    means.push_back(plain_mean(h));
    vars.push_back(sample_variance(h, means.back()));
  }
  const double w = plain_mean(vars);
  const double b = len * sample_variance(means, plain_mean(means));
  if (!(w > 0.0)) return b > 0.0 ? std::numeric_limits<double>::infinity() : 1.0;
  const double var_plus = (len - 1.0) / len * w + b / len;
  return std::sqrt(var_plus / w);
}

double effective_sample_size(std::span<const std::vector<double>> chains) {
  const std::size_t m = chains.size();
  const std::size_t n = chains.front().size();
  if (n < 4) throw std::invalid_argument("effective_sample_size needs at least 4 draws per chain");
  std::vector<double> means(m), vars(m);
  for (std::size_t c = 0; c < m; ++c) {
    means[c] = plain_mean(chains[c]);
    vars[c] = sample_variance(chains[c], means[c]);
  }
  const double w = plain_mean(vars);
  const double b_over_n = m > 1 ? sample_variance(means, plain_mean(means)) : 0.0;
  const double var_plus = (static_cast<double>(n) - 1.0) / static_cast<double>(n) * w + b_over_n;
  const double total = static_cast<double>(m * n);
  if (!(var_plus > 0.0)) return total;

  auto rho = [&](std::size_t lag) {
    double acov = 0.0;
    for (std::size_t c = 0; c < m; ++c) acov += autocovariance(chains[c], means[c], lag);
    acov /= static_cast<double>(m);
    return 1.0 - (w - acov) / var_plus;
  };

  // Geyer: sum pairs P_t = rho_2t + rho_2t+1 while positive, enforcing monotone decrease.
  double tau = -1.0;
  double prev_pair = std::numeric_limits<double>::infinity();
  for (std::size_t t = 0; 2 * t + 1 < n; ++t) {
    double pair = rho(2 * t) + rho(2 * t + 1);
    if (pair <= 0.0) break;
    pair = std::min(pair, prev_pair);
    prev_pair = pair;
    tau += 2.0 * pair;
  }
  tau = std::max(tau, 1.0 / std::log10(total));
  return total / tau;
}

// PosteriorSamples ------------------------------------------------------------

PosteriorSamples::PosteriorSamples(const ParameterRegion& region, std::vector<double> draws,
                                   std::vector<double> weights, double beta, McmcDiagnostics diagnostics,
                                   std::vector<std::uint32_t> chain, std::vector<std::uint32_t> iteration)
    : dim_(region.dim()),
      count_(region.dim() ? draws.size() / region.dim() : 0),
      beta_(beta),
      draws_(std::move(draws)),
      weights_(std::move(weights)),
      diagnostics_(std::move(diagnostics)),
      chain_(std::move(chain)),
      iteration_(std::move(iteration)) {
  if (count_ == 0 || draws_.size() != count_ * dim_) throw std::invalid_argument("posterior samples: bad draw matrix");
  if (!weights_.empty() && weights_.size() != count_) throw std::invalid_argument("posterior samples: bad weights");
  for (std::size_t i = 0; i < count_; ++i) {
    if (!region.contains(draw(i))) throw std::invalid_argument("posterior samples: draw outside region");
  }
  for (double a : diagnostics_.acceptance_rate) {
    if (!(a >= 0.0 && a <= 1.0)) throw std::invalid_argument("posterior samples: acceptance rate outside [0,1]");
  }
}

PosteriorSamples PosteriorSamples::point_mass(const ParameterRegion& region, std::vector<double> w, double beta) {
  return {region, std::move(w), {}, beta};
}

PosteriorSamples PosteriorSamples::thinned(std::size_t max_draws) const {
  if (max_draws == 0 || count_ <= max_draws) return *this;
  const std::size_t stride = (count_ + max_draws - 1) / max_draws;
  PosteriorSamples out(*this);
  out.draws_.clear();
  out.weights_.clear();
  out.chain_.clear();
  out.iteration_.clear();
  for (std::size_t i = 0; i < count_; i += stride) {
    const auto w = draw(i);
    out.draws_.insert(out.draws_.end(), w.begin(), w.end());
    if (!weights_.empty()) out.weights_.push_back(weights_[i]);
    if (!chain_.empty()) out.chain_.push_back(chain_[i]);
    if (!iteration_.empty()) out.iteration_.push_back(iteration_[i]);
  }
  out.count_ = out.draws_.size() / dim_;
  return out;
}

// Sampler ---------------------------------------------------------------------

PosteriorSamples sample_posterior(const GibbsTarget& target, const McmcConfig& mcmc, std::uint64_t seed) {
  if (mcmc.n_chains < 2) throw std::invalid_argument("mcmc.n_chains must be >= 2");
  if (mcmc.draws_per_chain < 100) throw std::invalid_argument("mcmc.draws_per_chain must be >= 100");
  if (mcmc.thinning == 0 || mcmc.adapt_window == 0) throw std::invalid_argument("mcmc thinning/adapt_window must be >= 1");
  if (!(mcmc.initial_scale > 0.0)) throw std::invalid_argument("mcmc.initial_scale must be positive");
  const auto& tc = mcmc.tempering;
  const std::size_t n_temps = tc.enabled ? tc.n_temperatures : 1;
  if (tc.enabled && (n_temps < 2 || !(tc.ratio > 0.0 && tc.ratio < 1.0) || tc.swap_every == 0)) {
    throw std::invalid_argument("bad tempering configuration");
  }

  const ModelSpec& model = target.model();
  const ParameterRegion& region = model.region;
  const std::size_t d = model.dim;
  const std::size_t kept = mcmc.draws_per_chain;
  const std::size_t total_iters = mcmc.burn_in + kept * mcmc.thinning;

  std::vector<double> draws;
  draws.reserve(mcmc.n_chains * kept * d);
  std::vector<std::uint32_t> chain_idx, iter_idx;
  McmcDiagnostics diag{.n_chains = mcmc.n_chains, .burn_in = mcmc.burn_in, .thinning = mcmc.thinning};
  std::vector<std::vector<std::vector<double>>> traces(d, std::vector<std::vector<double>>(mcmc.n_chains));
  std::size_t swap_tries = 0, swap_accepts = 0;

  std::vector<double> proposal(d);
  for (std::size_t c = 0; c < mcmc.n_chains; ++c) {
    Rng rng(mix_seed(seed, c));
    std::vector<ChainState> temps(n_temps);
    for (std::size_t t = 0; t < n_temps; ++t) {
      auto& s = temps[t];
      s.beta = target.beta() * std::pow(tc.ratio, static_cast<double>(t));
      s.w = model.prior.sample(rng);
      s.h = target.square_error(s.w);
      s.log_prior = model.prior.log_density(s.w);
      s.scale.resize(d);
      for (std::size_t j = 0; j < d; ++j) s.scale[j] = mcmc.initial_scale * (region.upper(j) - region.lower(j));
    }
    for (std::size_t j = 0; j < d; ++j) traces[j][c].reserve(kept);

    for (std::size_t it = 0; it < total_iters; ++it) {
      const bool burning = it < mcmc.burn_in;
      for (auto& s : temps) {
        for (std::size_t j = 0; j < d; ++j) proposal[j] = s.w[j] + s.scale[j] * rng.normal();
        const double u = rng.uniform();
        const double lp = model.prior.log_density(proposal);
        if (lp != kNegInf) {
          const double h = target.square_error(proposal);
          const double log_alpha = -s.beta * (h - s.h) + (lp - s.log_prior);
          if (std::log(u) < log_alpha) {
            s.w = proposal;
            s.h = h;
            s.log_prior = lp;
            ++s.window_accepts;
            if (!burning) ++s.accepts;
          }
        }
        if (burning && (it + 1) % mcmc.adapt_window == 0) {
          const double rate = static_cast<double>(s.window_accepts) / static_cast<double>(mcmc.adapt_window);
          if (rate > 0.4) {
            for (double& sc : s.scale) sc *= 1.1;
          } else if (rate < 0.2) {
            for (double& sc : s.scale) sc /= 1.1;
          }
        }
        if ((it + 1) % mcmc.adapt_window == 0) s.window_accepts = 0;
      }

      if (n_temps > 1 && (it + 1) % tc.swap_every == 0) {
        for (std::size_t t = n_temps - 1; t-- > 0;) {
          auto& cold = temps[t];
          auto& hot = temps[t + 1];
          const double log_alpha = (cold.beta - hot.beta) * (cold.h - hot.h);
          ++swap_tries;
          if (std::log(rng.uniform()) < log_alpha) {
            std::swap(cold.w, hot.w);
            std::swap(cold.h, hot.h);
            std::swap(cold.log_prior, hot.log_prior);
            ++swap_accepts;
          }
        }
      }

      if (!burning && (it - mcmc.burn_in + 1) % mcmc.thinning == 0) {
        const auto& cold = temps.front();
        draws.insert(draws.end(), cold.w.begin(), cold.w.end());
        chain_idx.push_back(static_cast<std::uint32_t>(c));
        iter_idx.push_back(static_cast<std::uint32_t>(it - mcmc.burn_in));
        for (std::size_t j = 0; j < d; ++j) traces[j][c].push_back(cold.w[j]);
      }
    }
    diag.acceptance_rate.push_back(static_cast<double>(temps.front().accepts) /
                                   static_cast<double>(kept * mcmc.thinning));
  }

  for (std::size_t j = 0; j < d; ++j) {
    diag.rhat.push_back(split_rhat(traces[j]));
    diag.ess.push_back(effective_sample_size(traces[j]));
  }
  diag.swap_acceptance = swap_tries ? static_cast<double>(swap_accepts) / static_cast<double>(swap_tries) : 0.0;
  diag.converged = diag.max_rhat() <= mcmc.rhat_limit;
  return {region, std::move(draws), {}, target.beta(), std::move(diag), std::move(chain_idx), std::move(iter_idx)};
}

// Expectations ----------------------------------------------------------------

std::vector<double> expectation(const PosteriorSamples& samples, std::size_t k, const ParamFn& f) {
  std::vector<WeightedMoments> acc(k);
  std::vector<double> value(k);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    f(samples.draw(i), value);
    const double wt = samples.weight(i);
    for (std::size_t j = 0; j < k; ++j) acc[j].add(value[j], wt);
  }
  std::vector<double> out(k);
  for (std::size_t j = 0; j < k; ++j) out[j] = acc[j].mean();
  return out;
}

PosteriorSamples grid_posterior(const GibbsTarget& target, const GridConfig& grid) {
  const ModelSpec& model = target.model();
  const std::size_t d = model.dim;
  if (d > 4) throw std::invalid_argument("grid quadrature supports d <= 4");
  if (grid.points_per_axis < 16) throw std::invalid_argument("grid needs >= 16 points per axis");
  const std::size_t p = grid.points_per_axis;

  std::vector<double> nodes, logw;
  std::vector<double> w(d);
  std::vector<std::size_t> idx(d, 0);
  for (;;) {
    for (std::size_t j = 0; j < d; ++j) {
      const double lo = model.region.lower(j), hi = model.region.upper(j);
      w[j] = lo + (static_cast<double>(idx[j]) + 0.5) * (hi - lo) / static_cast<double>(p);
    }
    const double lw = target.log_unnormalized(w);
    if (lw != kNegInf) {
      nodes.insert(nodes.end(), w.begin(), w.end());
      logw.push_back(lw);
    }
    std::size_t j = 0;
    while (j < d && ++idx[j] == p) idx[j++] = 0;
    if (j == d) break;
  }
  if (logw.empty()) throw std::runtime_error("grid has no node inside the region");
  const double shift = *std::max_element(logw.begin(), logw.end());
  if (!std::isfinite(shift)) throw std::runtime_error("grid normalizer underflows");

  const double floor = std::log(grid.prune_relative);
  std::vector<double> kept_nodes, weights;
  CompensatedSum total;
  for (std::size_t i = 0; i < logw.size(); ++i) {
    const double rel = logw[i] - shift;
    if (rel < floor) continue;
    const double wt = std::exp(rel);
    kept_nodes.insert(kept_nodes.end(), nodes.begin() + static_cast<std::ptrdiff_t>(i * d),
                      nodes.begin() + static_cast<std::ptrdiff_t>((i + 1) * d));
    weights.push_back(wt);
    total.add(wt);
  }
  const double z = total.value();
  if (!(z > 0.0) || !std::isfinite(z)) throw std::runtime_error("grid normalizer underflows");
  for (double& wt : weights) wt /= z;
  return {model.region, std::move(kept_nodes), std::move(weights), target.beta()};
}

std::vector<double> quadrature_expectation(const GibbsTarget& target, std::size_t k, const ParamFn& f,
                                           const GridConfig& grid) {
  return expectation(grid_posterior(target, grid), k, f);
}

void write_draws_csv(const std::filesystem::path& path, const PosteriorSamples& samples) {
  CsvTable table;
  for (std::size_t j = 0; j < samples.dim(); ++j) table.header.push_back("w_" + std::to_string(j + 1));
  table.header.push_back("chain");
  table.header.push_back("iteration");
  const auto& chains = samples.chain_index();
  const auto& iters = samples.iteration_index();
  for (std::size_t i = 0; i < samples.size(); ++i) {
    std::vector<double> row(samples.draw(i).begin(), samples.draw(i).end());
    row.push_back(chains.empty() ? 0.0 : chains[i]);
    row.push_back(iters.empty() ? static_cast<double>(i) : iters[i]);
    table.add_numeric_row(row);
  }
  write_csv(path, table);
}

}  // namespace sltlab
