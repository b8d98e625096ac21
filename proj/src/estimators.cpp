#include "sltlab/estimators.hpp"

#include <stdexcept>

#include "sltlab/io.hpp"
#include "sltlab/stats.hpp"

namespace sltlab {

namespace {

// Weighted mean vector and covariance matrix of the draws.
void parameter_moments(const PosteriorSamples& samples, std::vector<double>& mean, std::vector<double>& cov) {
  const std::size_t d = samples.dim();
  mean.assign(d, 0.0);
  cov.assign(d * d, 0.0);
  double total = 0.0;
  std::vector<double> delta(d);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const double wt = samples.weight(i);
    if (wt <= 0.0) continue;
    const auto w = samples.draw(i);
    total += wt;
    for (std::size_t a = 0; a < d; ++a) {
      delta[a] = w[a] - mean[a];
      mean[a] += delta[a] * wt / total;
    }
    // West's update: C += wt * delta (w - mean_new)'
    for (std::size_t a = 0; a < d; ++a) {
      for (std::size_t b = 0; b < d; ++b) cov[a * d + b] += wt * delta[a] * (w[b] - mean[b]);
    }
  }
  for (double& c : cov) c /= total;
}

PredictiveMoments linear_moments(const PosteriorSamples& samples, const ModelSpec& model,
                                 std::span<const double> xs) {
  const std::size_t d = model.dim, no = model.n_out, m = model.m_in;
  const std::size_t count = xs.size() / m;
  std::vector<double> wbar, cov;
  parameter_moments(samples, wbar, cov);

  PredictiveMoments out{.points = count, .n_out = no, .mean = std::vector<double>(count * no),
                        .variance = std::vector<double>(count)};
  std::vector<double> basis(d, 0.0), phi(d * no);
  for (std::size_t p = 0; p < count; ++p) {
    const std::span<const double> x(xs.data() + p * m, m);
    for (std::size_t j = 0; j < d; ++j) {
      basis[j] = 1.0;
      model.evaluate(x, basis, std::span<double>(phi.data() + j * no, no));
      basis[j] = 0.0;
    }
    double var = 0.0;
    for (std::size_t o = 0; o < no; ++o) {
      double mu = 0.0;
      for (std::size_t j = 0; j < d; ++j) mu += phi[j * no + o] * wbar[j];
      out.mean[p * no + o] = mu;
      for (std::size_t a = 0; a < d; ++a) {
        double row = 0.0;
        for (std::size_t b = 0; b < d; ++b) row += cov[a * d + b] * phi[b * no + o];
        var += phi[a * no + o] * row;
      }
    }
    out.variance[p] = var > 0.0 ? var : 0.0;
  }
  return out;
}

// Direct per-draw pass; optionally subtracts r0 so moments are of f = r - r0.
PredictiveMoments direct_moments(const PosteriorSamples& samples, const ModelSpec& model,
                                 std::span<const double> xs, const TrueProcess* shift) {
  const std::size_t no = model.n_out, m = model.m_in;
  const std::size_t count = xs.size() / m;
  std::vector<WeightedMoments> acc(count * no);
  std::vector<double> r(no), r0(count * no, 0.0);
  if (shift) {
    for (std::size_t p = 0; p < count; ++p) {
      shift->r0(xs.subspan(p * m, m), std::span<double>(r0.data() + p * no, no));
    }
  }
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto w = samples.draw(i);
    const double wt = samples.weight(i);
    for (std::size_t p = 0; p < count; ++p) {
      model.evaluate(xs.subspan(p * m, m), w, r);
      for (std::size_t o = 0; o < no; ++o) acc[p * no + o].add(r[o] - r0[p * no + o], wt);
    }
  }
  PredictiveMoments out{.points = count, .n_out = no, .mean = std::vector<double>(count * no),
                        .variance = std::vector<double>(count, 0.0)};
  for (std::size_t p = 0; p < count; ++p) {
    for (std::size_t o = 0; o < no; ++o) {
      out.mean[p * no + o] = acc[p * no + o].mean();
      out.variance[p] += acc[p * no + o].variance();
    }
  }
  return out;
}

struct ResidualSums {
  double mean_sq = 0.0;  // sum_p |E_w r(x_p) - r0(x_p)|^2
  double var = 0.0;      // sum_p Var
  double stein = 0.0;    // sum_p (y_p - r0(x_p)) . (E_w r(x_p) - r0(x_p)), training points only
  double train_sq = 0.0; // sum_p |y_p - E_w r(x_p)|^2, training points only
};

ResidualSums residual_sums(const PredictiveMoments& pm, std::span<const double> xs, std::size_t m_in,
                           const TrueProcess* truth, const Dataset* data) {
  const std::size_t no = pm.n_out;
  ResidualSums out;
  CompensatedSum mean_sq, var, stein, train_sq;
  std::vector<double> r0(no, 0.0);
  for (std::size_t p = 0; p < pm.points; ++p) {
    if (truth) truth->r0(xs.subspan(p * m_in, m_in), r0);
    double msq = 0.0, st = 0.0, tr = 0.0;
    for (std::size_t o = 0; o < no; ++o) {
      const double f = pm.mean[p * no + o] - r0[o];
      msq += f * f;
      if (data) {
        const double y = data->y(p)[o];
        st += (y - r0[o]) * f;
        tr += (y - pm.mean[p * no + o]) * (y - pm.mean[p * no + o]);
      }
    }
    mean_sq.add(msq);
    var.add(pm.variance[p]);
    stein.add(st);
    train_sq.add(tr);
  }
  out.mean_sq = mean_sq.value();
  out.var = var.value();
  out.stein = stein.value();
  out.train_sq = train_sq.value();
  return out;
}

void check_shapes(const PosteriorSamples& samples, const ModelSpec& model, const Dataset* data) {
  if (samples.dim() != model.dim) throw std::invalid_argument("samples do not match model dimension");
  if (data && (data->n == 0 || data->m_in != model.m_in || data->n_out != model.n_out)) {
    throw std::invalid_argument("dataset does not match model");
  }
}

PredictiveMoments xq_moments(const PosteriorSamples& samples, const ModelSpec& model, const XQuadrature& xq,
                             const EstimatorOptions& options) {
  if (xq.m_in != model.m_in || xq.size == 0) throw std::invalid_argument("quadrature does not match model");
  if (model.linear_in_w) return linear_moments(samples, model, xq.nodes);
  return direct_moments(samples.thinned(options.xq_max_draws), model, xq.nodes, nullptr);
}

}  // namespace

PredictiveMoments predictive_moments(const PosteriorSamples& samples, const ModelSpec& model,
                                     std::span<const double> xs) {
  if (xs.size() % model.m_in != 0) throw std::invalid_argument("input list is not a multiple of m_in");
  return model.linear_in_w ? linear_moments(samples, model, xs) : direct_moments(samples, model, xs, nullptr);
}

double training_error(const PosteriorSamples& samples, const Dataset& data, const ModelSpec& model) {
  check_shapes(samples, model, &data);
  const auto pm = predictive_moments(samples, model, data.xs);
  const auto sums = residual_sums(pm, data.xs, model.m_in, nullptr, &data);
  return sums.train_sq / (2.0 * static_cast<double>(data.n));
}

double generalization_error(const PosteriorSamples& samples, const TrueProcess& truth, const ModelSpec& model,
                            const XQuadrature& xq, const EstimatorOptions& options) {
  check_shapes(samples, model, nullptr);
  const auto pm = xq_moments(samples, model, xq, options);
  const auto sums = residual_sums(pm, xq.nodes, model.m_in, &truth, nullptr);
  return truth.s_value() + 0.5 * sums.mean_sq / static_cast<double>(xq.size);
}

double functional_variance(const PosteriorSamples& samples, const Dataset& data, const ModelSpec& model) {
  check_shapes(samples, model, &data);
  const auto pm = predictive_moments(samples, model, data.xs);
  return residual_sums(pm, data.xs, model.m_in, nullptr, nullptr).var;
}

double functional_variance_of_residual(const PosteriorSamples& samples, const Dataset& data,
                                       const ModelSpec& model, const TrueProcess& truth) {
  check_shapes(samples, model, &data);
  const auto pm = direct_moments(samples, model, data.xs, &truth);
  return residual_sums(pm, data.xs, model.m_in, nullptr, nullptr).var;
}

double waic_estimate(double T, double V, std::size_t n, std::size_t n_out, double beta) {
  if (n == 0 || n_out == 0 || !(beta > 0.0)) throw std::invalid_argument("waic_estimate: need n, N >= 1, beta > 0");
  return (1.0 + 2.0 * beta * V / (static_cast<double>(n) * static_cast<double>(n_out))) * T;
}

DStatistics d_statistics(const PosteriorSamples& samples, const Dataset& data, const TrueProcess& truth,
                         const ModelSpec& model, const XQuadrature& xq, const EstimatorOptions& options) {
  check_shapes(samples, model, &data);
  const double n = static_cast<double>(data.n);
  const auto train = residual_sums(predictive_moments(samples, model, data.xs), data.xs, model.m_in, &truth, &data);
  const auto nodes = residual_sums(xq_moments(samples, model, xq, options), xq.nodes, model.m_in, &truth, nullptr);
  const double q = static_cast<double>(xq.size);
  return {.d1 = n * (nodes.mean_sq + nodes.var) / q,
          .d2 = n * nodes.mean_sq / q,
          .d3 = train.mean_sq + train.var,
          .d4 = train.mean_sq};
}

double stein_diagnostic(const PosteriorSamples& samples, const Dataset& data, const TrueProcess& truth,
                        const ModelSpec& model) {
  check_shapes(samples, model, &data);
  const auto pm = predictive_moments(samples, model, data.xs);
  return residual_sums(pm, data.xs, model.m_in, &truth, &data).stein;
}

ErrorReport compute_report(const PosteriorSamples& samples, const Dataset& data, const TrueProcess& truth,
                           const ModelSpec& model, const XQuadrature& xq, const EstimatorOptions& options) {
  check_shapes(samples, model, &data);
  const double n = static_cast<double>(data.n);
  const double q = static_cast<double>(xq.size);
  const auto pm_train = predictive_moments(samples, model, data.xs);
  // With truth: mean_sq/stein are of f; train_sq does not depend on r0.
  const auto train = residual_sums(pm_train, data.xs, model.m_in, &truth, &data);
  const auto nodes = residual_sums(xq_moments(samples, model, xq, options), xq.nodes, model.m_in, &truth, nullptr);

  ErrorReport rep;
  rep.n = data.n;
  rep.beta = samples.beta();
  rep.S = truth.s_value();
  rep.T = train.train_sq / (2.0 * n);
  rep.G = rep.S + 0.5 * nodes.mean_sq / q;
  rep.V = train.var;
  rep.G_hat = waic_estimate(rep.T, rep.V, data.n, model.n_out, samples.beta());
  rep.D = DStatistics{.d1 = n * (nodes.mean_sq + nodes.var) / q,
                      .d2 = n * nodes.mean_sq / q,
                      .d3 = train.mean_sq + train.var,
                      .d4 = train.mean_sq};
  rep.stein_lhs = train.stein;
  rep.seed = data.seed;
  rep.converged = samples.diagnostics().converged;
  rep.max_rhat = samples.diagnostics().max_rhat();
  return rep;
}

const std::vector<std::string>& report_columns() {
  static const std::vector<std::string> cols = {"n",  "beta", "replication", "T",  "G",         "V",
                                                "S",  "G_hat", "D1",         "D2", "D3",        "D4",
                                                "stein_lhs", "seed", "converged", "max_rhat"};
  return cols;
}

std::vector<std::string> report_row(const ErrorReport& r) {
  const DStatistics d = r.D.value_or(DStatistics{});
  return {std::to_string(r.n),    format_double(r.beta), std::to_string(r.replication), format_double(r.T),
          format_double(r.G),     format_double(r.V),    format_double(r.S),            format_double(r.G_hat),
          format_double(d.d1),    format_double(d.d2),   format_double(d.d3),           format_double(d.d4),
          format_double(r.stein_lhs), std::to_string(r.seed), r.converged ? "1" : "0", format_double(r.max_rhat)};
}

ErrorReport report_from_row(const std::vector<std::string>& header, const std::vector<std::string>& row) {
  auto col = [&](std::string_view name) -> const std::string& {
    for (std::size_t j = 0; j < header.size(); ++j) {
      if (header[j] == name) return row.at(j);
    }
    throw SchemaError("missing column '" + std::string(name) + "'");
  };
  auto num = [&](std::string_view name) { return parse_double(col(name)); };
  ErrorReport r;
  r.n = static_cast<std::size_t>(num("n"));
  r.beta = num("beta");
  r.replication = static_cast<std::size_t>(num("replication"));
  r.T = num("T");
  r.G = num("G");
  r.V = num("V");
  r.S = num("S");
  r.G_hat = num("G_hat");
  r.D = DStatistics{.d1 = num("D1"), .d2 = num("D2"), .d3 = num("D3"), .d4 = num("D4")};
  r.stein_lhs = num("stein_lhs");
  r.seed = std::stoull(col("seed"));
  r.converged = num("converged") != 0.0;
  r.max_rhat = num("max_rhat");
  return r;
}

}  // namespace sltlab
