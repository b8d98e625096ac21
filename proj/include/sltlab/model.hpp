#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "sltlab/dataset.hpp"
#include "sltlab/random.hpp"

namespace sltlab {

/// Compact parameter set W: an axis-aligned box or a ball centred at the origin.
class ParameterRegion {
 public:
  enum class Kind { box, ball };

  static ParameterRegion box(std::vector<std::pair<double, double>> bounds);
  static ParameterRegion cube(std::size_t dim, double half_width);
  static ParameterRegion ball(std::size_t dim, double radius);

  Kind kind() const noexcept { return kind_; }
  std::size_t dim() const noexcept { return dim_; }
  double radius() const noexcept { return radius_; }

  /// Exact membership, no tolerance.
  bool contains(std::span<const double> w) const noexcept;

  /// Bounding box of the region along coordinate j.
  double lower(std::size_t j) const;
  double upper(std::size_t j) const;

  double volume() const;

  /// Uniform draw from the region (rejection from the bounding box for balls).
  std::vector<double> sample_uniform(Rng& rng) const;

 private:
  Kind kind_ = Kind::box;
  std::size_t dim_ = 0;
  std::vector<std::pair<double, double>> bounds_;
  double radius_ = 0.0;
};

/// Prior density phi(w) on a region.
class PriorSpec {
 public:
  enum class Kind { uniform, truncated_gaussian };

  static PriorSpec uniform(const ParameterRegion& region);
  static PriorSpec truncated_gaussian(const ParameterRegion& region, double scale);

  Kind kind() const noexcept { return kind_; }
  double scale() const noexcept { return scale_; }
  const ParameterRegion& region() const noexcept { return region_; }

  /// -infinity outside the region.
  double log_density(std::span<const double> w) const noexcept;
  double density(std::span<const double> w) const noexcept;

  std::vector<double> sample(Rng& rng) const;

  /// Integral of density over the region by deterministic quadrature (d <= 3).
  double integrate_density() const;

 private:
  PriorSpec(ParameterRegion region, Kind kind, double scale);

  ParameterRegion region_;
  Kind kind_;
  double scale_;
  double log_normalizer_ = 0.0;
};

/// Writes r(x, w) (n_out values) into out.
using RegressionFn =
    std::function<void(std::span<const double> x, std::span<const double> w, std::span<double> out)>;

/// Parameterized regression family r(x, w) with region and prior.
struct ModelSpec {
  std::string id;
  std::size_t dim = 0;
  std::size_t m_in = 0;
  std::size_t n_out = 0;
  RegressionFn evaluate;
  ParameterRegion region;
  PriorSpec prior;
  /// True when r(x, w) is linear in w; enables exact moment shortcuts.
  bool linear_in_w = false;
};

/// Uniform input density q(x) on a box.
struct InputDistribution {
  std::vector<double> lo;
  std::vector<double> hi;

  std::size_t dim() const noexcept { return lo.size(); }
  void sample(Rng& rng, std::span<double> out) const;
  double density(std::span<const double> x) const noexcept;
  bool contains(std::span<const double> x) const noexcept;
};

/// r0(x, out).
using TruthFn = std::function<void(std::span<const double>, std::span<double>)>;

/// The data-generating truth: q(x), r0(x), sigma.
class TrueProcess {
 public:
  TrueProcess(InputDistribution q, std::size_t n_out, TruthFn r0, double sigma);

  /// Truth realized by the model itself at a parameter w0 (which must lie in the region).
  static TrueProcess from_model(const ModelSpec& model, std::vector<double> w0, double sigma,
                                InputDistribution q);

  const InputDistribution& q() const noexcept { return q_; }
  std::size_t n_out() const noexcept { return n_out_; }
  double sigma() const noexcept { return sigma_; }
  /// S = N sigma^2 / 2.
  double s_value() const noexcept { return s_value_; }
  void r0(std::span<const double> x, std::span<double> out) const { r0_(x, out); }

  /// Present when the truth was built with from_model.
  const std::vector<double>& true_parameter() const noexcept { return w0_; }

 private:
  InputDistribution q_;
  std::size_t n_out_;
  TruthFn r0_;
  double sigma_;
  double s_value_;
  std::vector<double> w0_;
};

/// Fixed i.i.d. node set from q used for every E_X[.] in one experiment.
struct XQuadrature {
  std::size_t m_in = 0;
  std::size_t size = 0;
  std::uint64_t seed = 0;
  std::vector<double> nodes;  // size * m_in

  static XQuadrature draw(const InputDistribution& q, std::size_t count, std::uint64_t seed);

  std::span<const double> node(std::size_t k) const { return {nodes.data() + k * m_in, m_in}; }
};

// Built-in catalog ----------------------------------------------------------

/// "linear-<d>", "sinmix", "tanh-<k>". Throws std::invalid_argument on unknown ids.
ModelSpec make_model(std::string_view id);
ModelSpec make_model(std::string_view id, PriorSpec::Kind prior_kind, double prior_scale);

/// Uniform[-1,1]^M for linear models, Uniform[-pi,pi]^M otherwise.
InputDistribution default_input(const ModelSpec& model);

// Central functionals --------------------------------------------------------

/// H(w) = 1/2 sum_i |Y_i - r(X_i, w)|^2. Rejects w outside the region and empty datasets.
double empirical_square_error(const ModelSpec& model, const Dataset& data, std::span<const double> w);

/// Same as empirical_square_error without the precondition checks (hot path).
double square_error_unchecked(const ModelSpec& model, const Dataset& data, std::span<const double> w);

/// K(w) = 1/2 mean_k |r(x_k, w) - r0(x_k)|^2 over the quadrature nodes.
double population_k(const ModelSpec& model, const TrueProcess& truth, std::span<const double> w,
                    const XQuadrature& xq);

/// Precomputed quadratic form of K for models linear in w:
/// K(w) = 1/2 (w'Aw - 2 w'b + c) with moments taken over the quadrature nodes.
class LinearKForm {
 public:
  LinearKForm(const ModelSpec& model, const TrueProcess& truth, const XQuadrature& xq);
  double operator()(std::span<const double> w) const noexcept;

 private:
  std::size_t dim_;
  std::vector<double> a_;
  std::vector<double> b_;
  double c_ = 0.0;
};

}  // namespace sltlab
