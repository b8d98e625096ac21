#include "sltlab/model.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>

#include "sltlab/stats.hpp"

namespace sltlab {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double unit_ball_volume(std::size_t d) {
  const double h = 0.5 * static_cast<double>(d);
  return std::pow(std::numbers::pi, h) / std::tgamma(h + 1.0);
}

double unit_sphere_area(std::size_t d) {
  const double h = 0.5 * static_cast<double>(d);
  return 2.0 * std::pow(std::numbers::pi, h) / std::tgamma(h);
}

double std_normal_cdf(double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }

// int_0^rho r^(d-1) exp(-r^2 / (2 s^2)) dr by composite Simpson.
double radial_gaussian_integral(std::size_t d, double rho, double s) {
  constexpr int kIntervals = 20000;
  const double h = rho / kIntervals;
  auto f = [&](double r) {
    return std::pow(r, static_cast<double>(d) - 1.0) * std::exp(-r * r / (2.0 * s * s));
  };
  double acc = f(0.0) + f(rho);
  for (int i = 1; i < kIntervals; ++i) acc += f(i * h) * (i % 2 == 1 ? 4.0 : 2.0);
  return acc * h / 3.0;
}

std::size_t parse_suffix(std::string_view id, std::string_view prefix) {
  std::size_t value = 0;
  const auto tail = id.substr(prefix.size());
  const auto [ptr, ec] = std::from_chars(tail.data(), tail.data() + tail.size(), value);
  if (ec != std::errc{} || ptr != tail.data() + tail.size() || value == 0) {
    throw std::invalid_argument("bad model id: " + std::string(id));
  }
  return value;
}

}  // namespace

// ParameterRegion -------------------------------------------------------------

ParameterRegion ParameterRegion::box(std::vector<std::pair<double, double>> bounds) {
  if (bounds.empty()) throw std::invalid_argument("box region needs at least one coordinate");
  for (const auto& [lo, hi] : bounds) {
    if (!(lo < hi) || !std::isfinite(lo) || !std::isfinite(hi)) {
      throw std::invalid_argument("box region needs finite lo < hi on every coordinate");
    }
  }
  ParameterRegion r;
  r.kind_ = Kind::box;
  r.dim_ = bounds.size();
  r.bounds_ = std::move(bounds);
  return r;
}

ParameterRegion ParameterRegion::cube(std::size_t dim, double half_width) {
  return box(std::vector<std::pair<double, double>>(dim, {-half_width, half_width}));
}

ParameterRegion ParameterRegion::ball(std::size_t dim, double radius) {
  if (dim == 0) throw std::invalid_argument("ball region needs dim >= 1");
  if (!(radius > 0.0) || !std::isfinite(radius)) {
    throw std::invalid_argument("ball region needs a positive finite radius");
  }
  ParameterRegion r;
  r.kind_ = Kind::ball;
  r.dim_ = dim;
  r.radius_ = radius;
  r.bounds_.assign(dim, {-radius, radius});
  return r;
}

bool ParameterRegion::contains(std::span<const double> w) const noexcept {
  if (w.size() != dim_) return false;
  if (kind_ == Kind::box) {
    for (std::size_t j = 0; j < dim_; ++j) {
      if (!(w[j] >= bounds_[j].first && w[j] <= bounds_[j].second)) return false;
    }
    return true;
  }
  double r2 = 0.0;
  for (double v : w) r2 += v * v;
  return r2 <= radius_ * radius_;
}

double ParameterRegion::lower(std::size_t j) const { return bounds_.at(j).first; }
double ParameterRegion::upper(std::size_t j) const { return bounds_.at(j).second; }

double ParameterRegion::volume() const {
  if (kind_ == Kind::ball) return unit_ball_volume(dim_) * std::pow(radius_, static_cast<double>(dim_));
  double v = 1.0;
  for (const auto& [lo, hi] : bounds_) v *= hi - lo;
  return v;
}

std::vector<double> ParameterRegion::sample_uniform(Rng& rng) const {
  std::vector<double> w(dim_);
  do {
    for (std::size_t j = 0; j < dim_; ++j) w[j] = rng.uniform(bounds_[j].first, bounds_[j].second);
  } while (!contains(w));
  return w;
}

// PriorSpec -------------------------------------------------------------------

PriorSpec::PriorSpec(ParameterRegion region, Kind kind, double scale)
    : region_(std::move(region)), kind_(kind), scale_(scale) {
  const std::size_t d = region_.dim();
  if (kind_ == Kind::uniform) {
    log_normalizer_ = -std::log(region_.volume());
  } else {
    if (!(scale_ > 0.0) || !std::isfinite(scale_)) {
      throw std::invalid_argument("truncated-gaussian prior needs a positive scale");
    }
    double z = 0.0;
    if (region_.kind() == ParameterRegion::Kind::box) {
      z = 1.0;
      for (std::size_t j = 0; j < d; ++j) {
        z *= scale_ * std::sqrt(2.0 * std::numbers::pi) *
             (std_normal_cdf(region_.upper(j) / scale_) - std_normal_cdf(region_.lower(j) / scale_));
      }
    } else {
      z = unit_sphere_area(d) * radial_gaussian_integral(d, region_.radius(), scale_);
    }
    if (!(z > 0.0)) throw std::invalid_argument("truncated-gaussian prior has no mass on the region");
    log_normalizer_ = -std::log(z);
  }
  if (d <= 3) {
    const double total = integrate_density();
    if (std::abs(total - 1.0) > 1e-3) {
      throw std::logic_error("prior density does not integrate to 1 (got " + std::to_string(total) + ")");
    }
  }
}

PriorSpec PriorSpec::uniform(const ParameterRegion& region) { return {region, Kind::uniform, 0.0}; }

PriorSpec PriorSpec::truncated_gaussian(const ParameterRegion& region, double scale) {
  return {region, Kind::truncated_gaussian, scale};
}

double PriorSpec::log_density(std::span<const double> w) const noexcept {
  if (!region_.contains(w)) return kNegInf;
  if (kind_ == Kind::uniform) return log_normalizer_;
  double r2 = 0.0;
  for (double v : w) r2 += v * v;
  return log_normalizer_ - r2 / (2.0 * scale_ * scale_);
}

double PriorSpec::density(std::span<const double> w) const noexcept {
  const double lp = log_density(w);
  return lp == kNegInf ? 0.0 : std::exp(lp);
}

std::vector<double> PriorSpec::sample(Rng& rng) const {
  if (kind_ == Kind::uniform) return region_.sample_uniform(rng);
  // Uniform proposals accepted with probability exp(-|w|^2 / 2s^2) <= 1.
  for (;;) {
    auto w = region_.sample_uniform(rng);
    double r2 = 0.0;
    for (double v : w) r2 += v * v;
    if (rng.uniform() < std::exp(-r2 / (2.0 * scale_ * scale_))) return w;
  }
}

double PriorSpec::integrate_density() const {
  const std::size_t d = region_.dim();
  if (d > 3) throw std::invalid_argument("integrate_density supports d <= 3");

  if (region_.kind() == ParameterRegion::Kind::box) {
    const std::size_t per_axis = d == 1 ? 4096 : d == 2 ? 512 : 96;
    std::vector<double> w(d);
    std::vector<std::size_t> idx(d, 0);
    double cell = 1.0;
    for (std::size_t j = 0; j < d; ++j) cell *= (region_.upper(j) - region_.lower(j)) / per_axis;
    CompensatedSum acc;
    for (;;) {
      for (std::size_t j = 0; j < d; ++j) {
        const double h = (region_.upper(j) - region_.lower(j)) / per_axis;
        w[j] = region_.lower(j) + (static_cast<double>(idx[j]) + 0.5) * h;
      }
      acc.add(density(w));
      std::size_t j = 0;
      while (j < d && ++idx[j] == per_axis) idx[j++] = 0;
      if (j == d) break;
    }
    return acc.value() * cell;
  }

  // Ball: midpoint rule in polar / spherical coordinates.
  const double rho = region_.radius();
  const int nr = 2048;
  const double hr = rho / nr;
  CompensatedSum acc;
  if (d == 1) {
    for (int i = 0; i < 2 * nr; ++i) {
      const double w0 = -rho + (i + 0.5) * hr;
      acc.add(density(std::array{w0}) * hr);
    }
    return acc.value();
  }
  const int nr_shell = d == 2 ? nr : 256;
  const double hrr = rho / nr_shell;
  const int nt = d == 2 ? 512 : 64;
  const int np = 128;
  for (int i = 0; i < nr_shell; ++i) {
    const double r = (i + 0.5) * hrr;
    if (d == 2) {
      const double ht = 2.0 * std::numbers::pi / nt;
      for (int k = 0; k < nt; ++k) {
        const double t = (k + 0.5) * ht;
        acc.add(density(std::array{r * std::cos(t), r * std::sin(t)}) * r * hrr * ht);
      }
      continue;
    }
    const double ht = std::numbers::pi / nt;
    const double hp = 2.0 * std::numbers::pi / np;
    for (int k = 0; k < nt; ++k) {
      const double t = (k + 0.5) * ht;
      for (int l = 0; l < np; ++l) {
        const double p = (l + 0.5) * hp;
        const std::array w{r * std::sin(t) * std::cos(p), r * std::sin(t) * std::sin(p), r * std::cos(t)};
        acc.add(density(w) * r * r * std::sin(t) * hrr * ht * hp);
      }
    }
  }
  return acc.value();
}

// InputDistribution / TrueProcess / XQuadrature ------------------------------

void InputDistribution::sample(Rng& rng, std::span<double> out) const {
  for (std::size_t j = 0; j < lo.size(); ++j) out[j] = rng.uniform(lo[j], hi[j]);
}

double InputDistribution::density(std::span<const double> x) const noexcept {
  if (!contains(x)) return 0.0;
  double v = 1.0;
  for (std::size_t j = 0; j < lo.size(); ++j) v *= hi[j] - lo[j];
  return 1.0 / v;
}

bool InputDistribution::contains(std::span<const double> x) const noexcept {
  if (x.size() != lo.size()) return false;
  for (std::size_t j = 0; j < lo.size(); ++j) {
    if (!(x[j] >= lo[j] && x[j] <= hi[j])) return false;
  }
  return true;
}

TrueProcess::TrueProcess(InputDistribution q, std::size_t n_out, TruthFn r0, double sigma)
    : q_(std::move(q)),
      n_out_(n_out),
      r0_(std::move(r0)),
      sigma_(sigma),
      s_value_(static_cast<double>(n_out) * sigma * sigma / 2.0) {
  if (!(sigma_ > 0.0) || !std::isfinite(sigma_)) throw std::invalid_argument("sigma must be positive");
  if (n_out_ == 0) throw std::invalid_argument("n_out must be positive");
  if (q_.lo.size() != q_.hi.size() || q_.lo.empty()) throw std::invalid_argument("bad input box");
  for (std::size_t j = 0; j < q_.lo.size(); ++j) {
    if (!(q_.lo[j] < q_.hi[j])) throw std::invalid_argument("bad input box");
  }
}

TrueProcess TrueProcess::from_model(const ModelSpec& model, std::vector<double> w0, double sigma,
                                    InputDistribution q) {
  if (!model.region.contains(w0)) throw std::invalid_argument("true parameter outside the region");
  if (q.dim() != model.m_in) throw std::invalid_argument("input distribution dimension mismatch");
  auto fn = [eval = model.evaluate, w = w0](std::span<const double> x, std::span<double> out) {
    eval(x, w, out);
  };
  TrueProcess t(std::move(q), model.n_out, std::move(fn), sigma);
  t.w0_ = std::move(w0);
  return t;
}

XQuadrature XQuadrature::draw(const InputDistribution& q, std::size_t count, std::uint64_t seed) {
  if (count == 0) throw std::invalid_argument("xq size must be positive");
  XQuadrature xq;
  xq.m_in = q.dim();
  xq.size = count;
  xq.seed = seed;
  xq.nodes.resize(count * xq.m_in);
  Rng rng(seed);
  for (std::size_t k = 0; k < count; ++k) q.sample(rng, {xq.nodes.data() + k * xq.m_in, xq.m_in});
  return xq;
}

// Catalog ---------------------------------------------------------------------

ModelSpec make_model(std::string_view id) { return make_model(id, PriorSpec::Kind::uniform, 0.0); }

ModelSpec make_model(std::string_view id, PriorSpec::Kind prior_kind, double prior_scale) {
  auto prior_on = [&](const ParameterRegion& region) {
    return prior_kind == PriorSpec::Kind::uniform ? PriorSpec::uniform(region)
                                                  : PriorSpec::truncated_gaussian(region, prior_scale);
  };

  if (id.starts_with("linear-")) {
    const std::size_t d = parse_suffix(id, "linear-");
    auto region = ParameterRegion::cube(d, 1.0);
    return ModelSpec{
        .id = std::string(id),
        .dim = d,
        .m_in = d,
        .n_out = 1,
        .evaluate =
            [](std::span<const double> x, std::span<const double> w, std::span<double> out) {
              double s = 0.0;
              for (std::size_t j = 0; j < w.size(); ++j) s += w[j] * x[j];
              out[0] = s;
            },
        .region = region,
        .prior = prior_on(region),
        .linear_in_w = true,
    };
  }
  if (id == "sinmix") {
    auto region = ParameterRegion::ball(4, 1.0);
    return ModelSpec{
        .id = "sinmix",
        .dim = 4,
        .m_in = 1,
        .n_out = 1,
        .evaluate =
            [](std::span<const double> x, std::span<const double> w, std::span<double> out) {
              out[0] = w[0] * std::sin(w[1] * x[0]) + w[2] * std::sin(w[3] * x[0]);
            },
        .region = region,
        .prior = prior_on(region),
    };
  }
  if (id.starts_with("tanh-")) {
    const std::size_t k = parse_suffix(id, "tanh-");
    auto region = ParameterRegion::cube(2 * k, 1.0);
    return ModelSpec{
        .id = std::string(id),
        .dim = 2 * k,
        .m_in = 1,
        .n_out = 1,
        .evaluate =
            [](std::span<const double> x, std::span<const double> w, std::span<double> out) {
              double s = 0.0;
              for (std::size_t h = 0; 2 * h < w.size(); ++h) s += w[2 * h] * std::tanh(w[2 * h + 1] * x[0]);
              out[0] = s;
            },
        .region = region,
        .prior = prior_on(region),
    };
  }
  throw std::invalid_argument("unknown model id: " + std::string(id));
}

InputDistribution default_input(const ModelSpec& model) {
  const double half = model.linear_in_w ? 1.0 : std::numbers::pi;
  return {std::vector<double>(model.m_in, -half), std::vector<double>(model.m_in, half)};
}

// Functionals -----------------------------------------------------------------

double square_error_unchecked(const ModelSpec& model, const Dataset& data, std::span<const double> w) {
  std::array<double, 8> small{};
  std::vector<double> big;
  std::span<double> out(small.data(), model.n_out);
  if (model.n_out > small.size()) {
    big.resize(model.n_out);
    out = big;
  }
  double acc = 0.0;
  for (std::size_t i = 0; i < data.n; ++i) {
    model.evaluate(data.x(i), w, out);
    const auto y = data.y(i);
    for (std::size_t k = 0; k < model.n_out; ++k) {
      const double e = y[k] - out[k];
      acc += e * e;
    }
  }
  return 0.5 * acc;
}

double empirical_square_error(const ModelSpec& model, const Dataset& data, std::span<const double> w) {
  if (data.n == 0) throw std::invalid_argument("empirical_square_error: empty dataset");
  if (!model.region.contains(w)) throw std::invalid_argument("empirical_square_error: w outside region");
  if (data.m_in != model.m_in || data.n_out != model.n_out) {
    throw std::invalid_argument("empirical_square_error: dataset/model dimension mismatch");
  }
  return square_error_unchecked(model, data, w);
}

double population_k(const ModelSpec& model, const TrueProcess& truth, std::span<const double> w,
                    const XQuadrature& xq) {
  if (!model.region.contains(w)) throw std::invalid_argument("population_k: w outside region");
  if (xq.m_in != model.m_in || xq.size == 0) throw std::invalid_argument("population_k: bad quadrature");
  std::vector<double> r(model.n_out), r0(model.n_out);
  CompensatedSum acc;
  for (std::size_t k = 0; k < xq.size; ++k) {
    model.evaluate(xq.node(k), w, r);
    truth.r0(xq.node(k), r0);
    double s = 0.0;
    for (std::size_t o = 0; o < model.n_out; ++o) s += (r[o] - r0[o]) * (r[o] - r0[o]);
    acc.add(s);
  }
  return 0.5 * acc.value() / static_cast<double>(xq.size);
}

LinearKForm::LinearKForm(const ModelSpec& model, const TrueProcess& truth, const XQuadrature& xq)
    : dim_(model.dim), a_(model.dim * model.dim, 0.0), b_(model.dim, 0.0) {
  if (!model.linear_in_w) throw std::invalid_argument("LinearKForm needs a model linear in w");
  const std::size_t d = model.dim, no = model.n_out;
  std::vector<double> basis(d, 0.0), phi(d * no), r0(no);
  for (std::size_t k = 0; k < xq.size; ++k) {
    const auto x = xq.node(k);
    for (std::size_t j = 0; j < d; ++j) {
      basis[j] = 1.0;
      model.evaluate(x, basis, std::span<double>(phi.data() + j * no, no));
      basis[j] = 0.0;
    }
    truth.r0(x, r0);
    for (std::size_t i = 0; i < d; ++i) {
      for (std::size_t j = 0; j < d; ++j) {
        for (std::size_t o = 0; o < no; ++o) a_[i * d + j] += phi[i * no + o] * phi[j * no + o];
      }
      for (std::size_t o = 0; o < no; ++o) b_[i] += phi[i * no + o] * r0[o];
    }
    for (std::size_t o = 0; o < no; ++o) c_ += r0[o] * r0[o];
  }
  const double inv = 1.0 / static_cast<double>(xq.size);
  for (double& v : a_) v *= inv;
  for (double& v : b_) v *= inv;
  c_ *= inv;
}

double LinearKForm::operator()(std::span<const double> w) const noexcept {
  double quad = 0.0, lin = 0.0;
  for (std::size_t i = 0; i < dim_; ++i) {
    double row = 0.0;
    for (std::size_t j = 0; j < dim_; ++j) row += a_[i * dim_ + j] * w[j];
    quad += w[i] * row;
    lin += w[i] * b_[i];
  }
  return std::max(0.0, 0.5 * (quad - 2.0 * lin + c_));
}

}  // namespace sltlab
