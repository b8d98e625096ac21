#include "sltlab/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <fstream>
#include <iostream>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "sltlab/datagen.hpp"
#include "sltlab/io.hpp"

namespace sltlab {

using nlohmann::json;

namespace {

void reject_unknown_keys(const json& obj, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!obj.is_object()) throw ValidationError(where + " must be a JSON object");
  const std::set<std::string> ok(allowed.begin(), allowed.end());
  for (const auto& [key, value] : obj.items()) {
    if (!ok.contains(key)) throw ValidationError("unknown key '" + key + "' in " + where);
  }
}

template <typename T>
void read_opt(const json& obj, const char* key, T& out) {
  if (obj.contains(key)) out = obj.at(key).get<T>();
}

std::string backend_name(Backend b) { return b == Backend::mcmc ? "mcmc" : "oracle"; }

std::string prior_name(PriorSpec::Kind k) {
  return k == PriorSpec::Kind::uniform ? "uniform" : "truncated-gaussian";
}

bool is_regular(const std::string& model) { return model.starts_with("linear-"); }

json mean_se_json(const MeanSe& m) { return {{"mean", m.mean}, {"se", m.se}, {"count", m.count}}; }

MeanSe mean_se_from_json(const json& j) {
  return {j.at("mean").get<double>(), j.at("se").get<double>(), j.at("count").get<std::size_t>()};
}

json estimate_json(const InvariantEstimate& e) {
  json j = {{"method", method_name(e.method)}, {"flags", e.flags}};
  if (e.lambda) j["lambda"] = *e.lambda;
  if (e.lambda_se) j["lambda_se"] = *e.lambda_se;
  if (e.multiplicity) j["multiplicity"] = *e.multiplicity;
  if (e.nu) j["nu"] = *e.nu;
  if (e.nu_se) j["nu_se"] = *e.nu_se;
  return j;
}

InvariantEstimate estimate_from_json(const json& j) {
  InvariantEstimate e;
  const auto m = j.at("method").get<std::string>();
  for (auto method : {InvariantEstimate::Method::chart_exact, InvariantEstimate::Method::volume_fit,
                      InvariantEstimate::Method::error_inversion, InvariantEstimate::Method::v_limit}) {
    if (method_name(method) == m) e.method = method;
  }
  e.flags = j.at("flags").get<std::vector<std::string>>();
  if (j.contains("lambda")) e.lambda = j.at("lambda").get<double>();
  if (j.contains("lambda_se")) e.lambda_se = j.at("lambda_se").get<double>();
  if (j.contains("multiplicity")) e.multiplicity = j.at("multiplicity").get<std::size_t>();
  if (j.contains("nu")) e.nu = j.at("nu").get<double>();
  if (j.contains("nu_se")) e.nu_se = j.at("nu_se").get<double>();
  return e;
}

std::string fmt(double v, int prec = 4) {
  std::ostringstream ss;
  ss.setf(std::ios::fixed);
  ss.precision(prec);
  ss << v;
  return ss.str();
}

std::string fmt_pm(const MeanSe& m, int prec = 4) { return fmt(m.mean, prec) + " +- " + fmt(m.se, prec); }

std::vector<std::size_t> sorted_ns(const SweepResult& r, double beta) {
  std::vector<std::size_t> ns;
  for (const auto& c : r.cells) {
    if (c.beta == beta) ns.push_back(c.n);
  }
  std::sort(ns.begin(), ns.end());
  return ns;
}

std::vector<double> distinct_betas(const SweepResult& r) {
  std::vector<double> out;
  for (const auto& c : r.cells) {
    if (std::find(out.begin(), out.end(), c.beta) == out.end()) out.push_back(c.beta);
  }
  return out;
}

std::string beta_tag(double beta) {
  std::ostringstream ss;
  ss << beta;
  return ss.str();
}

InvariantEstimate cell_inversion(const CellSummary& c, double sigma) {
  return invariants_from_errors(c.g_scaled.mean, c.t_scaled.mean, c.beta, sigma, c.g_scaled.se, c.t_scaled.se,
                                c.cov_gt);
}

}  // namespace

// ExperimentConfig ------------------------------------------------------------

void ExperimentConfig::validate() const {
  if (model.empty()) throw ValidationError("config: model id is required");
  if (!(sigma > 0.0) || !std::isfinite(sigma)) throw ValidationError("config: sigma must be positive");
  if (betas.empty()) throw ValidationError("config: beta list is empty");
  for (double b : betas) {
    if (!(b > 0.0) || !std::isfinite(b)) throw ValidationError("config: every beta must be > 0");
  }
  if (ns.empty()) throw ValidationError("config: n list is empty");
  for (std::size_t n : ns) {
    if (n < 10) throw ValidationError("config: every n must be >= 10");
  }
  if (replications < 1) throw ValidationError("config: replications must be >= 1");
  if (xq_size == 0) throw ValidationError("config: xq_size must be >= 1");
  if (prior_kind == PriorSpec::Kind::truncated_gaussian && !(prior_scale > 0.0)) {
    throw ValidationError("config: truncated-gaussian prior needs scale > 0");
  }
  if (backend == Backend::mcmc) {
    if (mcmc.n_chains < 2) throw ValidationError("config: mcmc.n_chains must be >= 2");
    if (mcmc.draws_per_chain < 100) throw ValidationError("config: mcmc.draws_per_chain must be >= 100");
    if (mcmc.thinning == 0 || mcmc.adapt_window == 0) throw ValidationError("config: mcmc thinning/adapt_window >= 1");
  } else if (grid.points_per_axis < 16) {
    throw ValidationError("config: grid.points_per_axis must be >= 16");
  }
  if (volume.enabled && volume.n_prior_samples < 100000) {
    throw ValidationError("config: volume.n_prior_samples must be >= 1e5");
  }
  std::set<std::size_t> unique_ns(ns.begin(), ns.end());
  if (unique_ns.size() != ns.size()) throw ValidationError("config: duplicate n values");
  std::set<double> unique_betas(betas.begin(), betas.end());
  if (unique_betas.size() != betas.size()) throw ValidationError("config: duplicate beta values");
}

std::string ExperimentConfig::to_json_text() const {
  json j = {
      {"schema_version", kSchemaVersion},
      {"model", model},
      {"prior", {{"kind", prior_name(prior_kind)}, {"scale", prior_scale}}},
      {"true_w", true_w},
      {"sigma", sigma},
      {"betas", betas},
      {"ns", ns},
      {"replications", replications},
      {"master_seed", master_seed},
      {"backend", backend_name(backend)},
      {"mcmc",
       {{"n_chains", mcmc.n_chains},
        {"burn_in", mcmc.burn_in},
        {"draws_per_chain", mcmc.draws_per_chain},
        {"thinning", mcmc.thinning},
        {"rhat_limit", mcmc.rhat_limit},
        {"initial_scale", mcmc.initial_scale},
        {"adapt_window", mcmc.adapt_window},
        {"tempering",
         {{"enabled", mcmc.tempering.enabled},
          {"n_temperatures", mcmc.tempering.n_temperatures},
          {"ratio", mcmc.tempering.ratio},
          {"swap_every", mcmc.tempering.swap_every}}}}},
      {"grid", {{"points_per_axis", grid.points_per_axis}, {"prune_relative", grid.prune_relative}}},
      {"xq_size", xq_size},
      {"xq_max_draws", xq_max_draws},
      {"volume",
       {{"enabled", volume.enabled},
        {"n_prior_samples", volume.n_prior_samples},
        {"t_min_rel", volume.t_min_rel},
        {"t_max_rel", volume.t_max_rel},
        {"n_points", volume.n_points},
        {"min_count", volume.min_count}}},
      {"output_dir", output_dir},
      {"workers", workers},
  };
  return j.dump(2) + "\n";
}

ExperimentConfig ExperimentConfig::from_json_text(const std::string& text) {
  ExperimentConfig c;
  try {
    const json j = json::parse(text);
    reject_unknown_keys(j,
                        {"schema_version", "model", "prior", "true_w", "sigma", "betas", "ns", "replications",
                         "master_seed", "backend", "mcmc", "grid", "xq_size", "xq_max_draws", "volume",
                         "output_dir", "workers"},
                        "config");
    if (!j.contains("schema_version") || j.at("schema_version").get<int>() != kSchemaVersion) {
      throw ValidationError("config: schema_version must be " + std::to_string(kSchemaVersion));
    }
    c.model = j.at("model").get<std::string>();
    if (j.contains("prior")) {
      const auto& p = j.at("prior");
      reject_unknown_keys(p, {"kind", "scale"}, "prior");
      const auto kind = p.at("kind").get<std::string>();
      if (kind == "uniform") {
        c.prior_kind = PriorSpec::Kind::uniform;
      } else if (kind == "truncated-gaussian") {
        c.prior_kind = PriorSpec::Kind::truncated_gaussian;
      } else {
        throw ValidationError("config: unknown prior kind '" + kind + "'");
      }
      read_opt(p, "scale", c.prior_scale);
    }
    read_opt(j, "true_w", c.true_w);
    c.sigma = j.at("sigma").get<double>();
    c.betas = j.at("betas").get<std::vector<double>>();
    c.ns = j.at("ns").get<std::vector<std::size_t>>();
    c.replications = j.at("replications").get<std::size_t>();
    c.master_seed = j.at("master_seed").get<std::uint64_t>();
    if (j.contains("backend")) {
      const auto b = j.at("backend").get<std::string>();
      if (b == "mcmc") {
        c.backend = Backend::mcmc;
      } else if (b == "oracle") {
        c.backend = Backend::oracle;
      } else {
        throw ValidationError("config: unknown backend '" + b + "'");
      }
    }
    if (j.contains("mcmc")) {
      const auto& m = j.at("mcmc");
      reject_unknown_keys(m,
                          {"n_chains", "burn_in", "draws_per_chain", "thinning", "rhat_limit", "initial_scale",
                           "adapt_window", "tempering"},
                          "mcmc");
      read_opt(m, "n_chains", c.mcmc.n_chains);
      read_opt(m, "burn_in", c.mcmc.burn_in);
      read_opt(m, "draws_per_chain", c.mcmc.draws_per_chain);
      read_opt(m, "thinning", c.mcmc.thinning);
      read_opt(m, "rhat_limit", c.mcmc.rhat_limit);
      read_opt(m, "initial_scale", c.mcmc.initial_scale);
      read_opt(m, "adapt_window", c.mcmc.adapt_window);
      if (m.contains("tempering")) {
        const auto& t = m.at("tempering");
        reject_unknown_keys(t, {"enabled", "n_temperatures", "ratio", "swap_every"}, "mcmc.tempering");
        read_opt(t, "enabled", c.mcmc.tempering.enabled);
        read_opt(t, "n_temperatures", c.mcmc.tempering.n_temperatures);
        read_opt(t, "ratio", c.mcmc.tempering.ratio);
        read_opt(t, "swap_every", c.mcmc.tempering.swap_every);
      }
    }
    if (j.contains("grid")) {
      const auto& g = j.at("grid");
      reject_unknown_keys(g, {"points_per_axis", "prune_relative"}, "grid");
      read_opt(g, "points_per_axis", c.grid.points_per_axis);
      read_opt(g, "prune_relative", c.grid.prune_relative);
    }
    read_opt(j, "xq_size", c.xq_size);
    read_opt(j, "xq_max_draws", c.xq_max_draws);
    if (j.contains("volume")) {
      const auto& v = j.at("volume");
      reject_unknown_keys(v, {"enabled", "n_prior_samples", "t_min_rel", "t_max_rel", "n_points", "min_count"},
                          "volume");
      read_opt(v, "enabled", c.volume.enabled);
      read_opt(v, "n_prior_samples", c.volume.n_prior_samples);
      read_opt(v, "t_min_rel", c.volume.t_min_rel);
      read_opt(v, "t_max_rel", c.volume.t_max_rel);
      read_opt(v, "n_points", c.volume.n_points);
      read_opt(v, "min_count", c.volume.min_count);
    }
    read_opt(j, "output_dir", c.output_dir);
    read_opt(j, "workers", c.workers);
  } catch (const json::exception& e) {
    throw ValidationError(std::string("config: ") + e.what());
  }
  c.validate();
  return c;
}

ExperimentConfig ExperimentConfig::load(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw ValidationError("config file not found: " + path.string());
  return from_json_text(read_text(path));
}

bool ExperimentConfig::operator==(const ExperimentConfig& o) const { return to_json_text() == o.to_json_text(); }

// Experiment ------------------------------------------------------------------

namespace {

ModelSpec build_model(const ExperimentConfig& c) {
  try {
    return make_model(c.model, c.prior_kind, c.prior_scale);
  } catch (const std::invalid_argument& e) {
    throw ValidationError(e.what());
  }
}

TrueProcess build_truth(const ExperimentConfig& c, const ModelSpec& model) {
  auto w0 = c.true_w.empty() ? std::vector<double>(model.dim, 0.0) : c.true_w;
  if (w0.size() != model.dim) throw ValidationError("config: true_w has the wrong length");
  if (!model.region.contains(w0)) throw ValidationError("config: true_w lies outside the parameter region");
  return TrueProcess::from_model(model, std::move(w0), c.sigma, default_input(model));
}

}  // namespace

Experiment::Experiment(ExperimentConfig config)
    : config_((config.validate(), std::move(config))),
      model_(build_model(config_)),
      truth_(build_truth(config_, model_)),
      xq_(XQuadrature::draw(truth_.q(), config_.xq_size, ladder_seed(config_.master_seed, 0, 0, 0, SeedPurpose::xquad))) {}

std::uint64_t Experiment::seed(std::size_t n, std::size_t beta_index, std::size_t replication,
                               SeedPurpose purpose) const {
  return ladder_seed(config_.master_seed, n, beta_index, replication, purpose);
}

ErrorReport run_replication(const Experiment& ex, std::size_t n, std::size_t beta_index, std::size_t replication) {
  const auto& cfg = ex.config();
  if (beta_index >= cfg.betas.size()) throw ValidationError("beta index out of range");
  const double beta = cfg.betas[beta_index];
  const Dataset data = generate(ex.truth(), n, ex.seed(n, beta_index, replication, SeedPurpose::data));
  const GibbsTarget target(ex.model(), data, beta);
  const PosteriorSamples samples = cfg.backend == Backend::mcmc
                                       ? sample_posterior(target, cfg.mcmc, ex.seed(n, beta_index, replication, SeedPurpose::mcmc))
                                       : grid_posterior(target, cfg.grid);
  ErrorReport rep = compute_report(samples, data, ex.truth(), ex.model(), ex.xq(), {.xq_max_draws = cfg.xq_max_draws});
  rep.replication = replication;
  return rep;
}

// Aggregation -----------------------------------------------------------------

const CellSummary& SweepResult::cell(std::size_t n, double beta) const {
  for (const auto& c : cells) {
    if (c.n == n && c.beta == beta) return c;
  }
  throw std::out_of_range("no cell for n=" + std::to_string(n) + " beta=" + beta_tag(beta));
}

SweepResult aggregate(const std::vector<ErrorReport>& rows, const std::string& model, std::size_t dim,
                      std::size_t n_out, double sigma) {
  SweepResult out{.model = model, .dim = dim, .n_out = n_out, .sigma = sigma};
  std::vector<std::pair<std::size_t, double>> keys;
  for (const auto& r : rows) {
    const std::pair key{r.n, r.beta};
    if (std::find(keys.begin(), keys.end(), key) == keys.end()) keys.push_back(key);
  }
  std::vector<double> betas_seen;
  for (const auto& [n, beta] : keys) {
    if (std::find(betas_seen.begin(), betas_seen.end(), beta) == betas_seen.end()) betas_seen.push_back(beta);
    CellSummary c;
    c.n = n;
    c.beta = beta;
    c.beta_index = static_cast<std::size_t>(std::find(betas_seen.begin(), betas_seen.end(), beta) - betas_seen.begin());
    std::map<std::string, std::vector<double>> cols;
    std::vector<double> g_scaled, t_scaled;
    const double dn = static_cast<double>(n);
    for (const auto& r : rows) {
      if (r.n != n || r.beta != beta) continue;
      ++c.rows;
      if (!r.converged) continue;
      ++c.converged;
      const DStatistics d = r.D.value_or(DStatistics{});
      cols["T"].push_back(r.T);
      cols["G"].push_back(r.G);
      cols["V"].push_back(r.V);
      cols["S"].push_back(r.S);
      cols["G_hat"].push_back(r.G_hat);
      cols["D1"].push_back(d.d1);
      cols["D2"].push_back(d.d2);
      cols["D3"].push_back(d.d3);
      cols["D4"].push_back(d.d4);
      cols["stein_lhs"].push_back(r.stein_lhs);
      g_scaled.push_back(dn * (r.G - r.S));
      t_scaled.push_back(dn * (r.T - r.S));
    }
    out.flagged += c.rows - c.converged;
    for (const auto& [name, values] : cols) c.fields[name] = mean_se(values);
    c.g_scaled = mean_se(g_scaled);
    c.t_scaled = mean_se(t_scaled);
    c.cov_gt = covariance_of_means(g_scaled, t_scaled);
    if (c.converged > 0) {
      c.ghat_minus_g = c.fields["G_hat"].mean - c.fields["G"].mean;
      c.ghat_minus_g_se = combined_se(c.fields["G_hat"].se, c.fields["G"].se);
    }
    out.cells.push_back(std::move(c));
  }
  return out;
}

// Raw rows --------------------------------------------------------------------

void write_raw_rows(const std::filesystem::path& raw_csv, const std::vector<ErrorReport>& rows) {
  CsvTable table{.header = report_columns()};
  for (const auto& r : rows) table.rows.push_back(report_row(r));
  write_csv(raw_csv, table);
}

std::vector<ErrorReport> read_raw_rows(const std::filesystem::path& raw_csv) {
  const CsvTable table = read_csv(raw_csv);
  for (const auto& name : report_columns()) table.column(name);
  std::vector<ErrorReport> rows;
  rows.reserve(table.rows.size());
  for (const auto& row : table.rows) rows.push_back(report_from_row(table.header, row));
  return rows;
}

// Summary JSON ----------------------------------------------------------------

std::string summary_to_json_text(const SweepResult& r) {
  json cells = json::array();
  for (const auto& c : r.cells) {
    json fields = json::object();
    for (const auto& [name, m] : c.fields) fields[name] = mean_se_json(m);
    json cell = {{"n", c.n},
                 {"beta", c.beta},
                 {"beta_index", c.beta_index},
                 {"rows", c.rows},
                 {"converged", c.converged},
                 {"fields", fields},
                 {"g_scaled", mean_se_json(c.g_scaled)},
                 {"t_scaled", mean_se_json(c.t_scaled)},
                 {"cov_gt", c.cov_gt},
                 {"ghat_minus_g", c.ghat_minus_g},
                 {"ghat_minus_g_se", c.ghat_minus_g_se}};
    if (c.converged > 1) {
      const auto& v = c.fields.at("V");
      cell["nu_v_limit"] = estimate_json(nu_from_v(v.mean, c.beta, v.se));
      cell["error_inversion"] = estimate_json(cell_inversion(c, r.sigma));
    }
    cells.push_back(std::move(cell));
  }
  json j = {{"model", r.model}, {"dim", r.dim}, {"n_out", r.n_out}, {"sigma", r.sigma},
            {"flagged", r.flagged}, {"cells", cells}};
  if (r.volume) {
    json pts = json::array();
    for (const auto& p : r.volume->points) pts.push_back({{"t", p.t}, {"fraction", p.fraction}, {"count", p.count}});
    j["volume"] = {{"n_draws", r.volume->n_draws},
                   {"median_k", r.volume->median_k},
                   {"points", pts},
                   {"warnings", r.volume->warnings}};
  }
  if (r.volume_fit) j["volume_fit"] = estimate_json(*r.volume_fit);
  return j.dump(2) + "\n";
}

SweepResult summary_from_json_text(const std::string& text) {
  try {
    const json j = json::parse(text);
    SweepResult r{.model = j.at("model").get<std::string>(),
                  .dim = j.at("dim").get<std::size_t>(),
                  .n_out = j.at("n_out").get<std::size_t>(),
                  .sigma = j.at("sigma").get<double>(),
                  .flagged = j.at("flagged").get<std::size_t>()};
    for (const auto& cj : j.at("cells")) {
      CellSummary c;
      c.n = cj.at("n").get<std::size_t>();
      c.beta = cj.at("beta").get<double>();
      c.beta_index = cj.at("beta_index").get<std::size_t>();
      c.rows = cj.at("rows").get<std::size_t>();
      c.converged = cj.at("converged").get<std::size_t>();
      for (const auto& [name, m] : cj.at("fields").items()) c.fields[name] = mean_se_from_json(m);
      c.g_scaled = mean_se_from_json(cj.at("g_scaled"));
      c.t_scaled = mean_se_from_json(cj.at("t_scaled"));
      c.cov_gt = cj.at("cov_gt").get<double>();
      c.ghat_minus_g = cj.at("ghat_minus_g").get<double>();
      c.ghat_minus_g_se = cj.at("ghat_minus_g_se").get<double>();
      r.cells.push_back(std::move(c));
    }
    if (j.contains("volume")) {
      const auto& v = j.at("volume");
      VolumeProfile p{.n_draws = v.at("n_draws").get<std::size_t>(), .median_k = v.at("median_k").get<double>(),
                      .warnings = v.at("warnings").get<std::vector<std::string>>()};
      for (const auto& pt : v.at("points")) {
        p.points.push_back({pt.at("t").get<double>(), pt.at("fraction").get<double>(), pt.at("count").get<std::size_t>()});
      }
      r.volume = std::move(p);
    }
    if (j.contains("volume_fit")) r.volume_fit = estimate_from_json(j.at("volume_fit"));
    return r;
  } catch (const json::exception& e) {
    throw SchemaError(std::string("summary.json: ") + e.what());
  }
}

// Sweep -----------------------------------------------------------------------

std::pair<VolumeProfile, InvariantEstimate> volume_analysis(const Experiment& ex) {
  const auto& vc = ex.config().volume;
  const auto ks = prior_k_values(ex.model(), ex.truth(), ex.xq(), vc.n_prior_samples,
                                 ex.seed(0, 0, 0, SeedPurpose::prior_volume));
  const double median = ks[ks.size() / 2];
  auto profile = profile_from_k_values(ks, log_t_grid(median, vc.t_min_rel, vc.t_max_rel, vc.n_points));
  auto fit = rlct_volume_fit(profile, ex.model().dim, {.min_count = vc.min_count});
  return {std::move(profile), std::move(fit)};
}

SweepResult run_sweep(const ExperimentConfig& config, const SweepOptions& options) {
  config.validate();
  const Experiment ex(config);
  const std::filesystem::path out = options.out_dir.empty() ? std::filesystem::path(config.output_dir) : options.out_dir;
  const auto rows_dir = out / "rows";
  std::error_code ec;
  std::filesystem::create_directories(rows_dir, ec);
  {
    const auto probe = out / ".write_probe";
    std::ofstream f(probe);
    if (ec || !f) throw std::runtime_error("output directory is not writable: " + out.string());
    f.close();
    std::filesystem::remove(probe, ec);
  }
  write_text(out / "config.json", config.to_json_text());

  struct Task {
    std::size_t n, beta_index, replication;
  };
  std::vector<Task> tasks;
  for (std::size_t n : config.ns) {
    for (std::size_t b = 0; b < config.betas.size(); ++b) {
      for (std::size_t r = 0; r < config.replications; ++r) tasks.push_back({n, b, r});
    }
  }
  std::vector<ErrorReport> results(tasks.size());

  auto row_path = [&](const Task& t) {
    return rows_dir / ("n" + std::to_string(t.n) + "_b" + std::to_string(t.beta_index) + "_r" +
                       std::to_string(t.replication) + ".csv");
  };

  std::atomic<std::size_t> next{0}, done{0};
  std::mutex err_mu;
  std::exception_ptr first_error;
  auto worker = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= tasks.size()) return;
      {
        std::lock_guard lock(err_mu);
        if (first_error) return;
      }
      try {
        const Task& t = tasks[i];
        const auto path = row_path(t);
        bool loaded = false;
        if (std::filesystem::exists(path)) {
          try {
            const auto cached = read_raw_rows(path);
            if (cached.size() == 1 && cached[0].n == t.n && cached[0].replication == t.replication &&
                cached[0].beta == config.betas[t.beta_index]) {
              results[i] = cached[0];
              loaded = true;
            }
          } catch (const std::exception&) {
            loaded = false;
          }
        }
        if (!loaded) {
          results[i] = run_replication(ex, t.n, t.beta_index, t.replication);
          auto tmp = path;
          tmp += ".tmp";
          write_raw_rows(tmp, {results[i]});
          std::filesystem::rename(tmp, path);
        }
        const std::size_t k = done.fetch_add(1) + 1;
        if (!options.quiet && (k % 50 == 0 || k == tasks.size())) {
          std::lock_guard lock(err_mu);
          std::cerr << "[sweep " << config.model << "] " << k << "/" << tasks.size() << " replications\n";
        }
      } catch (...) {
        std::lock_guard lock(err_mu);
        if (!first_error) first_error = std::current_exception();
      }
    }
  };

  std::size_t workers = config.workers ? config.workers : std::max(1u, std::thread::hardware_concurrency());
  workers = std::min(workers, tasks.size());
  if (workers <= 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(worker);
  }
  if (first_error) std::rethrow_exception(first_error);

  write_raw_rows(out / "raw.csv", results);
  SweepResult result = aggregate(results, config.model, ex.model().dim, ex.model().n_out, config.sigma);
  if (config.volume.enabled) {
    auto [profile, fit] = volume_analysis(ex);
    result.volume = std::move(profile);
    result.volume_fit = std::move(fit);
  }
  write_text(out / "summary.json", summary_to_json_text(result));
  return result;
}

// Checks ----------------------------------------------------------------------

bool within_se(double value, double target, double se, double k) { return std::abs(value - target) <= k * se; }

CheckResult structural_check(const std::vector<ErrorReport>& rows, std::size_t n_out) {
  CheckResult res{.name = "structural invariants", .passed = true};
  std::size_t bad = 0;
  std::string first;
  for (const auto& r : rows) {
    const DStatistics d = r.D.value_or(DStatistics{});
    const double n = static_cast<double>(r.n);
    std::vector<std::string> why;
    if (!(r.V >= 0.0)) why.push_back("V<0");
    if (!(r.T >= 0.0)) why.push_back("T<0");
    if (!(r.G >= r.S)) why.push_back("G<S");
    if (!r.D) why.push_back("no D statistics");
    if (!(std::abs(r.V - (d.d3 - d.d4)) <= 1e-10)) why.push_back("V!=D3-D4");
    if (!(std::abs(2.0 * n * (r.G - r.S) - d.d2) <= 1e-10)) why.push_back("2n(G-S)!=D2");
    if (!(d.d4 >= 0.0 && d.d4 <= d.d3 && d.d2 >= 0.0 && d.d2 <= d.d1 * (1.0 + 1e-12) + 1e-300)) why.push_back("D order");
    if (r.G_hat != waic_estimate(r.T, r.V, r.n, n_out, r.beta)) why.push_back("G_hat formula");
    if (!why.empty()) {
      if (bad++ == 0) {
        first = "n=" + std::to_string(r.n) + " rep=" + std::to_string(r.replication) + ":";
        for (const auto& w : why) first += " " + w;
      }
    }
  }
  res.passed = bad == 0;
  res.detail = std::to_string(rows.size()) + " rows, " + std::to_string(bad) + " violations" +
               (bad ? " (first " + first + ")" : "");
  return res;
}

CheckResult convergence_check(const SweepResult& r) {
  CheckResult res{.name = "converged fraction >= 0.95 in every cell", .passed = true};
  double worst = 1.0;
  for (const auto& c : r.cells) {
    const double frac = c.rows ? static_cast<double>(c.converged) / static_cast<double>(c.rows) : 0.0;
    worst = std::min(worst, frac);
  }
  res.passed = worst >= 0.95;
  res.detail = "worst cell " + fmt(worst, 3) + ", flagged rows " + std::to_string(r.flagged);
  return res;
}

std::vector<CheckResult> regular_limit_checks(const SweepResult& r, double beta) {
  const double d = static_cast<double>(r.dim);
  const double s2 = r.sigma * r.sigma;
  const auto ns = sorted_ns(r, beta);
  if (ns.empty()) throw std::invalid_argument("no cells for beta " + beta_tag(beta));
  const auto& last = r.cell(ns.back(), beta);
  const std::string at = " (n=" + std::to_string(ns.back()) + ", beta=" + beta_tag(beta) + ")";
  std::vector<CheckResult> out;

  const double g_target = d * s2 / 2.0;
  out.push_back({"n(E[G]-S) -> d sigma^2/2" + at, within_se(last.g_scaled.mean, g_target, last.g_scaled.se),
                 fmt_pm(last.g_scaled, 5) + " vs " + fmt(g_target, 5)});
  out.push_back({"n(E[T]-S) -> -d sigma^2/2" + at, within_se(last.t_scaled.mean, -g_target, last.t_scaled.se),
                 fmt_pm(last.t_scaled, 5) + " vs " + fmt(-g_target, 5)});
  const auto& v = last.fields.at("V");
  out.push_back({"E[V] -> 2 nu / beta = d / beta" + at, within_se(v.mean, d / beta, v.se),
                 fmt_pm(v) + " vs " + fmt(d / beta)});

  bool shrinking = true;
  std::string detail;
  for (std::size_t k = 0; k < ns.size(); ++k) {
    const auto& c = r.cell(ns[k], beta);
    const double gap = std::abs(c.g_scaled.mean - g_target);
    detail += (k ? ", " : "") + std::string("n=") + std::to_string(ns[k]) + ": " + fmt(gap, 5);
    if (k > 0) {
      const auto& prev = r.cell(ns[k - 1], beta);
      const double prev_gap = std::abs(prev.g_scaled.mean - g_target);
      if (gap > prev_gap + 3.0 * combined_se(c.g_scaled.se, prev.g_scaled.se)) shrinking = false;
    }
  }
  out.push_back({"|n(E[G]-S) - d sigma^2/2| shrinks along n (beta=" + beta_tag(beta) + ")", shrinking, detail});
  return out;
}

std::vector<CheckResult> waic_checks(const SweepResult& r, const std::vector<double>& betas) {
  std::vector<CheckResult> out;
  for (double beta : betas) {
    const auto ns = sorted_ns(r, beta);
    bool trend = true;
    std::string trend_detail;
    for (std::size_t k = 0; k < ns.size(); ++k) {
      const auto& c = r.cell(ns[k], beta);
      out.push_back({"|mean G_hat - mean G| < 3 SE (" + r.model + ", n=" + std::to_string(ns[k]) + ", beta=" +
                         beta_tag(beta) + ")",
                     std::abs(c.ghat_minus_g) < 3.0 * c.ghat_minus_g_se,
                     fmt(c.ghat_minus_g, 6) + " vs SE " + fmt(c.ghat_minus_g_se, 6)});
      const double scaled = static_cast<double>(c.n) * std::abs(c.ghat_minus_g);
      trend_detail += (k ? ", " : "") + std::string("n=") + std::to_string(c.n) + ": " + fmt(scaled, 5);
      if (k > 0) {
        const auto& p = r.cell(ns[k - 1], beta);
        const double prev = static_cast<double>(p.n) * std::abs(p.ghat_minus_g);
        const double se = combined_se(static_cast<double>(c.n) * c.ghat_minus_g_se,
                                      static_cast<double>(p.n) * p.ghat_minus_g_se);
        if (scaled > prev + 3.0 * se) trend = false;
      }
    }
    out.push_back({"n |mean G_hat - mean G| decreasing (" + r.model + ", beta=" + beta_tag(beta) + ")", trend,
                   trend_detail});
  }
  return out;
}

std::vector<CheckResult> inversion_checks(const SweepResult& r, const std::vector<double>& betas) {
  std::vector<CheckResult> out;
  const double target = static_cast<double>(r.dim) / 2.0;
  std::vector<InvariantEstimate> ests;
  for (double beta : betas) {
    const auto ns = sorted_ns(r, beta);
    const auto& c = r.cell(ns.back(), beta);
    const auto e = cell_inversion(c, r.sigma);
    const std::string at = " (n=" + std::to_string(c.n) + ", beta=" + beta_tag(beta) + ")";
    out.push_back({"error-inversion lambda in d/2 +- 3 SE" + at, within_se(*e.lambda, target, *e.lambda_se),
                   fmt(*e.lambda) + " +- " + fmt(*e.lambda_se) + " vs " + fmt(target)});
    out.push_back({"error-inversion nu in d/2 +- 3 SE" + at, within_se(*e.nu, target, *e.nu_se),
                   fmt(*e.nu) + " +- " + fmt(*e.nu_se) + " vs " + fmt(target)});
    ests.push_back(e);
  }
  bool stable = true;
  std::string detail;
  for (std::size_t a = 0; a < ests.size(); ++a) {
    detail += (a ? ", " : "") + std::string("beta=") + beta_tag(betas[a]) + ": lambda " + fmt(*ests[a].lambda, 3) +
              " nu " + fmt(*ests[a].nu, 3);
    for (std::size_t b = a + 1; b < ests.size(); ++b) {
      if (!within_se(*ests[a].lambda, *ests[b].lambda, combined_se(*ests[a].lambda_se, *ests[b].lambda_se)) ||
          !within_se(*ests[a].nu, *ests[b].nu, combined_se(*ests[a].nu_se, *ests[b].nu_se))) {
        stable = false;
      }
    }
  }
  out.push_back({"lambda, nu stable across beta", stable, detail});
  return out;
}

std::vector<CheckResult> singular_consistency_checks(const SweepResult& r, double beta) {
  std::vector<CheckResult> out;
  const auto ns = sorted_ns(r, beta);
  if (ns.empty()) throw std::invalid_argument("no cells for beta " + beta_tag(beta));
  const auto& c = r.cell(ns.back(), beta);
  const auto inv = cell_inversion(c, r.sigma);
  const std::string at = " (" + r.model + ", n=" + std::to_string(c.n) + ", beta=" + beta_tag(beta) + ")";
  if (!r.volume_fit || !r.volume_fit->lambda) {
    out.push_back({"lambda error-inversion vs volume-fit" + at, false, "no volume fit in this sweep"});
  } else {
    const auto& vf = *r.volume_fit;
    const double diff = std::abs(*inv.lambda - *vf.lambda);
    const double tol = std::max(0.15 * std::abs(*vf.lambda), 3.0 * combined_se(*inv.lambda_se, vf.lambda_se.value_or(0.0)));
    out.push_back({"lambda error-inversion vs volume-fit" + at, diff <= tol,
                   fmt(*inv.lambda) + " +- " + fmt(*inv.lambda_se) + " vs " + fmt(*vf.lambda) + " +- " +
                       fmt(vf.lambda_se.value_or(0.0)) + " (m=" + std::to_string(vf.multiplicity.value_or(0)) +
                       "), |diff| " + fmt(diff) + " <= " + fmt(tol)});
  }
  out.push_back({"error-inversion nu >= 0" + at, *inv.nu >= 0.0, fmt(*inv.nu) + " +- " + fmt(*inv.nu_se)});
  const auto& v = c.fields.at("V");
  const auto nv = nu_from_v(v.mean, beta, v.se);
  out.push_back({"v-limit nu >= 0" + at, *nv.nu >= 0.0, fmt(*nv.nu) + " +- " + fmt(*nv.nu_se)});
  return out;
}

CheckResult stein_check(const SweepResult& r, std::size_t n, double beta) {
  const auto& c = r.cell(n, beta);
  const auto& st = c.fields.at("stein_lhs");
  const auto& v = c.fields.at("V");
  const double s2b = r.sigma * r.sigma * beta;
  const double rhs = s2b * v.mean;
  const double se = combined_se(st.se, s2b * v.se);
  return {"Stein identity E[sum S_i E_w f] = sigma^2 beta E[V] (n=" + std::to_string(n) + ", beta=" + beta_tag(beta) + ")",
          std::abs(st.mean - rhs) < 3.0 * se, fmt(st.mean, 6) + " vs " + fmt(rhs, 6) + " (3 SE = " + fmt(3.0 * se, 6) + ")"};
}

std::vector<CheckResult> applicable_checks(const SweepResult& r, const std::vector<ErrorReport>& rows) {
  std::vector<CheckResult> out;
  out.push_back(structural_check(rows, r.n_out));
  out.push_back(convergence_check(r));
  const auto betas = distinct_betas(r);
  auto append = [&](std::vector<CheckResult> v) { out.insert(out.end(), v.begin(), v.end()); };
  if (is_regular(r.model)) {
    for (double b : betas) append(regular_limit_checks(r, b));
    if (sorted_ns(r, betas.front()).size() > 0) append(inversion_checks(r, betas));
  } else if (r.volume_fit) {
    for (double b : betas) append(singular_consistency_checks(r, b));
  }
  append(waic_checks(r, betas));
  for (double b : betas) out.push_back(stein_check(r, sorted_ns(r, b).back(), b));
  return out;
}

// Report ----------------------------------------------------------------------

ReportOutput report(const std::filesystem::path& dir) {
  const auto raw = dir / "raw.csv";
  const auto summary_path = dir / "summary.json";
  if (!std::filesystem::exists(raw)) throw SchemaError("missing " + raw.string());
  if (!std::filesystem::exists(summary_path)) throw SchemaError("missing " + summary_path.string());
  const auto rows = read_raw_rows(raw);
  if (rows.empty()) throw SchemaError("no data: " + raw.string() + " has no rows");
  const SweepResult stored = summary_from_json_text(read_text(summary_path));

  SweepResult r = aggregate(rows, stored.model, stored.dim, stored.n_out, stored.sigma);
  r.volume = stored.volume;
  r.volume_fit = stored.volume_fit;

  ReportOutput out;
  std::ostringstream t;
  t << "model " << r.model << "  d=" << r.dim << "  N=" << r.n_out << "  sigma=" << r.sigma
    << "  S=" << fmt(r.n_out * r.sigma * r.sigma / 2.0, 6) << "\n";
  t << "beta      n     conv  n(E[G]-S)             n(E[T]-S)             mean V              nu(V)     "
       "lambda(inv)        nu(inv)            n(mean G_hat-mean G)\n";
  CsvTable plot{.header = {"beta", "n", "inv_n", "series", "y", "se"}};
  auto plot_row = [&](const CellSummary& c, const std::string& series, double y, double se) {
    plot.rows.push_back({format_double(c.beta), std::to_string(c.n), format_double(1.0 / static_cast<double>(c.n)),
                         series, format_double(y), format_double(se)});
  };
  for (const auto& c : r.cells) {
    if (c.converged < 2) continue;
    const auto& v = c.fields.at("V");
    const auto nv = nu_from_v(v.mean, c.beta, v.se);
    const auto inv = cell_inversion(c, r.sigma);
    const double dn = static_cast<double>(c.n);
    char line[512];
    std::snprintf(line, sizeof line, "%-8s %5zu %4zu/%-4zu %-21s %-21s %-19s %-9s %-18s %-18s %s\n",
                  beta_tag(c.beta).c_str(), c.n, c.converged, c.rows, fmt_pm(c.g_scaled, 5).c_str(),
                  fmt_pm(c.t_scaled, 5).c_str(), fmt_pm(v, 3).c_str(), fmt(*nv.nu, 3).c_str(),
                  (fmt(*inv.lambda, 3) + " +- " + fmt(*inv.lambda_se, 3)).c_str(),
                  (fmt(*inv.nu, 3) + " +- " + fmt(*inv.nu_se, 3)).c_str(),
                  (fmt(dn * c.ghat_minus_g, 5) + " +- " + fmt(dn * c.ghat_minus_g_se, 5)).c_str());
    t << line;
    plot_row(c, "n(G-S)", c.g_scaled.mean, c.g_scaled.se);
    plot_row(c, "n(T-S)", c.t_scaled.mean, c.t_scaled.se);
    plot_row(c, "V", v.mean, v.se);
    plot_row(c, "n(G_hat-G)", dn * c.ghat_minus_g, dn * c.ghat_minus_g_se);
    plot_row(c, "lambda_inv", *inv.lambda, *inv.lambda_se);
    plot_row(c, "nu_inv", *inv.nu, *inv.nu_se);
    plot_row(c, "nu_v", *nv.nu, *nv.nu_se);
  }
  if (r.volume_fit && r.volume_fit->lambda) {
    t << "volume fit: lambda = " << fmt(*r.volume_fit->lambda) << " +- " << fmt(r.volume_fit->lambda_se.value_or(0.0))
      << ", m = " << r.volume_fit->multiplicity.value_or(0) << "\n";
    for (const auto& f : r.volume_fit->flags) t << "  warning: " << f << "\n";
  }
  write_csv(dir / "plot.csv", plot);
  out.table = t.str();

  out.checks = applicable_checks(r, rows);
  // Summary must be reproducible from the raw rows.
  bool same = stored.cells.size() == r.cells.size();
  for (std::size_t i = 0; same && i < r.cells.size(); ++i) {
    const auto& a = stored.cells[i];
    const auto& b = r.cells[i];
    auto close = [](double x, double y) { return std::abs(x - y) <= 1e-12 * std::max(1.0, std::abs(y)); };
    same = a.n == b.n && a.beta == b.beta && a.converged == b.converged && close(a.g_scaled.mean, b.g_scaled.mean) &&
           close(a.t_scaled.mean, b.t_scaled.mean) && close(a.g_scaled.se, b.g_scaled.se) &&
           close(a.ghat_minus_g, b.ghat_minus_g);
    for (const auto& [name, m] : b.fields) {
      same = same && a.fields.contains(name) && close(a.fields.at(name).mean, m.mean) && close(a.fields.at(name).se, m.se);
    }
  }
  out.checks.push_back({"summary.json reproducible from raw.csv (1e-12)", same, same ? "ok" : "mismatch"});
  return out;
}

}  // namespace sltlab
