// sltlab command line: generate, sample, estimate, sweep, rlct, report.
// Exit codes: 0 ok, 1 validation/schema error, 2 runtime failure, 3 failed acceptance check.

#include <cstdio>
#include <exception>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "sltlab/birational.hpp"
#include "sltlab/datagen.hpp"
#include "sltlab/estimators.hpp"
#include "sltlab/harness.hpp"
#include "sltlab/io.hpp"
#include "sltlab/posterior.hpp"

using namespace sltlab;

namespace {

struct DatasetArgs {
  std::string config;
  std::string dataset;
  std::size_t beta_index = 0;
  std::size_t seed_index = 0;
};

void add_dataset_args(CLI::App* cmd, DatasetArgs& a) {
  cmd->add_option("--config", a.config, "experiment config JSON")->required();
  cmd->add_option("--dataset", a.dataset, "dataset CSV written by generate")->required();
  cmd->add_option("--beta-index", a.beta_index, "index into the config's beta list");
  cmd->add_option("--seed-index", a.seed_index, "replication index used for the sampler seed");
}

struct Loaded {
  Experiment experiment;
  Dataset data;
  double beta;
};

Loaded load_inputs(const DatasetArgs& a) {
  Experiment ex(ExperimentConfig::load(a.config));
  DatasetSidecar side;
  Dataset data = load_dataset(a.dataset, &side);
  if (!side.model.empty() && side.model != ex.config().model) {
    throw ValidationError("dataset was generated for model '" + side.model + "', config uses '" + ex.config().model + "'");
  }
  if (data.m_in != ex.model().m_in || data.n_out != ex.model().n_out) {
    throw ValidationError("dataset dimensions do not match the model");
  }
  if (a.beta_index >= ex.config().betas.size()) throw ValidationError("--beta-index out of range");
  const double beta = ex.config().betas[a.beta_index];
  return {std::move(ex), std::move(data), beta};
}

PosteriorSamples posterior_for(const Loaded& in, const DatasetArgs& a, const GibbsTarget& target) {
  const auto& cfg = in.experiment.config();
  if (cfg.backend == Backend::oracle) return grid_posterior(target, cfg.grid);
  return sample_posterior(target, cfg.mcmc, in.experiment.seed(in.data.n, a.beta_index, a.seed_index, SeedPurpose::mcmc));
}

void print_checks(const std::vector<CheckResult>& checks) {
  for (const auto& c : checks) std::cout << (c.passed ? "PASS " : "FAIL ") << c.name << ": " << c.detail << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Numerical lab for singular-regression limit theorems"};
  app.require_subcommand(1);

  std::string config_path, out_path;
  std::size_t gen_n = 0, gen_beta_index = 0, gen_seed_index = 0;
  auto* gen = app.add_subcommand("generate", "draw one dataset from the config's true process");
  gen->add_option("--config", config_path, "experiment config JSON")->required();
  gen->add_option("--n", gen_n, "sample size")->required();
  gen->add_option("--seed-index", gen_seed_index, "replication index in the seed ladder");
  gen->add_option("--beta-index", gen_beta_index, "beta index in the seed ladder");
  gen->add_option("--out", out_path, "dataset CSV (default data_n<N>_r<I>.csv)");

  DatasetArgs sample_args;
  std::string draws_out;
  auto* sample = app.add_subcommand("sample", "sample the Gibbs posterior of one dataset");
  add_dataset_args(sample, sample_args);
  sample->add_option("--out", draws_out, "draws CSV (default draws.csv)");

  DatasetArgs est_args;
  std::string est_out;
  auto* estimate = app.add_subcommand("estimate", "posterior + every estimator for one dataset");
  add_dataset_args(estimate, est_args);
  estimate->add_option("--out", est_out, "report CSV (one row); printed to stdout when omitted");

  std::string sweep_config, sweep_out;
  std::size_t sweep_workers = 0;
  bool sweep_progress = false;
  auto* sweep = app.add_subcommand("sweep", "replicated experiments over the n and beta grids");
  sweep->add_option("--config", sweep_config, "experiment config JSON")->required();
  sweep->add_option("--out", sweep_out, "output directory (default: config output_dir)");
  sweep->add_option("--workers", sweep_workers, "worker threads (default: config, then available cores)");
  sweep->add_flag("--progress", sweep_progress, "print progress to stderr");

  std::string charts_path, rlct_config;
  bool rlct_volume = false;
  auto* rlct = app.add_subcommand("rlct", "learning coefficient from charts or from the prior volume");
  auto* charts_opt = rlct->add_option("--charts", charts_path, "chart file: JSON list of {k:[...], h:[...]}");
  auto* volume_flag = rlct->add_flag("--volume", rlct_volume, "fit the prior volume scaling of the config's model");
  rlct->add_option("--config", rlct_config, "experiment config JSON (with --volume)");
  charts_opt->excludes(volume_flag);
  rlct->require_option(1, 2);

  std::string report_in;
  bool report_check = false;
  auto* rep = app.add_subcommand("report", "tables, plot data and acceptance lines for a sweep directory");
  rep->add_option("--in", report_in, "sweep output directory")->required();
  rep->add_flag("--check", report_check, "exit 3 when any acceptance line fails");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    if (*gen) {
      const Experiment ex(ExperimentConfig::load(config_path));
      if (gen_n < 1) throw ValidationError("--n must be >= 1");
      if (gen_beta_index >= ex.config().betas.size()) throw ValidationError("--beta-index out of range");
      const auto seed = ex.seed(gen_n, gen_beta_index, gen_seed_index, SeedPurpose::data);
      const Dataset data = generate(ex.truth(), gen_n, seed);
      if (out_path.empty()) out_path = "data_n" + std::to_string(gen_n) + "_r" + std::to_string(gen_seed_index) + ".csv";
      save_dataset(out_path, data, ex.config().model, ex.config().sigma);
      std::cout << "wrote " << out_path << " (n=" << gen_n << ", seed=" << seed << ")\n";
    } else if (*sample) {
      const Loaded in = load_inputs(sample_args);
      const GibbsTarget target(in.experiment.model(), in.data, in.beta);
      const PosteriorSamples s = posterior_for(in, sample_args, target);
      if (draws_out.empty()) draws_out = "draws.csv";
      write_draws_csv(draws_out, s);
      const auto& d = s.diagnostics();
      std::cout << "wrote " << draws_out << " (" << s.size() << " draws)\n";
      if (in.experiment.config().backend == Backend::mcmc) {
        std::cout << "max R-hat " << d.max_rhat() << ", min ESS " << d.min_ess()
                  << (d.converged ? ", converged" : ", NOT converged") << "\n";
      }
    } else if (*estimate) {
      const Loaded in = load_inputs(est_args);
      const GibbsTarget target(in.experiment.model(), in.data, in.beta);
      const PosteriorSamples s = posterior_for(in, est_args, target);
      ErrorReport r = compute_report(s, in.data, in.experiment.truth(), in.experiment.model(), in.experiment.xq(),
                                     {.xq_max_draws = in.experiment.config().xq_max_draws});
      r.replication = est_args.seed_index;
      if (est_out.empty()) {
        const auto& cols = report_columns();
        const auto row = report_row(r);
        for (std::size_t i = 0; i < cols.size(); ++i) std::cout << cols[i] << " = " << row[i] << "\n";
      } else {
        write_raw_rows(est_out, {r});
        std::cout << "wrote " << est_out << "\n";
      }
    } else if (*sweep) {
      auto cfg = ExperimentConfig::load(sweep_config);
      if (sweep_workers) cfg.workers = sweep_workers;
      const SweepResult r = run_sweep(cfg, {.out_dir = sweep_out, .quiet = !sweep_progress});
      std::size_t rows = 0;
      for (const auto& c : r.cells) rows += c.rows;
      std::cout << "sweep done: " << r.cells.size() << " cells, " << rows << " rows, " << r.flagged
                << " flagged (non-converged)\n";
    } else if (*rlct) {
      if (!charts_path.empty()) {
        const ChartRlct res = rlct_from_charts(ChartSet::from_json_text(read_text(charts_path)));
        std::cout << "lambda = " << res.lambda.str() << "\nm = " << res.multiplicity << "\n";
      } else {
        if (rlct_config.empty()) throw ValidationError("rlct --volume needs --config");
        auto cfg = ExperimentConfig::load(rlct_config);
        cfg.volume.enabled = true;
        const Experiment ex(cfg);
        const auto [profile, fit] = volume_analysis(ex);
        std::cout << "t,fraction,count\n";
        for (const auto& p : profile.points) {
          std::cout << format_double(p.t) << "," << format_double(p.fraction) << "," << p.count << "\n";
        }
        std::cout << "lambda = " << *fit.lambda << " +- " << fit.lambda_se.value_or(0.0)
                  << "\nm = " << fit.multiplicity.value_or(0) << "\n";
        for (const auto& f : fit.flags) std::cout << "warning: " << f << "\n";
      }
    } else if (*rep) {
      const ReportOutput out = report(report_in);
      std::cout << out.table << "\n";
      print_checks(out.checks);
      std::cout << "plot data: " << (std::filesystem::path(report_in) / "plot.csv").string() << "\n";
      if (report_check) {
        for (const auto& c : out.checks) {
          if (!c.passed) return 3;
        }
      }
    }
  } catch (const ValidationError& e) {
    std::cerr << "validation error: " << e.what() << "\n";
    return 1;
  } catch (const SchemaError& e) {
    std::cerr << "schema error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
