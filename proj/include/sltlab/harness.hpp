#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "sltlab/birational.hpp"
#include "sltlab/estimators.hpp"
#include "sltlab/model.hpp"
#include "sltlab/posterior.hpp"
#include "sltlab/stats.hpp"

namespace sltlab {

enum class Backend { mcmc, oracle };

struct VolumeConfig {
  bool enabled = false;
  std::size_t n_prior_samples = 100000;
  double t_min_rel = 1e-5;
  double t_max_rel = 1e-1;
  std::size_t n_points = 12;
  std::size_t min_count = 10;

  bool operator==(const VolumeConfig&) const = default;
};

struct ExperimentConfig {
  static constexpr int kSchemaVersion = 1;

  std::string model;
  PriorSpec::Kind prior_kind = PriorSpec::Kind::uniform;
  double prior_scale = 0.0;
  std::vector<double> true_w;  // empty means the origin
  double sigma = 0.1;
  std::vector<double> betas;
  std::vector<std::size_t> ns;
  std::size_t replications = 1;
  std::uint64_t master_seed = 0;
  Backend backend = Backend::mcmc;
  McmcConfig mcmc;
  GridConfig grid;
  std::size_t xq_size = 10000;
  std::size_t xq_max_draws = 2000;
  VolumeConfig volume;
  std::string output_dir = "out";
  std::size_t workers = 0;  // 0 = available parallelism

  /// Throws ValidationError.
  void validate() const;

  std::string to_json_text() const;
  /// Rejects unknown keys and wrong schema versions with ValidationError.
  static ExperimentConfig from_json_text(const std::string& text);
  static ExperimentConfig load(const std::filesystem::path& path);

  bool operator==(const ExperimentConfig& other) const;
};

/// Model, truth and quadrature built once per experiment.
class Experiment {
 public:
  explicit Experiment(ExperimentConfig config);

  const ExperimentConfig& config() const noexcept { return config_; }
  const ModelSpec& model() const noexcept { return model_; }
  const TrueProcess& truth() const noexcept { return truth_; }
  const XQuadrature& xq() const noexcept { return xq_; }

  std::uint64_t seed(std::size_t n, std::size_t beta_index, std::size_t replication, SeedPurpose purpose) const;

 private:
  ExperimentConfig config_;
  ModelSpec model_;
  TrueProcess truth_;
  XQuadrature xq_;
};

/// datagen -> posterior -> estimators for one (n, beta, replication). Deterministic.
ErrorReport run_replication(const Experiment& experiment, std::size_t n, std::size_t beta_index,
                            std::size_t replication);

/// Aggregates of one (n, beta) cell over converged rows.
struct CellSummary {
  std::size_t n = 0;
  double beta = 0.0;
  std::size_t beta_index = 0;
  std::size_t rows = 0;
  std::size_t converged = 0;
  std::map<std::string, MeanSe> fields;  // T, G, V, S, G_hat, D1..D4, stein_lhs
  MeanSe g_scaled;                        // n (G - S)
  MeanSe t_scaled;                        // n (T - S)
  double cov_gt = 0.0;                    // covariance of the two means above
  double ghat_minus_g = 0.0;              // mean G_hat - mean G
  double ghat_minus_g_se = 0.0;           // combined SE of the two means
};

struct SweepResult {
  std::string model;
  std::size_t dim = 0;
  std::size_t n_out = 0;
  double sigma = 0.0;
  std::vector<CellSummary> cells;
  std::size_t flagged = 0;
  std::optional<VolumeProfile> volume;
  std::optional<InvariantEstimate> volume_fit;

  const CellSummary& cell(std::size_t n, double beta) const;
};

/// Aggregates raw rows; the cell order follows (n, beta) appearance in the rows.
SweepResult aggregate(const std::vector<ErrorReport>& rows, const std::string& model, std::size_t dim,
                      std::size_t n_out, double sigma);

struct SweepOptions {
  std::filesystem::path out_dir;  // empty = config.output_dir
  bool quiet = true;
};

/// Runs every cell, writes rows/, raw.csv, config.json and summary.json (with the volume
/// profile and fit when enabled).
/// Existing row files are reused, so an interrupted sweep resumes by replication index.
SweepResult run_sweep(const ExperimentConfig& config, const SweepOptions& options = {});

std::vector<ErrorReport> read_raw_rows(const std::filesystem::path& raw_csv);
void write_raw_rows(const std::filesystem::path& raw_csv, const std::vector<ErrorReport>& rows);

std::string summary_to_json_text(const SweepResult& result);
SweepResult summary_from_json_text(const std::string& text);

/// Volume profile and fit for the experiment's model (prior-volume seed from the ladder).
std::pair<VolumeProfile, InvariantEstimate> volume_analysis(const Experiment& experiment);

// Checks ------------------------------------------------------------------------

struct CheckResult {
  std::string name;
  bool passed = false;
  std::string detail;
};

/// |value - target| <= k * se
bool within_se(double value, double target, double se, double k = 3.0);

/// V >= 0, T >= 0, G >= S, V == D3 - D4, 2n(G - S) == D2, G_hat formula, for every row.
CheckResult structural_check(const std::vector<ErrorReport>& rows, std::size_t n_out);

/// Converged fraction of every cell >= 0.95.
CheckResult convergence_check(const SweepResult& result);

/// Regular-model limits at the largest n: n(G-S) -> d sigma^2/2, n(T-S) -> -d sigma^2/2,
/// E[V] -> d / beta, and the shrinkage of |n(G-S) - d sigma^2/2| along the n grid
/// (each step may grow by at most 3 combined SE).
std::vector<CheckResult> regular_limit_checks(const SweepResult& result, double beta);

/// |mean G_hat - mean G| < 3 combined SE per cell and n |mean G_hat - mean G| non-increasing in n
/// (each step may grow by at most 3 combined SE).
std::vector<CheckResult> waic_checks(const SweepResult& result, const std::vector<double>& betas);

/// Error-inversion lambda, nu at the largest n vs d/2 for each beta, and their stability across betas.
std::vector<CheckResult> inversion_checks(const SweepResult& result, const std::vector<double>& betas);

/// Error-inversion lambda vs volume-fit lambda within max(15%, 3 combined SE); nu >= 0.
std::vector<CheckResult> singular_consistency_checks(const SweepResult& result, double beta);

/// |mean stein_lhs - sigma^2 beta mean V| < 3 combined SE.
CheckResult stein_check(const SweepResult& result, std::size_t n, double beta);

/// All checks applicable to a sweep's model (used by the report command).
std::vector<CheckResult> applicable_checks(const SweepResult& result, const std::vector<ErrorReport>& rows);

/// Report outputs for a sweep directory.
struct ReportOutput {
  std::string table;
  std::vector<CheckResult> checks;
};

/// Reads raw.csv + summary.json, writes plot.csv, returns the table and checks.
/// Throws SchemaError on missing columns or when there are no rows.
ReportOutput report(const std::filesystem::path& sweep_dir);

}  // namespace sltlab
