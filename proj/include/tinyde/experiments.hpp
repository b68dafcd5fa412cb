#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "tinyde/cost.hpp"
#include "tinyde/data.hpp"
#include "tinyde/ensemble.hpp"
#include "tinyde/training.hpp"

namespace tinyde {

enum class ExperimentTask { uci_regression, ood_classification, cost_census, cim_study };

std::string to_string(ExperimentTask task);

/// Every knob of the four studies. Fields that do not apply to the selected
/// task are ignored.
struct ExperimentConfig {
  ExperimentTask task = ExperimentTask::uci_regression;
  std::uint64_t seed = 0;
  std::filesystem::path out_dir = "results";
  std::size_t jobs = 1;

  // Model and training.
  std::size_t members = 5;
  std::optional<std::size_t> hidden_width;  // per-dataset default when unset
  std::size_t hidden_layers = 2;
  NormKind norm_kind = NormKind::batch;
  /// sequential: two-phase training and routed inference; parallel:
  /// single-shot training and tiled inference.
  InferenceMode mode = InferenceMode::sequential;
  std::size_t epochs = 40;
  std::size_t batch_size = 32;
  OptimizerKind optimizer = OptimizerKind::adam;
  double learning_rate = 1e-3;
  bool bootstrap = false;
  bool retrain_member0 = false;

  // UCI reproduction.
  std::vector<std::string> datasets{"boston-housing", "concrete", "energy", "yacht"};
  std::filesystem::path data_dir;  // empty: TINYDE_DATA_DIR, then <source>/data/uci
  std::optional<std::size_t> folds;  // per-dataset default when unset
  bool ablation = true;

  // Out-of-distribution study.
  std::vector<std::size_t> ood_members{1, 5, 10};
  std::size_t train_samples = 2000;
  std::size_t test_samples = 1000;
  std::size_t dims = 8;
  double separation = 4.0;
  double sigma = 2.0;
  std::size_t bins = 20;

  // Cost census.
  std::filesystem::path spec_path = "data/resnet32.json";
  std::vector<std::size_t> cost_members{1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
  std::vector<std::string> methods;  // empty: all methods

  // CIM study.
  std::vector<unsigned> bits{4, 6, 8, 10, 12};
  std::string cim_dataset = "boston-housing";
  double calib_low = 0.001;
  double calib_high = 0.999;
  bool trace = false;

  /// Throws ConfigError on any invalid combination.
  void validate() const;
};

nlohmann::json to_json(const ExperimentConfig& config);

/// Outcome of parsing the command line: either a config to run or an early
/// exit (help, version, parse failure) with its message and exit code.
struct ParsedCommand {
  std::optional<ExperimentConfig> config;
  int exit_code = 0;
  std::string message;
};

/// Parses `tinyde <subcommand> [--config FILE] [options]`. Config files use
/// TOML key = value syntax with the same names as the long options; unknown
/// keys are rejected. Command-line flags override file values.
ParsedCommand parse_command_line(int argc, const char* const* argv);

/// Process exit codes.
inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitData = 3;
inline constexpr int kExitRuntime = 4;

/// Resolves the UCI data directory: explicit setting, then TINYDE_DATA_DIR,
/// then the repository's data/uci.
std::filesystem::path resolve_data_dir(const std::filesystem::path& configured);

/// Resolves a repository-relative resource (for example a layer spec): the
/// path as given when it exists, otherwise relative to the source tree.
std::filesystem::path resolve_resource(const std::filesystem::path& path);

/// Runs `fn(i)` for i in [0, n) on up to `jobs` threads. Exceptions are
/// rethrown in index order after all workers finish.
void parallel_for(std::size_t n, std::size_t jobs, const std::function<void(std::size_t)>& fn);

/// Fixed-precision decimal used in every result CSV so reruns are
/// byte-identical.
std::string format_number(double v);

// UCI regression -------------------------------------------------------------

struct FoldResult {
  std::size_t fold = 0;
  double rmse = 0.0;           // ensemble mean, original target units
  double nll = 0.0;            // NaN when the ensemble has one member
  double phase1_rmse = 0.0;    // member 0 right after phase 1 (NaN for single-shot)
  double member_rmse = 0.0;    // mean over members of each member's own RMSE
  double ablation_rmse = 0.0;  // single-member baseline; NaN when disabled
};

struct DatasetResult {
  UciDatasetInfo info;
  std::size_t width = 0;
  std::vector<FoldResult> folds;
  double rmse_mean = 0.0, rmse_se = 0.0;
  double nll_mean = 0.0, nll_se = 0.0;
  double ablation_mean = 0.0, ablation_se = 0.0;
  double gap_mean = 0.0;  // member_rmse − phase1_rmse averaged over folds
};

/// Trains and evaluates every fold of one dataset. `data` must be the full,
/// unstandardized table.
DatasetResult run_uci_dataset(const ExperimentConfig& config, const UciDatasetInfo& info, const Dataset& data);

/// Result CSV mirroring the benchmark table: one row per dataset.
void write_uci_table(std::ostream& out, const std::vector<DatasetResult>& results);
void write_uci_folds(std::ostream& out, const DatasetResult& result);

// OoD classification ---------------------------------------------------------

struct OodSplitStats {
  std::string split;  // id, gaussian, permuted
  double mean_entropy = 0.0;
  double mean_disagreement = 0.0;
  double accuracy = 0.0;
  double relative_entropy_change = 0.0;  // versus the ID split
  Tensor entropy;
  Tensor disagreement;
};

struct OodResult {
  std::size_t members = 1;
  std::vector<OodSplitStats> splits;

  const OodSplitStats& split(const std::string& name) const;
};

/// Trains one classifier per ensemble size in config.ood_members on the blob
/// data and scores ID, Gaussian-corrupted and feature-permuted test sets.
std::vector<OodResult> run_ood(const ExperimentConfig& config);

void write_ood_summary(std::ostream& out, const std::vector<OodResult>& results);

// CIM study ------------------------------------------------------------------

struct CimRow {
  std::optional<unsigned> bits;  // nullopt: ideal converters
  double mean_abs_error = 0.0;   // against exact member outputs
  double max_abs_error = 0.0;
  double rmse = 0.0;             // ensemble mean, original target units
  double rmse_exact = 0.0;
};

struct CimResult {
  std::vector<CimRow> rows;
  std::string trace;
};

CimResult run_cim_study(const ExperimentConfig& config, const Dataset& data);
void write_cim_table(std::ostream& out, const CimResult& result);

// Drivers --------------------------------------------------------------------

/// Runs the configured task, writing CSVs, a manifest.json and a text summary
/// into config.out_dir. Returns the text summary.
std::string run_experiment(const ExperimentConfig& config);

}  // namespace tinyde
