#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "tinyde/ensemble.hpp"
#include "tinyde/tensor.hpp"

namespace tinyde {

/// Per-column affine maps fitted on a training split.
struct Standardization {
  std::vector<double> feature_mean;
  std::vector<double> feature_std;  // 0 marks a constant column: centered only
  double target_mean = 0.0;
  double target_std = 1.0;

  bool identity() const { return feature_mean.empty(); }
};

struct Dataset {
  std::string name;
  Task task = Task::regression;
  Tensor features;  // [N, Q]
  Tensor targets;   // [N, 1]; class ids stored as doubles for classification
  Standardization scaling;

  std::size_t size() const { return features.rank() ? features.extent(0) : 0; }
  std::size_t dims() const { return features.rank() == 2 ? features.extent(1) : 0; }

  Dataset subset(std::span<const std::size_t> rows) const;
  std::vector<std::size_t> labels() const;
  void validate() const;
};

struct CsvOptions {
  /// Column holding the target; negative values count from the end (-1 = last).
  int target_column = -1;
  /// ' ' splits on any run of whitespace.
  char delimiter = ',';
  bool has_header = false;
  Task task = Task::regression;
  std::string name;
};

/// Reads a numeric table. Errors name the offending line.
Dataset load_csv(const std::filesystem::path& path, const CsvOptions& options);

struct Fold {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};

/// Independent seeded random splits, each holding out `test_fraction` of the
/// rows (at least one row on each side).
std::vector<Fold> make_folds(std::size_t n, std::size_t n_folds, std::uint64_t seed,
                             double test_fraction = 0.1);

/// 20 for the small UCI sets, 5 for protein, 1 for Year Prediction MSD.
std::size_t default_fold_count(const std::string& dataset_name);

struct StandardizedPair {
  Dataset train;
  Dataset test;
  Standardization params;
};

/// Fits on `train` only and applies the same maps to `test`. Targets are
/// standardized for regression and left alone for classification.
StandardizedPair standardize(const Dataset& train, const Dataset& test);

Tensor standardize_features(const Tensor& x, const Standardization& params);
Tensor destandardize_target(const Tensor& pred, const Standardization& params);

/// Two-class Gaussian blobs in `dims` dimensions with means at ±`separation`/2
/// along a seeded random unit direction and unit covariance.
Dataset synth_classification(std::size_t n, std::uint64_t seed, std::size_t dims = 8,
                             double separation = 4.0);

/// x ~ N(0, I); y = Σ_j w_j·sin(x_j) + ½·x_0·x_1 + noise·N(0, 1) with seeded
/// weights w ~ N(0, 1).
Dataset synth_regression(std::size_t n, std::uint64_t seed, std::size_t dims = 8, double noise = 0.1);

/// Adds N(0, (sigma_scale·std_j)²) noise to column j, std_j taken from x.
Tensor corrupt_gaussian(const Tensor& x, double sigma_scale, std::uint64_t seed);

/// Applies one seeded permutation to the feature columns.
Tensor corrupt_permute_features(const Tensor& x, std::uint64_t seed);

std::string sha256_file(const std::filesystem::path& path);

struct DatasetManifest {
  std::string name;
  std::string path;
  std::string sha256;
  std::size_t rows = 0;
  std::size_t dims = 0;
  int target_column = -1;
  char delimiter = ',';
  bool has_header = false;
};

DatasetManifest describe_dataset(const std::filesystem::path& path, const Dataset& data,
                                 const CsvOptions& options);
nlohmann::json to_json(const DatasetManifest& manifest);

/// Canonical local file layout for the regression benchmarks: one
/// comma-separated file per dataset with a header row, feature columns first
/// and the regression target in the last column.
struct UciDatasetInfo {
  std::string name;
  std::string file;
  std::size_t rows;
  std::size_t dims;
  std::size_t hidden_width;
  std::size_t folds;
  double reference_rmse_mean;
  double reference_rmse_std;
  double reference_nll_mean;
  double reference_nll_std;
};

const std::vector<UciDatasetInfo>& uci_registry();
const UciDatasetInfo& uci_dataset(const std::string& name);

/// Loads a registry dataset from `dir` and checks N and Q.
Dataset load_uci(const std::filesystem::path& dir, const std::string& name);

}  // namespace tinyde
