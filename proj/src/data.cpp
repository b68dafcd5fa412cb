#include "tinyde/data.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <memory>
#include <sstream>

#include "tinyde/errors.hpp"
#include "tinyde/rng.hpp"

namespace tinyde {

Dataset Dataset::subset(std::span<const std::size_t> rows) const {
  Dataset out;
  out.name = name;
  out.task = task;
  out.features = gather_rows(features, rows);
  out.targets = gather_rows(targets, rows);
  out.scaling = scaling;
  return out;
}

std::vector<std::size_t> Dataset::labels() const {
  std::vector<std::size_t> out(targets.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<std::size_t>(targets[i]);
  return out;
}

void Dataset::validate() const {
  if (features.rank() != 2 || targets.rank() != 2 || targets.extent(0) != features.extent(0)) {
    throw DataError("dataset '" + name + "' has features " + shape_string(features.shape()) +
                    " and targets " + shape_string(targets.shape()));
  }
  for (double v : features.data())
    if (!std::isfinite(v)) throw DataError("dataset '" + name + "' contains a non-finite feature");
  for (double v : targets.data())
    if (!std::isfinite(v)) throw DataError("dataset '" + name + "' contains a non-finite target");
  if (task == Task::classification) {
    for (double v : targets.data())
      if (v < 0.0 || v != std::floor(v)) {
        throw DataError("dataset '" + name + "' has a non-integer class label");
      }
  }
}

namespace {

std::vector<std::string_view> split_fields(std::string_view line, char delimiter) {
  std::vector<std::string_view> fields;
  if (delimiter == ' ') {
    std::size_t i = 0;
    while (i < line.size()) {
      while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i]))) ++i;
      if (i == line.size()) break;
      std::size_t j = i;
      while (j < line.size() && !std::isspace(static_cast<unsigned char>(line[j]))) ++j;
      fields.push_back(line.substr(i, j - i));
      i = j;
    }
    return fields;
  }
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = line.find(delimiter, start);
    fields.push_back(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return fields;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  if (s.size() >= 2 && s.front() == '"' && s.back() == '"') s = s.substr(1, s.size() - 2);
  return s;
}

}  // namespace

Dataset load_csv(const std::filesystem::path& path, const CsvOptions& options) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open data file: " + path.string());

  std::vector<double> values;
  std::size_t columns = 0, rows = 0, line_no = 0;
  std::string line;
  bool header_pending = options.has_header;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty()) continue;
    if (header_pending) {
      header_pending = false;
      continue;
    }
    const auto fields = split_fields(line, options.delimiter);
    if (columns == 0) {
      columns = fields.size();
      if (columns < 2) {
        throw DataError(path.string() + ":" + std::to_string(line_no) + ": need at least two columns");
      }
    } else if (fields.size() != columns) {
      throw DataError(path.string() + ":" + std::to_string(line_no) + ": expected " +
                      std::to_string(columns) + " fields, found " + std::to_string(fields.size()));
    }
    for (std::size_t c = 0; c < fields.size(); ++c) {
      const auto cell = trim(fields[c]);
      double v = 0.0;
      const auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
      if (ec != std::errc() || ptr != cell.data() + cell.size() || cell.empty() || !std::isfinite(v)) {
        throw DataError(path.string() + ":" + std::to_string(line_no) + ": column " + std::to_string(c + 1) +
                        " is not a finite number: '" + std::string(cell) + "'");
      }
      values.push_back(v);
    }
    ++rows;
  }
  if (rows == 0) throw DataError("data file has no rows: " + path.string());

  const int tc = options.target_column < 0 ? static_cast<int>(columns) + options.target_column
                                           : options.target_column;
  if (tc < 0 || tc >= static_cast<int>(columns)) {
    throw DataError("target column " + std::to_string(options.target_column) + " out of range for " +
                    std::to_string(columns) + " columns in " + path.string());
  }
  const auto target = static_cast<std::size_t>(tc);

  Dataset d;
  d.name = options.name.empty() ? path.stem().string() : options.name;
  d.task = options.task;
  d.features = Tensor({rows, columns - 1});
  d.targets = Tensor({rows, 1});
  for (std::size_t r = 0; r < rows; ++r) {
    std::size_t out_c = 0;
    for (std::size_t c = 0; c < columns; ++c) {
      const double v = values[r * columns + c];
      if (c == target) {
        d.targets(r, 0) = v;
      } else {
        d.features(r, out_c++) = v;
      }
    }
  }
  d.validate();
  return d;
}

std::vector<Fold> make_folds(std::size_t n, std::size_t n_folds, std::uint64_t seed, double test_fraction) {
  if (n_folds < 1) throw ValueError("n_folds must be at least 1");
  if (n < 2) throw ValueError("need at least two rows to split into train and test");
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) throw ValueError("test fraction must lie in (0,1)");
  const auto n_test = std::clamp<std::size_t>(
      static_cast<std::size_t>(std::llround(static_cast<double>(n) * test_fraction)), 1, n - 1);
  std::vector<Fold> folds;
  folds.reserve(n_folds);
  for (std::size_t f = 0; f < n_folds; ++f) {
    Rng rng(derive_seed(seed, f));
    auto perm = rng.permutation(n);
    Fold fold;
    fold.test.assign(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(n_test));
    fold.train.assign(perm.begin() + static_cast<std::ptrdiff_t>(n_test), perm.end());
    std::sort(fold.test.begin(), fold.test.end());
    std::sort(fold.train.begin(), fold.train.end());
    folds.push_back(std::move(fold));
  }
  return folds;
}

std::size_t default_fold_count(const std::string& dataset_name) {
  if (dataset_name == "protein-structure") return 5;
  if (dataset_name == "year-prediction-msd") return 1;
  return 20;
}

Tensor standardize_features(const Tensor& x, const Standardization& params) {
  if (params.identity()) return x;
  if (x.rank() != 2 || x.extent(1) != params.feature_mean.size()) {
    throw DimensionError("standardization fitted on " + std::to_string(params.feature_mean.size()) +
                         " features, got " + shape_string(x.shape()));
  }
  Tensor out = x;
  const std::size_t q = x.extent(1);
  for (std::size_t r = 0; r < x.extent(0); ++r)
    for (std::size_t c = 0; c < q; ++c) {
      double v = x(r, c) - params.feature_mean[c];
      if (params.feature_std[c] > 0.0) v /= params.feature_std[c];
      out(r, c) = v;
    }
  return out;
}

StandardizedPair standardize(const Dataset& train, const Dataset& test) {
  if (train.size() == 0) throw DataError("cannot fit standardization on an empty training split");
  const std::size_t q = train.dims();
  Standardization s;
  const Tensor mean = reduce(train.features, {0}, ReduceKind::mean);
  const Tensor var = reduce(train.features, {0}, ReduceKind::variance);
  s.feature_mean.assign(mean.values().begin(), mean.values().end());
  s.feature_std.resize(q);
  for (std::size_t c = 0; c < q; ++c) {
    const double sd = std::sqrt(var[c]);
    s.feature_std[c] = sd > 1e-12 ? sd : 0.0;
  }
  if (train.task == Task::regression) {
    s.target_mean = reduce(train.targets, {0, 1}, ReduceKind::mean)[0];
    const double sd = std::sqrt(reduce(train.targets, {0, 1}, ReduceKind::variance)[0]);
    s.target_std = sd > 1e-12 ? sd : 1.0;
  }

  auto apply = [&](const Dataset& d) {
    Dataset out = d;
    out.features = standardize_features(d.features, s);
    if (d.task == Task::regression) {
      for (auto& v : out.targets.data()) v = (v - s.target_mean) / s.target_std;
    }
    out.scaling = s;
    return out;
  };
  return {apply(train), apply(test), s};
}

Tensor destandardize_target(const Tensor& pred, const Standardization& params) {
  Tensor out = pred;
  for (auto& v : out.data()) v = v * params.target_std + params.target_mean;
  return out;
}

Dataset synth_classification(std::size_t n, std::uint64_t seed, std::size_t dims, double separation) {
  if (dims == 0) throw ValueError("blob dataset needs at least one dimension");
  Rng rng(seed);
  std::vector<double> direction(dims);
  double norm = 0.0;
  while (norm < 1e-6) {
    norm = 0.0;
    for (auto& v : direction) {
      v = rng.normal();
      norm += v * v;
    }
    norm = std::sqrt(norm);
  }
  for (auto& v : direction) v /= norm;

  Dataset d;
  d.name = "blobs";
  d.task = Task::classification;
  d.features = Tensor({n, dims});
  d.targets = Tensor({n, 1});
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t label = rng.index(2);
    const double sign = label == 1 ? 1.0 : -1.0;
    for (std::size_t j = 0; j < dims; ++j)
      d.features(i, j) = sign * 0.5 * separation * direction[j] + rng.normal();
    d.targets(i, 0) = static_cast<double>(label);
  }
  return d;
}

Dataset synth_regression(std::size_t n, std::uint64_t seed, std::size_t dims, double noise) {
  if (dims == 0) throw ValueError("regression dataset needs at least one dimension");
  Rng rng(seed);
  std::vector<double> w(dims);
  for (auto& v : w) v = rng.normal();

  Dataset d;
  d.name = "synthetic-regression";
  d.task = Task::regression;
  d.features = Tensor({n, dims});
  d.targets = Tensor({n, 1});
  for (std::size_t i = 0; i < n; ++i) {
    double y = 0.0;
    for (std::size_t j = 0; j < dims; ++j) {
      d.features(i, j) = rng.normal();
      y += w[j] * std::sin(d.features(i, j));
    }
    if (dims >= 2) y += 0.5 * d.features(i, 0) * d.features(i, 1);
    d.targets(i, 0) = y + noise * rng.normal();
  }
  return d;
}

Tensor corrupt_gaussian(const Tensor& x, double sigma_scale, std::uint64_t seed) {
  if (x.rank() != 2) throw DimensionError("corrupt_gaussian expects [N,Q], got " + shape_string(x.shape()));
  if (sigma_scale == 0.0 || x.extent(0) == 0) return x;
  const Tensor var = reduce(x, {0}, ReduceKind::variance);
  Rng rng(seed);
  Tensor out = x;
  for (std::size_t r = 0; r < x.extent(0); ++r)
    for (std::size_t c = 0; c < x.extent(1); ++c)
      out(r, c) += sigma_scale * std::sqrt(var[c]) * rng.normal();
  return out;
}

Tensor corrupt_permute_features(const Tensor& x, std::uint64_t seed) {
  if (x.rank() != 2) {
    throw DimensionError("corrupt_permute_features expects [N,Q], got " + shape_string(x.shape()));
  }
  Rng rng(seed);
  const auto perm = rng.permutation(x.extent(1));
  Tensor out(x.shape());
  for (std::size_t r = 0; r < x.extent(0); ++r)
    for (std::size_t c = 0; c < x.extent(1); ++c) out(r, c) = x(r, perm[c]);
  return out;
}

std::string sha256_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open file for hashing: " + path.string());
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), &EVP_MD_CTX_free);
  if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1) {
    throw Error("sha256 initialization failed");
  }
  char buf[1 << 16];
  while (in.read(buf, sizeof(buf)) || in.gcount() > 0) {
    EVP_DigestUpdate(ctx.get(), buf, static_cast<std::size_t>(in.gcount()));
  }
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx.get(), digest, &len);
  std::ostringstream hex;
  for (unsigned int i = 0; i < len; ++i) hex << std::hex << std::setw(2) << std::setfill('0') << int(digest[i]);
  return hex.str();
}

DatasetManifest describe_dataset(const std::filesystem::path& path, const Dataset& data,
                                 const CsvOptions& options) {
  DatasetManifest m;
  m.name = data.name;
  m.path = path.string();
  m.sha256 = sha256_file(path);
  m.rows = data.size();
  m.dims = data.dims();
  m.target_column = options.target_column;
  m.delimiter = options.delimiter;
  m.has_header = options.has_header;
  return m;
}

nlohmann::json to_json(const DatasetManifest& m) {
  return {{"name", m.name},
          {"path", m.path},
          {"sha256", m.sha256},
          {"N", m.rows},
          {"Q", m.dims},
          {"target_column", m.target_column},
          {"delimiter", std::string(1, m.delimiter)},
          {"header", m.has_header}};
}

const std::vector<UciDatasetInfo>& uci_registry() {
  constexpr double na = std::numeric_limits<double>::quiet_NaN();
  // Reference columns: published Tiny-DE test RMSE and NLL (mean, std error).
  static const std::vector<UciDatasetInfo> registry = {
      {"boston-housing", "boston-housing.csv", 506, 13, 50, 20, 2.97, 0.46, 4.92, 1.03},
      {"concrete", "concrete.csv", 1030, 8, 50, 20, 5.51, 0.41, 5.02, 0.62},
      {"energy", "energy.csv", 768, 8, 50, 20, 1.53, 0.38, 1.41, 0.46},
      {"kin8nm", "kin8nm.csv", 8192, 8, 50, 20, 0.07, 0.00, -0.95, 0.01},
      {"naval-propulsion", "naval-propulsion.csv", 11934, 16, 50, 20, 0.00, 0.00, -3.81, 0.08},
      {"power-plant", "power-plant.csv", 9568, 4, 50, 20, 4.48, 0.18, 2.95, 0.05},
      {"protein-structure", "protein-structure.csv", 45730, 9, 100, 5, 3.92, 0.03, 5.05, 0.52},
      {"wine-quality-red", "wine-quality-red.csv", 1599, 11, 50, 20, 0.64, 0.05, 1.28, 0.33},
      {"yacht", "yacht.csv", 308, 6, 50, 20, 3.22, 1.59, 1.37, 0.43},
      {"year-prediction-msd", "year-prediction-msd.csv", 515345, 90, 100, 1, 8.53, na, 7.63, na},
  };
  return registry;
}

const UciDatasetInfo& uci_dataset(const std::string& name) {
  for (const auto& info : uci_registry())
    if (info.name == name) return info;
  throw ConfigError("unknown UCI dataset '" + name + "'");
}

Dataset load_uci(const std::filesystem::path& dir, const std::string& name) {
  const auto& info = uci_dataset(name);
  const auto path = dir / info.file;
  if (!std::filesystem::exists(path)) {
    throw DataError("dataset '" + name + "' not found; expected " + path.string() +
                    " (comma-separated, header row, target in the last column; see scripts/fetch_uci.py)");
  }
  CsvOptions opts;
  opts.has_header = true;
  opts.name = name;
  Dataset d = load_csv(path, opts);
  if (d.size() != info.rows || d.dims() != info.dims) {
    throw DataError("dataset '" + name + "' at " + path.string() + " has N=" + std::to_string(d.size()) +
                    ", Q=" + std::to_string(d.dims()) + "; expected N=" + std::to_string(info.rows) +
                    ", Q=" + std::to_string(info.dims));
  }
  return d;
}

}  // namespace tinyde
