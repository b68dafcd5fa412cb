#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "tinyde/errors.hpp"
#include "tinyde/experiments.hpp"
#include "tinyde/rng.hpp"
#include "tinyde/uncertainty.hpp"

namespace tinyde {

namespace {

constexpr std::size_t kSyntheticRows = 1000;

class OutputDir {
 public:
  explicit OutputDir(std::filesystem::path dir) : dir_(std::move(dir)) {
    std::error_code ec;
    std::filesystem::create_directories(dir_, ec);
    if (ec) throw ConfigError("cannot create output directory " + dir_.string() + ": " + ec.message());
  }

  std::ofstream open(const std::string& name) {
    std::ofstream out(dir_ / name, std::ios::binary);
    if (!out) throw Error("cannot write " + (dir_ / name).string());
    files_.push_back(name);
    return out;
  }

  const std::vector<std::string>& files() const { return files_; }

 private:
  std::filesystem::path dir_;
  std::vector<std::string> files_;
};

std::string fixed(const char* fmt, double v) {
  if (std::isnan(v)) return "n/a";
  char buf[64];
  std::snprintf(buf, sizeof(buf), fmt, v);
  return buf;
}

std::string pad(const std::string& s, std::size_t width) {
  return s.size() >= width ? s : s + std::string(width - s.size(), ' ');
}

CsvOptions uci_csv_options(const std::string& name) {
  CsvOptions o;
  o.has_header = true;
  o.name = name;
  return o;
}

std::string run_uci(const ExperimentConfig& config, OutputDir& out, nlohmann::json& manifest) {
  const auto dir = resolve_data_dir(config.data_dir);
  std::vector<DatasetResult> results;
  for (const auto& name : config.datasets) {
    const UciDatasetInfo& info = uci_dataset(name);
    const Dataset data = load_uci(dir, name);
    manifest["datasets"].push_back(to_json(describe_dataset(dir / info.file, data, uci_csv_options(name))));
    results.push_back(run_uci_dataset(config, info, data));
    auto folds = out.open("uci_" + name + "_folds.csv");
    write_uci_folds(folds, results.back());
  }
  auto table = out.open("uci_results.csv");
  write_uci_table(table, results);

  std::ostringstream s;
  s << pad("dataset", 22) << pad("N", 8) << pad("Q", 5) << pad("folds", 7) << pad("RMSE", 18) << pad("NLL", 18)
    << pad("RMSE M=1", 18) << "reference RMSE\n";
  for (const auto& r : results) {
    s << pad(r.info.name, 22) << pad(std::to_string(r.info.rows), 8) << pad(std::to_string(r.info.dims), 5)
      << pad(std::to_string(r.folds.size()), 7)
      << pad(fixed("%.3f", r.rmse_mean) + " +- " + fixed("%.3f", r.rmse_se), 18)
      << pad(fixed("%.3f", r.nll_mean) + " +- " + fixed("%.3f", r.nll_se), 18)
      << pad(fixed("%.3f", r.ablation_mean) + " +- " + fixed("%.3f", r.ablation_se), 18)
      << fixed("%.2f", r.info.reference_rmse_mean) << " +- " << fixed("%.2f", r.info.reference_rmse_std) << '\n';
  }
  return s.str();
}

std::string run_ood_task(const ExperimentConfig& config, OutputDir& out) {
  const std::vector<OodResult> results = run_ood(config);
  auto summary = out.open("ood_summary.csv");
  write_ood_summary(summary, results);
  const double max_entropy = std::log(2.0);
  for (const auto& r : results) {
    for (const auto& split : r.splits) {
      const std::string stem = "ood_M" + std::to_string(r.members) + "_" + split.split;
      auto h1 = out.open(stem + "_entropy_hist.csv");
      write_csv(h1, histogram(split.entropy.data(), 0.0, max_entropy, config.bins));
      auto h2 = out.open(stem + "_disagreement_hist.csv");
      write_csv(h2, histogram(split.disagreement.data(), 0.0, 1.0, config.bins));
    }
  }
  std::ostringstream s;
  s << pad("M", 5) << pad("split", 10) << pad("entropy", 12) << pad("disagree", 12) << pad("accuracy", 10)
    << "entropy change vs ID\n";
  for (const auto& r : results) {
    for (const auto& split : r.splits) {
      s << pad(std::to_string(r.members), 5) << pad(split.split, 10) << pad(fixed("%.4f", split.mean_entropy), 12)
        << pad(fixed("%.4f", split.mean_disagreement), 12) << pad(fixed("%.4f", split.accuracy), 10)
        << fixed("%+.3f", split.relative_entropy_change) << '\n';
    }
  }
  return s.str();
}

std::string run_cost_task(const ExperimentConfig& config, OutputDir& out, nlohmann::json& manifest) {
  const auto path = resolve_resource(config.spec_path);
  const LayerSpec spec = load_layer_spec(path);
  manifest["spec"] = {{"path", path.string()}, {"sha256", sha256_file(path)}};
  std::vector<CostMethod> methods;
  for (const auto& m : config.methods) methods.push_back(parse_cost_method(m));
  if (methods.empty()) methods = all_cost_methods();

  const std::string stem = spec.name.empty() ? std::string("spec") : spec.name;
  auto curves = out.open("cost_" + stem + ".csv");
  emit_cost_curves(curves, spec, methods, config.cost_members);

  const SpecTotals t = spec_totals(spec);
  const double share = static_cast<double>(t.norm_learnable) / static_cast<double>(t.learnable());
  auto totals = out.open("cost_" + stem + "_totals.json");
  totals << nlohmann::json{{"weight_params", t.weight_params},
                           {"norm_learnable", t.norm_learnable},
                           {"norm_buffers", t.norm_buffers},
                           {"learnable", t.learnable()},
                           {"stored", t.stored()},
                           {"macs", t.macs},
                           {"branch_params", t.branch_params},
                           {"norm_share_of_learnable", share}}
                .dump(1)
         << '\n';

  std::ostringstream s;
  s << "spec " << stem << ": " << t.learnable() << " learnable parameters, " << t.norm_learnable
    << " in normalization layers (" << fixed("%.3f", 100.0 * share) << "%)\n";
  s << pad("method", 20) << pad("M", 5) << pad("memory", 12) << "latency\n";
  for (CostMethod m : methods) {
    for (std::size_t members : config.cost_members) {
      const CostCensus c = census(spec, m, members);
      s << pad(to_string(m), 20) << pad(std::to_string(members), 5)
        << pad(fixed("%.4f", c.relative_memory.value()), 12) << fixed("%.4f", c.relative_latency.value()) << '\n';
    }
  }
  return s.str();
}

std::string run_cim_task(const ExperimentConfig& config, OutputDir& out, nlohmann::json& manifest) {
  Dataset data;
  if (config.cim_dataset == "synthetic-regression") {
    data = synth_regression(kSyntheticRows, derive_seed(config.seed, 30));
  } else {
    const auto dir = resolve_data_dir(config.data_dir);
    data = load_uci(dir, config.cim_dataset);
    const auto& info = uci_dataset(config.cim_dataset);
    manifest["datasets"].push_back(
        to_json(describe_dataset(dir / info.file, data, uci_csv_options(config.cim_dataset))));
  }
  const CimResult result = run_cim_study(config, data);
  auto table = out.open("cim_fidelity.csv");
  write_cim_table(table, result);
  if (config.trace) {
    auto trace = out.open("cim_trace.txt");
    trace << result.trace;
  }
  std::ostringstream s;
  s << pad("bits", 7) << pad("mean |err|", 14) << pad("max |err|", 14) << pad("RMSE", 10) << "exact RMSE\n";
  for (const auto& r : result.rows) {
    s << pad(r.bits ? std::to_string(*r.bits) : "ideal", 7) << pad(fixed("%.3e", r.mean_abs_error), 14)
      << pad(fixed("%.3e", r.max_abs_error), 14) << pad(fixed("%.4f", r.rmse), 10) << fixed("%.4f", r.rmse_exact)
      << '\n';
  }
  return s.str();
}

}  // namespace

std::string run_experiment(const ExperimentConfig& config) {
  config.validate();
  OutputDir out(config.out_dir);
  nlohmann::json manifest{{"tool", "tinyde"},
                          {"version", TINYDE_VERSION},
                          {"task", to_string(config.task)},
                          {"config", to_json(config)},
                          {"seeds", {{"base", config.seed}, {"derivation", "splitmix64(seed + golden * (stream + 1))"}}},
                          {"datasets", nlohmann::json::array()}};

  std::string summary;
  switch (config.task) {
    case ExperimentTask::uci_regression: summary = run_uci(config, out, manifest); break;
    case ExperimentTask::ood_classification: summary = run_ood_task(config, out); break;
    case ExperimentTask::cost_census: summary = run_cost_task(config, out, manifest); break;
    case ExperimentTask::cim_study: summary = run_cim_task(config, out, manifest); break;
  }
  {
    auto s = out.open("summary.txt");
    s << summary;
  }
  manifest["outputs"] = out.files();
  std::ofstream m(config.out_dir / "manifest.json", std::ios::binary);
  if (!m) throw Error("cannot write " + (config.out_dir / "manifest.json").string());
  m << manifest.dump(1) << '\n';
  return summary;
}

}  // namespace tinyde
