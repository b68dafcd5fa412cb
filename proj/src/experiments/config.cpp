#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <sstream>
#include <thread>

#include "CLI11.hpp"
#include "tinyde/errors.hpp"
#include "tinyde/experiments.hpp"

namespace tinyde {

std::string to_string(ExperimentTask task) {
  switch (task) {
    case ExperimentTask::uci_regression: return "uci-regression";
    case ExperimentTask::ood_classification: return "ood-classification";
    case ExperimentTask::cost_census: return "cost-census";
    case ExperimentTask::cim_study: return "cim-study";
  }
  return "?";
}

void ExperimentConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigError(msg); };
  if (members < 1) fail("members must be at least 1");
  if (hidden_width && *hidden_width < 1) fail("width must be at least 1");
  if (hidden_layers < 1) fail("layers must be at least 1");
  if (epochs < 1) fail("epochs must be at least 1");
  if (batch_size < 1) fail("batch-size must be at least 1");
  if (norm_kind == NormKind::batch && batch_size < 2) fail("batch-size must be at least 2 with batch normalization");
  if (!(learning_rate >= 0.0)) fail("lr must be nonnegative");
  if (jobs < 1) fail("jobs must be at least 1");
  if (folds && *folds < 1) fail("folds must be at least 1");
  switch (task) {
    case ExperimentTask::uci_regression:
      if (datasets.empty()) fail("datasets must list at least one dataset");
      for (const auto& name : datasets) {
        try {
          uci_dataset(name);
        } catch (const Error& e) {
          fail(e.what());
        }
      }
      break;
    case ExperimentTask::ood_classification:
      if (ood_members.empty()) fail("ood-members must not be empty");
      for (auto m : ood_members)
        if (m < 1) fail("ood-members entries must be at least 1");
      if (train_samples < 2 || test_samples < 2) fail("train-samples and test-samples must be at least 2");
      if (dims < 1) fail("dims must be at least 1");
      if (!(sigma >= 0.0)) fail("sigma must be nonnegative");
      if (bins < 1) fail("bins must be at least 1");
      break;
    case ExperimentTask::cost_census:
      if (cost_members.empty()) fail("cost-members must not be empty");
      for (auto m : cost_members)
        if (m < 1) fail("cost-members entries must be at least 1");
      for (const auto& m : methods) {
        try {
          parse_cost_method(m);
        } catch (const Error& e) {
          fail(e.what());
        }
      }
      break;
    case ExperimentTask::cim_study:
      if (bits.empty()) fail("bits must not be empty");
      for (auto b : bits)
        if (b < 1 || b > 52) fail("bits entries must be in [1, 52]");
      if (!(calib_low >= 0.0 && calib_low < calib_high && calib_high <= 1.0))
        fail("calibration quantiles need 0 <= calib-low < calib-high <= 1");
      if (cim_dataset != "synthetic-regression") {
        try {
          uci_dataset(cim_dataset);
        } catch (const Error& e) {
          fail(e.what());
        }
      }
      break;
  }
}

nlohmann::json to_json(const ExperimentConfig& c) {
  nlohmann::json j{{"task", to_string(c.task)},
                   {"seed", c.seed},
                   {"out", c.out_dir.string()},
                   {"jobs", c.jobs},
                   {"members", c.members},
                   {"layers", c.hidden_layers},
                   {"norm", to_string(c.norm_kind)},
                   {"mode", to_string(c.mode)},
                   {"epochs", c.epochs},
                   {"batch_size", c.batch_size},
                   {"optimizer", to_string(c.optimizer)},
                   {"lr", c.learning_rate},
                   {"bootstrap", c.bootstrap},
                   {"retrain_member0", c.retrain_member0}};
  j["width"] = c.hidden_width ? nlohmann::json(*c.hidden_width) : nlohmann::json(nullptr);
  switch (c.task) {
    case ExperimentTask::uci_regression:
      j["datasets"] = c.datasets;
      j["data_dir"] = c.data_dir.string();
      j["folds"] = c.folds ? nlohmann::json(*c.folds) : nlohmann::json(nullptr);
      j["ablation"] = c.ablation;
      break;
    case ExperimentTask::ood_classification:
      j["ood_members"] = c.ood_members;
      j["train_samples"] = c.train_samples;
      j["test_samples"] = c.test_samples;
      j["dims"] = c.dims;
      j["separation"] = c.separation;
      j["sigma"] = c.sigma;
      j["bins"] = c.bins;
      break;
    case ExperimentTask::cost_census:
      j["spec"] = c.spec_path.string();
      j["cost_members"] = c.cost_members;
      j["methods"] = c.methods;
      break;
    case ExperimentTask::cim_study:
      j["bits"] = c.bits;
      j["cim_dataset"] = c.cim_dataset;
      j["data_dir"] = c.data_dir.string();
      j["calib_low"] = c.calib_low;
      j["calib_high"] = c.calib_high;
      j["trace"] = c.trace;
      break;
  }
  return j;
}

ParsedCommand parse_command_line(int argc, const char* const* argv) {
  ExperimentConfig cfg;
  CLI::App app{"Tiny Deep Ensemble experiments", "tinyde"};
  app.set_version_flag("--version", std::string(TINYDE_VERSION));
  app.set_config("--config", "", "TOML configuration file; flags override its values");
  app.allow_config_extras(CLI::config_extras_mode::error);
  app.require_subcommand(1);
  app.fallthrough();

  std::string norm = "batch", mode = "sequential", optimizer = "adam";
  std::size_t width = 0;
  std::size_t folds = 0;
  std::string out = cfg.out_dir.string(), data_dir, spec = cfg.spec_path.string();

  app.add_option("--seed", cfg.seed, "Base seed")->capture_default_str();
  app.add_option("--out", out, "Output directory")->capture_default_str();
  app.add_option("--jobs", cfg.jobs, "Worker threads for independent folds or runs")->capture_default_str();
  app.add_option("--members", cfg.members, "Ensemble size M")->capture_default_str();
  app.add_option("--width", width, "Hidden width (default: 50, or 100 for the large datasets)");
  app.add_option("--layers", cfg.hidden_layers, "Number of hidden layers")->capture_default_str();
  app.add_option("--norm", norm, "Normalization variant")
      ->check(CLI::IsMember({"batch", "layer"}))
      ->capture_default_str();
  app.add_option("--mode", mode, "sequential (two-phase training) or parallel (single-shot training)")
      ->check(CLI::IsMember({"sequential", "parallel"}))
      ->capture_default_str();
  app.add_option("--epochs", cfg.epochs, "Training epochs per phase")->capture_default_str();
  app.add_option("--batch-size", cfg.batch_size, "Minibatch size")->capture_default_str();
  app.add_option("--optimizer", optimizer, "Optimizer")
      ->check(CLI::IsMember({"adam", "sgd"}))
      ->capture_default_str();
  app.add_option("--lr", cfg.learning_rate, "Learning rate")->capture_default_str();
  app.add_flag("--bootstrap,!--no-bootstrap", cfg.bootstrap, "Bootstrap-resample data for each member");
  app.add_flag("--retrain-member0,!--no-retrain-member0", cfg.retrain_member0,
               "Also retrain member 0's normalization in phase 2");

  app.add_option("--datasets", cfg.datasets, "UCI datasets to run")->capture_default_str();
  app.add_option("--data-dir", data_dir, "Directory holding <dataset>.csv files");
  app.add_option("--folds", folds, "Number of train/test splits (default: per dataset)");
  app.add_flag("--ablation,!--no-ablation", cfg.ablation, "Also train a single-member baseline");

  app.add_option("--ood-members", cfg.ood_members, "Ensemble sizes for the OoD study")->capture_default_str();
  app.add_option("--train-samples", cfg.train_samples, "Blob training set size")->capture_default_str();
  app.add_option("--test-samples", cfg.test_samples, "Blob test set size")->capture_default_str();
  app.add_option("--dims", cfg.dims, "Blob dimensionality")->capture_default_str();
  app.add_option("--separation", cfg.separation, "Distance between blob means")->capture_default_str();
  app.add_option("--sigma", cfg.sigma, "Gaussian corruption scale in feature standard deviations")
      ->capture_default_str();
  app.add_option("--bins", cfg.bins, "Histogram bins")->capture_default_str();

  app.add_option("--spec", spec, "Layer spec JSON for the cost census")->capture_default_str();
  app.add_option("--cost-members", cfg.cost_members, "Ensemble sizes for the cost census")->capture_default_str();
  app.add_option("--methods", cfg.methods, "Cost methods (default: all)");

  app.add_option("--bits", cfg.bits, "Converter resolutions for the CIM study")->capture_default_str();
  app.add_option("--cim-dataset", cfg.cim_dataset, "UCI dataset or synthetic-regression")->capture_default_str();
  app.add_option("--calib-low", cfg.calib_low, "Lower calibration quantile")->capture_default_str();
  app.add_option("--calib-high", cfg.calib_high, "Upper calibration quantile")->capture_default_str();
  app.add_flag("--trace,!--no-trace", cfg.trace, "Write the router trace of the ideal run");

  struct Sub {
    const char* name;
    const char* alias;
    const char* help;
    ExperimentTask task;
  };
  const Sub subs[] = {
      {"reproduce-uci", "uci-regression", "UCI regression benchmark", ExperimentTask::uci_regression},
      {"ood", "ood-classification", "Uncertainty under distribution shift", ExperimentTask::ood_classification},
      {"cost", "cost-census", "Memory and latency census", ExperimentTask::cost_census},
      {"cim", "cim-study", "Compute-in-memory fidelity versus converter bits", ExperimentTask::cim_study},
  };
  for (const auto& s : subs) {
    auto* sub = app.add_subcommand(s.name, s.help)->alias(s.alias);
    sub->fallthrough();
    const ExperimentTask task = s.task;
    sub->callback([&cfg, task] { cfg.task = task; });
  }

  ParsedCommand result;
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    result.message = app.help();
    return result;
  } catch (const CLI::CallForAllHelp&) {
    result.message = app.help("", CLI::AppFormatMode::All);
    return result;
  } catch (const CLI::CallForVersion&) {
    result.message = std::string(TINYDE_VERSION) + "\n";
    return result;
  } catch (const CLI::ParseError& e) {
    result.exit_code = kExitConfig;
    result.message = std::string("configuration error: ") + e.what() + "\n";
    return result;
  }

  try {
    cfg.norm_kind = parse_norm_kind(norm);
    cfg.mode = parse_inference_mode(mode);
    cfg.optimizer = parse_optimizer(optimizer);
    if (app.count("--width") || width != 0) cfg.hidden_width = width;
    if (app.count("--folds") || folds != 0) cfg.folds = folds;
    cfg.out_dir = out;
    cfg.data_dir = data_dir;
    cfg.spec_path = spec;
    cfg.validate();
  } catch (const Error& e) {
    result.exit_code = kExitConfig;
    result.message = std::string("configuration error: ") + e.what() + "\n";
    return result;
  }
  result.config = std::move(cfg);
  return result;
}

std::filesystem::path resolve_data_dir(const std::filesystem::path& configured) {
  if (!configured.empty()) return configured;
  if (const char* env = std::getenv("TINYDE_DATA_DIR"); env && *env) return env;
  return std::filesystem::path(TINYDE_SOURCE_DIR) / "data" / "uci";
}

std::filesystem::path resolve_resource(const std::filesystem::path& path) {
  if (path.is_absolute() || std::filesystem::exists(path)) return path;
  const auto in_tree = std::filesystem::path(TINYDE_SOURCE_DIR) / path;
  return std::filesystem::exists(in_tree) ? in_tree : path;
}

void parallel_for(std::size_t n, std::size_t jobs, const std::function<void(std::size_t)>& fn) {
  std::vector<std::exception_ptr> errors(n);
  const std::size_t workers = std::max<std::size_t>(1, std::min(jobs, n));
  if (workers == 1) {
    for (std::size_t i = 0; i < n; ++i) {
      try {
        fn(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < n; i = next++) {
          try {
            fn(i);
          } catch (...) {
            errors[i] = std::current_exception();
          }
        }
      });
    }
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

std::string format_number(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}

}  // namespace tinyde
