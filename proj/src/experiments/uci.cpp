#include <cmath>
#include <limits>
#include <ostream>

#include "tinyde/errors.hpp"
#include "tinyde/experiments.hpp"
#include "tinyde/rng.hpp"
#include "tinyde/uncertainty.hpp"

namespace tinyde {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

// Stable across platforms, unlike std::hash.
std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

double rmse_of(const Tensor& pred, const Tensor& target, double scale) {
  double se = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = pred[i] - target[i];
    se += d * d;
  }
  return std::sqrt(se / static_cast<double>(pred.size())) * scale;
}

std::pair<double, double> mean_and_se(const std::vector<double>& v) {
  if (v.empty()) return {kNaN, kNaN};
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  if (v.size() < 2) return {mean, kNaN};
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  const double sd = std::sqrt(ss / static_cast<double>(v.size() - 1));
  return {mean, sd / std::sqrt(static_cast<double>(v.size()))};
}

TrainConfig train_config(const ExperimentConfig& config, std::uint64_t seed) {
  TrainConfig tc;
  tc.epochs = config.epochs;
  tc.batch_size = config.batch_size;
  tc.optimizer.kind = config.optimizer;
  tc.optimizer.learning_rate = config.learning_rate;
  tc.seed = seed;
  tc.loss = LossKind::mse;
  tc.bootstrap = config.bootstrap;
  return tc;
}

FoldResult run_fold(const ExperimentConfig& config, const Dataset& data, const Fold& fold, std::size_t index,
                    std::size_t width, std::uint64_t fold_seed) {
  const StandardizedPair pair = standardize(data.subset(fold.train), data.subset(fold.test));
  const Dataset& train = pair.train;
  const Dataset& test = pair.test;
  const double scale = pair.params.target_std;

  ModelConfig mc;
  mc.inputs = data.dims();
  mc.hidden.assign(config.hidden_layers, width);
  mc.outputs = 1;
  mc.members = config.members;
  mc.norm_kind = config.norm_kind;
  mc.task = Task::regression;
  const TrainConfig tc = train_config(config, derive_seed(fold_seed, 1));

  FoldResult r;
  r.fold = index;
  TinyDEModel model(mc, derive_seed(fold_seed, 0));
  if (config.mode == InferenceMode::sequential) {
    train_full(model, train, tc);
    r.phase1_rmse = evaluate_member_metric(model, test, 0);
    model.freeze_shared();
    for (std::size_t m = config.retrain_member0 ? 0 : 1; m < model.members(); ++m) {
      model.reinit_norm_member(m);
      train_member_norms(model, m, train, tc);
    }
  } else {
    model = model.to_parallel();
    train_single_shot(model, train, tc);
    r.phase1_rmse = kNaN;
  }

  const Prediction pred = predict(model, test.features);
  r.rmse = rmse_of(pred.mean, test.targets, scale);
  r.nll = config.members >= 2 ? regression_nll(pred.samples, test.targets, scale).mean : kNaN;
  double member_sum = 0.0;
  for (std::size_t m = 0; m < config.members; ++m) member_sum += rmse_of(pred.samples.row(m), test.targets, scale);
  r.member_rmse = member_sum / static_cast<double>(config.members);

  r.ablation_rmse = kNaN;
  if (config.ablation) {
    ModelConfig single = mc;
    single.members = 1;
    TinyDEModel baseline(single, derive_seed(fold_seed, 0));
    if (config.mode == InferenceMode::sequential) {
      train_full(baseline, train, tc);
    } else {
      baseline = baseline.to_parallel();
      train_single_shot(baseline, train, tc);
    }
    r.ablation_rmse = rmse_of(predict(baseline, test.features).mean, test.targets, scale);
  }
  return r;
}

}  // namespace

DatasetResult run_uci_dataset(const ExperimentConfig& config, const UciDatasetInfo& info, const Dataset& data) {
  if (data.dims() == 0 || data.size() < 2) throw DataError("dataset " + info.name + " has too few rows");
  const std::size_t n_folds = config.folds.value_or(info.folds);
  const std::size_t width = config.hidden_width.value_or(info.hidden_width);
  const std::uint64_t dataset_seed = derive_seed(config.seed, fnv1a(info.name));
  const std::vector<Fold> folds = make_folds(data.size(), n_folds, dataset_seed);

  DatasetResult result;
  result.info = info;
  result.width = width;
  result.folds.resize(n_folds);
  parallel_for(n_folds, config.jobs, [&](std::size_t f) {
    result.folds[f] = run_fold(config, data, folds[f], f, width, derive_seed(dataset_seed, 1 + f));
  });

  std::vector<double> rmse, nll, ablation;
  double gap = 0.0;
  for (const auto& f : result.folds) {
    rmse.push_back(f.rmse);
    nll.push_back(f.nll);
    ablation.push_back(f.ablation_rmse);
    gap += f.member_rmse - f.phase1_rmse;
  }
  std::tie(result.rmse_mean, result.rmse_se) = mean_and_se(rmse);
  std::tie(result.nll_mean, result.nll_se) = mean_and_se(nll);
  std::tie(result.ablation_mean, result.ablation_se) = mean_and_se(ablation);
  result.gap_mean = gap / static_cast<double>(n_folds);
  return result;
}

void write_uci_table(std::ostream& out, const std::vector<DatasetResult>& results) {
  out << "dataset,N,Q,folds,width,rmse_mean,rmse_se,nll_mean,nll_se,single_rmse_mean,single_rmse_se,"
         "member_gap,reference_rmse_mean,reference_rmse_std,reference_nll_mean,reference_nll_std\n";
  for (const auto& r : results) {
    out << r.info.name << ',' << r.info.rows << ',' << r.info.dims << ',' << r.folds.size() << ','
        << r.width << ',' << format_number(r.rmse_mean) << ',' << format_number(r.rmse_se) << ','
        << format_number(r.nll_mean) << ',' << format_number(r.nll_se) << ',' << format_number(r.ablation_mean)
        << ',' << format_number(r.ablation_se) << ',' << format_number(r.gap_mean) << ','
        << format_number(r.info.reference_rmse_mean) << ',' << format_number(r.info.reference_rmse_std) << ','
        << format_number(r.info.reference_nll_mean) << ',' << format_number(r.info.reference_nll_std) << '\n';
  }
}

void write_uci_folds(std::ostream& out, const DatasetResult& result) {
  out << "fold,rmse,nll,phase1_rmse,member_rmse,single_rmse\n";
  for (const auto& f : result.folds) {
    out << f.fold << ',' << format_number(f.rmse) << ',' << format_number(f.nll) << ','
        << format_number(f.phase1_rmse) << ',' << format_number(f.member_rmse) << ','
        << format_number(f.ablation_rmse) << '\n';
  }
}

}  // namespace tinyde
