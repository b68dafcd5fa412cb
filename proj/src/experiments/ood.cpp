#include <ostream>

#include "tinyde/errors.hpp"
#include "tinyde/experiments.hpp"
#include "tinyde/rng.hpp"
#include "tinyde/uncertainty.hpp"

namespace tinyde {

namespace {

constexpr std::size_t kDefaultOodWidth = 50;

double mean_of(const Tensor& t) {
  double s = 0.0;
  for (double v : t.data()) s += v;
  return t.size() ? s / static_cast<double>(t.size()) : 0.0;
}

OodSplitStats score(const std::string& name, const Prediction& pred, const Tensor& targets) {
  OodSplitStats s;
  s.split = name;
  s.entropy = predictive_entropy(pred.samples);
  s.disagreement = max_disagreement(pred.samples).per_sample;
  s.mean_entropy = mean_of(s.entropy);
  s.mean_disagreement = mean_of(s.disagreement);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < pred.mean.extent(0); ++i) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < pred.mean.extent(1); ++k)
      if (pred.mean(i, k) > pred.mean(i, best)) best = k;
    if (best == static_cast<std::size_t>(targets(i, 0))) ++correct;
  }
  s.accuracy = static_cast<double>(correct) / static_cast<double>(pred.mean.extent(0));
  return s;
}

}  // namespace

const OodSplitStats& OodResult::split(const std::string& name) const {
  for (const auto& s : splits)
    if (s.split == name) return s;
  throw IndexError("no OoD split named '" + name + "'");
}

std::vector<OodResult> run_ood(const ExperimentConfig& config) {
  // One draw so that train and test share the blob geometry.
  const Dataset all = synth_classification(config.train_samples + config.test_samples, derive_seed(config.seed, 1),
                                           config.dims, config.separation);
  std::vector<std::size_t> train_rows(config.train_samples), test_rows(config.test_samples);
  for (std::size_t i = 0; i < train_rows.size(); ++i) train_rows[i] = i;
  for (std::size_t i = 0; i < test_rows.size(); ++i) test_rows[i] = config.train_samples + i;
  const StandardizedPair pair = standardize(all.subset(train_rows), all.subset(test_rows));

  const Tensor gaussian = corrupt_gaussian(pair.test.features, config.sigma, derive_seed(config.seed, 2));
  const Tensor permuted = corrupt_permute_features(pair.test.features, derive_seed(config.seed, 3));

  TrainConfig tc;
  tc.epochs = config.epochs;
  tc.batch_size = config.batch_size;
  tc.optimizer.kind = config.optimizer;
  tc.optimizer.learning_rate = config.learning_rate;
  tc.seed = derive_seed(config.seed, 11);
  tc.loss = LossKind::cross_entropy;
  tc.bootstrap = config.bootstrap;

  std::vector<OodResult> results(config.ood_members.size());
  parallel_for(results.size(), config.jobs, [&](std::size_t i) {
    ModelConfig mc;
    mc.inputs = config.dims;
    mc.hidden.assign(config.hidden_layers, config.hidden_width.value_or(kDefaultOodWidth));
    mc.outputs = 2;
    mc.members = config.ood_members[i];
    mc.norm_kind = config.norm_kind;
    mc.task = Task::classification;
    // Every ensemble size starts from the same initialization and phase-1
    // schedule, so differences come from the extra members alone.
    TinyDEModel model(mc, derive_seed(config.seed, 10));
    if (config.mode == InferenceMode::sequential) {
      train_two_phase(model, pair.train, tc, config.retrain_member0);
    } else {
      model = model.to_parallel();
      train_single_shot(model, pair.train, tc);
    }
    OodResult& r = results[i];
    r.members = mc.members;
    r.splits.push_back(score("id", predict(model, pair.test.features), pair.test.targets));
    r.splits.push_back(score("gaussian", predict(model, gaussian), pair.test.targets));
    r.splits.push_back(score("permuted", predict(model, permuted), pair.test.targets));
    const double id = r.splits.front().mean_entropy;
    for (auto& s : r.splits) s.relative_entropy_change = (s.mean_entropy - id) / id;
  });
  return results;
}

void write_ood_summary(std::ostream& out, const std::vector<OodResult>& results) {
  out << "members,split,mean_entropy,mean_disagreement,accuracy,relative_entropy_change\n";
  for (const auto& r : results) {
    for (const auto& s : r.splits) {
      out << r.members << ',' << s.split << ',' << format_number(s.mean_entropy) << ','
          << format_number(s.mean_disagreement) << ',' << format_number(s.accuracy) << ','
          << format_number(s.relative_entropy_change) << '\n';
    }
  }
}

}  // namespace tinyde
