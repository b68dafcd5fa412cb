#include <algorithm>
#include <cmath>
#include <ostream>
#include <sstream>

#include "tinyde/cim.hpp"
#include "tinyde/errors.hpp"
#include "tinyde/experiments.hpp"
#include "tinyde/rng.hpp"

namespace tinyde {

namespace {

double ensemble_rmse(const Tensor& samples, const Tensor& targets, double scale) {
  const Tensor mean = reduce(samples, {0}, ReduceKind::mean);
  double se = 0.0;
  for (std::size_t i = 0; i < mean.size(); ++i) se += (mean[i] - targets[i]) * (mean[i] - targets[i]);
  return std::sqrt(se / static_cast<double>(mean.size())) * scale;
}

}  // namespace

CimResult run_cim_study(const ExperimentConfig& config, const Dataset& data) {
  const Fold fold = make_folds(data.size(), 1, derive_seed(config.seed, 20)).front();
  const StandardizedPair pair = standardize(data.subset(fold.train), data.subset(fold.test));
  const double scale = pair.params.target_std;

  ModelConfig mc;
  mc.inputs = data.dims();
  mc.hidden.assign(config.hidden_layers, config.hidden_width.value_or(50));
  mc.outputs = 1;
  mc.members = config.members;
  mc.norm_kind = config.norm_kind;
  mc.task = Task::regression;

  TrainConfig tc;
  tc.epochs = config.epochs;
  tc.batch_size = config.batch_size;
  tc.optimizer.kind = config.optimizer;
  tc.optimizer.learning_rate = config.learning_rate;
  tc.seed = derive_seed(config.seed, 22);
  tc.bootstrap = config.bootstrap;

  // The simulator models routed inference, so training is always two-phase.
  TinyDEModel model(mc, derive_seed(config.seed, 21));
  train_two_phase(model, pair.train, tc, config.retrain_member0);

  const Tensor& x = pair.test.features;
  const Tensor exact = model.forward_all_sequential(x, Mode::eval);
  const double rmse_exact = ensemble_rmse(exact, pair.test.targets, scale);

  CimResult result;
  auto add_row = [&](std::optional<unsigned> bits, const Tensor& sim) {
    CimRow row;
    row.bits = bits;
    for (std::size_t i = 0; i < sim.size(); ++i) {
      const double e = std::abs(sim[i] - exact[i]);
      row.mean_abs_error += e;
      row.max_abs_error = std::max(row.max_abs_error, e);
    }
    row.mean_abs_error /= static_cast<double>(sim.size());
    row.rmse = ensemble_rmse(sim, pair.test.targets, scale);
    row.rmse_exact = rmse_exact;
    result.rows.push_back(row);
  };

  std::ostringstream trace;
  CimOptions ideal_options;
  if (config.trace) ideal_options.trace = &trace;
  add_row(std::nullopt, run_sequential_inference(model, x, QuantSpec::ideal(model.linear_count()), ideal_options));
  result.trace = trace.str();

  for (unsigned bits : config.bits) {
    const QuantSpec spec = calibrate(model, pair.train.features, bits, bits, config.calib_low, config.calib_high);
    add_row(bits, run_sequential_inference(model, x, spec));
  }
  return result;
}

void write_cim_table(std::ostream& out, const CimResult& result) {
  out << "bits,mean_abs_error,max_abs_error,rmse,rmse_exact,rmse_relative_change\n";
  for (const auto& r : result.rows) {
    out << (r.bits ? std::to_string(*r.bits) : std::string("ideal")) << ',' << format_number(r.mean_abs_error)
        << ',' << format_number(r.max_abs_error) << ',' << format_number(r.rmse) << ','
        << format_number(r.rmse_exact) << ',' << format_number((r.rmse - r.rmse_exact) / r.rmse_exact) << '\n';
  }
}

}  // namespace tinyde
