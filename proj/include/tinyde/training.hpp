#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "tinyde/data.hpp"
#include "tinyde/ensemble.hpp"

namespace tinyde {

struct LossResult {
  double value = 0.0;
  Tensor grad;
};

/// mean((pred - target)²) over every element.
LossResult loss_mse(const Tensor& pred, const Tensor& target);

/// Mean softmax cross-entropy over rows, via log-sum-exp.
LossResult loss_cross_entropy(const Tensor& logits, std::span<const std::size_t> labels);

struct GaussianNllResult {
  double value = 0.0;
  Tensor dmean;
  Tensor dlog_var;
};

/// mean(0.5·(log 2π + log_var + (target − mean)²·exp(−log_var)))
GaussianNllResult loss_gaussian_nll(const Tensor& mean, const Tensor& log_var, const Tensor& target);

enum class OptimizerKind { sgd, adam };
enum class LossKind { mse, cross_entropy };

std::string to_string(OptimizerKind kind);
OptimizerKind parse_optimizer(const std::string& s);

struct OptimizerSettings {
  OptimizerKind kind = OptimizerKind::adam;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// SGD or Adam over an explicit list of parameter tensors. Moment buffers are
/// keyed by a caller-chosen slot name and created on first use.
class Optimizer {
 public:
  explicit Optimizer(OptimizerSettings settings) : settings_(settings) {}

  /// Starts a new step; Adam's bias correction uses the step count.
  void begin_step() { ++step_; }
  void update(const std::string& slot, Tensor& param, const Tensor& grad);

  std::uint64_t steps() const { return step_; }
  const OptimizerSettings& settings() const { return settings_; }

 private:
  struct Moments {
    Tensor first;
    Tensor second;
  };

  OptimizerSettings settings_;
  std::uint64_t step_ = 0;
  std::map<std::string, Moments> moments_;
};

struct TrainConfig {
  std::size_t epochs = 40;
  std::size_t batch_size = 32;
  OptimizerSettings optimizer;
  std::uint64_t seed = 0;
  LossKind loss = LossKind::mse;
  bool bootstrap = false;
  /// Per-member seeds for phase-2 shuffling and bootstrap draws; derived
  /// from `seed` when empty.
  std::vector<std::uint64_t> member_seeds;

  void validate(bool batch_statistics) const;
  std::uint64_t member_seed(std::size_t m) const;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double eval_metric = 0.0;  // NaN when no evaluation split was supplied
};

struct TrainLog {
  std::vector<EpochRecord> epochs;

  friend bool operator==(const TrainLog&, const TrainLog&);
};

void write_csv(std::ostream& out, const TrainLog& log);

/// Splits a shuffled index list into minibatches of `batch_size`; a trailing
/// single row is folded into the previous batch so every batch has B ≥ 2.
std::vector<std::vector<std::size_t>> make_batches(const std::vector<std::size_t>& order,
                                                   std::size_t batch_size);

/// Phase 1: trains shared weights and member-0 normalization with the
/// counters pinned to 0.
TrainLog train_full(TinyDEModel& model, const Dataset& data, const TrainConfig& cfg,
                    const Dataset* eval = nullptr);

/// Phase 2: trains only member m's normalization parameters on a frozen
/// trunk. Optionally draws a bootstrap resample of size N each epoch.
TrainLog train_member_norms(TinyDEModel& model, std::size_t member, const Dataset& data,
                            const TrainConfig& cfg, const Dataset* eval = nullptr);

/// Joint training of all members on a parallel-mode model: each minibatch is
/// tiled M times and the loss is the mean of the member losses.
TrainLog train_single_shot(TinyDEModel& model, const Dataset& data, const TrainConfig& cfg,
                           const Dataset* eval = nullptr);

/// Phase 1 followed by a fresh phase-2 pass for every member. When
/// `retrain_member0` is false member 0 keeps its phase-1 normalization.
/// Returns the phase-1 log followed by each member's log.
std::vector<TrainLog> train_two_phase(TinyDEModel& model, const Dataset& data, const TrainConfig& cfg,
                                      bool retrain_member0 = false, const Dataset* eval = nullptr);

/// Loss and gradient for a batch of model outputs; for classification the
/// targets tensor holds class ids.
LossResult batch_loss(LossKind kind, const Tensor& output, const Tensor& targets);

/// RMSE (regression, rescaled by the data's target std) or accuracy
/// (classification) of the ensemble mean prediction.
double evaluate_metric(TinyDEModel& model, const Dataset& data);

/// Same metric for a single member of a sequential-mode model.
double evaluate_member_metric(TinyDEModel& model, const Dataset& data, std::size_t member);

}  // namespace tinyde
