#include "tinyde/training.hpp"

#include <cmath>
#include <functional>
#include <limits>
#include <numbers>
#include <ostream>

#include "tinyde/errors.hpp"
#include "tinyde/rng.hpp"

namespace tinyde {

LossResult loss_mse(const Tensor& pred, const Tensor& target) {
  if (pred.shape() != target.shape()) {
    throw DimensionError("mse: prediction " + shape_string(pred.shape()) + " vs target " +
                         shape_string(target.shape()));
  }
  LossResult r{0.0, Tensor(pred.shape())};
  const double n = static_cast<double>(pred.size());
  if (pred.size() == 0) return r;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = pred[i] - target[i];
    r.value += d * d;
    r.grad[i] = 2.0 * d / n;
  }
  r.value /= n;
  return r;
}

LossResult loss_cross_entropy(const Tensor& logits, std::span<const std::size_t> labels) {
  if (logits.rank() != 2 || logits.extent(0) != labels.size()) {
    throw DimensionError("cross-entropy: logits " + shape_string(logits.shape()) + " vs " +
                         std::to_string(labels.size()) + " labels");
  }
  const std::size_t rows = logits.extent(0), k = logits.extent(1);
  LossResult r{0.0, Tensor(logits.shape())};
  if (rows == 0) return r;
  const double n = static_cast<double>(rows);
  for (std::size_t i = 0; i < rows; ++i) {
    if (labels[i] >= k) {
      throw ValueError("label " + std::to_string(labels[i]) + " outside [0," + std::to_string(k) + ")");
    }
    double mx = logits(i, 0);
    for (std::size_t j = 1; j < k; ++j) mx = std::max(mx, logits(i, j));
    double s = 0.0;
    for (std::size_t j = 0; j < k; ++j) s += std::exp(logits(i, j) - mx);
    const double lse = mx + std::log(s);
    r.value += lse - logits(i, labels[i]);
    for (std::size_t j = 0; j < k; ++j) {
      const double p = std::exp(logits(i, j) - lse);
      r.grad(i, j) = (p - (j == labels[i] ? 1.0 : 0.0)) / n;
    }
  }
  r.value /= n;
  return r;
}

GaussianNllResult loss_gaussian_nll(const Tensor& mean, const Tensor& log_var, const Tensor& target) {
  if (mean.shape() != target.shape() || log_var.shape() != target.shape()) {
    throw DimensionError("gaussian nll: mean " + shape_string(mean.shape()) + ", log_var " +
                         shape_string(log_var.shape()) + ", target " + shape_string(target.shape()));
  }
  GaussianNllResult r{0.0, Tensor(mean.shape()), Tensor(mean.shape())};
  if (mean.size() == 0) return r;
  const double n = static_cast<double>(mean.size());
  const double log2pi = std::log(2.0 * std::numbers::pi);
  for (std::size_t i = 0; i < mean.size(); ++i) {
    const double d = target[i] - mean[i];
    const double inv_var = std::exp(-log_var[i]);
    r.value += 0.5 * (log2pi + log_var[i] + d * d * inv_var);
    r.dmean[i] = -d * inv_var / n;
    r.dlog_var[i] = 0.5 * (1.0 - d * d * inv_var) / n;
  }
  r.value /= n;
  return r;
}

std::string to_string(OptimizerKind kind) { return kind == OptimizerKind::sgd ? "sgd" : "adam"; }

OptimizerKind parse_optimizer(const std::string& s) {
  if (s == "sgd") return OptimizerKind::sgd;
  if (s == "adam") return OptimizerKind::adam;
  throw ValueError("unknown optimizer '" + s + "' (expected sgd|adam)");
}

void Optimizer::update(const std::string& slot, Tensor& param, const Tensor& grad) {
  if (param.shape() != grad.shape()) {
    throw DimensionError("optimizer slot '" + slot + "': parameter " + shape_string(param.shape()) +
                         " vs gradient " + shape_string(grad.shape()));
  }
  const double lr = settings_.learning_rate;
  if (settings_.kind == OptimizerKind::sgd) {
    for (std::size_t i = 0; i < param.size(); ++i) param[i] -= lr * grad[i];
    return;
  }
  auto it = moments_.find(slot);
  if (it == moments_.end()) {
    it = moments_.emplace(slot, Moments{Tensor(param.shape()), Tensor(param.shape())}).first;
  }
  auto& [m, v] = it->second;
  if (m.shape() != param.shape()) throw StateError("optimizer slot '" + slot + "' changed shape");
  const double t = static_cast<double>(step_ == 0 ? 1 : step_);
  const double c1 = 1.0 - std::pow(settings_.beta1, t);
  const double c2 = 1.0 - std::pow(settings_.beta2, t);
  for (std::size_t i = 0; i < param.size(); ++i) {
    const double g = grad[i];
    m[i] = settings_.beta1 * m[i] + (1.0 - settings_.beta1) * g;
    v[i] = settings_.beta2 * v[i] + (1.0 - settings_.beta2) * g * g;
    param[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + settings_.eps);
  }
}

void TrainConfig::validate(bool batch_statistics) const {
  if (epochs < 1) throw ConfigError("epochs must be at least 1");
  if (batch_size < 1) throw ConfigError("batch size must be at least 1");
  if (batch_statistics && batch_size < 2) {
    throw ConfigError("batch-statistics normalization needs a batch size of at least 2");
  }
  if (!(optimizer.learning_rate >= 0.0)) throw ConfigError("learning rate must be nonnegative");
}

std::uint64_t TrainConfig::member_seed(std::size_t m) const {
  if (member_seeds.empty()) return derive_seed(seed, 1000 + m);
  if (m >= member_seeds.size()) {
    throw ConfigError("member_seeds has " + std::to_string(member_seeds.size()) + " entries, member " +
                      std::to_string(m) + " requested");
  }
  return member_seeds[m];
}

bool operator==(const TrainLog& a, const TrainLog& b) {
  if (a.epochs.size() != b.epochs.size()) return false;
  for (std::size_t i = 0; i < a.epochs.size(); ++i) {
    const auto& x = a.epochs[i];
    const auto& y = b.epochs[i];
    const bool metric_equal =
        x.eval_metric == y.eval_metric || (std::isnan(x.eval_metric) && std::isnan(y.eval_metric));
    if (x.epoch != y.epoch || x.train_loss != y.train_loss || !metric_equal) return false;
  }
  return true;
}

void write_csv(std::ostream& out, const TrainLog& log) {
  out << "epoch,train_loss,eval_metric\n";
  const auto old_precision = out.precision(17);
  for (const auto& e : log.epochs) out << e.epoch << ',' << e.train_loss << ',' << e.eval_metric << '\n';
  out.precision(old_precision);
}

std::vector<std::vector<std::size_t>> make_batches(const std::vector<std::size_t>& order,
                                                   std::size_t batch_size) {
  if (batch_size == 0) throw ConfigError("batch size must be positive");
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t start = 0; start < order.size(); start += batch_size) {
    const std::size_t end = std::min(order.size(), start + batch_size);
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                         order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  if (batches.size() >= 2 && batches.back().size() == 1) {
    batches[batches.size() - 2].push_back(batches.back().front());
    batches.pop_back();
  }
  return batches;
}

LossResult batch_loss(LossKind kind, const Tensor& output, const Tensor& targets) {
  if (kind == LossKind::mse) return loss_mse(output, targets);
  std::vector<std::size_t> labels(targets.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (targets[i] < 0.0) throw ValueError("negative class label");
    labels[i] = static_cast<std::size_t>(targets[i]);
  }
  return loss_cross_entropy(output, labels);
}

namespace {

double metric_from_outputs(const Tensor& mean, const Dataset& data) {
  const std::size_t n = data.size();
  if (n == 0) return std::numeric_limits<double>::quiet_NaN();
  if (data.task == Task::classification) {
    std::size_t correct = 0;
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t best = 0;
      for (std::size_t j = 1; j < mean.extent(1); ++j)
        if (mean(i, j) > mean(i, best)) best = j;
      if (best == static_cast<std::size_t>(data.targets[i])) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(n);
  }
  double se = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = mean(i, 0) - data.targets(i, 0);
    se += d * d;
  }
  return std::sqrt(se / static_cast<double>(n)) * data.scaling.target_std;
}

void check_trainable(const TinyDEModel& model, const Dataset& data, const TrainConfig& cfg) {
  const bool batch_stats = model.config().norm_kind == NormKind::batch && model.bank_count() > 0;
  cfg.validate(batch_stats);
  if (data.dims() != model.config().inputs) {
    throw DimensionError("dataset has " + std::to_string(data.dims()) + " features, model expects " +
                         std::to_string(model.config().inputs));
  }
  if (batch_stats && data.size() < 2) {
    throw ConfigError("batch-statistics normalization needs at least 2 training rows");
  }
  if (cfg.loss == LossKind::cross_entropy && model.task() != Task::classification) {
    throw ConfigError("cross-entropy loss requires a classification model");
  }
}

// Runs cfg.epochs epochs. `step` trains on one batch and returns its loss.
TrainLog run_epochs(const Dataset& data, const TrainConfig& cfg, std::uint64_t seed, bool bootstrap,
                    const std::function<double(const Tensor&, const Tensor&)>& step,
                    const std::function<double()>& evaluate) {
  Rng rng(seed);
  TrainLog log;
  const std::size_t n = data.size();
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::vector<std::size_t> order;
    if (bootstrap) {
      order.resize(n);
      for (auto& i : order) i = rng.index(n);
    } else {
      order = rng.permutation(n);
    }
    double total = 0.0;
    std::size_t seen = 0;
    for (const auto& batch : make_batches(order, cfg.batch_size)) {
      const Tensor x = gather_rows(data.features, batch);
      const Tensor t = gather_rows(data.targets, batch);
      total += step(x, t) * static_cast<double>(batch.size());
      seen += batch.size();
    }
    log.epochs.push_back({epoch + 1, seen ? total / static_cast<double>(seen) : 0.0,
                          evaluate ? evaluate() : std::numeric_limits<double>::quiet_NaN()});
  }
  return log;
}

}  // namespace

double evaluate_metric(TinyDEModel& model, const Dataset& data) {
  return metric_from_outputs(predict(model, data.features).mean, data);
}

double evaluate_member_metric(TinyDEModel& model, const Dataset& data, std::size_t member) {
  const auto saved = model.counters();
  model.select_member(member);
  Tensor out = model.forward_member(data.features, Mode::eval);
  if (!saved.empty()) model.select_member(saved.front());
  if (model.task() == Task::classification) out = softmax_last(out);
  return metric_from_outputs(out, data);
}

TrainLog train_full(TinyDEModel& model, const Dataset& data, const TrainConfig& cfg, const Dataset* eval) {
  if (model.mode() != InferenceMode::sequential) {
    throw ModeError("train_full runs on a sequential-mode model");
  }
  for (std::size_t i = 0; i < model.linear_count(); ++i) {
    if (model.linear(i).frozen) throw StateError("train_full needs unfrozen shared weights");
  }
  check_trainable(model, data, cfg);
  Optimizer opt(cfg.optimizer);
  model.select_member(0);

  auto step = [&](const Tensor& x, const Tensor& t) {
    const ForwardTrace trace = model.forward_traced(x, Mode::train);
    const LossResult loss = batch_loss(cfg.loss, trace.output, t);
    const ModelGrads g = model.backward(trace, loss.grad);
    opt.begin_step();
    for (std::size_t i = 0; i < model.linear_count(); ++i) {
      auto& layer = model.linear(i);
      opt.update("linear." + std::to_string(i) + ".weight", layer.weight, g.dweight[i]);
      opt.update("linear." + std::to_string(i) + ".bias", layer.bias, g.dbias[i]);
    }
    for (std::size_t l = 0; l < model.bank_count(); ++l) {
      auto& p = model.bank(l).sequential_member(0);
      opt.update("norm." + std::to_string(l) + ".gamma", p.gamma, g.dgamma[l]);
      opt.update("norm." + std::to_string(l) + ".beta", p.beta, g.dbeta[l]);
    }
    return loss.value;
  };
  std::function<double()> evaluate;
  if (eval) evaluate = [&] { return evaluate_member_metric(model, *eval, 0); };
  TrainLog log = run_epochs(data, cfg, cfg.seed, false, step, evaluate);
  model.reset_counters();
  return log;
}

TrainLog train_member_norms(TinyDEModel& model, std::size_t member, const Dataset& data,
                            const TrainConfig& cfg, const Dataset* eval) {
  if (model.mode() != InferenceMode::sequential) {
    throw ModeError("train_member_norms runs on a sequential-mode model");
  }
  if (!model.shared_frozen()) {
    throw StateError("train_member_norms needs frozen shared weights (call freeze_shared first)");
  }
  if (member >= model.members()) {
    throw IndexError("member " + std::to_string(member) + " out of range for ensemble of " +
                     std::to_string(model.members()));
  }
  check_trainable(model, data, cfg);
  Optimizer opt(cfg.optimizer);
  model.select_member(member);

  auto step = [&](const Tensor& x, const Tensor& t) {
    const ForwardTrace trace = model.forward_traced(x, Mode::train);
    const LossResult loss = batch_loss(cfg.loss, trace.output, t);
    const ModelGrads g = model.backward(trace, loss.grad);
    opt.begin_step();
    for (std::size_t l = 0; l < model.bank_count(); ++l) {
      auto& p = model.bank(l).sequential_member(member);
      opt.update("norm." + std::to_string(l) + ".gamma", p.gamma, g.dgamma[l]);
      opt.update("norm." + std::to_string(l) + ".beta", p.beta, g.dbeta[l]);
    }
    return loss.value;
  };
  std::function<double()> evaluate;
  if (eval) {
    evaluate = [&] {
      const double v = evaluate_member_metric(model, *eval, member);
      model.select_member(member);
      return v;
    };
  }
  TrainLog log = run_epochs(data, cfg, cfg.member_seed(member), cfg.bootstrap, step, evaluate);
  model.reset_counters();
  return log;
}

TrainLog train_single_shot(TinyDEModel& model, const Dataset& data, const TrainConfig& cfg,
                           const Dataset* eval) {
  if (model.mode() != InferenceMode::parallel) {
    throw ModeError("train_single_shot runs on a parallel-mode model");
  }
  check_trainable(model, data, cfg);
  Optimizer opt(cfg.optimizer);
  const std::size_t members = model.members();

  auto step = [&](const Tensor& x, const Tensor& t) {
    const ForwardTrace trace = model.forward_traced(x, Mode::train);
    // Mean over all M·B rows is the mean of the M member losses.
    const LossResult loss = batch_loss(cfg.loss, trace.output, tile_rows(t, members));
    const ModelGrads g = model.backward(trace, loss.grad);
    opt.begin_step();
    for (std::size_t i = 0; i < model.linear_count(); ++i) {
      auto& layer = model.linear(i);
      if (layer.frozen) continue;
      opt.update("linear." + std::to_string(i) + ".weight", layer.weight, g.dweight[i]);
      opt.update("linear." + std::to_string(i) + ".bias", layer.bias, g.dbias[i]);
    }
    for (std::size_t l = 0; l < model.bank_count(); ++l) {
      auto& p = model.bank(l).stacked();
      opt.update("norm." + std::to_string(l) + ".gamma", p.gamma, g.dgamma[l]);
      opt.update("norm." + std::to_string(l) + ".beta", p.beta, g.dbeta[l]);
    }
    return loss.value;
  };
  std::function<double()> evaluate;
  if (eval) evaluate = [&] { return evaluate_metric(model, *eval); };
  return run_epochs(data, cfg, cfg.seed, false, step, evaluate);
}

std::vector<TrainLog> train_two_phase(TinyDEModel& model, const Dataset& data, const TrainConfig& cfg,
                                      bool retrain_member0, const Dataset* eval) {
  std::vector<TrainLog> logs;
  logs.push_back(train_full(model, data, cfg, eval));
  model.freeze_shared();
  for (std::size_t m = retrain_member0 ? 0 : 1; m < model.members(); ++m) {
    model.reinit_norm_member(m);
    logs.push_back(train_member_norms(model, m, data, cfg, eval));
  }
  return logs;
}

}  // namespace tinyde
