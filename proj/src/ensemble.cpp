#include "tinyde/ensemble.hpp"

#include <algorithm>

#include "tinyde/errors.hpp"

namespace tinyde {

std::string to_string(InferenceMode mode) {
  return mode == InferenceMode::parallel ? "parallel" : "sequential";
}

std::string to_string(Task task) {
  return task == Task::classification ? "classification" : "regression";
}

std::string to_string(NormKind kind) { return kind == NormKind::layer ? "layer" : "batch"; }

InferenceMode parse_inference_mode(const std::string& s) {
  if (s == "sequential") return InferenceMode::sequential;
  if (s == "parallel") return InferenceMode::parallel;
  throw ValueError("unknown inference mode '" + s + "' (expected sequential|parallel)");
}

Task parse_task(const std::string& s) {
  if (s == "regression") return Task::regression;
  if (s == "classification") return Task::classification;
  throw ValueError("unknown task '" + s + "' (expected regression|classification)");
}

NormKind parse_norm_kind(const std::string& s) {
  if (s == "batch") return NormKind::batch;
  if (s == "layer") return NormKind::layer;
  throw ValueError("unknown normalization kind '" + s + "' (expected batch|layer)");
}

void ModelConfig::validate() const {
  if (inputs == 0 || outputs == 0) throw ConfigError("model needs at least one input and one output");
  if (members == 0) throw ConfigError("ensemble size M must be at least 1");
  for (auto h : hidden)
    if (h == 0) throw ConfigError("hidden layer widths must be positive");
  if (!(norm_eps > 0.0)) throw ConfigError("normalization eps must be positive");
  if (!(norm_momentum > 0.0 && norm_momentum < 1.0)) {
    throw ConfigError("normalization momentum must lie in (0,1)");
  }
}

// NormBank -------------------------------------------------------------------

NormBank::NormBank(std::size_t members, std::size_t features, NormKind kind, double eps, double momentum)
    : storage_(std::vector<NormParams>(members, NormParams::init(features, kind, eps, momentum))) {
  if (members == 0) throw ValueError("a normalization bank needs at least one member");
}

NormBank::NormBank(std::vector<NormParams> members) : storage_(std::move(members)) {
  const auto& list = std::get<std::vector<NormParams>>(storage_);
  if (list.empty()) throw ValueError("a normalization bank needs at least one member");
  // Validates that members are stackable.
  (void)EnsembleNormParams::from_members(list);
}

NormBank::NormBank(EnsembleNormParams stacked) : storage_(std::move(stacked)) {}

std::size_t NormBank::members() const {
  if (is_parallel()) return std::get<EnsembleNormParams>(storage_).members;
  return std::get<std::vector<NormParams>>(storage_).size();
}

std::size_t NormBank::features() const {
  if (is_parallel()) return std::get<EnsembleNormParams>(storage_).features();
  return std::get<std::vector<NormParams>>(storage_).front().features();
}

NormParams NormBank::member(std::size_t m) const {
  if (is_parallel()) return std::get<EnsembleNormParams>(storage_).member(m);
  return sequential_member(m);
}

void NormBank::set_member(std::size_t m, const NormParams& params) {
  if (is_parallel()) {
    std::get<EnsembleNormParams>(storage_).set_member(m, params);
    return;
  }
  NormParams& dst = sequential_member(m);
  if (params.features() != dst.features()) throw DimensionError("member parameters have the wrong feature count");
  dst = params;
}

void NormBank::reinit_member(std::size_t m) {
  NormParams p = member(m);
  p.reset();
  set_member(m, p);
}

NormParams& NormBank::sequential_member(std::size_t m) {
  return const_cast<NormParams&>(std::as_const(*this).sequential_member(m));
}

const NormParams& NormBank::sequential_member(std::size_t m) const {
  if (is_parallel()) throw ModeError("normalization bank holds stacked (parallel) parameters");
  const auto& list = std::get<std::vector<NormParams>>(storage_);
  if (m >= list.size()) {
    throw IndexError("member " + std::to_string(m) + " out of range for ensemble of " +
                     std::to_string(list.size()));
  }
  return list[m];
}

EnsembleNormParams& NormBank::stacked() {
  return const_cast<EnsembleNormParams&>(std::as_const(*this).stacked());
}

const EnsembleNormParams& NormBank::stacked() const {
  if (!is_parallel()) throw ModeError("normalization bank holds per-member (sequential) parameters");
  return std::get<EnsembleNormParams>(storage_);
}

void NormBank::to_parallel() {
  if (is_parallel()) return;
  storage_ = EnsembleNormParams::from_members(std::get<std::vector<NormParams>>(storage_));
}

void NormBank::to_sequential() {
  if (!is_parallel()) return;
  storage_ = std::get<EnsembleNormParams>(storage_).unstack();
}

// TinyDEModel ----------------------------------------------------------------

TinyDEModel::TinyDEModel(const ModelConfig& config, std::uint64_t seed) : config_(config) {
  config_.validate();
  Rng rng(seed);
  std::size_t width = config_.inputs;
  for (auto h : config_.hidden) {
    linears_.push_back(LinearLayer::uniform_init(width, h, rng));
    banks_.emplace_back(config_.members, h, config_.norm_kind, config_.norm_eps, config_.norm_momentum);
    width = h;
  }
  linears_.push_back(LinearLayer::uniform_init(width, config_.outputs, rng));
  counters_.assign(banks_.size(), 0);
}

TinyDEModel::TinyDEModel(const ModelConfig& config, std::vector<LinearLayer> linears,
                         std::vector<NormBank> banks, InferenceMode mode)
    : config_(config), mode_(mode), linears_(std::move(linears)), banks_(std::move(banks)) {
  config_.validate();
  if (linears_.size() != config_.hidden.size() + 1 || banks_.size() != config_.hidden.size()) {
    throw DimensionError("layer list does not match the configured topology");
  }
  std::size_t width = config_.inputs;
  for (std::size_t l = 0; l < linears_.size(); ++l) {
    const std::size_t out = l < config_.hidden.size() ? config_.hidden[l] : config_.outputs;
    const auto& lin = linears_[l];
    if (lin.weight.shape() != Shape{out, width} || lin.bias.shape() != Shape{out}) {
      throw DimensionError("linear layer " + std::to_string(l) + " has shape " +
                           shape_string(lin.weight.shape()) + ", expected " + shape_string({out, width}));
    }
    if (l < banks_.size()) {
      if (banks_[l].members() != config_.members || banks_[l].features() != out) {
        throw DimensionError("normalization bank " + std::to_string(l) + " does not match the topology");
      }
      if (banks_[l].is_parallel() != (mode_ == InferenceMode::parallel)) {
        throw ModeError("normalization bank storage disagrees with the model mode");
      }
    }
    width = out;
  }
  counters_.assign(banks_.size(), 0);
}

std::size_t TinyDEModel::active_member() const {
  if (counters_.empty()) return 0;
  const auto c = counters_.front();
  for (auto v : counters_) {
    if (v != c) throw StateError("per-layer counters fell out of lockstep");
  }
  return c;
}

void TinyDEModel::advance_counters() {
  require_mode(InferenceMode::sequential, "advance_counters");
  const auto m = static_cast<std::uint32_t>(config_.members);
  for (auto& c : counters_) c = (c + 1) % m;
}

void TinyDEModel::reset_counters() { std::fill(counters_.begin(), counters_.end(), 0u); }

void TinyDEModel::select_member(std::size_t m) {
  if (m >= config_.members) {
    throw IndexError("member " + std::to_string(m) + " out of range for ensemble of " +
                     std::to_string(config_.members));
  }
  std::fill(counters_.begin(), counters_.end(), static_cast<std::uint32_t>(m));
}

void TinyDEModel::require_mode(InferenceMode mode, const char* op) const {
  if (mode_ != mode) {
    throw ModeError(std::string(op) + " requires a " + to_string(mode) + "-mode model, this one is " +
                    to_string(mode_));
  }
}

void TinyDEModel::check_input(const Tensor& x) const {
  if (x.rank() != 2 || x.extent(1) != config_.inputs) {
    throw DimensionError("model expects input [B," + std::to_string(config_.inputs) + "], got " +
                         shape_string(x.shape()));
  }
}

ForwardTrace TinyDEModel::forward_traced(const Tensor& x, Mode mode) {
  check_input(x);
  ForwardTrace trace;
  trace.mode = mode_;
  Tensor h;
  if (mode_ == InferenceMode::parallel) {
    trace.tiles = config_.members;
    h = tile_rows(x, config_.members);
  } else {
    trace.member = active_member();
    h = x;
  }
  for (std::size_t l = 0; l < banks_.size(); ++l) {
    auto lin = linear_forward(linears_[l], h);
    trace.linear.push_back(std::move(lin.cache));
    if (mode_ == InferenceMode::parallel) {
      auto nf = ensemblenorm_forward(banks_[l].stacked(), lin.output, mode);
      h = std::move(nf.output);
      trace.norms.emplace_back(std::move(nf.cache));
    } else {
      // Each layer routes through the member its own counter names.
      auto nf = norm_forward(banks_[l].sequential_member(counters_[l]), lin.output, mode);
      h = std::move(nf.output);
      trace.norms.emplace_back(std::move(nf.cache));
    }
    auto act = relu6_forward(h);
    h = std::move(act.output);
    trace.activations.push_back(std::move(act.cache));
  }
  auto head = linear_forward(linears_.back(), h);
  trace.linear.push_back(std::move(head.cache));
  trace.output = std::move(head.output);
  return trace;
}

ModelGrads TinyDEModel::backward(const ForwardTrace& trace, const Tensor& dout) const {
  if (trace.linear.size() != linears_.size() || trace.norms.size() != banks_.size()) {
    throw StateError("forward trace does not belong to this model");
  }
  ModelGrads g;
  g.mode = trace.mode;
  g.member = trace.member;
  g.dweight.resize(linears_.size());
  g.dbias.resize(linears_.size());
  g.dgamma.resize(banks_.size());
  g.dbeta.resize(banks_.size());

  auto head = linear_backward(trace.linear.back(), dout);
  g.dweight.back() = std::move(head.dweight);
  g.dbias.back() = std::move(head.dbias);
  Tensor d = std::move(head.dinput);
  for (std::size_t l = banks_.size(); l-- > 0;) {
    d = relu6_backward(trace.activations[l], d);
    NormGrads ng = std::holds_alternative<EnsembleNormCache>(trace.norms[l])
                       ? ensemblenorm_backward(std::get<EnsembleNormCache>(trace.norms[l]), d)
                       : norm_backward(std::get<NormCache>(trace.norms[l]), d);
    g.dgamma[l] = std::move(ng.dgamma);
    g.dbeta[l] = std::move(ng.dbeta);
    auto lg = linear_backward(trace.linear[l], ng.dinput);
    g.dweight[l] = std::move(lg.dweight);
    g.dbias[l] = std::move(lg.dbias);
    d = std::move(lg.dinput);
  }
  return g;
}

Tensor TinyDEModel::forward_member(const Tensor& x, Mode mode) {
  require_mode(InferenceMode::sequential, "forward_member");
  return forward_traced(x, mode).output;
}

Tensor stack_members(const Tensor& rows, std::size_t members) {
  if (rows.rank() != 2 || members == 0 || rows.extent(0) % members != 0) {
    throw DimensionError("cannot split " + shape_string(rows.shape()) + " into " +
                         std::to_string(members) + " member blocks");
  }
  return rows.reshape({members, rows.extent(0) / members, rows.extent(1)});
}

Tensor TinyDEModel::forward_all_sequential(const Tensor& x, Mode mode) {
  require_mode(InferenceMode::sequential, "forward_all_sequential");
  check_input(x);
  reset_counters();
  std::vector<Tensor> outputs;
  outputs.reserve(config_.members);
  for (std::size_t m = 0; m < config_.members; ++m) {
    outputs.push_back(forward_member(x, mode));
    advance_counters();
  }
  // M advances from 0 wrap back to 0.
  return stack_members(concat_rows(outputs), config_.members);
}

Tensor TinyDEModel::forward_parallel(const Tensor& x, Mode mode) {
  require_mode(InferenceMode::parallel, "forward_parallel");
  return stack_members(forward_traced(x, mode).output, config_.members);
}

Tensor TinyDEModel::forward_parallel(const Tensor& x) const {
  require_mode(InferenceMode::parallel, "forward_parallel");
  check_input(x);
  Tensor h = tile_rows(x, config_.members);
  for (std::size_t l = 0; l < banks_.size(); ++l) {
    h = linear_forward(linears_[l], h).output;
    h = ensemblenorm_forward(banks_[l].stacked(), h).output;
    h = map(h, UnaryFn::relu6);
  }
  return stack_members(linear_forward(linears_.back(), h).output, config_.members);
}

void TinyDEModel::freeze_shared() {
  for (auto& l : linears_) l.frozen = true;
}

bool TinyDEModel::shared_frozen() const {
  return std::all_of(linears_.begin(), linears_.end(), [](const auto& l) { return l.frozen; });
}

void TinyDEModel::reinit_norm_member(std::size_t m) {
  if (m >= config_.members) {
    throw IndexError("member " + std::to_string(m) + " out of range for ensemble of " +
                     std::to_string(config_.members));
  }
  for (auto& b : banks_) b.reinit_member(m);
}

TinyDEModel TinyDEModel::to_parallel() const {
  TinyDEModel out = *this;
  for (auto& b : out.banks_) b.to_parallel();
  out.mode_ = InferenceMode::parallel;
  out.reset_counters();
  return out;
}

TinyDEModel TinyDEModel::to_sequential() const {
  TinyDEModel out = *this;
  for (auto& b : out.banks_) b.to_sequential();
  out.mode_ = InferenceMode::sequential;
  out.reset_counters();
  return out;
}

MemberView TinyDEModel::member_view(std::size_t m) const {
  if (m >= config_.members) {
    throw IndexError("member " + std::to_string(m) + " out of range for ensemble of " +
                     std::to_string(config_.members));
  }
  MemberView v;
  for (const auto& l : linears_) v.linears.push_back(&l);
  for (const auto& b : banks_) v.norms.push_back(b.member(m));
  return v;
}

std::size_t TinyDEModel::shared_parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : linears_) n += l.weight.size() + l.bias.size();
  return n;
}

ParamArchive TinyDEModel::export_params() const {
  ParamArchive archive;
  for (std::size_t i = 0; i < linears_.size(); ++i) {
    archive.push_back({"linear." + std::to_string(i) + ".weight", linears_[i].weight});
    archive.push_back({"linear." + std::to_string(i) + ".bias", linears_[i].bias});
  }
  for (std::size_t l = 0; l < banks_.size(); ++l) {
    const EnsembleNormParams p = banks_[l].is_parallel()
                                     ? banks_[l].stacked()
                                     : EnsembleNormParams::from_members([&] {
                                         std::vector<NormParams> v;
                                         for (std::size_t m = 0; m < banks_[l].members(); ++m)
                                           v.push_back(banks_[l].sequential_member(m));
                                         return v;
                                       }());
    const std::string prefix = "norm." + std::to_string(l) + ".";
    archive.push_back({prefix + "gamma", p.gamma});
    archive.push_back({prefix + "beta", p.beta});
    archive.push_back({prefix + "running_mean", p.running_mean});
    archive.push_back({prefix + "running_var", p.running_var});
  }
  return archive;
}

bool operator==(const TinyDEModel& a, const TinyDEModel& b) {
  return a.config_ == b.config_ && a.mode_ == b.mode_ && a.linears_ == b.linears_ &&
         a.banks_ == b.banks_ && a.counters_ == b.counters_;
}

Prediction predict(TinyDEModel& model, const Tensor& x) {
  Tensor samples = model.mode() == InferenceMode::parallel
                       ? std::as_const(model).forward_parallel(x)
                       : model.forward_all_sequential(x, Mode::eval);
  if (model.task() == Task::classification) samples = softmax_last(samples);
  Tensor mean = reduce(samples, {0}, ReduceKind::mean);
  return {std::move(mean), std::move(samples)};
}

}  // namespace tinyde
