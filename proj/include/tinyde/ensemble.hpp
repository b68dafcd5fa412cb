#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <variant>
#include <vector>

#include "tinyde/layers.hpp"
#include "tinyde/serialize.hpp"

namespace tinyde {

enum class InferenceMode { sequential, parallel };
enum class Task { regression, classification };

std::string to_string(InferenceMode mode);
std::string to_string(Task task);
std::string to_string(NormKind kind);
InferenceMode parse_inference_mode(const std::string& s);
Task parse_task(const std::string& s);
NormKind parse_norm_kind(const std::string& s);

/// Topology of an MLP ensemble: every hidden layer is Linear -> NormBank ->
/// ReLU6, and a plain Linear head maps to the outputs.
struct ModelConfig {
  std::size_t inputs = 1;
  std::vector<std::size_t> hidden;
  std::size_t outputs = 1;
  std::size_t members = 1;
  NormKind norm_kind = NormKind::batch;
  Task task = Task::regression;
  double norm_eps = kDefaultNormEps;
  double norm_momentum = kDefaultNormMomentum;

  void validate() const;
  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// M normalization parameter sets sharing one layer position. Sequential
/// storage keeps a list of per-member parameters; parallel storage keeps one
/// stacked EnsembleNormParams. The two convert into each other losslessly.
class NormBank {
 public:
  NormBank() = default;
  NormBank(std::size_t members, std::size_t features, NormKind kind, double eps, double momentum);
  explicit NormBank(std::vector<NormParams> members);
  explicit NormBank(EnsembleNormParams stacked);

  std::size_t members() const;
  std::size_t features() const;
  bool is_parallel() const { return std::holds_alternative<EnsembleNormParams>(storage_); }

  NormParams member(std::size_t m) const;
  void set_member(std::size_t m, const NormParams& params);
  void reinit_member(std::size_t m);

  /// Mutable access to one member; sequential storage only.
  NormParams& sequential_member(std::size_t m);
  const NormParams& sequential_member(std::size_t m) const;

  /// Stacked access; parallel storage only.
  EnsembleNormParams& stacked();
  const EnsembleNormParams& stacked() const;

  void to_parallel();
  void to_sequential();

  friend bool operator==(const NormBank&, const NormBank&) = default;

 private:
  std::variant<std::vector<NormParams>, EnsembleNormParams> storage_;
};

/// Pointers to the shared layers plus copies of one member's norm parameters.
struct MemberView {
  std::vector<const LinearLayer*> linears;
  std::vector<NormParams> norms;
};

struct ForwardTrace {
  InferenceMode mode = InferenceMode::sequential;
  std::size_t member = 0;  // sequential traces only
  std::size_t tiles = 1;   // parallel traces: M
  std::vector<LinearCache> linear;
  std::vector<std::variant<NormCache, EnsembleNormCache>> norms;
  std::vector<Relu6Cache> activations;
  Tensor output;
};

struct ModelGrads {
  InferenceMode mode = InferenceMode::sequential;
  std::size_t member = 0;
  std::vector<Tensor> dweight;
  std::vector<Tensor> dbias;
  std::vector<Tensor> dgamma;  // [F] sequential, [M, F] parallel
  std::vector<Tensor> dbeta;
};

/// Shared-weight ensemble in which members differ only in their
/// normalization parameters.
///
/// In sequential mode every NormBank carries a counter selecting the member
/// used for the next pass. Counters move in lockstep: advance_counters()
/// bumps all of them once per full forward pass. In parallel mode the input
/// is tiled M times and each NormBank normalizes the M blocks independently.
class TinyDEModel {
 public:
  TinyDEModel(const ModelConfig& config, std::uint64_t seed);
  TinyDEModel(const ModelConfig& config, std::vector<LinearLayer> linears, std::vector<NormBank> banks,
              InferenceMode mode);

  const ModelConfig& config() const { return config_; }
  std::size_t members() const { return config_.members; }
  InferenceMode mode() const { return mode_; }
  Task task() const { return config_.task; }

  std::size_t linear_count() const { return linears_.size(); }
  std::size_t bank_count() const { return banks_.size(); }
  LinearLayer& linear(std::size_t i) { return linears_.at(i); }
  const LinearLayer& linear(std::size_t i) const { return linears_.at(i); }
  NormBank& bank(std::size_t i) { return banks_.at(i); }
  const NormBank& bank(std::size_t i) const { return banks_.at(i); }

  const std::vector<std::uint32_t>& counters() const { return counters_; }
  /// The member all counters currently point at.
  std::size_t active_member() const;
  void advance_counters();
  void reset_counters();
  /// Sets every counter to m; used to pin a member during training.
  void select_member(std::size_t m);

  /// One pass with the member selected by the counters; does not advance them.
  Tensor forward_member(const Tensor& x, Mode mode);

  /// M passes from counters = 0, advancing between passes and leaving the
  /// counters at 0 afterwards. Returns [M, B, K].
  Tensor forward_all_sequential(const Tensor& x, Mode mode);

  /// Single pass over the input tiled M times. Returns [M, B, K].
  Tensor forward_parallel(const Tensor& x, Mode mode);
  /// Eval-mode parallel pass on an immutable model.
  Tensor forward_parallel(const Tensor& x) const;

  ForwardTrace forward_traced(const Tensor& x, Mode mode);
  ModelGrads backward(const ForwardTrace& trace, const Tensor& dout) const;

  void freeze_shared();
  bool shared_frozen() const;
  void reinit_norm_member(std::size_t m);

  TinyDEModel to_parallel() const;
  TinyDEModel to_sequential() const;

  MemberView member_view(std::size_t m) const;

  /// Weight and bias values stored once for all members.
  std::size_t shared_parameter_count() const;

  ParamArchive export_params() const;

  friend bool operator==(const TinyDEModel&, const TinyDEModel&);

 private:
  void require_mode(InferenceMode mode, const char* op) const;
  void check_input(const Tensor& x) const;

  ModelConfig config_;
  InferenceMode mode_ = InferenceMode::sequential;
  std::vector<LinearLayer> linears_;
  std::vector<NormBank> banks_;
  std::vector<std::uint32_t> counters_;
};

struct Prediction {
  Tensor mean;     // [B, K]
  Tensor samples;  // [M, B, K]; class probabilities for classification
};

/// Eval-mode ensemble prediction. Classification averages per-member softmax
/// probabilities; regression averages raw outputs.
Prediction predict(TinyDEModel& model, const Tensor& x);

/// Reshapes [M·B, K] member-major rows into [M, B, K].
Tensor stack_members(const Tensor& rows, std::size_t members);

// Checkpoints ----------------------------------------------------------------
//
// JSON: {"format":"tinyde-model","version":1,"header":{...},"params":<params JSON>}
// Binary: magic "TDMODEL1", u32 version, u32 header byte length, header JSON
// (UTF-8), then a binary parameter archive. The header records members,
// topology, norm settings, inference mode, task and frozen flag.
inline constexpr std::uint32_t kCheckpointVersion = 1;

enum class CheckpointFormat { binary, json };

nlohmann::json checkpoint_header(const TinyDEModel& model);
void save_checkpoint(const TinyDEModel& model, const std::filesystem::path& path,
                     CheckpointFormat format = CheckpointFormat::binary);
TinyDEModel load_checkpoint(const std::filesystem::path& path);

nlohmann::json checkpoint_to_json(const TinyDEModel& model);
TinyDEModel checkpoint_from_json(const nlohmann::json& doc);

}  // namespace tinyde
