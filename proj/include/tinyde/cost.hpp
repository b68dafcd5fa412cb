#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "json.hpp"

namespace tinyde {

enum class LayerKind { linear, conv, norm, activation };

/// One entry of an abstract network description used only for counting.
///
/// linear: fan_in·fan_out + fan_out parameters, fan_in·fan_out MACs.
/// conv:   kernel_area·fan_in·fan_out + fan_out parameters and
///         kernel_area·fan_in·fan_out·output_area MACs.
/// norm:   2·channels learnable parameters plus 2·channels running buffers
///         when `running_stats` is set; 2·channels·output_area MACs.
/// activation: no parameters, no MACs.
struct LayerEntry {
  LayerKind kind = LayerKind::linear;
  std::uint64_t fan_in = 0;
  std::uint64_t fan_out = 0;
  std::uint64_t kernel_area = 1;
  std::uint64_t channels = 0;
  std::uint64_t output_area = 1;  // spatial positions per output channel
  bool running_stats = true;
  bool branch = false;  // replicated per member by the branch-ensemble baseline
};

struct LayerSpec {
  std::string name;
  std::vector<LayerEntry> layers;
};

LayerSpec layer_spec_from_json(const nlohmann::json& doc);
nlohmann::json to_json(const LayerSpec& spec);
LayerSpec load_layer_spec(const std::filesystem::path& path);

/// Builds the spec of an MLP with a normalization layer and activation after
/// every hidden linear layer.
LayerSpec mlp_layer_spec(std::size_t inputs, const std::vector<std::size_t>& hidden, std::size_t outputs,
                         bool running_stats = true);

struct SpecTotals {
  std::uint64_t weight_params = 0;   // linear and conv weights plus biases
  std::uint64_t norm_learnable = 0;  // γ and β
  std::uint64_t norm_buffers = 0;    // running mean and variance
  std::uint64_t macs = 0;
  std::uint64_t branch_params = 0;   // all parameters of entries flagged `branch`
  std::uint64_t branch_macs = 0;
  std::uint64_t weight_outputs = 0;  // output activations of linear and conv layers

  std::uint64_t learnable() const { return weight_params + norm_learnable; }
  std::uint64_t stored() const { return learnable() + norm_buffers; }
};

SpecTotals spec_totals(const LayerSpec& spec);

/// Exact nonnegative rational, kept in lowest terms.
struct Ratio {
  std::uint64_t num = 0;
  std::uint64_t den = 1;

  static Ratio of(std::uint64_t num, std::uint64_t den);
  double value() const { return static_cast<double>(num) / static_cast<double>(den); }
  friend bool operator==(const Ratio&, const Ratio&) = default;
};

enum class CostMethod {
  single,
  deep_ensemble,
  mc_dropout,
  batchensemble,
  branch_ensemble,
  tiny_de,
  tiny_de_sequential,
};

std::string to_string(CostMethod method);
CostMethod parse_cost_method(const std::string& s);
const std::vector<CostMethod>& all_cost_methods();

struct CostCensus {
  CostMethod method = CostMethod::single;
  std::size_t members = 1;
  std::uint64_t learnable_params = 0;
  std::uint64_t total_params = 0;  // learnable plus running buffers
  std::uint64_t learnable_norm_params = 0;
  std::uint64_t macs = 0;
  std::uint64_t forward_passes = 1;
  Ratio relative_memory;   // total_params over the single model's
  Ratio relative_latency;  // macs over the single model's
};

/// Memory and latency of `method` with `members` ensemble members.
///
/// Rank-1 vectors of BatchEnsemble (members·(fan_in + fan_out) per weight
/// layer) and its elementwise products (2 per output activation per weight
/// layer) are only charged when members > 1. Tiny-DE replicates every norm
/// parameter and running buffer per member; the parallel variant takes one
/// pass, the sequential one takes `members` passes.
CostCensus census(const LayerSpec& spec, CostMethod method, std::size_t members);

/// Columns: method, members, learnable_params, total_params,
/// learnable_norm_params, macs, forward_passes, relative_memory,
/// relative_latency, memory_num, memory_den, latency_num, latency_den.
void emit_cost_curves(std::ostream& out, const LayerSpec& spec, const std::vector<CostMethod>& methods,
                      const std::vector<std::size_t>& members);

}  // namespace tinyde
