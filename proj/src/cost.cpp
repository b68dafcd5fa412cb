#include "tinyde/cost.hpp"

#include <fstream>
#include <numeric>
#include <ostream>

#include "tinyde/errors.hpp"

namespace tinyde {

namespace {

LayerKind parse_layer_kind(const std::string& s) {
  if (s == "linear") return LayerKind::linear;
  if (s == "conv") return LayerKind::conv;
  if (s == "norm") return LayerKind::norm;
  if (s == "activation") return LayerKind::activation;
  throw DataError("unknown layer kind '" + s + "' (expected linear|conv|norm|activation)");
}

const char* layer_kind_name(LayerKind k) {
  switch (k) {
    case LayerKind::linear: return "linear";
    case LayerKind::conv: return "conv";
    case LayerKind::norm: return "norm";
    case LayerKind::activation: return "activation";
  }
  return "?";
}

std::uint64_t entry_params(const LayerEntry& e) {
  switch (e.kind) {
    case LayerKind::linear: return e.fan_in * e.fan_out + e.fan_out;
    case LayerKind::conv: return e.kernel_area * e.fan_in * e.fan_out + e.fan_out;
    case LayerKind::norm: return 2 * e.channels * (e.running_stats ? 2 : 1);
    case LayerKind::activation: return 0;
  }
  return 0;
}

std::uint64_t entry_macs(const LayerEntry& e) {
  switch (e.kind) {
    case LayerKind::linear: return e.fan_in * e.fan_out;
    case LayerKind::conv: return e.kernel_area * e.fan_in * e.fan_out * e.output_area;
    case LayerKind::norm: return 2 * e.channels * e.output_area;
    case LayerKind::activation: return 0;
  }
  return 0;
}

void check_entry(const LayerEntry& e, std::size_t index) {
  const auto where = "layer " + std::to_string(index) + " (" + layer_kind_name(e.kind) + ")";
  if ((e.kind == LayerKind::linear || e.kind == LayerKind::conv) && (e.fan_in == 0 || e.fan_out == 0)) {
    throw DataError(where + ": fan_in and fan_out must be positive");
  }
  if (e.kind == LayerKind::conv && e.kernel_area == 0) throw DataError(where + ": kernel_area must be positive");
  if (e.kind == LayerKind::norm && e.channels == 0) throw DataError(where + ": channels must be positive");
  if (e.output_area == 0) throw DataError(where + ": output_area must be positive");
}

}  // namespace

LayerSpec layer_spec_from_json(const nlohmann::json& doc) {
  try {
    LayerSpec spec;
    spec.name = doc.value("name", std::string());
    for (const auto& item : doc.at("layers")) {
      LayerEntry e;
      e.kind = parse_layer_kind(item.at("kind").get<std::string>());
      e.fan_in = item.value("fan_in", std::uint64_t{0});
      e.fan_out = item.value("fan_out", std::uint64_t{0});
      e.kernel_area = item.value("kernel_area", std::uint64_t{1});
      e.channels = item.value("channels", std::uint64_t{0});
      e.output_area = item.value("output_area", std::uint64_t{1});
      e.running_stats = item.value("running_stats", true);
      e.branch = item.value("branch", false);
      check_entry(e, spec.layers.size());
      spec.layers.push_back(e);
    }
    return spec;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed layer spec: ") + e.what());
  }
}

nlohmann::json to_json(const LayerSpec& spec) {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& e : spec.layers) {
    nlohmann::json item{{"kind", layer_kind_name(e.kind)}};
    switch (e.kind) {
      case LayerKind::conv:
        item["kernel_area"] = e.kernel_area;
        [[fallthrough]];
      case LayerKind::linear:
        item["fan_in"] = e.fan_in;
        item["fan_out"] = e.fan_out;
        break;
      case LayerKind::norm:
        item["channels"] = e.channels;
        item["running_stats"] = e.running_stats;
        break;
      case LayerKind::activation:
        break;
    }
    if (e.output_area != 1) item["output_area"] = e.output_area;
    if (e.branch) item["branch"] = true;
    layers.push_back(std::move(item));
  }
  return {{"name", spec.name}, {"layers", std::move(layers)}};
}

LayerSpec load_layer_spec(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open layer spec: " + path.string());
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw DataError("layer spec " + path.string() + " is not valid JSON: " + e.what());
  }
  return layer_spec_from_json(doc);
}

LayerSpec mlp_layer_spec(std::size_t inputs, const std::vector<std::size_t>& hidden, std::size_t outputs,
                         bool running_stats) {
  LayerSpec spec;
  spec.name = "mlp";
  std::uint64_t prev = inputs;
  for (std::size_t width : hidden) {
    spec.layers.push_back({.kind = LayerKind::linear, .fan_in = prev, .fan_out = width});
    spec.layers.push_back({.kind = LayerKind::norm, .channels = width, .running_stats = running_stats});
    spec.layers.push_back({.kind = LayerKind::activation});
    prev = width;
  }
  spec.layers.push_back({.kind = LayerKind::linear, .fan_in = prev, .fan_out = outputs});
  return spec;
}

SpecTotals spec_totals(const LayerSpec& spec) {
  SpecTotals t;
  for (const auto& e : spec.layers) {
    const std::uint64_t params = entry_params(e);
    const std::uint64_t macs = entry_macs(e);
    if (e.kind == LayerKind::norm) {
      t.norm_learnable += 2 * e.channels;
      if (e.running_stats) t.norm_buffers += 2 * e.channels;
    } else {
      t.weight_params += params;
    }
    if (e.kind == LayerKind::linear || e.kind == LayerKind::conv) t.weight_outputs += e.fan_out * e.output_area;
    t.macs += macs;
    if (e.branch) {
      t.branch_params += params;
      t.branch_macs += macs;
    }
  }
  return t;
}

Ratio Ratio::of(std::uint64_t num, std::uint64_t den) {
  if (den == 0) throw ValueError("ratio with zero denominator");
  const std::uint64_t g = std::gcd(num, den);
  return g ? Ratio{num / g, den / g} : Ratio{0, 1};
}

std::string to_string(CostMethod method) {
  switch (method) {
    case CostMethod::single: return "single";
    case CostMethod::deep_ensemble: return "deep_ensemble";
    case CostMethod::mc_dropout: return "mc_dropout";
    case CostMethod::batchensemble: return "batchensemble";
    case CostMethod::branch_ensemble: return "branch_ensemble";
    case CostMethod::tiny_de: return "tiny_de";
    case CostMethod::tiny_de_sequential: return "tiny_de_sequential";
  }
  return "?";
}

CostMethod parse_cost_method(const std::string& s) {
  for (CostMethod m : all_cost_methods()) {
    if (to_string(m) == s) return m;
  }
  throw ValueError("unknown cost method '" + s + "'");
}

const std::vector<CostMethod>& all_cost_methods() {
  static const std::vector<CostMethod> methods{
      CostMethod::single,          CostMethod::deep_ensemble, CostMethod::mc_dropout,
      CostMethod::batchensemble,   CostMethod::branch_ensemble, CostMethod::tiny_de,
      CostMethod::tiny_de_sequential};
  return methods;
}

CostCensus census(const LayerSpec& spec, CostMethod method, std::size_t members) {
  if (members < 1) throw ValueError("ensemble size must be at least 1");
  const SpecTotals t = spec_totals(spec);
  if (t.stored() == 0 || t.macs == 0) throw ValueError("layer spec has no parameters or no MACs");
  const std::uint64_t m = members;
  const std::uint64_t extra = m - 1;

  CostCensus c;
  c.method = method;
  c.members = members;
  c.learnable_params = t.learnable();
  c.total_params = t.stored();
  c.learnable_norm_params = t.norm_learnable;
  c.macs = t.macs;
  c.forward_passes = 1;

  switch (method) {
    case CostMethod::single:
      break;
    case CostMethod::deep_ensemble:
      c.learnable_params *= m;
      c.total_params *= m;
      c.learnable_norm_params *= m;
      c.macs *= m;
      c.forward_passes = m;
      break;
    case CostMethod::mc_dropout:
      c.macs *= m;
      c.forward_passes = m;
      break;
    case CostMethod::batchensemble:
      if (m > 1) {
        std::uint64_t rank1 = 0;
        for (const auto& e : spec.layers) {
          if (e.kind == LayerKind::linear || e.kind == LayerKind::conv) rank1 += m * (e.fan_in + e.fan_out);
        }
        c.learnable_params += rank1;
        c.total_params += rank1;
        c.macs += 2 * t.weight_outputs;
      }
      break;
    case CostMethod::branch_ensemble: {
      std::uint64_t branch_learnable = 0, branch_norm = 0;
      for (const auto& e : spec.layers) {
        if (!e.branch) continue;
        if (e.kind == LayerKind::norm) {
          branch_learnable += 2 * e.channels;
          branch_norm += 2 * e.channels;
        } else {
          branch_learnable += entry_params(e);
        }
      }
      c.learnable_params += extra * branch_learnable;
      c.total_params += extra * t.branch_params;
      c.learnable_norm_params += extra * branch_norm;
      c.macs += extra * t.branch_macs;
      break;
    }
    case CostMethod::tiny_de:
    case CostMethod::tiny_de_sequential:
      c.learnable_params += extra * t.norm_learnable;
      c.total_params += extra * (t.norm_learnable + t.norm_buffers);
      c.learnable_norm_params *= m;
      if (method == CostMethod::tiny_de_sequential) {
        c.macs *= m;
        c.forward_passes = m;
      }
      break;
  }
  c.relative_memory = Ratio::of(c.total_params, t.stored());
  c.relative_latency = Ratio::of(c.macs, t.macs);
  return c;
}

void emit_cost_curves(std::ostream& out, const LayerSpec& spec, const std::vector<CostMethod>& methods,
                      const std::vector<std::size_t>& members) {
  out << "method,members,learnable_params,total_params,learnable_norm_params,macs,forward_passes,"
         "relative_memory,relative_latency,memory_num,memory_den,latency_num,latency_den\n";
  const auto old_precision = out.precision(17);
  for (CostMethod method : methods) {
    for (std::size_t m : members) {
      const CostCensus c = census(spec, method, m);
      out << to_string(method) << ',' << m << ',' << c.learnable_params << ',' << c.total_params << ','
          << c.learnable_norm_params << ',' << c.macs << ',' << c.forward_passes << ','
          << c.relative_memory.value() << ',' << c.relative_latency.value() << ',' << c.relative_memory.num
          << ',' << c.relative_memory.den << ',' << c.relative_latency.num << ',' << c.relative_latency.den
          << '\n';
    }
  }
  out.precision(old_precision);
}

}  // namespace tinyde
