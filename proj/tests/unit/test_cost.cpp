#include <sstream>

#include "doctest.h"
#include "tinyde/cost.hpp"
#include "tinyde/errors.hpp"

using namespace tinyde;

namespace {

const std::filesystem::path kResnet = std::filesystem::path(TINYDE_TEST_SOURCE_DIR) / "data" / "resnet32.json";

LayerSpec uci_mlp() { return mlp_layer_spec(13, {50, 50}, 1); }

// Parameter count of a layer list from the textbook formulas, independent of
// the library's totals.
struct HandCount {
  std::uint64_t weights = 0, norm = 0, buffers = 0, branch = 0;
};

HandCount hand_count(const LayerSpec& spec) {
  HandCount h;
  for (const auto& e : spec.layers) {
    std::uint64_t p = 0;
    if (e.kind == LayerKind::linear) p = e.fan_in * e.fan_out + e.fan_out, h.weights += p;
    if (e.kind == LayerKind::conv) p = e.kernel_area * e.fan_in * e.fan_out + e.fan_out, h.weights += p;
    if (e.kind == LayerKind::norm) {
      h.norm += 2 * e.channels;
      if (e.running_stats) h.buffers += 2 * e.channels;
      p = 2 * e.channels * (e.running_stats ? 2 : 1);
    }
    if (e.branch) h.branch += p;
  }
  return h;
}

}  // namespace

TEST_CASE("uci mlp census by hand") {
  const LayerSpec spec = uci_mlp();
  const SpecTotals t = spec_totals(spec);
  CHECK(t.weight_params == 13 * 50 + 50 + 50 * 50 + 50 + 50 + 1);
  CHECK(t.weight_params == 3301);
  CHECK(t.norm_learnable == 200);

  const CostCensus tiny = census(spec, CostMethod::tiny_de, 5);
  CHECK(tiny.learnable_params == 3301 + 5 * 200);
  CHECK(tiny.learnable_params == 4301);
  const CostCensus deep = census(spec, CostMethod::deep_ensemble, 5);
  CHECK(deep.learnable_params == 5 * 3501);
  CHECK(deep.learnable_params == 17505);
}

TEST_CASE("every method costs the single model at M = 1") {
  for (const LayerSpec& spec : {uci_mlp(), load_layer_spec(kResnet)}) {
    for (CostMethod method : all_cost_methods()) {
      const CostCensus c = census(spec, method, 1);
      CAPTURE(to_string(method));
      CHECK(c.relative_memory == Ratio{1, 1});
      CHECK(c.relative_latency == Ratio{1, 1});
      CHECK(c.forward_passes == 1);
    }
  }
}

TEST_CASE("method rules") {
  const LayerSpec spec = load_layer_spec(kResnet);
  const HandCount h = hand_count(spec);
  const std::uint64_t stored = h.weights + h.norm + h.buffers;
  for (std::size_t m = 1; m <= 12; ++m) {
    CHECK(census(spec, CostMethod::deep_ensemble, m).relative_memory == Ratio{m, 1});
    CHECK(census(spec, CostMethod::deep_ensemble, m).relative_latency == Ratio{m, 1});
    CHECK(census(spec, CostMethod::mc_dropout, m).relative_memory == Ratio{1, 1});
    CHECK(census(spec, CostMethod::mc_dropout, m).relative_latency == Ratio{m, 1});
    CHECK(census(spec, CostMethod::tiny_de, m).relative_latency == Ratio{1, 1});
    CHECK(census(spec, CostMethod::tiny_de_sequential, m).forward_passes == m);

    const auto tiny = census(spec, CostMethod::tiny_de, m);
    CHECK(tiny.total_params - census(spec, CostMethod::tiny_de, 1).total_params == (m - 1) * (h.norm + h.buffers));
    CHECK(tiny.learnable_params - census(spec, CostMethod::tiny_de, 1).learnable_params == (m - 1) * h.norm);

    // 1 + (M − 1)·f with f the parameter share of the branch layers
    CHECK(census(spec, CostMethod::branch_ensemble, m).relative_memory ==
          Ratio::of(stored + (m - 1) * h.branch, stored));
  }
}

TEST_CASE("censuses never shrink as the ensemble grows") {
  for (const LayerSpec& spec : {uci_mlp(), load_layer_spec(kResnet)}) {
    for (CostMethod method : all_cost_methods()) {
      for (std::size_t m = 1; m < 16; ++m) {
        const auto a = census(spec, method, m), b = census(spec, method, m + 1);
        CAPTURE(to_string(method));
        CAPTURE(m);
        CHECK(b.total_params >= a.total_params);
        CHECK(b.macs >= a.macs);
        CHECK(b.relative_memory.value() >= a.relative_memory.value());
        CHECK(b.relative_latency.value() >= a.relative_latency.value());
      }
    }
  }
}

TEST_CASE("batchensemble charges rank-1 vectors and elementwise products") {
  const LayerSpec spec = mlp_layer_spec(4, {3}, 2);
  const auto c = census(spec, CostMethod::batchensemble, 3);
  const SpecTotals t = spec_totals(spec);
  CHECK(c.total_params == t.stored() + 3 * ((4 + 3) + (3 + 2)));
  CHECK(c.macs == t.macs + 2 * (3 + 2));
}

TEST_CASE("resnet-shaped spec matches its hand count") {
  const LayerSpec spec = load_layer_spec(kResnet);
  const HandCount h = hand_count(spec);
  const SpecTotals t = spec_totals(spec);
  CHECK(t.weight_params == h.weights);
  CHECK(t.norm_learnable == h.norm);
  CHECK(t.norm_buffers == h.buffers);
  CHECK(t.branch_params == h.branch);
  const double share = static_cast<double>(h.norm) / static_cast<double>(h.weights + h.norm);
  CHECK(share >= 0.005);
  CHECK(share <= 0.03);
  CHECK(census(spec, CostMethod::tiny_de, 10).relative_memory.value() <= 1.10);
}

TEST_CASE("ratios are reduced") {
  CHECK(Ratio::of(6, 4) == Ratio{3, 2});
  CHECK(Ratio::of(0, 7) == Ratio{0, 1});
  CHECK_THROWS_AS(Ratio::of(1, 0), ValueError);
}

TEST_CASE("names and parsing") {
  for (CostMethod m : all_cost_methods()) CHECK(parse_cost_method(to_string(m)) == m);
  CHECK_THROWS_AS(parse_cost_method("bagging"), ValueError);
  CHECK_THROWS_AS(census(uci_mlp(), CostMethod::single, 0), ValueError);
}

TEST_CASE("layer spec json round-trip and validation") {
  const LayerSpec spec = load_layer_spec(kResnet);
  const LayerSpec back = layer_spec_from_json(to_json(spec));
  CHECK(to_json(back) == to_json(spec));
  CHECK(spec_totals(back).stored() == spec_totals(spec).stored());

  CHECK_THROWS_AS(layer_spec_from_json(nlohmann::json::parse(R"({"layers":[{"kind":"pool"}]})")), DataError);
  CHECK_THROWS_AS(layer_spec_from_json(nlohmann::json::parse(R"({"layers":[{"kind":"linear","fan_in":0,"fan_out":3}]})")),
                  DataError);
  CHECK_THROWS_AS(layer_spec_from_json(nlohmann::json::parse(R"({"name":"x"})")), DataError);
  CHECK_THROWS_AS(load_layer_spec("/nonexistent/spec.json"), DataError);
}

TEST_CASE("cost curve table") {
  std::ostringstream out;
  emit_cost_curves(out, uci_mlp(), {CostMethod::deep_ensemble, CostMethod::tiny_de}, {1, 2, 3});
  std::istringstream in(out.str());
  std::string line;
  std::getline(in, line);
  CHECK(line ==
        "method,members,learnable_params,total_params,learnable_norm_params,macs,forward_passes,"
        "relative_memory,relative_latency,memory_num,memory_den,latency_num,latency_den");
  std::size_t rows = 0;
  while (std::getline(in, line)) {
    ++rows;
    if (line.rfind("deep_ensemble,2,", 0) == 0) CHECK(line.find(",2,1,2,1") != std::string::npos);
  }
  CHECK(rows == 6);
}
