#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "json.hpp"
#include "tinyde/tensor.hpp"

namespace tinyde {

struct NamedTensor {
  std::string name;
  Tensor value;

  friend bool operator==(const NamedTensor&, const NamedTensor&) = default;
};

using ParamArchive = std::vector<NamedTensor>;

// Binary parameter archive, all integers and doubles little-endian:
//
//   bytes 0..7   magic "TDPARAMS"
//   u32          format version (kParamFormatVersion)
//   u32          tensor count
//   per tensor:  u32 name length, name bytes (UTF-8),
//                u32 rank, u64 extent × rank,
//                f64 × volume, row-major
inline constexpr std::uint32_t kParamFormatVersion = 1;

void write_params_binary(std::ostream& out, const ParamArchive& archive);
ParamArchive read_params_binary(std::istream& in);

// JSON form: {"format":"tinyde-params","version":1,"tensors":[{"name",
// "shape","data"}]}; doubles are written with round-trip precision.
nlohmann::json params_to_json(const ParamArchive& archive);
ParamArchive params_from_json(const nlohmann::json& doc);

const Tensor& find_tensor(const ParamArchive& archive, const std::string& name);

}  // namespace tinyde
