#include "tinyde/serialize.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <istream>
#include <ostream>

#include "tinyde/errors.hpp"

namespace tinyde {

namespace {

constexpr char kMagic[8] = {'T', 'D', 'P', 'A', 'R', 'A', 'M', 'S'};

static_assert(std::endian::native == std::endian::little,
              "binary archives assume a little-endian host");

template <typename T>
void put(std::ostream& out, T value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T get(std::istream& in) {
  T value{};
  if (!in.read(reinterpret_cast<char*>(&value), sizeof(T))) {
    throw DataError("truncated parameter archive");
  }
  return value;
}

}  // namespace

void write_params_binary(std::ostream& out, const ParamArchive& archive) {
  out.write(kMagic, sizeof(kMagic));
  put<std::uint32_t>(out, kParamFormatVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(archive.size()));
  for (const auto& [name, value] : archive) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(value.rank()));
    for (auto e : value.shape()) put<std::uint64_t>(out, e);
    out.write(reinterpret_cast<const char*>(value.data().data()),
              static_cast<std::streamsize>(value.size() * sizeof(double)));
  }
  if (!out) throw DataError("failed writing parameter archive");
}

ParamArchive read_params_binary(std::istream& in) {
  char magic[8];
  if (!in.read(magic, sizeof(magic)) || std::memcmp(magic, kMagic, sizeof(magic)) != 0) {
    throw DataError("not a tinyde parameter archive (bad magic)");
  }
  const auto version = get<std::uint32_t>(in);
  if (version != kParamFormatVersion) {
    throw DataError("unsupported parameter archive version " + std::to_string(version));
  }
  const auto count = get<std::uint32_t>(in);
  ParamArchive archive;
  archive.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name_len = get<std::uint32_t>(in);
    std::string name(name_len, '\0');
    if (!in.read(name.data(), name_len)) throw DataError("truncated parameter archive");
    const auto rank = get<std::uint32_t>(in);
    Shape shape(rank);
    for (auto& e : shape) e = static_cast<std::size_t>(get<std::uint64_t>(in));
    std::vector<double> data(shape_volume(shape));
    if (!in.read(reinterpret_cast<char*>(data.data()),
                 static_cast<std::streamsize>(data.size() * sizeof(double)))) {
      throw DataError("truncated parameter archive in tensor '" + name + "'");
    }
    archive.push_back({std::move(name), Tensor(std::move(shape), std::move(data))});
  }
  return archive;
}

nlohmann::json params_to_json(const ParamArchive& archive) {
  nlohmann::json tensors = nlohmann::json::array();
  for (const auto& [name, value] : archive) {
    tensors.push_back({{"name", name}, {"shape", value.shape()}, {"data", value.values()}});
  }
  return {{"format", "tinyde-params"}, {"version", kParamFormatVersion}, {"tensors", std::move(tensors)}};
}

ParamArchive params_from_json(const nlohmann::json& doc) {
  try {
    if (doc.at("format").get<std::string>() != "tinyde-params") {
      throw DataError("JSON document is not a tinyde parameter archive");
    }
    if (doc.at("version").get<std::uint32_t>() != kParamFormatVersion) {
      throw DataError("unsupported parameter archive version");
    }
    ParamArchive archive;
    for (const auto& t : doc.at("tensors")) {
      archive.push_back({t.at("name").get<std::string>(),
                         Tensor(t.at("shape").get<Shape>(), t.at("data").get<std::vector<double>>())});
    }
    return archive;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed parameter JSON: ") + e.what());
  }
}

const Tensor& find_tensor(const ParamArchive& archive, const std::string& name) {
  auto it = std::find_if(archive.begin(), archive.end(), [&](const auto& t) { return t.name == name; });
  if (it == archive.end()) throw DataError("parameter archive has no tensor '" + name + "'");
  return it->value;
}

}  // namespace tinyde
