#include <cstring>
#include <fstream>
#include <sstream>

#include "tinyde/ensemble.hpp"
#include "tinyde/errors.hpp"

namespace tinyde {

namespace {

constexpr char kModelMagic[8] = {'T', 'D', 'M', 'O', 'D', 'E', 'L', '1'};

ModelConfig config_from_header(const nlohmann::json& h) {
  ModelConfig c;
  c.inputs = h.at("inputs").get<std::size_t>();
  c.hidden = h.at("hidden").get<std::vector<std::size_t>>();
  c.outputs = h.at("outputs").get<std::size_t>();
  c.members = h.at("members").get<std::size_t>();
  c.norm_kind = parse_norm_kind(h.at("norm_kind").get<std::string>());
  c.task = parse_task(h.at("task").get<std::string>());
  c.norm_eps = h.at("norm_eps").get<double>();
  c.norm_momentum = h.at("norm_momentum").get<double>();
  return c;
}

TinyDEModel assemble(const nlohmann::json& header, const ParamArchive& params) {
  try {
    if (header.at("version").get<std::uint32_t>() != kCheckpointVersion) {
      throw DataError("unsupported checkpoint version");
    }
    const ModelConfig config = config_from_header(header);
    const InferenceMode mode = parse_inference_mode(header.at("mode").get<std::string>());
    const bool frozen = header.at("frozen").get<bool>();

    std::vector<LinearLayer> linears;
    for (std::size_t i = 0; i <= config.hidden.size(); ++i) {
      LinearLayer l;
      l.weight = find_tensor(params, "linear." + std::to_string(i) + ".weight");
      l.bias = find_tensor(params, "linear." + std::to_string(i) + ".bias");
      l.frozen = frozen;
      linears.push_back(std::move(l));
    }
    std::vector<NormBank> banks;
    for (std::size_t l = 0; l < config.hidden.size(); ++l) {
      const std::string prefix = "norm." + std::to_string(l) + ".";
      EnsembleNormParams p;
      p.members = config.members;
      p.gamma = find_tensor(params, prefix + "gamma");
      p.beta = find_tensor(params, prefix + "beta");
      p.running_mean = find_tensor(params, prefix + "running_mean");
      p.running_var = find_tensor(params, prefix + "running_var");
      p.eps = config.norm_eps;
      p.momentum = config.norm_momentum;
      p.kind = config.norm_kind;
      const Shape expected{config.members, config.hidden[l]};
      for (const Tensor* t : {&p.gamma, &p.beta, &p.running_mean, &p.running_var}) {
        if (t->shape() != expected) {
          throw DataError("checkpoint tensor " + prefix + "* has shape " + shape_string(t->shape()) +
                          ", expected " + shape_string(expected));
        }
      }
      for (std::size_t m = 0; m < config.members; ++m) p.member(m).validate();
      NormBank bank(std::move(p));
      if (mode == InferenceMode::sequential) bank.to_sequential();
      banks.push_back(std::move(bank));
    }
    return TinyDEModel(config, std::move(linears), std::move(banks), mode);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed checkpoint header: ") + e.what());
  }
}

}  // namespace

nlohmann::json checkpoint_header(const TinyDEModel& model) {
  const auto& c = model.config();
  return {{"format", "tinyde-model"},
          {"version", kCheckpointVersion},
          {"inputs", c.inputs},
          {"hidden", c.hidden},
          {"outputs", c.outputs},
          {"members", c.members},
          {"norm_kind", to_string(c.norm_kind)},
          {"norm_eps", c.norm_eps},
          {"norm_momentum", c.norm_momentum},
          {"mode", to_string(model.mode())},
          {"task", to_string(c.task)},
          {"frozen", model.shared_frozen()}};
}

nlohmann::json checkpoint_to_json(const TinyDEModel& model) {
  return {{"format", "tinyde-model"},
          {"version", kCheckpointVersion},
          {"header", checkpoint_header(model)},
          {"params", params_to_json(model.export_params())}};
}

TinyDEModel checkpoint_from_json(const nlohmann::json& doc) {
  try {
    if (doc.at("format").get<std::string>() != "tinyde-model") {
      throw DataError("JSON document is not a tinyde model checkpoint");
    }
    return assemble(doc.at("header"), params_from_json(doc.at("params")));
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed checkpoint: ") + e.what());
  }
}

void save_checkpoint(const TinyDEModel& model, const std::filesystem::path& path, CheckpointFormat format) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open checkpoint for writing: " + path.string());
  if (format == CheckpointFormat::json) {
    out << checkpoint_to_json(model).dump(1) << '\n';
  } else {
    const std::string header = checkpoint_header(model).dump();
    out.write(kModelMagic, sizeof(kModelMagic));
    const std::uint32_t version = kCheckpointVersion;
    const auto length = static_cast<std::uint32_t>(header.size());
    out.write(reinterpret_cast<const char*>(&version), sizeof(version));
    out.write(reinterpret_cast<const char*>(&length), sizeof(length));
    out.write(header.data(), static_cast<std::streamsize>(header.size()));
    write_params_binary(out, model.export_params());
  }
  if (!out) throw DataError("failed writing checkpoint: " + path.string());
}

TinyDEModel load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint: " + path.string());
  char magic[8] = {};
  in.read(magic, sizeof(magic));
  if (in && std::memcmp(magic, kModelMagic, sizeof(magic)) == 0) {
    std::uint32_t version = 0, length = 0;
    in.read(reinterpret_cast<char*>(&version), sizeof(version));
    in.read(reinterpret_cast<char*>(&length), sizeof(length));
    if (!in || version != kCheckpointVersion) throw DataError("unsupported binary checkpoint: " + path.string());
    std::string header(length, '\0');
    if (!in.read(header.data(), length)) throw DataError("truncated checkpoint header: " + path.string());
    nlohmann::json h;
    try {
      h = nlohmann::json::parse(header);
    } catch (const nlohmann::json::exception& e) {
      throw DataError(std::string("malformed checkpoint header: ") + e.what());
    }
    return assemble(h, read_params_binary(in));
  }
  in.clear();
  in.seekg(0);
  std::stringstream buffer;
  buffer << in.rdbuf();
  try {
    return checkpoint_from_json(nlohmann::json::parse(buffer.str()));
  } catch (const nlohmann::json::parse_error& e) {
    throw DataError("checkpoint is neither binary nor JSON: " + path.string() + " (" + e.what() + ")");
  }
}

}  // namespace tinyde
