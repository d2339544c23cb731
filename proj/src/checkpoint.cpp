#include "wavedg/checkpoint.hpp"

#include <fstream>
#include <stdexcept>

namespace wavedg {

namespace {

nlohmann::json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open file: " + path);
  nlohmann::json j;
  in >> j;
  return j;
}

}  // namespace

void save_checkpoint(const std::string& path, const ParamStore& store,
                     const nlohmann::json& metadata) {
  nlohmann::json j;
  j["schema_version"] = kCheckpointSchemaVersion;
  j["metadata"] = metadata;
  nlohmann::json params = nlohmann::json::object();
  for (const auto& [name, node] : store.items()) {
    params[name] = {{"shape", node->value.shape}, {"values", node->value.values}};
  }
  j["params"] = std::move(params);
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write file: " + path);
  out << j.dump(1) << "\n";
}

nlohmann::json load_checkpoint(const std::string& path, ParamStore& store) {
  nlohmann::json j = read_json_file(path);
  if (!j.contains("schema_version") || j["schema_version"].get<int>() != kCheckpointSchemaVersion)
    throw std::runtime_error("checkpoint " + path + ": unsupported schema version");
  const auto& params = j.at("params");
  if (params.size() != store.items().size())
    throw std::runtime_error("checkpoint " + path + ": has " + std::to_string(params.size()) +
                             " parameters, model expects " +
                             std::to_string(store.items().size()) +
                             " (module flags or sizes differ)");
  for (const auto& [name, node] : store.items()) {
    if (!params.contains(name))
      throw std::runtime_error("checkpoint " + path + ": missing parameter " + name);
    const auto& entry = params.at(name);
    const auto shape = entry.at("shape").get<std::vector<int>>();
    if (shape != node->value.shape)
      throw std::runtime_error("checkpoint " + path + ": parameter " + name + " has shape " +
                               Tensor(shape).shape_str() + ", model expects " +
                               node->value.shape_str());
    entry.at("values").get_to(node->value.values);
    if (static_cast<std::int64_t>(node->value.values.size()) != Tensor::count(shape))
      throw std::runtime_error("checkpoint " + path + ": parameter " + name + " has wrong size");
  }
  return j.at("metadata");
}

nlohmann::json peek_checkpoint_metadata(const std::string& path) {
  return read_json_file(path).at("metadata");
}

}  // namespace wavedg
