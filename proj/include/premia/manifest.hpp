#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "premia/errors.hpp"
#include "premia/util.hpp"
#include "premia/version.hpp"

namespace premia::manifest {

using json = nlohmann::json;

struct FileHash {
  std::string path;    // as referenced by the run, never absolutized
  std::string sha256;  // content hash
};

// Record of one CLI run: everything needed to reproduce its outputs
// bit-for-bit. Contains no timestamps, hostnames, or absolute paths.
struct Manifest {
  std::string tool_version = PREMIA_VERSION;
  std::string command;
  json config;  // resolved configuration including every seed
  std::vector<FileHash> inputs;
  std::vector<FileHash> outputs;

  void add_input(std::string path, const std::string& content) {
    inputs.push_back(FileHash{std::move(path), util::sha256_hex(content)});
  }
  void add_output(std::string path, const std::string& content) {
    outputs.push_back(FileHash{std::move(path), util::sha256_hex(content)});
  }

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json obj;
    obj["tool_version"] = tool_version;
    obj["command"] = command;
    obj["config"] = config;
    auto files = [](const std::vector<FileHash>& v) {
      nlohmann::ordered_json arr = nlohmann::ordered_json::array();
      for (const auto& f : v) arr.push_back({{"path", f.path}, {"sha256", f.sha256}});
      return arr;
    };
    obj["inputs"] = files(inputs);
    obj["outputs"] = files(outputs);
    return obj;
  }

  std::string serialize() const { return to_json().dump(2) + "\n"; }

  static Manifest from_json(const json& obj) {
    if (!obj.is_object() || !obj.contains("command") || !obj.contains("config"))
      throw ValidationError("manifest must be an object with command and config fields");
    Manifest m;
    m.tool_version = obj.value("tool_version", "");
    m.command = obj.at("command").get<std::string>();
    m.config = obj.at("config");
    auto read_files = [](const json& arr, std::vector<FileHash>& out) {
      if (!arr.is_array()) return;
      for (const auto& f : arr)
        out.push_back({f.at("path").get<std::string>(), f.at("sha256").get<std::string>()});
    };
    if (obj.contains("inputs")) read_files(obj.at("inputs"), m.inputs);
    if (obj.contains("outputs")) read_files(obj.at("outputs"), m.outputs);
    return m;
  }
};

// A config file may be a bare config object or a manifest from an earlier
// run; in the latter case the embedded config is reused as-is.
inline json extract_config(const json& obj) {
  if (obj.is_object() && obj.contains("command") && obj.contains("config"))
    return obj.at("config");
  return obj;
}

}  // namespace premia::manifest
