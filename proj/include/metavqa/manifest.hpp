#pragma once

#include <filesystem>
#include <string>

#include "json.hpp"

namespace mvqa {

inline constexpr const char* kToolName = "metavqa";
inline constexpr const char* kToolVersion = "0.1.0";

// Written next to every command's outputs. The "options" object holds every
// effective option, so the file can be passed back as --config.
struct RunManifest {
  std::string command;
  nlohmann::json options = nlohmann::json::object();
  nlohmann::json inputs = nlohmann::json::object();   // name -> {path, fnv1a}
  nlohmann::json outputs = nlohmann::json::object();  // name -> {path, fnv1a}

  void add_input(const std::string& name, const std::filesystem::path& path);
  void add_output(const std::string& name, const std::filesystem::path& path);

  nlohmann::json to_json() const;
  static RunManifest from_json(const nlohmann::json& j);
  void save(const std::filesystem::path& path) const;
  static RunManifest load(const std::filesystem::path& path);
};

// Options object of a config file: the "options" member of a manifest, or the
// whole document for a plain config.
nlohmann::json load_config(const std::filesystem::path& path);

void write_text(const std::filesystem::path& path, const std::string& text);
std::string read_text(const std::filesystem::path& path);

}  // namespace mvqa
