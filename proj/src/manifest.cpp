#include "metavqa/manifest.hpp"

#include <fstream>
#include <sstream>

#include "metavqa/error.hpp"
#include "metavqa/hash.hpp"

namespace mvqa {

std::string file_hash(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  Fnv1a h;
  char buf[1 << 16];
  while (in.read(buf, sizeof buf) || in.gcount() > 0) h.update(buf, static_cast<std::size_t>(in.gcount()));
  return hex64(h.digest());
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
  if (!out) throw DataError("write failed: " + path.string());
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void RunManifest::add_input(const std::string& name, const std::filesystem::path& path) {
  inputs[name] = {{"path", path.string()}, {"fnv1a", file_hash(path)}};
}

void RunManifest::add_output(const std::string& name, const std::filesystem::path& path) {
  outputs[name] = {{"path", path.string()}, {"fnv1a", file_hash(path)}};
}

nlohmann::json RunManifest::to_json() const {
  return {{"tool", kToolName}, {"version", kToolVersion}, {"command", command},
          {"options", options}, {"inputs", inputs},       {"outputs", outputs}};
}

RunManifest RunManifest::from_json(const nlohmann::json& j) {
  RunManifest m;
  try {
    m.command = j.at("command").get<std::string>();
    m.options = j.value("options", nlohmann::json::object());
    m.inputs = j.value("inputs", nlohmann::json::object());
    m.outputs = j.value("outputs", nlohmann::json::object());
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed manifest: ") + e.what());
  }
  return m;
}

void RunManifest::save(const std::filesystem::path& path) const { write_text(path, to_json().dump(2) + "\n"); }

RunManifest RunManifest::load(const std::filesystem::path& path) {
  try {
    return from_json(nlohmann::json::parse(read_text(path)));
  } catch (const nlohmann::json::parse_error& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

nlohmann::json load_config(const std::filesystem::path& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_text(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw DataError(path.string() + ": " + e.what());
  }
  if (!j.is_object()) throw DataError(path.string() + ": config must be a JSON object");
  if (auto it = j.find("options"); it != j.end() && it->is_object()) return *it;
  return j;
}

}  // namespace mvqa
