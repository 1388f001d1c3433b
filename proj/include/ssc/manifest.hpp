#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>
#include <string>

#include "json.hpp"
#include "ssc/binary_io.hpp"

namespace ssc {

inline constexpr const char* kToolVersion = "0.1.0";

// Fingerprint of a corpus: labels.txt plus every listed image and mask, in
// directory-sorted order.
inline std::string corpus_hash(const std::filesystem::path& root) {
  io::Fnv1a h;
  if (std::filesystem::exists(root / "labels.txt")) h.update_file(root / "labels.txt");
  for (const char* sub : {"images", "masks"}) {
    const auto dir = root / sub;
    if (!std::filesystem::is_directory(dir)) continue;
    std::vector<std::filesystem::path> files;
    for (const auto& e : std::filesystem::directory_iterator(dir)) files.push_back(e.path());
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
      const auto name = f.filename().string();
      h.update(name.data(), name.size());
      h.update_file(f);
    }
  }
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h.digest();
  return os.str();
}

struct RunManifest {
  std::string command;
  std::map<std::string, std::string> config;
  std::string corpus_hash;
  std::string checkpoint;
  std::uint64_t seed = 0;
  std::string tool_version = kToolVersion;

  nlohmann::json to_json() const {
    return nlohmann::json{{"command", command},        {"config", config}, {"corpus_hash", corpus_hash},
                          {"checkpoint", checkpoint},  {"seed", seed},     {"tool_version", tool_version}};
  }

  static RunManifest from_json(const nlohmann::json& j) {
    RunManifest m;
    m.command = j.at("command").get<std::string>();
    m.config = j.at("config").get<std::map<std::string, std::string>>();
    m.corpus_hash = j.at("corpus_hash").get<std::string>();
    m.checkpoint = j.at("checkpoint").get<std::string>();
    m.seed = j.at("seed").get<std::uint64_t>();
    m.tool_version = j.at("tool_version").get<std::string>();
    return m;
  }

  void write(const std::filesystem::path& dir) const {
    std::filesystem::create_directories(dir);
    std::ofstream os(dir / "manifest.json", std::ios::trunc);
    os << to_json().dump(2) << '\n';
    if (!os) throw IoError("cannot write manifest in " + dir.string());
  }

  static RunManifest read(const std::filesystem::path& dir) {
    std::ifstream is(dir / "manifest.json");
    if (!is) throw IoError("no manifest in " + dir.string());
    return from_json(nlohmann::json::parse(is));
  }
};

}  // namespace ssc
