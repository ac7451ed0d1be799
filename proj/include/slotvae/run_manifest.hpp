// Every artifact-producing command writes one run_manifest.txt next to its
// outputs: the command line, the resolved config snapshot, the seed, start and
// end timestamps, the produced files, and the code revision the binary was
// built from.
#pragma once

#include <chrono>
#include <cstdint>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#ifndef SLOTVAE_REVISION
#define SLOTVAE_REVISION "unknown"
#endif

namespace slotvae::run_manifest {

inline std::string now_utc() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

inline std::string revision() { return SLOTVAE_REVISION; }

inline void write(const std::string& out_dir, const std::string& command,
                  const std::vector<std::pair<std::string, std::string>>& config_snapshot,
                  uint64_t seed, const std::string& started,
                  const std::vector<std::string>& outputs) {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  std::ofstream out(fs::path(out_dir) / "run_manifest.txt");
  if (!out) throw std::runtime_error("run_manifest: cannot write under " + out_dir);
  out << "command: " << command << "\n";
  out << "revision: " << revision() << "\n";
  out << "seed: " << seed << "\n";
  out << "started: " << started << "\n";
  out << "finished: " << now_utc() << "\n";
  for (const auto& o : outputs) out << "output: " << o << "\n";
  for (const auto& [k, v] : config_snapshot) out << "config: " << k << "=" << v << "\n";
  if (!out) throw std::runtime_error("run_manifest: write failed under " + out_dir);
}

}  // namespace slotvae::run_manifest
