#pragma once

#include <chrono>
#include <cstdint>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>

#include "odelab/netcore/errors.hpp"
#include "odelab/netcore/parallel.hpp"

namespace odelab::cli {

/// Writes through a sibling temp file and renames it into place, so readers
/// never see a partial artifact.
inline void atomic_write(const std::filesystem::path& path, const std::string& body) {
  std::error_code ec;
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path(), ec);
  if (ec) throw IoError("cannot create directory " + path.parent_path().string() + ": " + ec.message());
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + tmp.string() + " for writing");
    out << body;
    out.flush();
    if (!out) throw IoError("write to " + tmp.string() + " failed");
  }
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp);
    throw IoError("cannot move " + tmp.string() + " to " + path.string() + ": " + ec.message());
  }
}

/// `# ` comment lines carrying the seed and the resolved config ahead of a CSV body.
inline std::string csv_preamble(std::uint64_t seed, const std::string& config) {
  std::ostringstream os;
  os << "# run_seed = " << seed << '\n';
  std::istringstream in(config);
  std::string line;
  while (std::getline(in, line)) os << (line.empty() ? "#" : "# " + line) << '\n';
  return os.str();
}

/// The config text echoed in a CSV preamble, without the leading seed line.
inline std::string config_from_csv(const std::string& csv) {
  std::istringstream in(csv);
  std::string line, out;
  bool first = true;
  while (std::getline(in, line) && !line.empty() && line[0] == '#') {
    if (first && line.rfind("# run_seed = ", 0) == 0) {
      first = false;
      continue;
    }
    first = false;
    out += (line.size() > 2 ? line.substr(2) : "") + '\n';
  }
  return out;
}

/// Text after the `#` preamble.
inline std::string csv_body(const std::string& csv) {
  std::size_t pos = 0;
  while (pos < csv.size() && csv[pos] == '#') {
    const std::size_t nl = csv.find('\n', pos);
    if (nl == std::string::npos) return "";
    pos = nl + 1;
  }
  return csv.substr(pos);
}

inline std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return os.str();
}

/// Collects artifacts of one command; everything run-specific that would
/// break byte-identical reruns goes to `<artifact>.meta.json`.
class ArtifactWriter {
 public:
  ArtifactWriter(std::filesystem::path dir, std::string command)
      : dir_(std::move(dir)), command_(std::move(command)), start_(std::chrono::steady_clock::now()) {}

  const std::filesystem::path& dir() const { return dir_; }

  std::filesystem::path write(const std::string& name, const std::string& body) {
    const std::filesystem::path p = dir_ / name;
    atomic_write(p, body);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    const nlohmann::json meta = {{"artifact", name},
                                 {"command", command_},
                                 {"created_utc", utc_timestamp()},
                                 {"elapsed_seconds", secs},
                                 {"threads", thread_count()}};
    atomic_write(dir_ / (name + ".meta.json"), meta.dump(1) + "\n");
    return p;
  }

 private:
  std::filesystem::path dir_;
  std::string command_;
  std::chrono::steady_clock::time_point start_;
};

}  // namespace odelab::cli
