#include "msmv/io.hpp"

#include <cmath>
#include <cstdio>
#include <stdexcept>

namespace msmv {

std::string format_real(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string fnv1a_hex(std::string_view text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::ofstream open_output(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open output file " + path.string());
  return os;
}

void write_sidecar(const std::filesystem::path& csv_path, const nlohmann::json& config,
                   const std::vector<std::uint64_t>& seeds, std::size_t rows) {
  nlohmann::json meta;
  meta["file"] = csv_path.filename().string();
  meta["rows"] = rows;
  meta["config_hash"] = fnv1a_hex(config.dump());
  meta["seeds"] = seeds;
  meta["defaults_version"] = kDefaultsVersion;
  meta["config"] = config;
  auto os = open_output(csv_path.string() + ".meta.json");
  os << meta.dump(2) << '\n';
}

}  // namespace msmv
