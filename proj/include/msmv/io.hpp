#pragma once

// Output helpers shared by the CLI and the library: CSV number formatting,
// checked file creation, metadata sidecars.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace msmv {

/// Shortest round-trip text for a double: 17 significant digits, '.' decimal.
std::string format_real(double v);

/// FNV-1a 64-bit hash, hex encoded.
std::string fnv1a_hex(std::string_view text);

/// Binary-mode ofstream (LF line endings); throws std::runtime_error on failure.
std::ofstream open_output(const std::filesystem::path& path);

/// Writes `<csv_path>.meta.json` next to a CSV output.
void write_sidecar(const std::filesystem::path& csv_path, const nlohmann::json& config,
                   const std::vector<std::uint64_t>& seeds, std::size_t rows);

/// Version tag of the materialized defaults; bump when a default changes.
inline constexpr std::string_view kDefaultsVersion = "1";

}  // namespace msmv
