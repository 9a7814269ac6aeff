#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace i2e {

std::vector<std::string> split(std::string_view s, char sep);
std::string trim(std::string_view s);
std::string join(const std::vector<std::string>& parts, std::string_view sep);

/// Strict decimal parse of the whole string.
std::optional<double> parse_double(std::string_view s);
/// Shortest representation that round-trips.
std::string format_double(double v);

std::string url_encode(std::string_view s);

std::string read_file(const std::filesystem::path& path);
/// Writes to a sibling temporary file and renames it over `path`.
void write_file_atomic(const std::filesystem::path& path, std::string_view content);

}  // namespace i2e
