#pragma once

#include <filesystem>
#include <functional>
#include <iosfwd>
#include <string>

namespace dpfuse {

/// Writes through a temporary sibling file and renames it into place, so a
/// failed stage never leaves a truncated output behind.
void write_file_atomic(const std::filesystem::path& path,
                       const std::function<void(std::ostream&)>& writer);

std::string read_file(const std::filesystem::path& path);

/// Shortest decimal form that parses back to the same double.
std::string format_double(double v);

/// Hex SHA-256 of a byte string.
std::string sha256_hex(const std::string& bytes);
std::string file_digest(const std::filesystem::path& path);

}  // namespace dpfuse
