#pragma once

#include <filesystem>
#include <string>
#include <string_view>

namespace pkeval {

/// Hex-encoded SHA-256 of a byte string.
std::string sha256_hex(std::string_view data);

/// Hex-encoded SHA-256 of a file's contents. Throws if the file cannot be read.
std::string sha256_file(const std::filesystem::path& path);

}  // namespace pkeval
