#pragma once

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

namespace pkeval {

using json = nlohmann::json;

/// Streams a newline-delimited JSON file, calling fn(line_number, object) for
/// each non-empty line. Line numbers are 1-based. Throws on unreadable file or
/// malformed line (message carries the line number).
void for_each_jsonl(const std::filesystem::path& path,
                    const std::function<void(size_t, json&&)>& fn);

/// Reads a whole JSONL file into memory.
std::vector<json> read_jsonl(const std::filesystem::path& path);

/// Writes one compact JSON object per line. Creates parent directories.
/// nlohmann keeps object keys sorted, so output is byte-deterministic.
void write_jsonl(const std::filesystem::path& path, const std::vector<json>& rows);

/// Appends a single row; used by resumable stages for partial progress.
void append_jsonl(const std::filesystem::path& path, const json& row);

/// Reads an entire file into a string. Throws if unreadable.
std::string read_text_file(const std::filesystem::path& path);

/// Writes a string to a file, creating parent directories.
void write_text_file(const std::filesystem::path& path, const std::string& content);

}  // namespace pkeval
