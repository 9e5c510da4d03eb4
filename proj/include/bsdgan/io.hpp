#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace bsdgan::io {

/// Writes to a sibling temp file, then renames over `path`.
void write_file_atomic(const std::filesystem::path& path, const std::string& bytes);

std::string read_file(const std::filesystem::path& path);

/// Little-endian IEEE-754 binary32 encoding.
std::string encode_f32(std::span<const double> values);
std::vector<double> decode_f32(const std::string& bytes);

std::string sha256_hex(const std::string& bytes);
std::string sha256_file(const std::filesystem::path& path);

} // namespace bsdgan::io
