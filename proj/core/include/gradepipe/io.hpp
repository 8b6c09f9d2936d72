#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

namespace gradepipe::io {

// Reads a whole file as bytes. Throws Error{MissingFile} when absent.
std::string read_file(const std::filesystem::path& path);

// Writes bytes, creating parent directories. Throws Error{Io} on failure.
void write_file(const std::filesystem::path& path, std::string_view bytes);

std::string sha256_hex(std::string_view bytes);

// Formats with exactly two decimals ("5.74"), used for all presented scores.
std::string format_2dp(double value);

std::string to_lower(std::string_view s);
std::string_view trim(std::string_view s);

// Stable 64-bit mixing for deriving child seeds.
std::uint64_t splitmix64(std::uint64_t x);
std::uint64_t fnv1a64(std::string_view bytes);

}  // namespace gradepipe::io
