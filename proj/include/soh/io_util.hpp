#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <string>
#include <string_view>

namespace soh::util {

// Shortest decimal string that parses back to the exact same double.
std::string format_double(double value);

// Strict double parse of the whole token. Throws ParseError on failure or
// non-finite result; `row` is forwarded into the error message when >= 0.
double parse_double(std::string_view token, long row = -1);

long parse_long(std::string_view token, long row = -1);

std::uint64_t fnv1a64(std::string_view bytes);
std::string fnv1a64_hex(std::string_view bytes);

std::string read_file(const std::filesystem::path& path);

// Writes via a temp file in the same directory, then renames into place.
void atomic_write_file(const std::filesystem::path& path, std::string_view content);

// Portable draws on top of mt19937_64 (std distributions are not bit-stable
// across standard libraries; these are).
double uniform01(std::mt19937_64& rng);                     // [0, 1)
double uniform_range(std::mt19937_64& rng, double lo, double hi);
double gaussian(std::mt19937_64& rng, double mean, double stddev);  // Box-Muller

}  // namespace soh::util
