#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace sqlsynth {

std::string to_lower(std::string_view s);
bool iequals(std::string_view a, std::string_view b) noexcept;

// Case-insensitive strict weak ordering for identifiers.
struct ILess {
    using is_transparent = void;
    bool operator()(std::string_view a, std::string_view b) const noexcept;
};

std::string trim(std::string_view s);
std::string rtrim(std::string_view s);

// Collapses runs of whitespace to one space and trims; also drops a trailing ';'.
std::string normalize_sql_whitespace(std::string_view s);

// Lowercase tokens split on every non-alphanumeric byte.
std::vector<std::string> tokenize_words(std::string_view s);

std::vector<std::string> split(std::string_view s, char sep);
std::string join(const std::vector<std::string>& parts, std::string_view sep);

std::uint64_t fnv1a64(std::string_view s) noexcept;

// SplitMix64 step; used to derive independent seeds.
std::uint64_t splitmix64(std::uint64_t& state) noexcept;

std::string sha256_hex(std::string_view data);

}  // namespace sqlsynth
