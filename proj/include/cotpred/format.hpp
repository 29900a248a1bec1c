#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>

namespace cotpred {

/// Fixed-point rendering, e.g. format_fixed(9.4, 2) == "9.40".
std::string format_fixed(double value, int decimals);

/// Shortest text that parses back to the identical double.
std::string format_roundtrip(double value);

/// Full-string parse after trimming surrounding whitespace; nullopt on any other garbage.
std::optional<double> parse_double(std::string_view text);

std::string_view trim(std::string_view text);

/// create_directories that reports failure as IoError.
void make_directories(const std::filesystem::path &dir);

} // namespace cotpred
