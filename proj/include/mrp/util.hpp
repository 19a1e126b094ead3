#ifndef MRP_UTIL_HPP
#define MRP_UTIL_HPP

#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace mrp {

/// Shortest decimal text that parses back to the identical double.
std::string format_double(double value);
/// Strict parse of a whole string; throws Error(parse_error) naming `what`.
double parse_double(std::string_view text, std::string_view what);

std::string sha256_hex(std::string_view bytes);
std::string sha256_hex(std::span<const double> values);

std::string read_file(const std::filesystem::path& path);
/// Writes through a temporary file in the same directory, then renames.
void write_file(const std::filesystem::path& path, std::string_view contents);

}  // namespace mrp

#endif  // MRP_UTIL_HPP
