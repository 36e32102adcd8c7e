#pragma once

#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace nlskit::detail {

std::vector<std::string_view> split(std::string_view line, char sep);

/// Full-field numeric parses; nullopt on trailing garbage or overflow.
std::optional<double> parse_double(std::string_view field);
std::optional<long long> parse_int(std::string_view field);

/// Shortest round-trip decimal with at least `min_fraction` fractional digits.
std::string format_fixed_min(double value, int min_fraction);

/// printf %.6g, the statistics report format.
std::string format_sig6(double value);

std::ifstream open_input(const std::filesystem::path& path);
std::ofstream open_output(const std::filesystem::path& path, bool binary = false);

/// Line reader that strips CR and tracks 1-based line numbers.
class LineReader {
 public:
  explicit LineReader(std::istream& in) : in_(in) {}

  bool next(std::string& line);
  std::size_t line_number() const { return line_number_; }

 private:
  std::istream& in_;
  std::size_t line_number_ = 0;
};

}  // namespace nlskit::detail
