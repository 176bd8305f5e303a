#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace fata {

/// In-memory CSV table: header plus rows of raw string cells.
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  /// Column index for `name`, or -1.
  [[nodiscard]] int column(std::string_view name) const;
  /// Column index for `name`; throws ConfigError if absent.
  [[nodiscard]] std::size_t require_column(std::string_view name) const;
};

/// Parses RFC 4180-style CSV (quoted cells, doubled quotes). Every row must
/// have as many cells as the header.
CsvTable parse_csv(std::string_view text);
CsvTable read_csv(const std::filesystem::path& path);

std::string format_csv(const CsvTable& table);
void write_csv(const std::filesystem::path& path, const CsvTable& table);

}  // namespace fata
