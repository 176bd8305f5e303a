#include "fata/csv.hpp"

#include <fstream>
#include <sstream>

#include "fata/error.hpp"

namespace fata {

int CsvTable::column(std::string_view name) const {
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (header[i] == name) return static_cast<int>(i);
  }
  return -1;
}

std::size_t CsvTable::require_column(std::string_view name) const {
  const int c = column(name);
  if (c < 0) throw ConfigError("missing required column '" + std::string(name) + "'");
  return static_cast<std::size_t>(c);
}

namespace {

// Splits one logical record starting at `pos`; advances `pos` past the line end.
std::vector<std::string> next_record(std::string_view text, std::size_t& pos, std::size_t line) {
  std::vector<std::string> cells;
  std::string cell;
  bool quoted = false;
  bool cell_was_quoted = false;
  while (pos < text.size()) {
    const char ch = text[pos];
    if (quoted) {
      if (ch == '"') {
        if (pos + 1 < text.size() && text[pos + 1] == '"') {
          cell.push_back('"');
          pos += 2;
          continue;
        }
        quoted = false;
        ++pos;
        continue;
      }
      cell.push_back(ch);
      ++pos;
      continue;
    }
    if (ch == '"' && cell.empty() && !cell_was_quoted) {
      quoted = true;
      cell_was_quoted = true;
      ++pos;
    } else if (ch == ',') {
      cells.push_back(std::move(cell));
      cell.clear();
      cell_was_quoted = false;
      ++pos;
    } else if (ch == '\n' || ch == '\r') {
      if (ch == '\r' && pos + 1 < text.size() && text[pos + 1] == '\n') ++pos;
      ++pos;
      cells.push_back(std::move(cell));
      return cells;
    } else {
      cell.push_back(ch);
      ++pos;
    }
  }
  if (quoted) throw ConfigError("unterminated quoted cell at line " + std::to_string(line));
  cells.push_back(std::move(cell));
  return cells;
}

bool needs_quotes(std::string_view cell) {
  return cell.find_first_of(",\"\r\n") != std::string_view::npos;
}

}  // namespace

CsvTable parse_csv(std::string_view text) {
  CsvTable table;
  std::size_t pos = 0;
  std::size_t line = 1;
  if (text.size() >= 3 && text.substr(0, 3) == "\xEF\xBB\xBF") pos = 3;
  if (pos >= text.size()) throw ConfigError("empty CSV input");
  table.header = next_record(text, pos, line);
  while (pos < text.size()) {
    ++line;
    auto cells = next_record(text, pos, line);
    if (cells.size() == 1 && cells[0].empty()) continue;  // blank line
    if (cells.size() != table.header.size()) {
      throw ConfigError("CSV line " + std::to_string(line) + " has " + std::to_string(cells.size()) +
                        " cells, header has " + std::to_string(table.header.size()));
    }
    table.rows.push_back(std::move(cells));
  }
  return table;
}

CsvTable read_csv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open CSV file " + path.string());
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return parse_csv(buffer.str());
}

std::string format_csv(const CsvTable& table) {
  std::string out;
  auto put_row = [&out](const std::vector<std::string>& row) {
    for (std::size_t i = 0; i < row.size(); ++i) {
      if (i) out.push_back(',');
      if (needs_quotes(row[i])) {
        out.push_back('"');
        for (char ch : row[i]) {
          if (ch == '"') out.push_back('"');
          out.push_back(ch);
        }
        out.push_back('"');
      } else {
        out += row[i];
      }
    }
    out.push_back('\n');
  };
  put_row(table.header);
  for (const auto& row : table.rows) put_row(row);
  return out;
}

void write_csv(const std::filesystem::path& path, const CsvTable& table) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write CSV file " + path.string());
  out << format_csv(table);
}

}  // namespace fata
