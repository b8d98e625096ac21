#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace sltlab {

/// Input that fails validation before any work starts (CLI exit code 1).
class ValidationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A file is missing a required column or is otherwise malformed.
class SchemaError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Round-trip text for a double: 17 significant digits.
std::string format_double(double v);
double parse_double(std::string_view text);

/// Header + rows of text cells; numeric access parses on demand.
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  void add_numeric_row(const std::vector<double>& values);

  /// Index of a named column; throws SchemaError naming the column when absent.
  std::size_t column(std::string_view name) const;
  double number(std::size_t row, std::size_t col) const;
  std::vector<double> column_values(std::string_view name) const;
};

void write_csv(const std::filesystem::path& path, const CsvTable& table);
CsvTable read_csv(const std::filesystem::path& path);

std::string read_text(const std::filesystem::path& path);
void write_text(const std::filesystem::path& path, std::string_view text);

}  // namespace sltlab
