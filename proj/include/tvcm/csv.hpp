#pragma once

#include <Eigen/Core>

#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

namespace tvcm::csv {

/// A parsed comma-separated file: header names plus raw cell text.
struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  /// Index of a header name, or -1.
  int column(std::string_view name) const;
};

/// Reads a header row and data rows. Surrounding whitespace and matching
/// single or double quotes are stripped from each cell. Blank lines are
/// skipped. Throws LoadError on I/O failure or ragged rows.
Table read(const std::string& path);
Table parse(std::istream& in, const std::string& source_name);

/// Parses a decimal number; throws LoadError naming (row, column) on failure.
double to_double(std::string_view cell, std::size_t row, std::string_view column);

/// Shortest decimal text that reads back to the same double.
std::string format(double v);

/// Streams rows of CSV text. Numbers are written with format().
class Writer {
 public:
  explicit Writer(std::ostream& out) : out_(out) {}
  Writer& header(const std::vector<std::string>& names);
  Writer& cell(double v);
  Writer& cell(long long v);
  Writer& cell(int v) { return cell(static_cast<long long>(v)); }
  Writer& cell(std::string_view text);
  void end_row();

 private:
  void sep();
  std::ostream& out_;
  bool row_started_ = false;
};

/// Writes a file atomically enough for our purposes (truncate + write);
/// throws Error on I/O failure.
void write_file(const std::string& path, const std::string& contents);

}  // namespace tvcm::csv
