#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace impairdetect::io {

using Json = nlohmann::json;

/// Shortest decimal representation that round-trips to the same double.
std::string format_double(double v);
/// Strict parse of a whole field; NaN/inf spelled "nan"/"inf" are accepted.
double parse_double(std::string_view s);

std::vector<std::string_view> split(std::string_view line, char sep = ',');

/// Minimal CSV table: a header row plus string fields, line numbers kept for diagnostics.
struct CsvTable {
  std::string path;
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::size_t column(std::string_view name) const;  // throws IngestError if absent
  /// Row number as a user sees it in an editor (header is row 1).
  static std::size_t file_row(std::size_t data_index) { return data_index + 2; }
};

CsvTable read_csv(const std::filesystem::path& path);

class CsvWriter {
 public:
  explicit CsvWriter(const std::filesystem::path& path);
  void row(const std::vector<std::string>& fields);
  void close();

 private:
  std::filesystem::path path_;
  std::string buffer_;
};

Json read_json(const std::filesystem::path& path);
void write_json(const std::filesystem::path& path, const Json& j);

std::string read_text(const std::filesystem::path& path);
void write_text(const std::filesystem::path& path, std::string_view text);

std::string sha256_hex(std::string_view bytes);
std::string sha256_file(const std::filesystem::path& path);

}  // namespace impairdetect::io
