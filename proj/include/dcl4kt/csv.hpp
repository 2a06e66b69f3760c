#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace dcl4kt::csv {

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  /// Column position by name, if present.
  std::optional<std::size_t> column(std::string_view name) const;
};

/// Reads a delimited file with a header row. Handles RFC 4180 quoting and
/// CRLF line endings; a leading UTF-8 BOM is stripped. Throws IoError.
Table read(const std::filesystem::path& path, char delimiter = ',');
Table parse(std::istream& in, char delimiter = ',');

/// Delimiter implied by the file extension (.tsv -> tab, otherwise comma).
char delimiter_for(const std::filesystem::path& path);

std::string quote(std::string_view field, char delimiter = ',');

class Writer {
 public:
  explicit Writer(const std::filesystem::path& path, char delimiter = ',');
  ~Writer();
  Writer(const Writer&) = delete;
  Writer& operator=(const Writer&) = delete;

  void row(const std::vector<std::string>& fields);

 private:
  struct Impl;
  Impl* impl_;
  char delimiter_;
};

/// Shortest round-trippable decimal form.
std::string format_double(double v);

}  // namespace dcl4kt::csv
