#include "dcl4kt/csv.hpp"

#include "dcl4kt/types.hpp"

#include <charconv>
#include <fstream>
#include <istream>
#include <sstream>

namespace dcl4kt::csv {

std::optional<std::size_t> Table::column(std::string_view name) const {
  for (std::size_t i = 0; i < header.size(); ++i)
    if (header[i] == name) return i;
  return std::nullopt;
}

namespace {

// Splits one logical record; returns false at end of input.
bool next_record(std::istream& in, char delim, std::vector<std::string>& out) {
  out.clear();
  if (in.peek() == std::char_traits<char>::eof()) return false;
  std::string field;
  bool quoted = false;
  bool any = false;
  for (int ch; (ch = in.get()) != std::char_traits<char>::eof();) {
    any = true;
    char c = static_cast<char>(ch);
    if (quoted) {
      if (c == '"') {
        if (in.peek() == '"') {
          field.push_back('"');
          in.get();
        } else {
          quoted = false;
        }
      } else {
        field.push_back(c);
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == delim) {
      out.push_back(std::move(field));
      field.clear();
    } else if (c == '\n') {
      break;
    } else if (c == '\r') {
      if (in.peek() == '\n') in.get();
      break;
    } else {
      field.push_back(c);
    }
  }
  if (!any) return false;
  out.push_back(std::move(field));
  return true;
}

bool blank(const std::vector<std::string>& rec) {
  return rec.size() == 1 && rec[0].empty();
}

}  // namespace

Table parse(std::istream& in, char delimiter) {
  Table t;
  std::vector<std::string> rec;
  while (next_record(in, delimiter, rec)) {
    if (blank(rec)) continue;
    if (t.header.empty()) {
      if (rec[0].size() >= 3 && rec[0].compare(0, 3, "\xEF\xBB\xBF") == 0) rec[0].erase(0, 3);
      t.header = rec;
    } else {
      t.rows.push_back(rec);
    }
  }
  return t;
}

Table read(const std::filesystem::path& path, char delimiter) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return parse(in, delimiter);
}

char delimiter_for(const std::filesystem::path& path) {
  return path.extension() == ".tsv" ? '\t' : ',';
}

std::string quote(std::string_view field, char delimiter) {
  bool needs = field.find_first_of(std::string{delimiter, '"', '\n', '\r'}) != std::string_view::npos;
  if (!needs) return std::string(field);
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out.push_back('"');
    out.push_back(c);
  }
  out.push_back('"');
  return out;
}

struct Writer::Impl {
  std::ofstream out;
};

Writer::Writer(const std::filesystem::path& path, char delimiter)
    : impl_(new Impl), delimiter_(delimiter) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  impl_->out.open(path, std::ios::binary | std::ios::trunc);
  if (!impl_->out) {
    delete impl_;
    throw IoError("cannot write " + path.string());
  }
}

Writer::~Writer() { delete impl_; }

void Writer::row(const std::vector<std::string>& fields) {
  for (std::size_t i = 0; i < fields.size(); ++i) {
    if (i) impl_->out.put(delimiter_);
    impl_->out << quote(fields[i], delimiter_);
  }
  impl_->out.put('\n');
}

std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

}  // namespace dcl4kt::csv
