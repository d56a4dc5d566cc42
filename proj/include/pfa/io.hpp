#pragma once

// CSV input/output, number formatting and threshold-list parsing.

#include "pfa/core.hpp"

#include <charconv>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string_view>
#include <system_error>
#include <unistd.h>

namespace pfa {

struct ParseError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};

namespace detail {

/// Splits CSV text into records. Supports quoted fields with doubled quotes,
/// embedded separators/newlines inside quotes, and LF or CRLF line endings.
inline std::vector<std::vector<std::string>> split_csv(std::string_view text) {
  std::vector<std::vector<std::string>> records;
  std::vector<std::string> record;
  std::string field;
  bool in_quotes = false;
  bool field_started = false;
  std::size_t line = 1;

  auto end_field = [&] {
    record.push_back(std::move(field));
    field.clear();
    field_started = false;
  };
  auto end_record = [&] {
    end_field();
    if (!(record.size() == 1 && record[0].empty())) records.push_back(std::move(record));
    record.clear();
  };

  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (in_quotes) {
      if (c == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') {
          field.push_back('"');
          ++i;
        } else {
          in_quotes = false;
        }
      } else {
        if (c == '\n') ++line;
        field.push_back(c);
      }
      continue;
    }
    switch (c) {
      case '"':
        if (field_started) throw ParseError("line " + std::to_string(line) + ": stray quote inside unquoted field");
        in_quotes = true;
        field_started = true;
        break;
      case ',':
        end_field();
        break;
      case '\r':
        break;
      case '\n':
        end_record();
        ++line;
        break;
      default:
        field.push_back(c);
        field_started = true;
    }
  }
  if (in_quotes) throw ParseError("unterminated quoted field at end of input");
  if (field_started || !field.empty() || !record.empty()) end_record();
  return records;
}

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t')) s.remove_suffix(1);
  return s;
}

}  // namespace detail

inline std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open '" + path.string() + "' for reading");
  std::ostringstream ss;
  ss << in.rdbuf();
  std::string s = ss.str();
  if (s.size() >= 3 && static_cast<unsigned char>(s[0]) == 0xEF && static_cast<unsigned char>(s[1]) == 0xBB &&
      static_cast<unsigned char>(s[2]) == 0xBF) {
    s.erase(0, 3);
  }
  return s;
}

inline CsvTable parse_csv(std::string_view text) {
  auto records = detail::split_csv(text);
  if (records.empty()) throw ParseError("CSV input is empty (a header row is required)");
  CsvTable t;
  t.header = std::move(records.front());
  for (std::size_t r = 1; r < records.size(); ++r) {
    if (records[r].size() != t.header.size()) {
      throw ParseError("row " + std::to_string(r) + ": expected " + std::to_string(t.header.size()) +
                       " fields, found " + std::to_string(records[r].size()));
    }
    t.rows.push_back(std::move(records[r]));
  }
  return t;
}

inline double parse_double(std::string_view s) {
  s = detail::trim(s);
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  double v = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw ParseError("'" + std::string(s) + "' is not a number");
  }
  return v;
}

struct NumericTable {
  std::vector<std::string> names;
  Matrix values;   // rows = samples
};

/// Numeric matrix with a header row of variable names. Non-numeric or
/// non-finite cells are reported with their (1-based) data row and column.
inline NumericTable parse_numeric_csv(std::string_view text) {
  CsvTable t = parse_csv(text);
  NumericTable out;
  out.names = t.header;
  const Index n = static_cast<Index>(t.rows.size());
  const Index p = static_cast<Index>(t.header.size());
  out.values.resize(n, p);
  for (Index r = 0; r < n; ++r) {
    for (Index c = 0; c < p; ++c) {
      const std::string& cell = t.rows[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)];
      double v;
      try {
        v = parse_double(cell);
      } catch (const ParseError&) {
        throw ParseError("data row " + std::to_string(r + 1) + ", column " + std::to_string(c + 1) + " ('" +
                         t.header[static_cast<std::size_t>(c)] + "'): '" + cell + "' is not a number");
      }
      if (!std::isfinite(v)) {
        throw ParseError("data row " + std::to_string(r + 1) + ", column " + std::to_string(c + 1) +
                         ": non-finite value");
      }
      out.values(r, c) = v;
    }
  }
  return out;
}

/// One label per sample. A first line is treated as a header when the file
/// has exactly one more line than there are samples.
inline std::vector<std::string> parse_group_labels(std::string_view text, Index n_samples) {
  auto records = detail::split_csv(text);
  if (static_cast<Index>(records.size()) == n_samples + 1) records.erase(records.begin());
  if (static_cast<Index>(records.size()) != n_samples) {
    throw ParseError("group file has " + std::to_string(records.size()) + " labels but the data has " +
                     std::to_string(n_samples) + " rows");
  }
  std::vector<std::string> labels;
  labels.reserve(records.size());
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (records[i].size() != 1) throw ParseError("group file line " + std::to_string(i + 1) + ": expected one label");
    labels.emplace_back(detail::trim(records[i][0]));
  }
  return labels;
}

// ---------------------------------------------------------------------------
// Output

/// Shortest text that reads back to the same double; locale independent.
inline std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

inline std::string csv_escape(std::string_view s) {
  if (s.find_first_of(",\"\n\r") == std::string_view::npos) return std::string(s);
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
  return out;
}

class CsvWriter {
 public:
  explicit CsvWriter(const std::vector<std::string>& header) { row(header); }

  void row(const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (i) out_ += ',';
      out_ += csv_escape(cells[i]);
    }
    out_ += '\n';
  }

  const std::string& str() const noexcept { return out_; }

 private:
  std::string out_;
};

/// Writes through a temporary file in the same directory and renames it into place.
inline void write_file_atomic(const std::filesystem::path& path, std::string_view content) {
  namespace fs = std::filesystem;
  const fs::path dir = path.has_parent_path() ? path.parent_path() : fs::path(".");
  fs::create_directories(dir);
  const fs::path tmp = dir / ("." + path.filename().string() + ".tmp." + std::to_string(::getpid()));
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open '" + tmp.string() + "' for writing");
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    out.flush();
    if (!out) throw std::runtime_error("write to '" + tmp.string() + "' failed");
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) {
    fs::remove(tmp);
    throw std::runtime_error("cannot move output into '" + path.string() + "': " + ec.message());
  }
}

// ---------------------------------------------------------------------------
// Threshold lists

/// Parses "0.001,0.01", "1e-4:1e-1:20log" (20 log-spaced values) or
/// "0.01:0.1:10lin". Items may be mixed; the result is sorted and de-duplicated.
inline std::vector<double> parse_threshold_list(std::string_view spec) {
  std::set<double> values;
  std::size_t start = 0;
  while (start <= spec.size()) {
    const std::size_t comma = spec.find(',', start);
    const std::string_view item = detail::trim(spec.substr(start, comma == std::string_view::npos ? spec.npos : comma - start));
    start = comma == std::string_view::npos ? spec.size() + 1 : comma + 1;
    if (item.empty()) continue;

    const std::size_t c1 = item.find(':');
    if (c1 == std::string_view::npos) {
      values.insert(parse_double(item));
      continue;
    }
    const std::size_t c2 = item.find(':', c1 + 1);
    if (c2 == std::string_view::npos) throw ParseError("threshold range '" + std::string(item) + "' needs a:b:N(log|lin)");
    const double a = parse_double(item.substr(0, c1));
    const double b = parse_double(item.substr(c1 + 1, c2 - c1 - 1));
    std::string_view count = item.substr(c2 + 1);
    bool log_scale = true;
    if (count.size() > 3 && count.substr(count.size() - 3) == "log") {
      count.remove_suffix(3);
    } else if (count.size() > 3 && count.substr(count.size() - 3) == "lin") {
      log_scale = false;
      count.remove_suffix(3);
    } else {
      throw ParseError("threshold range '" + std::string(item) + "' must end in log or lin");
    }
    int num = 0;
    const auto res = std::from_chars(count.data(), count.data() + count.size(), num);
    if (res.ec != std::errc() || res.ptr != count.data() + count.size() || num < 1) {
      throw ParseError("threshold range '" + std::string(item) + "': bad point count");
    }
    if (!(a > 0.0 && b > 0.0 && a <= b)) throw ParseError("threshold range '" + std::string(item) + "': need 0 < a <= b");
    for (int i = 0; i < num; ++i) {
      const double f = num == 1 ? 0.0 : static_cast<double>(i) / (num - 1);
      values.insert(log_scale ? std::exp(std::log(a) + f * (std::log(b) - std::log(a))) : a + f * (b - a));
    }
  }
  if (values.empty()) throw ParseError("threshold list is empty");
  for (double v : values) {
    if (!(v > 0.0 && v < 1.0)) throw ParseError("threshold " + format_double(v) + " is outside (0,1)");
  }
  return std::vector<double>(values.begin(), values.end());
}

}  // namespace pfa
