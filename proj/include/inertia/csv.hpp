#pragma once

#include <charconv>
#include <cmath>
#include <chrono>
#include <cstdio>
#include <istream>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace inertia {

using Instant = std::chrono::sys_seconds;

/// Malformed input data. Carries the 1-based line number when known (0 otherwise).
class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& source, std::size_t line, const std::string& what)
      : std::runtime_error(source + (line ? ":" + std::to_string(line) : std::string{}) + ": " + what),
        line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

namespace io {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

inline std::vector<std::string_view> split(std::string_view line, char sep = ',') {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  for (;;) {
    const auto pos = line.find(sep, start);
    if (pos == std::string_view::npos) {
      fields.push_back(trim(line.substr(start)));
      return fields;
    }
    fields.push_back(trim(line.substr(start, pos - start)));
    start = pos + 1;
  }
}

inline std::optional<double> parse_double(std::string_view s) {
  s = trim(s);
  if (s.empty()) return std::nullopt;
  if (s.front() == '+') s.remove_prefix(1);
  double value = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
  if (ec != std::errc{} || ptr != s.data() + s.size()) return std::nullopt;
  return value;
}

inline std::optional<long long> parse_int(std::string_view s) {
  s = trim(s);
  long long value = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
  if (s.empty() || ec != std::errc{} || ptr != s.data() + s.size()) return std::nullopt;
  return value;
}

/// Shortest representation that reads back to the same double.
inline std::string format_double(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  if (v == 0.0) return "0";  // folds -0
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

/// Accepts `YYYY-MM-DDTHH:MM:SS` with an optional `Z` or `+00:00` suffix
/// (a space is accepted in place of `T`). Only UTC is supported.
inline std::optional<Instant> parse_instant(std::string_view s) {
  s = trim(s);
  if (s.ends_with('Z')) s.remove_suffix(1);
  else if (s.ends_with("+00:00")) s.remove_suffix(6);
  if (s.size() != 19 || s[4] != '-' || s[7] != '-' || (s[10] != 'T' && s[10] != ' ') || s[13] != ':' ||
      s[16] != ':')
    return std::nullopt;
  auto num = [&](std::size_t pos, std::size_t len) -> std::optional<int> {
    int v = 0;
    for (std::size_t i = pos; i < pos + len; ++i) {
      if (s[i] < '0' || s[i] > '9') return std::nullopt;
      v = v * 10 + (s[i] - '0');
    }
    return v;
  };
  const auto y = num(0, 4), mo = num(5, 2), d = num(8, 2), h = num(11, 2), mi = num(14, 2), se = num(17, 2);
  if (!y || !mo || !d || !h || !mi || !se) return std::nullopt;
  using namespace std::chrono;
  const year_month_day ymd{year{*y}, month{static_cast<unsigned>(*mo)}, day{static_cast<unsigned>(*d)}};
  if (!ymd.ok() || *h > 23 || *mi > 59 || *se > 59) return std::nullopt;
  return sys_days{ymd} + hours{*h} + minutes{*mi} + seconds{*se};
}

inline std::string format_instant(Instant t) {
  using namespace std::chrono;
  const auto day_start = floor<days>(t);
  const year_month_day ymd{day_start};
  const hh_mm_ss hms{t - day_start};
  char buf[32];
  std::snprintf(buf, sizeof buf, "%04d-%02u-%02uT%02d:%02d:%02dZ", static_cast<int>(ymd.year()),
                static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()),
                static_cast<int>(hms.hours().count()), static_cast<int>(hms.minutes().count()),
                static_cast<int>(hms.seconds().count()));
  return buf;
}

/// Line-oriented CSV reader with a mandatory header row.
class CsvReader {
 public:
  CsvReader(std::istream& in, std::string source) : in_(in), source_(std::move(source)) {}

  /// Reads the header and checks it column by column against `expected`.
  void expect_header(std::initializer_list<std::string_view> expected) {
    std::string line;
    if (!std::getline(in_, line)) throw ParseError(source_, 1, "missing header row");
    line_no_ = 1;
    if (line.starts_with("\xEF\xBB\xBF")) line.erase(0, 3);
    const auto got = split(line);
    std::size_t i = 0;
    for (const auto col : expected) {
      if (i >= got.size()) throw ParseError(source_, 1, "missing column '" + std::string(col) + "'");
      if (got[i] != col)
        throw ParseError(source_, 1,
                         "unexpected column '" + std::string(got[i]) + "', expected '" + std::string(col) + "'");
      ++i;
    }
    if (got.size() != expected.size())
      throw ParseError(source_, 1, "unexpected extra column '" + std::string(got[i]) + "'");
    columns_ = expected.size();
  }

  /// Next non-empty data row, split into exactly as many fields as the header.
  bool next(std::vector<std::string_view>& fields) {
    while (std::getline(in_, current_)) {
      ++line_no_;
      if (trim(current_).empty()) continue;
      fields = split(current_);
      if (fields.size() != columns_)
        fail("expected " + std::to_string(columns_) + " fields, got " + std::to_string(fields.size()));
      return true;
    }
    return false;
  }

  [[noreturn]] void fail(const std::string& what) const { throw ParseError(source_, line_no_, what); }

  double number(std::string_view field, std::string_view name) const {
    const auto v = parse_double(field);
    if (!v) fail("malformed number '" + std::string(field) + "' in column " + std::string(name));
    return *v;
  }

  Instant instant(std::string_view field) const {
    const auto t = parse_instant(field);
    if (!t) fail("malformed timestamp '" + std::string(field) + "'");
    return *t;
  }

  std::size_t line() const noexcept { return line_no_; }
  const std::string& source() const noexcept { return source_; }

 private:
  std::istream& in_;
  std::string source_;
  std::string current_;
  std::size_t line_no_ = 0;
  std::size_t columns_ = 0;
};

}  // namespace io
}  // namespace inertia
