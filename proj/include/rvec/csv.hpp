#pragma once

#include <charconv>
#include <sstream>
#include <string>
#include <string_view>
#include <type_traits>

namespace rvec {

/// Round-trippable, locale-independent formatting for CSV/JSON text outputs.
inline std::string format_double(double v) {
  char buf[40];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

/// Minimal CSV builder; fields are written verbatim (no quoting needed for our outputs).
class CsvWriter {
 public:
  explicit CsvWriter(std::string_view header) { out_ << header << '\n'; }

  template <typename... Fields>
  void row(const Fields&... fields) {
    bool first = true;
    ((out_ << (first ? "" : ",") << field(fields), first = false), ...);
    out_ << '\n';
  }

  std::string str() const { return out_.str(); }

 private:
  static std::string field(double v) { return format_double(v); }
  static std::string field(std::string_view s) { return std::string(s); }
  static std::string field(const std::string& s) { return s; }
  static std::string field(const char* s) { return s; }
  template <typename I>
    requires std::is_integral_v<I>
  static std::string field(I v) { return std::to_string(v); }

  std::ostringstream out_;
};

}  // namespace rvec
