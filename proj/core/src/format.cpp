#include "towl/format.hpp"

#include <cstdio>
#include <cstdlib>

#include "towl/error.hpp"

namespace towl {

std::string format_double(double v) {
  char buf[40];
  const int n = std::snprintf(buf, sizeof buf, "%.17g", v);
  return std::string(buf, static_cast<std::size_t>(n));
}

double parse_double(const std::string& text, const std::string& source) {
  char* end = nullptr;
  const double v = std::strtod(text.c_str(), &end);
  if (text.empty() || end != text.c_str() + text.size()) {
    throw ParseError(source, 0, "expected a number, got '" + text + "'");
  }
  return v;
}

}  // namespace towl
