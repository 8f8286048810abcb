#pragma once

#include <string>

namespace towl {

/// Shortest-round-trip-safe decimal text for a double ("%.17g"). Every file
/// the library writes uses this so outputs are byte-reproducible.
std::string format_double(double v);

/// Parses text produced by format_double; throws ParseError otherwise.
double parse_double(const std::string& text, const std::string& source = "<value>");

}  // namespace towl
