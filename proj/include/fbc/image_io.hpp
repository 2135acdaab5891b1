#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace fbc {

// 8-bit binary PGM; values in [0,1] are scaled by 255 and rounded half away
// from zero.
void write_pgm(const std::string& path, const std::vector<double>& values, std::int64_t width,
               std::int64_t height);

// Shortest-round-trip decimal formatting for CSV cells.
std::string format_double(double v);

void write_text_file(const std::string& path, const std::string& content);
std::string read_text_file(const std::string& path);

}  // namespace fbc
