#include "fbc/image_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace fbc {

void write_pgm(const std::string& path, const std::vector<double>& values, std::int64_t width,
               std::int64_t height) {
    if (static_cast<std::int64_t>(values.size()) != width * height) {
        throw std::invalid_argument("write_pgm: value count does not match extents");
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw std::runtime_error("write_pgm: cannot open " + path);
    }
    out << "P5\n" << width << " " << height << "\n255\n";
    std::vector<unsigned char> bytes(values.size());
    for (std::size_t i = 0; i < values.size(); ++i) {
        const long v = std::lround(values[i] * 255.0);
        bytes[i] = static_cast<unsigned char>(std::clamp<long>(v, 0, 255));
    }
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
}

std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

void write_text_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw std::runtime_error("cannot write " + path);
    }
    out << content;
}

std::string read_text_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw std::runtime_error("cannot read " + path);
    }
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

}  // namespace fbc
