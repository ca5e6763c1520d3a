#pragma once

// Binary PGM (P5, maxval 255) for density images. Solid material is black:
// a density d is stored as the byte round((1 - d) * 255), so a round trip is
// exact to within 1/510.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <stdexcept>
#include <string>
#include <vector>

namespace topocnn {

class ImageError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Grayscale density image, row-major with the origin at the top-left.
struct Image {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> density;

    Image() = default;
    Image(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), density(r * c, fill) {}

    double& operator()(std::size_t r, std::size_t c) { return density[r * cols + c]; }
    double operator()(std::size_t r, std::size_t c) const { return density[r * cols + c]; }

    friend bool operator==(const Image&, const Image&) = default;
};

inline std::uint8_t density_to_byte(double d) {
    const double v = std::floor((1.0 - std::clamp(d, 0.0, 1.0)) * 255.0 + 0.5);
    return static_cast<std::uint8_t>(v);
}

inline double byte_to_density(std::uint8_t b) { return 1.0 - static_cast<double>(b) / 255.0; }

inline std::vector<std::uint8_t> encode_pgm(const Image& img) {
    const std::string header = "P5\n" + std::to_string(img.cols) + " " + std::to_string(img.rows) + "\n255\n";
    std::vector<std::uint8_t> out(header.begin(), header.end());
    out.reserve(header.size() + img.density.size());
    for (double d : img.density) out.push_back(density_to_byte(d));
    return out;
}

inline Image decode_pgm(const std::vector<std::uint8_t>& bytes, const std::string& origin = "<memory>") {
    std::size_t pos = 0;
    auto fail = [&](const std::string& msg) -> ImageError { return ImageError(origin + ": " + msg); };
    auto skip_space = [&] {
        while (pos < bytes.size()) {
            if (bytes[pos] == '#') {
                while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
            } else if (std::isspace(bytes[pos])) {
                ++pos;
            } else {
                break;
            }
        }
    };
    auto read_uint = [&](const char* what) {
        skip_space();
        if (pos >= bytes.size() || !std::isdigit(bytes[pos])) throw fail(std::string("malformed header (") + what + ")");
        std::size_t v = 0;
        while (pos < bytes.size() && std::isdigit(bytes[pos])) {
            v = v * 10 + static_cast<std::size_t>(bytes[pos] - '0');
            if (v > (1u << 24)) throw fail(std::string("header value too large (") + what + ")");
            ++pos;
        }
        return v;
    };

    if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '5') throw fail("not a binary PGM (expected P5 magic)");
    pos = 2;
    const std::size_t cols = read_uint("width");
    const std::size_t rows = read_uint("height");
    const std::size_t maxval = read_uint("maxval");
    if (cols == 0 || rows == 0) throw fail("zero image dimension");
    if (maxval != 255) throw fail("maxval " + std::to_string(maxval) + " unsupported (expected 255)");
    if (pos >= bytes.size() || !std::isspace(bytes[pos])) throw fail("malformed header (missing separator)");
    ++pos;
    if (bytes.size() - pos < rows * cols) throw fail("truncated pixel data");

    Image img(rows, cols);
    for (std::size_t i = 0; i < rows * cols; ++i) img.density[i] = byte_to_density(bytes[pos + i]);
    return img;
}

inline void write_pgm(const Image& img, const std::filesystem::path& path) {
    const auto bytes = encode_pgm(img);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw ImageError("cannot open " + path.string() + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw ImageError("write failed: " + path.string());
}

inline Image read_pgm(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ImageError("cannot open " + path.string());
    const std::vector<std::uint8_t> bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
    return decode_pgm(bytes, path.string());
}

/// Images placed left to right with a one-pixel white gutter; all must share a height.
inline Image hconcat(const std::vector<Image>& parts) {
    if (parts.empty()) return {};
    const std::size_t rows = parts.front().rows;
    std::size_t cols = 0;
    for (const auto& p : parts) {
        if (p.rows != rows) throw ImageError("hconcat: image heights differ");
        cols += p.cols;
    }
    cols += parts.size() - 1;
    Image out(rows, cols, 0.0);
    std::size_t off = 0;
    for (const auto& p : parts) {
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < p.cols; ++c) out(r, off + c) = p(r, c);
        off += p.cols + 1;
    }
    return out;
}

}  // namespace topocnn
