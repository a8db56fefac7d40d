#include "msit/image_io.hpp"

#include <cctype>
#include <cmath>
#include <fstream>
#include <stdexcept>
#include <vector>

namespace msit::imageio {

namespace {

// next whitespace-delimited token, skipping '#' comments
int next_int(std::istream& is, const std::string& path) {
    int c = is.get();
    while (c != EOF && (std::isspace(c) || c == '#')) {
        if (c == '#')
            while (c != EOF && c != '\n') c = is.get();
        c = is.get();
    }
    if (c == EOF) throw std::runtime_error("image: truncated header in " + path);
    int value = 0;
    bool any = false;
    while (c != EOF && std::isdigit(c)) {
        value = value * 10 + (c - '0');
        any = true;
        c = is.get();
    }
    if (!any) throw std::runtime_error("image: malformed header in " + path);
    return value;
}

unsigned char quantize(double v) {
    if (v < 0.0) v = 0.0;
    if (v > 1.0) v = 1.0;
    return static_cast<unsigned char>(std::lround(v * 255.0));
}

std::vector<unsigned char> read_payload(std::istream& is, std::size_t n, const std::string& path) {
    std::vector<unsigned char> bytes(n);
    is.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(is.gcount()) != n)
        throw std::runtime_error("image: truncated pixel data in " + path);
    return bytes;
}

} // namespace

Tensor read_ppm(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("image: cannot open " + path);
    char m0 = 0, m1 = 0;
    is.get(m0);
    is.get(m1);
    if (m0 != 'P' || m1 != '6') throw std::runtime_error("image: " + path + " is not a P6 PPM");
    const int w = next_int(is, path);
    const int h = next_int(is, path);
    const int maxval = next_int(is, path);
    if (maxval != 255) throw std::runtime_error("image: only 8-bit PPM supported: " + path);
    auto bytes = read_payload(is, static_cast<std::size_t>(w) * h * 3, path);
    Tensor img(1, 3, h, w);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c)
                img.at(0, c, y, x) = bytes[(static_cast<std::size_t>(y) * w + x) * 3 + c] / 255.0;
    return img;
}

void write_ppm(const Tensor& img, const std::string& path) {
    if (img.n() != 1 || img.c() != 3)
        throw std::invalid_argument("write_ppm: expected a [1,3,H,W] tensor");
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("image: cannot open " + path + " for writing");
    os << "P6\n" << img.w() << " " << img.h() << "\n255\n";
    std::vector<unsigned char> bytes(static_cast<std::size_t>(img.w()) * img.h() * 3);
    for (int y = 0; y < img.h(); ++y)
        for (int x = 0; x < img.w(); ++x)
            for (int c = 0; c < 3; ++c)
                bytes[(static_cast<std::size_t>(y) * img.w() + x) * 3 + c] =
                    quantize(img.at(0, c, y, x));
    os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!os) throw std::runtime_error("image: write failed for " + path);
}

Tensor read_pgm(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("image: cannot open " + path);
    char m0 = 0, m1 = 0;
    is.get(m0);
    is.get(m1);
    if (m0 != 'P' || m1 != '5') throw std::runtime_error("image: " + path + " is not a P5 PGM");
    const int w = next_int(is, path);
    const int h = next_int(is, path);
    const int maxval = next_int(is, path);
    if (maxval != 255) throw std::runtime_error("image: only 8-bit PGM supported: " + path);
    auto bytes = read_payload(is, static_cast<std::size_t>(w) * h, path);
    Tensor map(1, 1, h, w);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) map.at(0, 0, y, x) = bytes[static_cast<std::size_t>(y) * w + x] / 255.0;
    return map;
}

void write_pgm(const Tensor& map, const std::string& path) {
    if (map.n() != 1 || map.c() != 1)
        throw std::invalid_argument("write_pgm: expected a [1,1,H,W] tensor");
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("image: cannot open " + path + " for writing");
    os << "P5\n" << map.w() << " " << map.h() << "\n255\n";
    std::vector<unsigned char> bytes(static_cast<std::size_t>(map.w()) * map.h());
    for (int y = 0; y < map.h(); ++y)
        for (int x = 0; x < map.w(); ++x)
            bytes[static_cast<std::size_t>(y) * map.w() + x] = quantize(map.at(0, 0, y, x));
    os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!os) throw std::runtime_error("image: write failed for " + path);
}

} // namespace msit::imageio
