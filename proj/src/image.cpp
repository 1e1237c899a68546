#include "tokgov/image.hpp"

#include <cctype>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "tokgov/common.hpp"

namespace tokgov {

namespace {

// Skips whitespace and '#' comments between PPM header fields.
int next_header_int(std::istream& in, const std::string& path) {
    for (;;) {
        int c = in.peek();
        if (c == '#') {
            std::string line;
            std::getline(in, line);
        } else if (std::isspace(c)) {
            in.get();
        } else {
            break;
        }
    }
    int v = -1;
    in >> v;
    if (!in || v < 0) throw ParseError("bad PPM header field in " + path);
    return v;
}

}  // namespace

Image read_ppm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IOError("cannot open image: " + path);
    std::string magic(2, '\0');
    in.read(magic.data(), 2);
    if (magic != "P6") throw ParseError("not a binary PPM (P6): " + path);
    int w = next_header_int(in, path);
    int h = next_header_int(in, path);
    int maxval = next_header_int(in, path);
    if (maxval != 255) throw ParseError("unsupported PPM maxval in " + path);
    in.get();  // single whitespace after maxval
    Image img(w, h);
    in.read(reinterpret_cast<char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
    if (in.gcount() != static_cast<std::streamsize>(img.pixels.size()))
        throw ParseError("truncated PPM payload: " + path);
    return img;
}

std::string encode_ppm(const Image& img) {
    std::ostringstream out;
    out << "P6\n" << img.width << " " << img.height << "\n255\n";
    out.write(reinterpret_cast<const char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
    return out.str();
}

void write_ppm(const Image& img, const std::string& path) {
    write_file_atomic(path, encode_ppm(img));
}

}  // namespace tokgov
