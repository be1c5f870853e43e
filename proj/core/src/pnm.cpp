#include "sodkd/pnm.hpp"

#include <cmath>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "sodkd/errors.hpp"

namespace sodkd {

namespace {

void write_pnm(const std::filesystem::path& path, const Grid& g, int channels, const char* magic) {
    if (g.channels != channels) {
        throw ShapeError(path.string() + ": expected " + std::to_string(channels) +
                         "-channel grid, got " + std::to_string(g.channels));
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error(path.string() + ": cannot open for writing");
    out << magic << "\n" << g.width << " " << g.height << "\n255\n";
    std::vector<unsigned char> bytes(g.data.size());
    for (std::size_t i = 0; i < g.data.size(); ++i) {
        double v = g.data[i];
        if (v < 0.0) v = 0.0;
        if (v > 1.0) v = 1.0;
        bytes[i] = static_cast<unsigned char>(std::lround(v * 255.0));
    }
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error(path.string() + ": write failed");
}

// Reads the next whitespace-delimited header token, skipping '#' comments.
std::string next_token(std::istream& in, const std::filesystem::path& path) {
    std::string tok;
    int c = in.get();
    while (c != EOF) {
        if (c == '#') {
            while (c != EOF && c != '\n') c = in.get();
        } else if (std::isspace(c)) {
            c = in.get();
        } else {
            break;
        }
    }
    while (c != EOF && !std::isspace(c) && c != '#') {
        tok.push_back(static_cast<char>(c));
        c = in.get();
    }
    if (c == '#') in.unget();
    if (tok.empty()) throw ParseError(path.string() + ": truncated header");
    return tok;
}

int parse_dim(const std::string& tok, const std::filesystem::path& path, const char* what) {
    for (char ch : tok) {
        if (!std::isdigit(static_cast<unsigned char>(ch))) {
            throw ParseError(path.string() + ": invalid " + what + " '" + tok + "'");
        }
    }
    long v = 0;
    try {
        v = std::stol(tok);
    } catch (const std::exception&) {
        throw ParseError(path.string() + ": invalid " + what + " '" + tok + "'");
    }
    if (v < 1 || v > 1 << 20) {
        throw ParseError(path.string() + ": out-of-range " + what + " '" + tok + "'");
    }
    return static_cast<int>(v);
}

Grid read_pnm(const std::filesystem::path& path, int channels, const char* magic) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParseError(path.string() + ": cannot open");
    std::string m = next_token(in, path);
    if (m != magic) {
        throw ParseError(path.string() + ": bad magic '" + m + "', expected " + magic);
    }
    const int width = parse_dim(next_token(in, path), path, "width");
    const int height = parse_dim(next_token(in, path), path, "height");
    const int maxval = parse_dim(next_token(in, path), path, "maxval");
    if (maxval != 255) {
        throw ParseError(path.string() + ": unsupported maxval " + std::to_string(maxval));
    }
    // The header ends with exactly one whitespace byte before the raster.
    Grid g(height, width, channels);
    std::vector<unsigned char> bytes(g.data.size());
    in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (in.gcount() != static_cast<std::streamsize>(bytes.size())) {
        throw ParseError(path.string() + ": truncated pixel data");
    }
    for (std::size_t i = 0; i < bytes.size(); ++i) g.data[i] = bytes[i] / 255.0;
    return g;
}

}  // namespace

void write_ppm(const std::filesystem::path& path, const Grid& rgb) {
    write_pnm(path, rgb, 3, "P6");
}

void write_pgm(const std::filesystem::path& path, const Grid& gray) {
    write_pnm(path, gray, 1, "P5");
}

Grid read_ppm(const std::filesystem::path& path) { return read_pnm(path, 3, "P6"); }

Grid read_pgm(const std::filesystem::path& path) { return read_pnm(path, 1, "P5"); }

}  // namespace sodkd
