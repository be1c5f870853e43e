#pragma once

#include <filesystem>

#include "sodkd/grid.hpp"

namespace sodkd {

// Binary 8-bit netpbm I/O. Values are quantized with round(v * 255) on write
// and mapped back as byte / 255.0 on read, so a round trip moves a value by
// at most 1/510. Only maxval 255 is accepted.

void write_ppm(const std::filesystem::path& path, const Grid& rgb);
void write_pgm(const std::filesystem::path& path, const Grid& gray);

Grid read_ppm(const std::filesystem::path& path);
Grid read_pgm(const std::filesystem::path& path);

}  // namespace sodkd
