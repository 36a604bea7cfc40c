#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace cac::png {

struct RgbImage {
    std::int64_t width = 0;
    std::int64_t height = 0;
    std::vector<std::uint8_t> pixels;  // row-major RGB triples

    std::uint8_t* at(std::int64_t y, std::int64_t x) { return &pixels[static_cast<std::size_t>((y * width + x) * 3)]; }
    const std::uint8_t* at(std::int64_t y, std::int64_t x) const {
        return &pixels[static_cast<std::size_t>((y * width + x) * 3)];
    }
};

/// 8-bit RGB, no interlace, filter type 0 on every row.
std::string encode(const RgbImage& image);

/// Decodes what `encode` writes (8-bit RGB, filter 0). Used to inspect
/// served images.
RgbImage decode(const std::string& data);

}  // namespace cac::png
