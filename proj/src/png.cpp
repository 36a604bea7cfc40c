#include "png.hpp"

#include <cstring>

#include <zlib.h>

#include "error.hpp"

namespace cac::png {

namespace {

constexpr unsigned char kSignature[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};

void put_u32(std::string& out, std::uint32_t v) {
    out += static_cast<char>((v >> 24) & 0xff);
    out += static_cast<char>((v >> 16) & 0xff);
    out += static_cast<char>((v >> 8) & 0xff);
    out += static_cast<char>(v & 0xff);
}

std::uint32_t get_u32(const std::string& s, std::size_t pos) {
    if (pos + 4 > s.size()) fail(ErrorCode::Parse, "png: truncated");
    auto b = [&](std::size_t i) { return static_cast<std::uint32_t>(static_cast<unsigned char>(s[pos + i])); };
    return (b(0) << 24) | (b(1) << 16) | (b(2) << 8) | b(3);
}

void put_chunk(std::string& out, const char* type, const std::string& data) {
    put_u32(out, static_cast<std::uint32_t>(data.size()));
    std::string body(type, 4);
    body += data;
    out += body;
    auto crc = crc32(0L, reinterpret_cast<const Bytef*>(body.data()), static_cast<uInt>(body.size()));
    put_u32(out, static_cast<std::uint32_t>(crc));
}

}  // namespace

std::string encode(const RgbImage& image) {
    if (image.width <= 0 || image.height <= 0 ||
        image.pixels.size() != static_cast<std::size_t>(image.width * image.height * 3))
        fail(ErrorCode::InvalidArgument, "png: bad image dimensions");
    std::string raw;
    const auto stride = static_cast<std::size_t>(image.width * 3);
    raw.reserve((stride + 1) * static_cast<std::size_t>(image.height));
    for (std::int64_t y = 0; y < image.height; ++y) {
        raw += '\0';
        raw.append(reinterpret_cast<const char*>(image.at(y, 0)), stride);
    }
    uLongf clen = compressBound(static_cast<uLong>(raw.size()));
    std::string comp(clen, '\0');
    if (compress2(reinterpret_cast<Bytef*>(comp.data()), &clen, reinterpret_cast<const Bytef*>(raw.data()),
                  static_cast<uLong>(raw.size()), 6) != Z_OK)
        fail(ErrorCode::Internal, "png: deflate failed");
    comp.resize(clen);

    std::string out(reinterpret_cast<const char*>(kSignature), 8);
    std::string ihdr;
    put_u32(ihdr, static_cast<std::uint32_t>(image.width));
    put_u32(ihdr, static_cast<std::uint32_t>(image.height));
    ihdr += static_cast<char>(8);  // bit depth
    ihdr += static_cast<char>(2);  // truecolor
    ihdr += std::string(3, '\0');  // compression, filter, interlace
    put_chunk(out, "IHDR", ihdr);
    put_chunk(out, "IDAT", comp);
    put_chunk(out, "IEND", {});
    return out;
}

RgbImage decode(const std::string& data) {
    if (data.size() < 8 || std::memcmp(data.data(), kSignature, 8) != 0) fail(ErrorCode::Parse, "png: bad signature");
    RgbImage img;
    std::string idat;
    for (std::size_t pos = 8; pos < data.size();) {
        const auto len = get_u32(data, pos);
        if (pos + 12 + len > data.size()) fail(ErrorCode::Parse, "png: truncated chunk");
        const std::string type = data.substr(pos + 4, 4);
        const std::string body = data.substr(pos + 8, len);
        const auto crc = crc32(0L, reinterpret_cast<const Bytef*>(data.data() + pos + 4), len + 4);
        if (crc != get_u32(data, pos + 8 + len)) fail(ErrorCode::Parse, "png: crc mismatch in " + type);
        if (type == "IHDR") {
            img.width = get_u32(body, 0);
            img.height = get_u32(body, 4);
            if (body[8] != 8 || body[9] != 2 || body[12] != 0) fail(ErrorCode::Parse, "png: unsupported format");
        } else if (type == "IDAT") {
            idat += body;
        } else if (type == "IEND") {
            break;
        }
        pos += 12 + len;
    }
    const auto stride = static_cast<std::size_t>(img.width * 3);
    uLongf rlen = static_cast<uLongf>((stride + 1) * static_cast<std::size_t>(img.height));
    std::string raw(rlen, '\0');
    if (uncompress(reinterpret_cast<Bytef*>(raw.data()), &rlen, reinterpret_cast<const Bytef*>(idat.data()),
                   static_cast<uLong>(idat.size())) != Z_OK ||
        rlen != raw.size())
        fail(ErrorCode::Parse, "png: inflate failed");
    img.pixels.resize(stride * static_cast<std::size_t>(img.height));
    for (std::int64_t y = 0; y < img.height; ++y) {
        const auto row = static_cast<std::size_t>(y) * (stride + 1);
        if (raw[row] != 0) fail(ErrorCode::Parse, "png: unsupported row filter");
        std::memcpy(img.at(y, 0), raw.data() + row + 1, stride);
    }
    return img;
}

}  // namespace cac::png
