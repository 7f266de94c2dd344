#pragma once

// Minimal baseline PNG codec over zlib: 8-bit gray/RGB/RGBA, no interlace.

#include <zlib.h>

#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace vidt {

struct Image {
    std::int64_t h = 0, w = 0;
    std::vector<std::uint8_t> rgb;  // interleaved, 3 channels

    std::uint8_t& at(std::int64_t y, std::int64_t x, int c) {
        return rgb[static_cast<size_t>((y * w + x) * 3 + c)];
    }
    std::uint8_t at(std::int64_t y, std::int64_t x, int c) const {
        return rgb[static_cast<size_t>((y * w + x) * 3 + c)];
    }
};

namespace pngdetail {

inline void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    out.push_back((v >> 24) & 0xff);
    out.push_back((v >> 16) & 0xff);
    out.push_back((v >> 8) & 0xff);
    out.push_back(v & 0xff);
}

inline std::uint32_t get_u32(const std::uint8_t* p) {
    return (std::uint32_t(p[0]) << 24) | (std::uint32_t(p[1]) << 16) |
           (std::uint32_t(p[2]) << 8) | std::uint32_t(p[3]);
}

inline void write_chunk(std::vector<std::uint8_t>& out, const char type[4],
                        const std::vector<std::uint8_t>& payload) {
    put_u32(out, static_cast<std::uint32_t>(payload.size()));
    const size_t start = out.size();
    out.insert(out.end(), type, type + 4);
    out.insert(out.end(), payload.begin(), payload.end());
    const auto crc =
        crc32(0, out.data() + start, static_cast<uInt>(out.size() - start));
    put_u32(out, static_cast<std::uint32_t>(crc));
}

inline std::vector<std::uint8_t> zlib_pack(const std::vector<std::uint8_t>& raw) {
    uLongf bound = compressBound(static_cast<uLong>(raw.size()));
    std::vector<std::uint8_t> out(bound);
    if (compress2(out.data(), &bound, raw.data(), static_cast<uLong>(raw.size()), 6) != Z_OK)
        throw std::runtime_error("png: zlib compression failed");
    out.resize(bound);
    return out;
}

inline std::vector<std::uint8_t> zlib_unpack(const std::uint8_t* data, size_t len,
                                             size_t expected) {
    std::vector<std::uint8_t> out(expected);
    uLongf got = static_cast<uLongf>(expected);
    if (uncompress(out.data(), &got, data, static_cast<uLong>(len)) != Z_OK || got != expected)
        throw std::runtime_error("png: zlib inflate failed");
    return out;
}

inline int paeth(int a, int b, int c) {
    const int p = a + b - c;
    const int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
    if (pa <= pb && pa <= pc) return a;
    return pb <= pc ? b : c;
}

}  // namespace pngdetail

// channels: 1 (grayscale) or 3 (RGB), 8-bit, row-major interleaved.
inline std::vector<std::uint8_t> encode_png(const std::uint8_t* pixels, std::int64_t h,
                                            std::int64_t w, int channels) {
    if (channels != 1 && channels != 3) throw std::invalid_argument("png: 1 or 3 channels");
    std::vector<std::uint8_t> out = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
    std::vector<std::uint8_t> ihdr;
    pngdetail::put_u32(ihdr, static_cast<std::uint32_t>(w));
    pngdetail::put_u32(ihdr, static_cast<std::uint32_t>(h));
    ihdr.push_back(8);                              // bit depth
    ihdr.push_back(channels == 3 ? 2 : 0);          // color type
    ihdr.push_back(0);
    ihdr.push_back(0);
    ihdr.push_back(0);
    pngdetail::write_chunk(out, "IHDR", ihdr);
    std::vector<std::uint8_t> raw;
    raw.reserve(static_cast<size_t>(h * (w * channels + 1)));
    for (std::int64_t y = 0; y < h; ++y) {
        raw.push_back(0);  // filter: none
        raw.insert(raw.end(), pixels + y * w * channels, pixels + (y + 1) * w * channels);
    }
    pngdetail::write_chunk(out, "IDAT", pngdetail::zlib_pack(raw));
    pngdetail::write_chunk(out, "IEND", {});
    return out;
}

inline void write_png(const std::string& path, const Image& img) {
    const auto bytes = encode_png(img.rgb.data(), img.h, img.w, 3);
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write " + path);
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

inline void write_png_gray(const std::string& path, const std::uint8_t* pixels, std::int64_t h,
                           std::int64_t w) {
    const auto bytes = encode_png(pixels, h, w, 1);
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write " + path);
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

inline Image decode_png(const std::vector<std::uint8_t>& bytes) {
    static const std::uint8_t sig[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
    if (bytes.size() < 8 || std::memcmp(bytes.data(), sig, 8) != 0)
        throw std::runtime_error("png: bad signature");
    size_t pos = 8;
    std::int64_t w = 0, h = 0;
    int color = -1, channels = 0;
    std::vector<std::uint8_t> idat;
    while (pos + 8 <= bytes.size()) {
        const std::uint32_t len = pngdetail::get_u32(bytes.data() + pos);
        const std::string type(reinterpret_cast<const char*>(bytes.data() + pos + 4), 4);
        const std::uint8_t* payload = bytes.data() + pos + 8;
        if (pos + 12 + len > bytes.size()) throw std::runtime_error("png: truncated chunk");
        if (type == "IHDR") {
            w = pngdetail::get_u32(payload);
            h = pngdetail::get_u32(payload + 4);
            if (payload[8] != 8) throw std::runtime_error("png: only 8-bit depth supported");
            color = payload[9];
            if (color == 0) channels = 1;
            else if (color == 2) channels = 3;
            else if (color == 6) channels = 4;
            else throw std::runtime_error("png: unsupported color type");
            if (payload[12] != 0) throw std::runtime_error("png: interlace unsupported");
        } else if (type == "IDAT") {
            idat.insert(idat.end(), payload, payload + len);
        } else if (type == "IEND") {
            break;
        }
        pos += 12 + len;
    }
    if (w <= 0 || h <= 0) throw std::runtime_error("png: missing IHDR");
    const std::int64_t stride = w * channels;
    auto raw = pngdetail::zlib_unpack(idat.data(), idat.size(),
                                      static_cast<size_t>(h * (stride + 1)));
    std::vector<std::uint8_t> flat(static_cast<size_t>(h * stride));
    for (std::int64_t y = 0; y < h; ++y) {
        const std::uint8_t filter = raw[static_cast<size_t>(y * (stride + 1))];
        const std::uint8_t* src = raw.data() + y * (stride + 1) + 1;
        std::uint8_t* dst = flat.data() + y * stride;
        const std::uint8_t* up = y > 0 ? flat.data() + (y - 1) * stride : nullptr;
        for (std::int64_t x = 0; x < stride; ++x) {
            const int a = x >= channels ? dst[x - channels] : 0;
            const int b = up ? up[x] : 0;
            const int c = (up && x >= channels) ? up[x - channels] : 0;
            int v = src[x];
            switch (filter) {
                case 0: break;
                case 1: v += a; break;
                case 2: v += b; break;
                case 3: v += (a + b) / 2; break;
                case 4: v += pngdetail::paeth(a, b, c); break;
                default: throw std::runtime_error("png: unknown filter");
            }
            dst[x] = static_cast<std::uint8_t>(v & 0xff);
        }
    }
    Image img;
    img.h = h;
    img.w = w;
    img.rgb.resize(static_cast<size_t>(h * w * 3));
    for (std::int64_t i = 0; i < h * w; ++i) {
        if (channels == 1) {
            img.rgb[static_cast<size_t>(i * 3)] = flat[static_cast<size_t>(i)];
            img.rgb[static_cast<size_t>(i * 3 + 1)] = flat[static_cast<size_t>(i)];
            img.rgb[static_cast<size_t>(i * 3 + 2)] = flat[static_cast<size_t>(i)];
        } else {
            img.rgb[static_cast<size_t>(i * 3)] = flat[static_cast<size_t>(i * channels)];
            img.rgb[static_cast<size_t>(i * 3 + 1)] = flat[static_cast<size_t>(i * channels + 1)];
            img.rgb[static_cast<size_t>(i * 3 + 2)] = flat[static_cast<size_t>(i * channels + 2)];
        }
    }
    return img;
}

inline Image read_png(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot read " + path);
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                                    std::istreambuf_iterator<char>());
    return decode_png(bytes);
}

}  // namespace vidt
