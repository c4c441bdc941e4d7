#pragma once
// png_io.hpp
//
// Minimal strict PNG codec over zlib.  Supports exactly what the pipeline
// persists: 8-bit grayscale or RGB, no alpha, no interlacing, no palette.
// Anything else is a hard error, never a silent conversion.  Samples map
// v/255 on load; on save values are clamped to [0,1] and quantized with
// round-half-up so golden images are byte-stable across platforms.

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <zlib.h>

#include "nightforge/image.hpp"

namespace nightforge {

enum class PngErrorKind { MissingFile, Unsupported, Corrupt, Io };

class PngError : public std::runtime_error {
public:
    PngError(PngErrorKind k, const std::string& msg) : std::runtime_error(msg), kind(k) {}
    PngErrorKind kind;
};

namespace detail {

inline void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    out.push_back(static_cast<std::uint8_t>(v >> 24));
    out.push_back(static_cast<std::uint8_t>(v >> 16));
    out.push_back(static_cast<std::uint8_t>(v >> 8));
    out.push_back(static_cast<std::uint8_t>(v));
}

inline std::uint32_t get_u32(const std::uint8_t* p) {
    return (static_cast<std::uint32_t>(p[0]) << 24) | (static_cast<std::uint32_t>(p[1]) << 16) |
           (static_cast<std::uint32_t>(p[2]) << 8) | static_cast<std::uint32_t>(p[3]);
}

inline void write_chunk(std::vector<std::uint8_t>& out, const char type[5],
                        const std::vector<std::uint8_t>& payload) {
    put_u32(out, static_cast<std::uint32_t>(payload.size()));
    const std::size_t crc_start = out.size();
    out.insert(out.end(), type, type + 4);
    out.insert(out.end(), payload.begin(), payload.end());
    const auto crc = crc32(0L, out.data() + crc_start, static_cast<uInt>(out.size() - crc_start));
    put_u32(out, static_cast<std::uint32_t>(crc));
}

inline int paeth(int a, int b, int c) {
    const int p = a + b - c;
    const int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
    if (pa <= pb && pa <= pc) return a;
    if (pb <= pc) return b;
    return c;
}

}  // namespace detail

inline std::uint8_t quantize_sample(double v) {
    v = v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
    // round-half-up, the project-wide convention
    return static_cast<std::uint8_t>(std::floor(v * 255.0 + 0.5));
}

inline std::vector<std::uint8_t> encode_png(const ImageBuffer& img) {
    if (img.channels != 1 && img.channels != 3)
        throw std::invalid_argument("encode_png: only 1- or 3-channel images");
    static const std::uint8_t sig[8] = {137, 80, 78, 71, 13, 10, 26, 10};
    std::vector<std::uint8_t> out(sig, sig + 8);

    std::vector<std::uint8_t> ihdr;
    detail::put_u32(ihdr, static_cast<std::uint32_t>(img.width));
    detail::put_u32(ihdr, static_cast<std::uint32_t>(img.height));
    ihdr.push_back(8);                                   // bit depth
    ihdr.push_back(img.channels == 1 ? 0 : 2);           // gray / truecolor
    ihdr.push_back(0);                                   // compression
    ihdr.push_back(0);                                   // filter method
    ihdr.push_back(0);                                   // no interlace
    detail::write_chunk(out, "IHDR", ihdr);

    const std::size_t stride = static_cast<std::size_t>(img.width) * img.channels;
    std::vector<std::uint8_t> raw;
    raw.reserve((stride + 1) * img.height);
    for (int r = 0; r < img.height; ++r) {
        raw.push_back(0);  // filter type None on every row
        for (int c = 0; c < img.width; ++c)
            for (int ch = 0; ch < img.channels; ++ch)
                raw.push_back(quantize_sample(img.at(r, c, ch)));
    }

    uLongf comp_len = compressBound(static_cast<uLong>(raw.size()));
    std::vector<std::uint8_t> comp(comp_len);
    if (compress2(comp.data(), &comp_len, raw.data(), static_cast<uLong>(raw.size()), 6) != Z_OK)
        throw PngError(PngErrorKind::Io, "png encode: deflate failed");
    comp.resize(comp_len);
    detail::write_chunk(out, "IDAT", comp);
    detail::write_chunk(out, "IEND", {});
    return out;
}

inline ImageBuffer decode_png(const std::uint8_t* bytes, std::size_t n) {
    static const std::uint8_t sig[8] = {137, 80, 78, 71, 13, 10, 26, 10};
    if (n < 8 || std::memcmp(bytes, sig, 8) != 0)
        throw PngError(PngErrorKind::Corrupt, "png decode: bad signature");

    std::size_t pos = 8;
    bool seen_ihdr = false, seen_iend = false;
    std::uint32_t w = 0, h = 0;
    int channels = 0;
    std::vector<std::uint8_t> idat;

    while (pos < n) {
        if (pos + 12 > n) throw PngError(PngErrorKind::Corrupt, "png decode: truncated chunk");
        const std::uint32_t len = detail::get_u32(bytes + pos);
        if (pos + 12 + static_cast<std::size_t>(len) > n)
            throw PngError(PngErrorKind::Corrupt, "png decode: truncated chunk payload");
        const std::uint8_t* type = bytes + pos + 4;
        const std::uint8_t* payload = bytes + pos + 8;
        const std::uint32_t stored_crc = detail::get_u32(payload + len);
        const auto crc = crc32(0L, type, static_cast<uInt>(len + 4));
        if (static_cast<std::uint32_t>(crc) != stored_crc)
            throw PngError(PngErrorKind::Corrupt, "png decode: chunk CRC mismatch");
        const std::string t(reinterpret_cast<const char*>(type), 4);

        if (t == "IHDR") {
            if (seen_ihdr || len != 13) throw PngError(PngErrorKind::Corrupt, "png decode: bad IHDR");
            seen_ihdr = true;
            w = detail::get_u32(payload);
            h = detail::get_u32(payload + 4);
            const int bit_depth = payload[8], color_type = payload[9];
            const int compression = payload[10], filter = payload[11], interlace = payload[12];
            if (w == 0 || h == 0 || w > (1u << 24) || h > (1u << 24))
                throw PngError(PngErrorKind::Corrupt, "png decode: bad dimensions");
            if (bit_depth != 8)
                throw PngError(PngErrorKind::Unsupported,
                               "png decode: unsupported bit depth " + std::to_string(bit_depth));
            if (color_type != 0 && color_type != 2)
                throw PngError(PngErrorKind::Unsupported,
                               "png decode: unsupported color type " + std::to_string(color_type));
            if (compression != 0 || filter != 0)
                throw PngError(PngErrorKind::Corrupt, "png decode: bad IHDR methods");
            if (interlace != 0)
                throw PngError(PngErrorKind::Unsupported, "png decode: interlacing unsupported");
            channels = color_type == 0 ? 1 : 3;
        } else if (t == "IDAT") {
            if (!seen_ihdr) throw PngError(PngErrorKind::Corrupt, "png decode: IDAT before IHDR");
            idat.insert(idat.end(), payload, payload + len);
        } else if (t == "IEND") {
            seen_iend = true;
            break;
        } else if (t == "tRNS") {
            throw PngError(PngErrorKind::Unsupported, "png decode: transparency unsupported");
        } else if (!(type[0] & 0x20)) {
            // unknown critical chunk
            throw PngError(PngErrorKind::Unsupported, "png decode: unsupported critical chunk " + t);
        }
        pos += 12 + len;
    }
    if (!seen_ihdr || !seen_iend || idat.empty())
        throw PngError(PngErrorKind::Corrupt, "png decode: missing required chunks");

    const std::size_t stride = static_cast<std::size_t>(w) * channels;
    const std::size_t raw_len = (stride + 1) * h;
    std::vector<std::uint8_t> raw(raw_len);
    uLongf dest_len = static_cast<uLongf>(raw_len);
    const int zrc = uncompress(raw.data(), &dest_len, idat.data(), static_cast<uLong>(idat.size()));
    if (zrc != Z_OK || dest_len != raw_len)
        throw PngError(PngErrorKind::Corrupt, "png decode: inflate failed");

    // undo per-row filters
    const int bpp = channels;  // bytes per pixel at bit depth 8
    std::vector<std::uint8_t> prev(stride, 0);
    ImageBuffer img(static_cast<int>(h), static_cast<int>(w), channels);
    std::vector<std::uint8_t> cur(stride);
    for (std::uint32_t r = 0; r < h; ++r) {
        const std::uint8_t* row = raw.data() + static_cast<std::size_t>(r) * (stride + 1);
        const int ft = row[0];
        const std::uint8_t* src = row + 1;
        for (std::size_t i = 0; i < stride; ++i) {
            const int a = i >= static_cast<std::size_t>(bpp) ? cur[i - bpp] : 0;
            const int b = prev[i];
            const int c = i >= static_cast<std::size_t>(bpp) ? prev[i - bpp] : 0;
            int v;
            switch (ft) {
                case 0: v = src[i]; break;
                case 1: v = src[i] + a; break;
                case 2: v = src[i] + b; break;
                case 3: v = src[i] + (a + b) / 2; break;
                case 4: v = src[i] + detail::paeth(a, b, c); break;
                default: throw PngError(PngErrorKind::Corrupt, "png decode: bad filter type");
            }
            cur[i] = static_cast<std::uint8_t>(v);
        }
        for (std::uint32_t c = 0; c < w; ++c)
            for (int ch = 0; ch < channels; ++ch)
                img.at(static_cast<int>(r), static_cast<int>(c), ch) =
                    cur[static_cast<std::size_t>(c) * channels + ch] / 255.0;
        prev = cur;
    }
    return img;
}

inline ImageBuffer load_image(const std::string& path) {
    std::error_code ec;
    if (!std::filesystem::exists(path, ec))
        throw PngError(PngErrorKind::MissingFile, "load_image: no such file: " + path);
    std::ifstream f(path, std::ios::binary);
    if (!f) throw PngError(PngErrorKind::Io, "load_image: cannot open: " + path);
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                                    std::istreambuf_iterator<char>());
    return decode_png(bytes.data(), bytes.size());
}

inline void save_image(const ImageBuffer& img, const std::string& path) {
    const auto bytes = encode_png(img);
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw PngError(PngErrorKind::Io, "save_image: cannot open for write: " + path);
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw PngError(PngErrorKind::Io, "save_image: short write: " + path);
}

}  // namespace nightforge
