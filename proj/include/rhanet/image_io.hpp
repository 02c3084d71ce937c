#pragma once

// Minimal 8-bit PNG and BMP I/O. PNG covers non-interlaced bit-depth-8 files
// of all five color types on the read side and writes grayscale/RGB;
// BMP covers uncompressed 8/24/32-bit reads.

#include <array>
#include <cstdint>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <vector>

#include <zlib.h>

#include "rhanet/errors.hpp"
#include "rhanet/tensor.hpp"

namespace rhanet {
namespace img {

// Interleaved row-major pixels; channels is 1 (gray) or 3 (RGB).
struct Image {
    int width = 0;
    int height = 0;
    int channels = 0;
    std::vector<uint8_t> pixels;

    uint8_t& at(int y, int x, int c) {
        return pixels[(static_cast<size_t>(y) * width + x) * channels + c];
    }
    uint8_t at(int y, int x, int c) const {
        return pixels[(static_cast<size_t>(y) * width + x) * channels + c];
    }
};

namespace detail {

inline uint32_t be32(const uint8_t* p) {
    return (static_cast<uint32_t>(p[0]) << 24) | (static_cast<uint32_t>(p[1]) << 16) |
           (static_cast<uint32_t>(p[2]) << 8) | p[3];
}

inline void put_be32(std::vector<uint8_t>& v, uint32_t x) {
    v.push_back(static_cast<uint8_t>(x >> 24));
    v.push_back(static_cast<uint8_t>(x >> 16));
    v.push_back(static_cast<uint8_t>(x >> 8));
    v.push_back(static_cast<uint8_t>(x));
}

inline std::vector<uint8_t> read_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary | std::ios::ate);
    if (!f) throw DataError("cannot read image file: " + path);
    const auto size = static_cast<size_t>(f.tellg());
    f.seekg(0);
    std::vector<uint8_t> buf(size);
    f.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(size));
    if (!f) throw DataError("read failed: " + path);
    return buf;
}

inline std::vector<uint8_t> zlib_inflate(const uint8_t* data, size_t n, size_t expected,
                                         const std::string& path) {
    std::vector<uint8_t> out(expected);
    z_stream zs{};
    if (inflateInit(&zs) != Z_OK) throw DataError("zlib init failed: " + path);
    zs.next_in = const_cast<Bytef*>(data);
    zs.avail_in = static_cast<uInt>(n);
    zs.next_out = out.data();
    zs.avail_out = static_cast<uInt>(out.size());
    const int rc = inflate(&zs, Z_FINISH);
    inflateEnd(&zs);
    if (rc != Z_STREAM_END || zs.total_out != expected)
        throw DataError("corrupt PNG image data: " + path);
    return out;
}

inline int paeth(int a, int b, int c) {
    const int p = a + b - c;
    const int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
    if (pa <= pb && pa <= pc) return a;
    if (pb <= pc) return b;
    return c;
}

} // namespace detail

inline bool is_png(const std::vector<uint8_t>& buf) {
    static const uint8_t sig[8] = {0x89, 'P', 'N', 'G', 0x0d, 0x0a, 0x1a, 0x0a};
    return buf.size() >= 8 && std::memcmp(buf.data(), sig, 8) == 0;
}

inline Image decode_png(const std::vector<uint8_t>& buf, const std::string& path) {
    if (!is_png(buf)) throw DataError("not a PNG file: " + path);
    size_t pos = 8;
    int width = 0, height = 0, bit_depth = 0, color_type = 0;
    std::vector<uint8_t> palette;
    std::vector<uint8_t> idat;
    bool saw_ihdr = false, saw_iend = false;
    while (pos + 8 <= buf.size() && !saw_iend) {
        const uint32_t len = detail::be32(buf.data() + pos);
        if (pos + 12 + len > buf.size()) throw DataError("truncated PNG: " + path);
        const char* type = reinterpret_cast<const char*>(buf.data() + pos + 4);
        const uint8_t* data = buf.data() + pos + 8;
        if (std::memcmp(type, "IHDR", 4) == 0) {
            if (len != 13) throw DataError("malformed PNG header: " + path);
            width = static_cast<int>(detail::be32(data));
            height = static_cast<int>(detail::be32(data + 4));
            bit_depth = data[8];
            color_type = data[9];
            if (data[12] != 0) throw DataError("interlaced PNG unsupported: " + path);
            saw_ihdr = true;
        } else if (std::memcmp(type, "PLTE", 4) == 0) {
            palette.assign(data, data + len);
        } else if (std::memcmp(type, "IDAT", 4) == 0) {
            idat.insert(idat.end(), data, data + len);
        } else if (std::memcmp(type, "IEND", 4) == 0) {
            saw_iend = true;
        }
        pos += 12 + len;
    }
    if (!saw_ihdr || width <= 0 || height <= 0) throw DataError("malformed PNG: " + path);
    if (!saw_iend) throw DataError("truncated PNG: " + path);
    if (bit_depth != 8) throw DataError("unsupported PNG bit depth (want 8): " + path);
    int spp = 0;
    switch (color_type) {
        case 0: spp = 1; break; // gray
        case 2: spp = 3; break; // rgb
        case 3: spp = 1; break; // palette
        case 4: spp = 2; break; // gray+alpha
        case 6: spp = 4; break; // rgba
        default: throw DataError("unsupported PNG color type: " + path);
    }
    const size_t stride = static_cast<size_t>(width) * spp;
    auto raw = detail::zlib_inflate(idat.data(), idat.size(), (stride + 1) * height, path);

    // Undo per-row filters in place (filters 0..4).
    std::vector<uint8_t> prev(stride, 0);
    std::vector<uint8_t> row(stride);
    std::vector<uint8_t> flat(stride * height);
    for (int y = 0; y < height; ++y) {
        const uint8_t* src = raw.data() + static_cast<size_t>(y) * (stride + 1);
        const uint8_t filter = src[0];
        std::memcpy(row.data(), src + 1, stride);
        for (size_t i = 0; i < stride; ++i) {
            const int a = i >= static_cast<size_t>(spp) ? row[i - spp] : 0;
            const int b = prev[i];
            const int c = i >= static_cast<size_t>(spp) ? prev[i - spp] : 0;
            switch (filter) {
                case 0: break;
                case 1: row[i] = static_cast<uint8_t>(row[i] + a); break;
                case 2: row[i] = static_cast<uint8_t>(row[i] + b); break;
                case 3: row[i] = static_cast<uint8_t>(row[i] + (a + b) / 2); break;
                case 4: row[i] = static_cast<uint8_t>(row[i] + detail::paeth(a, b, c)); break;
                default: throw DataError("unknown PNG filter: " + path);
            }
        }
        std::memcpy(flat.data() + static_cast<size_t>(y) * stride, row.data(), stride);
        std::memcpy(prev.data(), row.data(), stride);
    }

    Image out;
    out.width = width;
    out.height = height;
    const size_t npix = static_cast<size_t>(width) * height;
    if (color_type == 0) {
        out.channels = 1;
        out.pixels = std::move(flat);
    } else if (color_type == 2) {
        out.channels = 3;
        out.pixels = std::move(flat);
    } else if (color_type == 3) {
        if (palette.empty()) throw DataError("palette PNG without PLTE: " + path);
        out.channels = 3;
        out.pixels.resize(npix * 3);
        for (size_t i = 0; i < npix; ++i) {
            const size_t idx = static_cast<size_t>(flat[i]) * 3;
            if (idx + 2 >= palette.size()) throw DataError("PNG palette index out of range: " + path);
            out.pixels[i * 3] = palette[idx];
            out.pixels[i * 3 + 1] = palette[idx + 1];
            out.pixels[i * 3 + 2] = palette[idx + 2];
        }
    } else if (color_type == 4) {
        out.channels = 1;
        out.pixels.resize(npix);
        for (size_t i = 0; i < npix; ++i) out.pixels[i] = flat[i * 2];
    } else { // rgba
        out.channels = 3;
        out.pixels.resize(npix * 3);
        for (size_t i = 0; i < npix; ++i) {
            out.pixels[i * 3] = flat[i * 4];
            out.pixels[i * 3 + 1] = flat[i * 4 + 1];
            out.pixels[i * 3 + 2] = flat[i * 4 + 2];
        }
    }
    return out;
}

inline bool is_bmp(const std::vector<uint8_t>& buf) {
    return buf.size() >= 2 && buf[0] == 'B' && buf[1] == 'M';
}

inline Image decode_bmp(const std::vector<uint8_t>& buf, const std::string& path) {
    if (buf.size() < 54 || !is_bmp(buf)) throw DataError("not a BMP file: " + path);
    auto le32 = [&](size_t off) {
        uint32_t v;
        std::memcpy(&v, buf.data() + off, 4);
        return v;
    };
    auto le16 = [&](size_t off) {
        uint16_t v;
        std::memcpy(&v, buf.data() + off, 2);
        return v;
    };
    const uint32_t pixel_off = le32(10);
    const uint32_t header_size = le32(14);
    if (header_size < 40) throw DataError("unsupported BMP header: " + path);
    const int width = static_cast<int32_t>(le32(18));
    const int height_raw = static_cast<int32_t>(le32(22));
    const bool bottom_up = height_raw > 0;
    const int height = std::abs(height_raw);
    const uint16_t bpp = le16(28);
    const uint32_t compression = le32(30);
    if (compression != 0) throw DataError("compressed BMP unsupported: " + path);
    if (bpp != 8 && bpp != 24 && bpp != 32)
        throw DataError("unsupported BMP bit depth " + std::to_string(bpp) + ": " + path);
    if (width <= 0 || height <= 0) throw DataError("malformed BMP: " + path);

    std::vector<std::array<uint8_t, 3>> palette;
    bool palette_gray = true;
    if (bpp == 8) {
        uint32_t colors = le32(46);
        if (colors == 0) colors = 256;
        const size_t pal_off = 14 + header_size;
        if (pal_off + colors * 4 > buf.size()) throw DataError("truncated BMP palette: " + path);
        palette.resize(colors);
        for (uint32_t i = 0; i < colors; ++i) {
            const uint8_t* e = buf.data() + pal_off + i * 4; // BGRA
            palette[i] = {e[2], e[1], e[0]};
            palette_gray = palette_gray && e[0] == e[1] && e[1] == e[2];
        }
    }

    const size_t row_bytes = (static_cast<size_t>(width) * bpp / 8 + 3) & ~size_t(3);
    if (pixel_off + row_bytes * height > buf.size()) throw DataError("truncated BMP: " + path);

    Image out;
    out.width = width;
    out.height = height;
    out.channels = (bpp == 8 && palette_gray) ? 1 : 3;
    out.pixels.resize(static_cast<size_t>(width) * height * out.channels);
    for (int y = 0; y < height; ++y) {
        const int src_y = bottom_up ? height - 1 - y : y;
        const uint8_t* row = buf.data() + pixel_off + static_cast<size_t>(src_y) * row_bytes;
        for (int x = 0; x < width; ++x) {
            if (bpp == 8) {
                const uint8_t idx = row[x];
                if (idx >= palette.size()) throw DataError("BMP palette index out of range: " + path);
                if (out.channels == 1) {
                    out.at(y, x, 0) = palette[idx][0];
                } else {
                    out.at(y, x, 0) = palette[idx][0];
                    out.at(y, x, 1) = palette[idx][1];
                    out.at(y, x, 2) = palette[idx][2];
                }
            } else {
                const uint8_t* px = row + static_cast<size_t>(x) * bpp / 8; // BGR(A)
                out.at(y, x, 0) = px[2];
                out.at(y, x, 1) = px[1];
                out.at(y, x, 2) = px[0];
            }
        }
    }
    return out;
}

inline Image read_image(const std::string& path) {
    const auto buf = detail::read_file(path);
    if (is_png(buf)) return decode_png(buf, path);
    if (is_bmp(buf)) return decode_bmp(buf, path);
    throw DataError("unsupported image format (want PNG or BMP): " + path);
}

inline std::vector<uint8_t> encode_png(const Image& im) {
    if (im.channels != 1 && im.channels != 3)
        throw ValueError("encode_png: channels must be 1 or 3");
    const size_t stride = static_cast<size_t>(im.width) * im.channels;
    std::vector<uint8_t> raw((stride + 1) * im.height);
    for (int y = 0; y < im.height; ++y) {
        uint8_t* dst = raw.data() + static_cast<size_t>(y) * (stride + 1);
        dst[0] = 0; // filter: none
        std::memcpy(dst + 1, im.pixels.data() + static_cast<size_t>(y) * stride, stride);
    }
    uLongf comp_size = compressBound(static_cast<uLong>(raw.size()));
    std::vector<uint8_t> comp(comp_size);
    if (compress2(comp.data(), &comp_size, raw.data(), static_cast<uLong>(raw.size()), 6) != Z_OK)
        throw ValueError("encode_png: compression failed");
    comp.resize(comp_size);

    std::vector<uint8_t> out;
    static const uint8_t sig[8] = {0x89, 'P', 'N', 'G', 0x0d, 0x0a, 0x1a, 0x0a};
    out.insert(out.end(), sig, sig + 8);
    auto chunk = [&out](const char* type, const std::vector<uint8_t>& data) {
        detail::put_be32(out, static_cast<uint32_t>(data.size()));
        const size_t start = out.size();
        out.insert(out.end(), type, type + 4);
        out.insert(out.end(), data.begin(), data.end());
        const uint32_t crc = static_cast<uint32_t>(
            crc32(0, out.data() + start, static_cast<uInt>(out.size() - start)));
        detail::put_be32(out, crc);
    };
    std::vector<uint8_t> ihdr;
    detail::put_be32(ihdr, static_cast<uint32_t>(im.width));
    detail::put_be32(ihdr, static_cast<uint32_t>(im.height));
    ihdr.push_back(8);                                 // bit depth
    ihdr.push_back(im.channels == 1 ? 0 : 2);          // gray / rgb
    ihdr.push_back(0);                                 // compression
    ihdr.push_back(0);                                 // filter
    ihdr.push_back(0);                                 // no interlace
    chunk("IHDR", ihdr);
    chunk("IDAT", comp);
    chunk("IEND", {});
    return out;
}

inline void write_png(const std::string& path, const Image& im) {
    const auto buf = encode_png(im);
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw DataError("cannot open image for writing: " + path);
    f.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (!f) throw DataError("write failed: " + path);
}

} // namespace img
} // namespace rhanet
