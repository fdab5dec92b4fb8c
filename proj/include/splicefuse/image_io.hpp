#pragma once

#include "splicefuse/core.hpp"

#include <png.h>

#include <algorithm>
#include <array>
#include <cctype>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <memory>
#include <sstream>

namespace splicefuse {

/// Thrown for unreadable or unsupported image files.
class ImageError : public Error {
public:
    using Error::Error;
};

namespace detail {

inline std::vector<unsigned char> read_file_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ImageError("cannot open file");
    return std::vector<unsigned char>(std::istreambuf_iterator<char>(in), {});
}

inline IntMatrix decode_pgm(const std::vector<unsigned char>& bytes) {
    std::size_t pos = 2;
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
    auto read_uint = [&]() -> long {
        skip_space();
        long v = 0;
        bool any = false;
        while (pos < bytes.size() && std::isdigit(bytes[pos])) {
            v = v * 10 + (bytes[pos] - '0');
            if (v > (1L << 24)) throw ImageError("pgm header value too large");
            ++pos;
            any = true;
        }
        if (!any) throw ImageError("malformed pgm header");
        return v;
    };
    const bool binary = bytes[1] == '5';
    const long width = read_uint();
    const long height = read_uint();
    const long maxval = read_uint();
    if (width <= 0 || height <= 0) throw ImageError("pgm has empty dimensions");
    if (maxval != 255) throw ImageError("unsupported bit depth (maxval " + std::to_string(maxval) + ")");
    IntMatrix img(height, width);
    if (binary) {
        ++pos;  // single whitespace after maxval
        if (bytes.size() < pos + static_cast<std::size_t>(width * height)) throw ImageError("truncated pgm data");
        for (long i = 0; i < height; ++i)
            for (long j = 0; j < width; ++j) img(i, j) = bytes[pos++];
    } else {
        for (long i = 0; i < height; ++i)
            for (long j = 0; j < width; ++j) {
                long v = read_uint();
                if (v > 255) throw ImageError("pgm sample out of range");
                img(i, j) = static_cast<int>(v);
            }
    }
    return img;
}

inline std::uint32_t le32(const std::vector<unsigned char>& b, std::size_t off) {
    return b[off] | (b[off + 1] << 8) | (b[off + 2] << 16) | (static_cast<std::uint32_t>(b[off + 3]) << 24);
}

inline std::uint16_t le16(const std::vector<unsigned char>& b, std::size_t off) {
    return static_cast<std::uint16_t>(b[off] | (b[off + 1] << 8));
}

// Uncompressed 8-bit palettized BMP whose palette is pure gray.
inline IntMatrix decode_bmp(const std::vector<unsigned char>& bytes) {
    if (bytes.size() < 54) throw ImageError("truncated bmp header");
    const std::uint32_t data_offset = le32(bytes, 10);
    const std::uint32_t header_size = le32(bytes, 14);
    const auto width = static_cast<std::int32_t>(le32(bytes, 18));
    const auto raw_height = static_cast<std::int32_t>(le32(bytes, 22));
    const std::uint16_t bpp = le16(bytes, 28);
    const std::uint32_t compression = le32(bytes, 30);
    std::uint32_t colors = le32(bytes, 46);
    if (bpp != 8) throw ImageError("unsupported bit depth (" + std::to_string(bpp) + " bpp)");
    if (compression != 0) throw ImageError("compressed bmp not supported");
    if (width <= 0 || raw_height == 0) throw ImageError("bmp has empty dimensions");
    if (colors == 0) colors = 256;
    const std::size_t palette_at = 14 + header_size;
    if (colors > 256 || bytes.size() < palette_at + 4 * colors) throw ImageError("truncated bmp palette");
    std::array<int, 256> gray{};
    for (std::uint32_t c = 0; c < colors; ++c) {
        const auto b = bytes[palette_at + 4 * c], g = bytes[palette_at + 4 * c + 1], r = bytes[palette_at + 4 * c + 2];
        if (r != g || g != b) throw ImageError("color bmp (non-gray palette)");
        gray[c] = r;
    }
    const bool bottom_up = raw_height > 0;
    const std::int32_t height = bottom_up ? raw_height : -raw_height;
    const std::size_t stride = (static_cast<std::size_t>(width) + 3) & ~std::size_t{3};
    if (bytes.size() < data_offset + stride * static_cast<std::size_t>(height)) throw ImageError("truncated bmp data");
    IntMatrix img(height, width);
    for (std::int32_t r = 0; r < height; ++r) {
        const std::size_t row_at = data_offset + stride * static_cast<std::size_t>(bottom_up ? height - 1 - r : r);
        for (std::int32_t c = 0; c < width; ++c) {
            const auto idx = bytes[row_at + c];
            if (idx >= colors) throw ImageError("bmp palette index out of range");
            img(r, c) = gray[idx];
        }
    }
    return img;
}

inline IntMatrix decode_png(const std::filesystem::path& path) {
    png_image image{};
    image.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&image, path.string().c_str()))
        throw ImageError(std::string("unreadable png: ") + image.message);
    std::unique_ptr<png_image, decltype(&png_image_free)> guard(&image, &png_image_free);
    if (image.format & (PNG_FORMAT_FLAG_COLOR | PNG_FORMAT_FLAG_ALPHA | PNG_FORMAT_FLAG_LINEAR))
        throw ImageError("png is not 8-bit grayscale");
    image.format = PNG_FORMAT_GRAY;
    std::vector<png_byte> buffer(PNG_IMAGE_SIZE(image));
    if (!png_image_finish_read(&image, nullptr, buffer.data(), 0, nullptr))
        throw ImageError(std::string("png decode failed: ") + image.message);
    guard.release();
    IntMatrix img(image.height, image.width);
    for (png_uint_32 r = 0; r < image.height; ++r)
        for (png_uint_32 c = 0; c < image.width; ++c) img(r, c) = buffer[r * image.width + c];
    return img;
}

}  // namespace detail

/// Decodes an 8-bit grayscale PGM (P2/P5), PNG or palettized BMP file.
/// Throws ImageError with a short reason for anything else.
inline IntMatrix read_gray_image(const std::filesystem::path& path) {
    auto bytes = detail::read_file_bytes(path);
    if (bytes.size() >= 2 && bytes[0] == 'P' && (bytes[1] == '5' || bytes[1] == '2')) return detail::decode_pgm(bytes);
    if (bytes.size() >= 8 && bytes[0] == 0x89 && bytes[1] == 'P' && bytes[2] == 'N' && bytes[3] == 'G')
        return detail::decode_png(path);
    if (bytes.size() >= 2 && bytes[0] == 'B' && bytes[1] == 'M') return detail::decode_bmp(bytes);
    throw ImageError("unsupported image format");
}

/// Writes a binary PGM (P5). Values are clamped to [0, 255].
inline void write_pgm(const std::filesystem::path& path, const IntMatrix& img) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ImageError("cannot write " + path.string());
    out << "P5\n" << img.cols() << ' ' << img.rows() << "\n255\n";
    for (Eigen::Index i = 0; i < img.rows(); ++i)
        for (Eigen::Index j = 0; j < img.cols(); ++j) out.put(static_cast<char>(std::clamp(img(i, j), 0, 255)));
}

}  // namespace splicefuse
