// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <png.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "a4dg/error.hpp"
#include "a4dg/image.hpp"

namespace a4dg {

// 8-bit RGB PNG in, [0, 1] doubles out. No gamma handling: values are taken
// as linear.
inline Image read_png(const std::string& path) {
    png_image img;
    std::memset(&img, 0, sizeof(img));
    img.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&img, path.c_str()))
        throw Error("cannot read PNG " + path + ": " + img.message, ExitCode::kData);
    img.format = PNG_FORMAT_RGB;
    std::vector<unsigned char> buf(PNG_IMAGE_SIZE(img));
    if (!png_image_finish_read(&img, nullptr, buf.data(), 0, nullptr)) {
        png_image_free(&img);
        throw Error("cannot decode PNG " + path + ": " + img.message, ExitCode::kData);
    }
    Image out(static_cast<int>(img.width), static_cast<int>(img.height), 3);
    for (std::size_t i = 0; i < buf.size(); ++i) out.pixels[i] = buf[i] / 255.0;
    return out;
}

inline unsigned char to_8bit(double v) {
    return static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

inline void write_png(const std::string& path, const Image& image) {
    if (image.channels != 3) throw InvalidParameter("write_png expects 3 channels");
    std::vector<unsigned char> buf(image.size());
    for (std::size_t i = 0; i < buf.size(); ++i) buf[i] = to_8bit(image.pixels[i]);
    png_image img;
    std::memset(&img, 0, sizeof(img));
    img.version = PNG_IMAGE_VERSION;
    img.width = static_cast<png_uint_32>(image.width);
    img.height = static_cast<png_uint_32>(image.height);
    img.format = PNG_FORMAT_RGB;
    if (!png_image_write_to_file(&img, path.c_str(), 0, buf.data(), 0, nullptr))
        throw Error("cannot write PNG " + path + ": " + img.message, ExitCode::kData);
}

// Raw float image: magic "A4FI", then u32 height, width, channels, then
// row-major interleaved float32 samples. Everything little-endian.
inline constexpr char kRawImageMagic[4] = {'A', '4', 'F', 'I'};

namespace detail {

template <typename T>
void put_le(std::vector<unsigned char>& out, T v) {
    unsigned char b[sizeof(T)];
    std::memcpy(b, &v, sizeof(T));
    if constexpr (std::endian::native == std::endian::big)
        for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(b[i], b[sizeof(T) - 1 - i]);
    out.insert(out.end(), b, b + sizeof(T));
}

template <typename T>
T get_le(const unsigned char* p) {
    unsigned char b[sizeof(T)];
    std::memcpy(b, p, sizeof(T));
    if constexpr (std::endian::native == std::endian::big)
        for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(b[i], b[sizeof(T) - 1 - i]);
    T v;
    std::memcpy(&v, b, sizeof(T));
    return v;
}

inline void write_bytes(const std::string& path, const std::vector<unsigned char>& bytes) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw Error("cannot write " + path, ExitCode::kData);
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw Error("short write to " + path, ExitCode::kData);
}

inline std::vector<unsigned char> read_bytes(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw Error("cannot open " + path, ExitCode::kData);
    return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

}  // namespace detail

inline std::vector<unsigned char> encode_raw_image(const Image& image) {
    std::vector<unsigned char> out(kRawImageMagic, kRawImageMagic + 4);
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(image.height));
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(image.width));
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(image.channels));
    for (double v : image.pixels) detail::put_le<float>(out, static_cast<float>(v));
    return out;
}

inline Image decode_raw_image(const std::vector<unsigned char>& bytes) {
    if (bytes.size() < 16 || std::memcmp(bytes.data(), kRawImageMagic, 4) != 0)
        throw ParseError("not a raw float image", 0);
    const auto h = detail::get_le<std::uint32_t>(bytes.data() + 4);
    const auto w = detail::get_le<std::uint32_t>(bytes.data() + 8);
    const auto c = detail::get_le<std::uint32_t>(bytes.data() + 12);
    const std::size_t n = static_cast<std::size_t>(h) * w * c;
    if (bytes.size() != 16 + 4 * n)
        throw ParseError("raw image size mismatch: expected " + std::to_string(16 + 4 * n) + " bytes, found " +
                             std::to_string(bytes.size()),
                         bytes.size());
    Image img(static_cast<int>(w), static_cast<int>(h), static_cast<int>(c));
    for (std::size_t i = 0; i < n; ++i) img.pixels[i] = detail::get_le<float>(bytes.data() + 16 + 4 * i);
    return img;
}

inline void write_raw_image(const std::string& path, const Image& image) {
    detail::write_bytes(path, encode_raw_image(image));
}

inline Image read_raw_image(const std::string& path) { return decode_raw_image(detail::read_bytes(path)); }

}  // namespace a4dg
