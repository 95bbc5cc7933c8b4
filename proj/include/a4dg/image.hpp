// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "a4dg/error.hpp"

namespace a4dg {

// Row-major interleaved image with double samples, nominally in [0, 1].
struct Image {
    int width = 0;
    int height = 0;
    int channels = 3;
    std::vector<double> pixels;

    Image() = default;
    Image(int w, int h, int c = 3, double fill = 0.0)
        : width(w), height(h), channels(c), pixels(static_cast<std::size_t>(w) * h * c, fill) {}

    double& at(int x, int y, int c) { return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c]; }
    double at(int x, int y, int c) const {
        return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c];
    }

    std::size_t size() const { return pixels.size(); }
    std::size_t pixel_count() const { return static_cast<std::size_t>(width) * height; }
    bool same_shape(const Image& o) const {
        return width == o.width && height == o.height && channels == o.channels;
    }
};

inline void require_same_shape(const Image& a, const Image& b, const char* what) {
    if (!a.same_shape(b)) throw InvalidParameter(std::string(what) + ": image shape mismatch");
}

inline double max_abs_diff(const Image& a, const Image& b) {
    require_same_shape(a, b, "max_abs_diff");
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a.pixels[i] - b.pixels[i]));
    return m;
}

// Binary per-pixel mask.
struct Mask {
    int width = 0;
    int height = 0;
    std::vector<unsigned char> values;

    Mask() = default;
    Mask(int w, int h, bool fill = false) : width(w), height(h), values(static_cast<std::size_t>(w) * h, fill) {}

    bool at(int x, int y) const { return values[static_cast<std::size_t>(y) * width + x] != 0; }
    void set(int x, int y, bool v) { values[static_cast<std::size_t>(y) * width + x] = v ? 1 : 0; }
    std::size_t count() const {
        return static_cast<std::size_t>(std::count(values.begin(), values.end(), 1));
    }
};

}  // namespace a4dg
