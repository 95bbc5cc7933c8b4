// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cmath>
#include <vector>

#include "a4dg/geometry.hpp"
#include "a4dg/image.hpp"

namespace a4dg {

// Separable 11x11 Gaussian window (sigma 1.5) with zero padding, the usual
// SSIM setup for splatting losses.
class SsimWindow {
public:
    static constexpr int kSize = 11;
    static constexpr int kHalf = kSize / 2;

    explicit SsimWindow(double sigma = 1.5) {
        double sum = 0.0;
        for (int i = 0; i < kSize; ++i) {
            const double d = i - kHalf;
            taps_[i] = std::exp(-d * d / (2.0 * sigma * sigma));
            sum += taps_[i];
        }
        for (double& v : taps_) v /= sum;
    }

    const std::array<double, kSize>& taps() const { return taps_; }

    // out(p) = sum_q w(p - q) in(q) over in-bounds q. The window is symmetric,
    // so this is also its own adjoint.
    void filter(const std::vector<double>& in, std::vector<double>& out, int w, int h) const {
        std::vector<double> tmp(in.size(), 0.0);
        out.assign(in.size(), 0.0);
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                double acc = 0.0;
                for (int i = 0; i < kSize; ++i) {
                    const int xx = x + i - kHalf;
                    if (xx >= 0 && xx < w) acc += taps_[i] * in[static_cast<std::size_t>(y) * w + xx];
                }
                tmp[static_cast<std::size_t>(y) * w + x] = acc;
            }
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                double acc = 0.0;
                for (int i = 0; i < kSize; ++i) {
                    const int yy = y + i - kHalf;
                    if (yy >= 0 && yy < h) acc += taps_[i] * tmp[static_cast<std::size_t>(yy) * w + x];
                }
                out[static_cast<std::size_t>(y) * w + x] = acc;
            }
    }

private:
    std::array<double, kSize> taps_{};
};

inline constexpr double kSsimC1 = 0.01 * 0.01;
inline constexpr double kSsimC2 = 0.03 * 0.03;

// Per-pixel, per-channel SSIM map (same layout as the images) and, optionally,
// d(mean SSIM)/d(a) where the mean runs over every sample.
struct SsimResult {
    double mean = 1.0;
    std::vector<double> map;
    std::vector<double> grad;  // filled only when requested
};

inline SsimResult ssim(const Image& a, const Image& b, bool want_grad = false) {
    require_same_shape(a, b, "ssim");
    const int w = a.width, h = a.height, nc = a.channels;
    const std::size_t np = a.pixel_count();
    static const SsimWindow window;
    SsimResult r;
    r.map.assign(a.size(), 0.0);
    if (want_grad) r.grad.assign(a.size(), 0.0);
    std::vector<double> x(np), y(np), xx(np), yy(np), xy(np);
    std::vector<double> mx, my, exx, eyy, exy;
    double total = 0.0;
    for (int c = 0; c < nc; ++c) {
        for (std::size_t p = 0; p < np; ++p) {
            x[p] = a.pixels[p * nc + c];
            y[p] = b.pixels[p * nc + c];
            xx[p] = x[p] * x[p];
            yy[p] = y[p] * y[p];
            xy[p] = x[p] * y[p];
        }
        window.filter(x, mx, w, h);
        window.filter(y, my, w, h);
        window.filter(xx, exx, w, h);
        window.filter(yy, eyy, w, h);
        window.filter(xy, exy, w, h);
        std::vector<double> g_mu, g_xx, g_xy;
        if (want_grad) {
            g_mu.resize(np);
            g_xx.resize(np);
            g_xy.resize(np);
        }
        for (std::size_t p = 0; p < np; ++p) {
            const double sx = exx[p] - mx[p] * mx[p];
            const double sy = eyy[p] - my[p] * my[p];
            const double sxy = exy[p] - mx[p] * my[p];
            const double a1 = 2.0 * mx[p] * my[p] + kSsimC1;
            const double a2 = 2.0 * sxy + kSsimC2;
            const double b1 = mx[p] * mx[p] + my[p] * my[p] + kSsimC1;
            const double b2 = sx + sy + kSsimC2;
            const double s = (a1 * a2) / (b1 * b2);
            r.map[p * nc + c] = s;
            total += s;
            if (want_grad) {
                g_mu[p] = s * (2.0 * my[p] / a1 - 2.0 * my[p] / a2 - 2.0 * mx[p] / b1 + 2.0 * mx[p] / b2);
                g_xx[p] = -s / b2;
                g_xy[p] = 2.0 * s / a2;
            }
        }
        if (want_grad) {
            std::vector<double> f_mu, f_xx, f_xy;
            window.filter(g_mu, f_mu, w, h);
            window.filter(g_xx, f_xx, w, h);
            window.filter(g_xy, f_xy, w, h);
            const double inv_n = 1.0 / static_cast<double>(a.size());
            for (std::size_t p = 0; p < np; ++p)
                r.grad[p * nc + c] = inv_n * (f_mu[p] + 2.0 * x[p] * f_xx[p] + y[p] * f_xy[p]);
        }
    }
    r.mean = total / static_cast<double>(a.size());
    return r;
}

struct LossWeights {
    double lambda_ssim = 0.2;
    double lambda_vol = 0.01;
};

struct LossValue {
    double total = 0.0;
    double l1 = 0.0;
    double ssim_term = 0.0;  // 1 - SSIM
    double volume = 0.0;
    Image grad;  // dL/d(render)
};

// (1 - lambda_ssim) L1 + lambda_ssim (1 - SSIM) + lambda_vol * volume. The
// volume term's gradient lives with the Gaussians, not the image; see
// volume_loss(). With want_grad false only the scalar terms are filled in.
inline LossValue image_loss(const Image& render, const Image& gt, const LossWeights& weights,
                            double volume = 0.0, bool want_grad = true) {
    require_same_shape(render, gt, "loss");
    LossValue out;
    if (want_grad) out.grad = Image(render.width, render.height, render.channels);
    const double inv_n = 1.0 / static_cast<double>(render.size());
    double l1 = 0.0;
    for (std::size_t i = 0; i < render.size(); ++i) {
        const double d = render.pixels[i] - gt.pixels[i];
        l1 += std::abs(d);
        if (want_grad)
            out.grad.pixels[i] = (1.0 - weights.lambda_ssim) * inv_n * (d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0));
    }
    out.l1 = l1 * inv_n;
    const bool ssim_grad = want_grad && weights.lambda_ssim != 0.0;
    const SsimResult s = ssim(render, gt, ssim_grad);
    out.ssim_term = 1.0 - s.mean;
    if (ssim_grad)
        for (std::size_t i = 0; i < render.size(); ++i) out.grad.pixels[i] -= weights.lambda_ssim * s.grad[i];
    out.volume = volume;
    out.total = (1.0 - weights.lambda_ssim) * out.l1 + weights.lambda_ssim * out.ssim_term +
                weights.lambda_vol * out.volume;
    return out;
}

// Mean product of scales over the given Gaussians, and its gradient per scale.
struct VolumeTerm {
    double value = 0.0;
    std::vector<Vec3> grad;
};

template <typename ScaleRange>
VolumeTerm volume_loss(const ScaleRange& scales) {
    VolumeTerm v;
    const std::size_t n = std::size(scales);
    v.grad.assign(n, Vec3::Zero());
    if (n == 0) return v;
    const double inv_n = 1.0 / static_cast<double>(n);
    std::size_t i = 0;
    for (const Vec3& s : scales) {
        const double prod = s.x() * s.y() * s.z();
        v.value += prod * inv_n;
        v.grad[i++] = Vec3(s.y() * s.z(), s.x() * s.z(), s.x() * s.y()) * inv_n;
    }
    return v;
}

}  // namespace a4dg
