// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <vector>

#include "a4dg/geometry.hpp"
#include "a4dg/image.hpp"
#include "a4dg/scene.hpp"
#include "a4dg/spawn.hpp"
#include "a4dg/temporal.hpp"

namespace a4dg {

struct RenderConfig {
    ProjectionConfig projection;
    double opacity_threshold = 0.0;
    double activation_epsilon = 1e-3;
    // Frustum, opacity and temporal-activation culling.
    bool cull = true;
    // Restrict each Gaussian to its footprint box instead of the whole image.
    bool cutoff = true;
    double alpha_clamp = 0.999;
    Vec3 background = Vec3::Zero();

    // Same mathematics as the brute-force reference.
    static RenderConfig exact() {
        RenderConfig c;
        c.cull = false;
        c.cutoff = false;
        return c;
    }
};

// One sliced Gaussian handed to the rasterizer, with its provenance.
struct SplatInput {
    Gaussian3D gaussian;
    std::uint32_t anchor = 0;
    int slot = 0;
    double base_opacity = 0.0;  // time-invariant part of the opacity
    double alpha_prime = 1.0;   // time-variant part of the opacity
};

// A Gaussian that survived culling, in depth order.
struct SplatRecord {
    std::uint32_t input = 0;
    Mat3 cov3d = Mat3::Identity();
    Projection proj;
    Mat2 conic = Mat2::Identity();
    int x0 = 0, x1 = -1, y0 = 0, y1 = -1;  // inclusive pixel box
};

struct Raster {
    Camera cam;
    RenderConfig cfg;
    std::vector<SplatInput> inputs;
    std::vector<SplatRecord> records;
    // Inputs that pass the frustum and base-opacity test regardless of their
    // temporal factor. Used by the naive growing statistic.
    std::vector<std::uint32_t> frustum_visible;
    // Per-pixel record lists (CSR) when cutoff is enabled.
    std::vector<std::uint32_t> pixel_offsets;
    std::vector<std::uint32_t> pixel_items;
    Image image;
    std::vector<double> transmittance;
};

namespace detail {

inline Mat2 inverse_sym2(const Mat2& c) {
    const double det = c(0, 0) * c(1, 1) - c(0, 1) * c(0, 1);
    Mat2 inv;
    inv << c(1, 1) / det, -c(0, 1) / det, -c(0, 1) / det, c(0, 0) / det;
    return inv;
}

// exp(-0.5 d^T conic d) for d = pixel center - mean.
inline double splat_falloff(const Mat2& conic, double dx, double dy) {
    const double power = -0.5 * (conic(0, 0) * dx * dx + 2.0 * conic(0, 1) * dx * dy + conic(1, 1) * dy * dy);
    return std::exp(power);
}

inline bool depth_less(double da, std::uint32_t aa, int sa, double db, std::uint32_t ab, int sb) {
    if (da != db) return da < db;
    if (aa != ab) return aa < ab;
    return sa < sb;
}

}  // namespace detail

// Culls, projects, depth-sorts and composites a list of 3D Gaussians.
inline Raster rasterize(std::vector<SplatInput> inputs, const Camera& cam, const RenderConfig& cfg) {
    Raster r;
    r.cam = cam;
    r.cfg = cfg;
    r.inputs = std::move(inputs);
    const int w = cam.width, h = cam.height;

    for (std::uint32_t i = 0; i < r.inputs.size(); ++i) {
        const SplatInput& in = r.inputs[i];
        const bool opaque_enough = in.gaussian.opacity > cfg.opacity_threshold;
        const bool base_opaque = in.base_opacity > cfg.opacity_threshold;
        const bool active = in.alpha_prime > cfg.activation_epsilon;
        if (cfg.cull && !base_opaque) continue;
        const Mat3 cov3d = covariance_from_qs(in.gaussian.rotation, in.gaussian.scale);
        const auto proj = project_gaussian(in.gaussian.center, cov3d, cam, cfg.projection);
        if (!proj) continue;
        const double radius = footprint_radius(proj->cov, cfg.projection.cutoff_sigma);
        const bool on_screen = !(proj->mean.x() + radius < 0.0 || proj->mean.x() - radius > w ||
                                 proj->mean.y() + radius < 0.0 || proj->mean.y() - radius > h);
        if (cfg.cull && !on_screen) continue;
        r.frustum_visible.push_back(i);
        if (cfg.cull && !(opaque_enough && active)) continue;

        SplatRecord rec;
        rec.input = i;
        rec.cov3d = cov3d;
        rec.proj = *proj;
        rec.conic = detail::inverse_sym2(proj->cov);
        if (cfg.cutoff) {
            rec.x0 = std::max(0, static_cast<int>(std::ceil(proj->mean.x() - radius - 0.5)));
            rec.x1 = std::min(w - 1, static_cast<int>(std::floor(proj->mean.x() + radius - 0.5)));
            rec.y0 = std::max(0, static_cast<int>(std::ceil(proj->mean.y() - radius - 0.5)));
            rec.y1 = std::min(h - 1, static_cast<int>(std::floor(proj->mean.y() + radius - 0.5)));
            if (rec.x0 > rec.x1 || rec.y0 > rec.y1) continue;
        } else {
            rec.x0 = 0;
            rec.x1 = w - 1;
            rec.y0 = 0;
            rec.y1 = h - 1;
        }
        r.records.push_back(rec);
    }

    std::sort(r.records.begin(), r.records.end(), [&](const SplatRecord& a, const SplatRecord& b) {
        const SplatInput& ia = r.inputs[a.input];
        const SplatInput& ib = r.inputs[b.input];
        if (a.proj.depth != b.proj.depth) return a.proj.depth < b.proj.depth;
        if (ia.anchor != ib.anchor) return ia.anchor < ib.anchor;
        if (ia.slot != ib.slot) return ia.slot < ib.slot;
        return a.input < b.input;
    });

    const std::size_t npix = static_cast<std::size_t>(w) * h;
    if (cfg.cutoff) {
        std::vector<std::uint32_t> counts(npix + 1, 0);
        for (const SplatRecord& rec : r.records)
            for (int y = rec.y0; y <= rec.y1; ++y)
                for (int x = rec.x0; x <= rec.x1; ++x) ++counts[static_cast<std::size_t>(y) * w + x + 1];
        std::partial_sum(counts.begin(), counts.end(), counts.begin());
        r.pixel_offsets = counts;
        r.pixel_items.resize(counts.back());
        std::vector<std::uint32_t> cursor(counts.begin(), counts.end() - 1);
        for (std::uint32_t ri = 0; ri < r.records.size(); ++ri) {
            const SplatRecord& rec = r.records[ri];
            for (int y = rec.y0; y <= rec.y1; ++y)
                for (int x = rec.x0; x <= rec.x1; ++x) r.pixel_items[cursor[static_cast<std::size_t>(y) * w + x]++] = ri;
        }
    }

    r.image = Image(w, h, 3);
    r.transmittance.assign(npix, 1.0);
    const std::uint32_t all = static_cast<std::uint32_t>(r.records.size());
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const std::size_t p = static_cast<std::size_t>(y) * w + x;
            const std::uint32_t begin = cfg.cutoff ? r.pixel_offsets[p] : 0;
            const std::uint32_t end = cfg.cutoff ? r.pixel_offsets[p + 1] : all;
            const double px = x + 0.5, py = y + 0.5;
            double t = 1.0;
            Vec3 c = Vec3::Zero();
            for (std::uint32_t it = begin; it < end; ++it) {
                const SplatRecord& rec = r.records[cfg.cutoff ? r.pixel_items[it] : it];
                const Gaussian3D& g = r.inputs[rec.input].gaussian;
                const double falloff = detail::splat_falloff(rec.conic, px - rec.proj.mean.x(), py - rec.proj.mean.y());
                const double a = std::clamp(g.opacity * falloff, 0.0, cfg.alpha_clamp);
                c += g.color * (a * t);
                t *= (1.0 - a);
            }
            c += cfg.background * t;
            for (int ch = 0; ch < 3; ++ch) r.image.at(x, y, ch) = c[ch];
            r.transmittance[p] = t;
        }
    }
    return r;
}

// Gradient of the loss with respect to one composited Gaussian.
struct SplatGrad {
    Vec3 d_center = Vec3::Zero();
    Quat d_rotation = Quat::Zero();
    Vec3 d_scale = Vec3::Zero();
    double d_opacity = 0.0;
    Vec3 d_color = Vec3::Zero();
    Vec2 d_mean2d = Vec2::Zero();
};

// Reverse of rasterize(); one entry per record.
inline std::vector<SplatGrad> rasterize_backward(const Raster& r, const Image& d_image) {
    const int w = r.cam.width, h = r.cam.height;
    if (d_image.width != w || d_image.height != h || d_image.channels != 3)
        throw InvalidParameter("rasterize_backward: gradient image does not match the frame");
    const std::size_t n = r.records.size();
    std::vector<Vec2> d_mean(n, Vec2::Zero());
    std::vector<Mat2> d_conic(n, Mat2::Zero());
    std::vector<double> d_opacity(n, 0.0);
    std::vector<Vec3> d_color(n, Vec3::Zero());

    std::vector<double> alphas, trans, falloffs;
    std::vector<std::uint32_t> items;
    const std::uint32_t all = static_cast<std::uint32_t>(n);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const std::size_t p = static_cast<std::size_t>(y) * w + x;
            const Vec3 dc(d_image.at(x, y, 0), d_image.at(x, y, 1), d_image.at(x, y, 2));
            if (dc.isZero(0.0)) continue;
            const std::uint32_t begin = r.cfg.cutoff ? r.pixel_offsets[p] : 0;
            const std::uint32_t end = r.cfg.cutoff ? r.pixel_offsets[p + 1] : all;
            const double px = x + 0.5, py = y + 0.5;
            items.clear();
            alphas.clear();
            trans.clear();
            falloffs.clear();
            double t = 1.0;
            for (std::uint32_t it = begin; it < end; ++it) {
                const std::uint32_t ri = r.cfg.cutoff ? r.pixel_items[it] : it;
                const SplatRecord& rec = r.records[ri];
                const Gaussian3D& g = r.inputs[rec.input].gaussian;
                const double falloff = detail::splat_falloff(rec.conic, px - rec.proj.mean.x(), py - rec.proj.mean.y());
                const double a = std::clamp(g.opacity * falloff, 0.0, r.cfg.alpha_clamp);
                items.push_back(ri);
                alphas.push_back(a);
                trans.push_back(t);
                falloffs.push_back(falloff);
                t *= (1.0 - a);
            }
            // Color arriving from behind entry i, seen through T_{i+1}.
            double behind = r.cfg.background.dot(dc) * t;
            for (std::size_t j = items.size(); j-- > 0;) {
                const std::uint32_t ri = items[j];
                const SplatRecord& rec = r.records[ri];
                const Gaussian3D& g = r.inputs[rec.input].gaussian;
                const double a = alphas[j], ti = trans[j];
                d_color[ri] += dc * (a * ti);
                const double d_a = ti * g.color.dot(dc) - behind / (1.0 - a);
                behind += g.color.dot(dc) * a * ti;
                const double raw = g.opacity * falloffs[j];
                if (!(raw > 0.0 && raw < r.cfg.alpha_clamp)) continue;
                d_opacity[ri] += d_a * falloffs[j];
                const double d_falloff = d_a * g.opacity;
                const double dx = px - rec.proj.mean.x(), dy = py - rec.proj.mean.y();
                const double gf = d_falloff * falloffs[j];
                // d falloff / d mean = falloff * conic * d
                d_mean[ri].x() += gf * (rec.conic(0, 0) * dx + rec.conic(0, 1) * dy);
                d_mean[ri].y() += gf * (rec.conic(0, 1) * dx + rec.conic(1, 1) * dy);
                d_conic[ri](0, 0) += -0.5 * gf * dx * dx;
                d_conic[ri](0, 1) += -0.5 * gf * dx * dy;
                d_conic[ri](1, 0) += -0.5 * gf * dx * dy;
                d_conic[ri](1, 1) += -0.5 * gf * dy * dy;
            }
        }
    }

    std::vector<SplatGrad> out(n);
    for (std::size_t ri = 0; ri < n; ++ri) {
        const SplatRecord& rec = r.records[ri];
        const Gaussian3D& g = r.inputs[rec.input].gaussian;
        SplatGrad& o = out[ri];
        o.d_color = d_color[ri];
        o.d_opacity = d_opacity[ri];
        o.d_mean2d = d_mean[ri];
        if (d_mean[ri].isZero(0.0) && d_conic[ri].isZero(0.0)) continue;
        const Mat2 d_cov2d = -rec.conic * d_conic[ri] * rec.conic;
        const ProjectionGrad pg = project_gaussian_backward(g.center, rec.cov3d, r.cam, d_mean[ri], d_cov2d);
        o.d_center = pg.d_center;
        const CovarianceGrad cg = covariance_from_qs_backward(g.rotation, g.scale, pg.d_cov3d);
        o.d_rotation = cg.d_rotation;
        o.d_scale = cg.d_scale;
    }
    return out;
}

// Reference compositor: every Gaussian in the depth range, every pixel, no
// footprint box and no culling beyond what projection itself requires.
inline Image render_bruteforce(std::span<const SplatInput> inputs, const Camera& cam, const RenderConfig& cfg) {
    struct Entry {
        std::size_t index;
        Projection proj;
        Mat2 conic;
    };
    std::vector<Entry> entries;
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        const auto proj = project_gaussian(inputs[i].gaussian, cam, cfg.projection);
        if (!proj) continue;
        entries.push_back({i, *proj, detail::inverse_sym2(proj->cov)});
    }
    std::sort(entries.begin(), entries.end(), [&](const Entry& a, const Entry& b) {
        return detail::depth_less(a.proj.depth, inputs[a.index].anchor, inputs[a.index].slot, b.proj.depth,
                                  inputs[b.index].anchor, inputs[b.index].slot);
    });
    Image img(cam.width, cam.height, 3);
    for (int y = 0; y < cam.height; ++y) {
        for (int x = 0; x < cam.width; ++x) {
            double t = 1.0;
            Vec3 c = Vec3::Zero();
            for (const Entry& e : entries) {
                const Gaussian3D& g = inputs[e.index].gaussian;
                const double falloff = detail::splat_falloff(e.conic, x + 0.5 - e.proj.mean.x(), y + 0.5 - e.proj.mean.y());
                const double a = std::clamp(g.opacity * falloff, 0.0, cfg.alpha_clamp);
                c += g.color * (a * t);
                t *= (1.0 - a);
            }
            c += cfg.background * t;
            for (int ch = 0; ch < 3; ++ch) img.at(x, y, ch) = c[ch];
        }
    }
    return img;
}

// ---------------------------------------------------------------------------
// Scene-level rendering: spawn, slice, rasterize.

struct SplatFrame {
    double time = 0.0;
    TemporalConfig temporal;
    std::uint64_t anchor_version = 0;
    std::uint64_t mlp_version = 0;
    std::size_t anchor_count = 0;
    int k = 0;
    std::vector<NeuralGaussian4D> spawned;  // [anchor * k + slot]
    std::vector<SpawnTape> tapes;           // empty when rendered from a cache
    std::vector<Vec3> view_dirs;
    Raster raster;

    const Image& image() const { return raster.image; }
    const Camera& camera() const { return raster.cam; }
    const NeuralGaussian4D& gaussian_of(const SplatRecord& rec) const {
        const SplatInput& in = raster.inputs[rec.input];
        return spawned[static_cast<std::size_t>(in.anchor) * k + in.slot];
    }
};

inline SplatFrame render(const Scene& scene, const Camera& cam, double t, const RenderConfig& cfg = {},
                         const InferenceCache* cache = nullptr) {
    const std::size_t n = scene.anchors.size();
    const int k = scene.mlps.k;
    SplatFrame f;
    f.time = t;
    f.temporal = scene.temporal;
    f.anchor_version = scene.anchors.version();
    f.mlp_version = scene.mlps.version();
    f.anchor_count = n;
    f.k = k;
    f.spawned.resize(n * k);
    f.view_dirs.resize(n);
    if (!cache) f.tapes.resize(n);
    const Vec3 eye = cam.center();
    std::vector<SplatInput> inputs;
    inputs.reserve(n * k);
    for (std::size_t i = 0; i < n; ++i) {
        f.view_dirs[i] = view_direction(eye, scene.anchors.position(i));
        std::span<NeuralGaussian4D> out(f.spawned.data() + i * k, k);
        if (cache)
            cache->spawn(scene.anchors, i, f.view_dirs[i], scene.mlps, out);
        else
            spawn(scene.anchors, i, f.view_dirs[i], scene.mlps, out, &f.tapes[i]);
        for (int s = 0; s < k; ++s) {
            SplatInput in;
            in.gaussian = slice_to_3d(out[s], t, scene.temporal);
            in.anchor = static_cast<std::uint32_t>(i);
            in.slot = s;
            in.base_opacity = out[s].base_opacity;
            in.alpha_prime = temporal_factor(out[s], t, scene.temporal);
            inputs.push_back(in);
        }
    }
    f.raster = rasterize(std::move(inputs), cam, cfg);
    return f;
}

inline Image render_bruteforce(const Scene& scene, const Camera& cam, double t, const RenderConfig& cfg = {}) {
    const int k = scene.mlps.k;
    const Vec3 eye = cam.center();
    std::vector<SplatInput> inputs;
    for (std::size_t i = 0; i < scene.anchors.size(); ++i) {
        const auto gs = spawn(scene.anchors, i, view_direction(eye, scene.anchors.position(i)), scene.mlps);
        for (int s = 0; s < k; ++s) {
            SplatInput in;
            in.gaussian = slice_to_3d(gs[s], t, scene.temporal);
            in.anchor = static_cast<std::uint32_t>(i);
            in.slot = s;
            inputs.push_back(in);
        }
    }
    return render_bruteforce(inputs, cam, cfg);
}

// Densification signal of one composited Gaussian.
struct Grad2DRecord {
    std::uint32_t anchor = 0;
    int slot = 0;
    double grad_norm = 0.0;
    double alpha_prime = 0.0;
    double sigma = 0.0;
};

// Per-record gradients from the image gradient, plus the densification records.
struct SplatBackward {
    std::vector<SplatGrad> splats;
    std::vector<Grad2DRecord> records;
};

inline void check_frame(const SplatFrame& f, const Scene& scene) {
    if (f.anchor_version != scene.anchors.version() || f.mlp_version != scene.mlps.version() ||
        f.anchor_count != scene.anchors.size() || f.k != scene.mlps.k)
        throw InvalidParameter("render_backward: frame does not match the scene");
}

inline SplatBackward render_backward_splats(const SplatFrame& f, const Image& d_image) {
    SplatBackward out;
    out.splats = rasterize_backward(f.raster, d_image);
    out.records.reserve(f.raster.records.size());
    for (std::size_t ri = 0; ri < f.raster.records.size(); ++ri) {
        const SplatInput& in = f.raster.inputs[f.raster.records[ri].input];
        const NeuralGaussian4D& g = f.spawned[static_cast<std::size_t>(in.anchor) * f.k + in.slot];
        out.records.push_back({in.anchor, in.slot, out.splats[ri].d_mean2d.norm(), in.alpha_prime, 1.0 / g.sigma_inv});
    }
    return out;
}

// Pulls per-record gradients back through slicing and the spawning MLPs.
inline SceneGrad render_backward_params(const SplatFrame& f, const Scene& scene, std::span<const SplatGrad> splats) {
    check_frame(f, scene);
    if (f.tapes.size() != f.anchor_count)
        throw InvalidParameter("render_backward: frame was rendered from an inference cache");
    if (splats.size() != f.raster.records.size())
        throw InvalidParameter("render_backward: gradient count does not match the frame");
    const int k = f.k;
    std::vector<Gaussian4DGrad> up(f.anchor_count * k);
    std::vector<unsigned char> touched(f.anchor_count, 0);
    for (std::size_t ri = 0; ri < splats.size(); ++ri) {
        const SplatInput& in = f.raster.inputs[f.raster.records[ri].input];
        const std::size_t gi = static_cast<std::size_t>(in.anchor) * k + in.slot;
        const SplatGrad& sg = splats[ri];
        Gaussian4DGrad& u = up[gi];
        slice_to_3d_backward(f.spawned[gi], f.time, f.temporal, sg.d_center, sg.d_opacity, u);
        u.d_rotation += sg.d_rotation;
        u.d_scale += sg.d_scale;
        u.d_color += sg.d_color;
        touched[in.anchor] = 1;
    }
    SceneGrad grad = SceneGrad::zeros_like(scene);
    for (std::size_t i = 0; i < f.anchor_count; ++i) {
        if (!touched[i]) continue;
        spawn_backward(scene.anchors, i, f.view_dirs[i], scene.mlps, f.tapes[i],
                       std::span<const NeuralGaussian4D>(f.spawned.data() + i * k, k),
                       std::span<const Gaussian4DGrad>(up.data() + i * k, k), grad.mlps, grad.anchors);
    }
    return grad;
}

struct RenderBackward {
    SceneGrad grad;
    std::vector<Grad2DRecord> records;
};

inline RenderBackward render_backward(const SplatFrame& f, const Scene& scene, const Image& d_image) {
    check_frame(f, scene);
    SplatBackward sb = render_backward_splats(f, d_image);
    RenderBackward out;
    out.grad = render_backward_params(f, scene, sb.splats);
    out.records = std::move(sb.records);
    return out;
}

}  // namespace a4dg
