// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <limits>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"

#include "a4dg/dataset.hpp"
#include "a4dg/error.hpp"
#include "a4dg/geometry.hpp"
#include "a4dg/loss.hpp"
#include "a4dg/renderer.hpp"

namespace a4dg {

// A blob that moves along a piecewise-linear path and exists only while
// t_start <= t <= t_end. Waypoints are spread evenly over that interval.
struct DynamicBlobSpec {
    double t_start = 0.0;
    double t_end = 1.0;
    std::vector<Vec3> waypoints{Vec3::Zero()};
    Vec3 color = Vec3(1.0, 0.2, 0.2);
    double scale = 0.15;
    double opacity = 0.95;
};

struct SynthSpec {
    int cameras = 8;
    double ring_radius = 4.5;
    double ring_height = 1.0;
    Vec3 look_at = Vec3::Zero();
    double focal = 75.0;
    int width = 48;
    int height = 48;
    int frames = 24;
    int test_camera = 0;

    int static_count = 40;
    Vec3 static_extent = Vec3(0.9, 0.35, 0.9);  // centers uniform in [-e, e] around look_at
    double static_scale_min = 0.08;
    double static_scale_max = 0.22;
    double static_opacity = 0.9;
    int points_per_blob = 8;

    std::vector<DynamicBlobSpec> dynamic_blobs;
    std::uint64_t seed = 7;

    // 40 static blobs, one blob crossing the scene for the whole clip and one
    // that exists only in frames 8 to 16. The short-lived blob flies high above
    // the slab, away from the initial anchors and from the other blob's path.
    static SynthSpec desk_default() {
        SynthSpec s;
        DynamicBlobSpec a;
        a.waypoints = {Vec3(-0.7, 0.6, 0.2), Vec3(0.7, 0.6, -0.2)};
        a.color = Vec3(0.95, 0.25, 0.2);
        a.scale = 0.16;
        DynamicBlobSpec b;
        b.t_start = 8.0 / 23.0;
        b.t_end = 16.0 / 23.0;
        b.waypoints = {Vec3(0.6, 1.0, -0.5), Vec3(0.3, 1.05, 0.5)};
        b.color = Vec3(0.2, 0.45, 1.0);
        b.scale = 0.2;
        s.dynamic_blobs = {a, b};
        return s;
    }

    Vec3 dynamic_position(const DynamicBlobSpec& b, double t) const {
        if (b.waypoints.size() == 1 || b.t_end <= b.t_start) return b.waypoints.front();
        const double u = std::clamp((t - b.t_start) / (b.t_end - b.t_start), 0.0, 1.0);
        const double seg = u * static_cast<double>(b.waypoints.size() - 1);
        const std::size_t i = std::min(static_cast<std::size_t>(seg), b.waypoints.size() - 2);
        const double f = seg - static_cast<double>(i);
        return (1.0 - f) * b.waypoints[i] + f * b.waypoints[i + 1];
    }

    std::vector<Camera> ring_cameras() const {
        std::vector<Camera> out;
        for (int c = 0; c < cameras; ++c) {
            const double th = 2.0 * M_PI * c / cameras;
            const Vec3 eye = look_at + Vec3(ring_radius * std::sin(th), ring_height, ring_radius * std::cos(th));
            Camera cam = look_at_camera(eye, look_at, Vec3(0.0, 1.0, 0.0), focal, width, height);
            cam.near_plane = 0.05;
            cam.far_plane = 100.0;
            out.push_back(cam);
        }
        return out;
    }

    // Every static center and dynamic waypoint must land inside every view.
    void validate() const {
        if (frames < 2) throw ConfigError("synth: frames must be >= 2");
        if (cameras < 2) throw ConfigError("synth: need at least 2 cameras");
        if (width < 8 || height < 8) throw ConfigError("synth: image must be at least 8x8");
        if (!(ring_radius > 0.0) || !(focal > 0.0)) throw ConfigError("synth: ring radius and focal must be > 0");
        if (test_camera < 0 || test_camera >= cameras) throw ConfigError("synth: test_camera out of range");
        if (static_count < 0 || points_per_blob < 1) throw ConfigError("synth: bad static blob counts");
        if (!(static_scale_min > 0.0) || static_scale_max < static_scale_min)
            throw ConfigError("synth: bad static scale range");
        if (static_opacity <= 0.0 || static_opacity > 1.0) throw ConfigError("synth: static opacity must be in (0, 1]");
        std::vector<Vec3> probes;
        for (int sx : {-1, 1})
            for (int sy : {-1, 1})
                for (int sz : {-1, 1})
                    probes.push_back(look_at + static_extent.cwiseProduct(Vec3(sx, sy, sz)));
        for (const DynamicBlobSpec& b : dynamic_blobs) {
            if (b.waypoints.empty()) throw ConfigError("synth: dynamic blob without waypoints");
            if (!(b.t_start >= 0.0 && b.t_end <= 1.0 && b.t_start <= b.t_end))
                throw ConfigError("synth: dynamic blob time range must lie in [0, 1]");
            if (!(b.scale > 0.0) || b.opacity <= 0.0 || b.opacity > 1.0)
                throw ConfigError("synth: dynamic blob needs scale > 0 and opacity in (0, 1]");
            for (const Vec3& w : b.waypoints) probes.push_back(w);
        }
        for (const Camera& cam : ring_cameras())
            for (const Vec3& p : probes) {
                const Vec3 q = cam.to_camera(p);
                const double u = cam.fx * q.x() / q.z() + cam.cx, v = cam.fy * q.y() / q.z() + cam.cy;
                if (!(q.z() > cam.near_plane) || u < 0 || v < 0 || u > cam.width || v > cam.height)
                    throw ConfigError("synth: scene volume leaves a camera's view");
            }
    }
};

namespace detail {

using nlohmann::json;

inline Vec3 vec3_from_json(const json& j, const std::string& key) {
    const auto v = j.get<std::vector<double>>();
    if (v.size() != 3) throw ConfigError("synth: \"" + key + "\" needs 3 numbers");
    return Vec3(v[0], v[1], v[2]);
}

inline std::vector<double> vec3_to_json(const Vec3& v) { return {v.x(), v.y(), v.z()}; }

template <typename F>
void visit_fields(const json& j, const std::string& where, const std::set<std::string>& allowed, F&& set) {
    if (!j.is_object()) throw ConfigError(where + " must be an object");
    for (const auto& [key, value] : j.items()) {
        if (!allowed.count(key)) throw ConfigError(where + ": unknown key \"" + key + "\"");
        try {
            set(key, value);
        } catch (const json::exception&) {
            throw ConfigError(where + ": key \"" + key + "\" has the wrong type");
        }
    }
}

}  // namespace detail

// Keys not present keep their defaults; unknown keys are an error. A spec
// without "dynamic_blobs" gets the default pair.
inline SynthSpec synth_spec_from_json(const std::string& text) {
    using detail::json;
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ConfigError(std::string("synth spec is not valid JSON: ") + e.what());
    }
    SynthSpec s = SynthSpec::desk_default();
    const std::set<std::string> keys{"cameras",       "ring_radius",       "ring_height",      "look_at",
                                     "focal",         "width",             "height",           "frames",
                                     "test_camera",   "static_count",      "static_extent",    "static_scale_min",
                                     "static_scale_max", "static_opacity", "points_per_blob",  "dynamic_blobs",
                                     "seed"};
    detail::visit_fields(j, "synth spec", keys, [&](const std::string& k, const json& v) {
        if (k == "cameras") s.cameras = v.get<int>();
        else if (k == "ring_radius") s.ring_radius = v.get<double>();
        else if (k == "ring_height") s.ring_height = v.get<double>();
        else if (k == "look_at") s.look_at = detail::vec3_from_json(v, k);
        else if (k == "focal") s.focal = v.get<double>();
        else if (k == "width") s.width = v.get<int>();
        else if (k == "height") s.height = v.get<int>();
        else if (k == "frames") s.frames = v.get<int>();
        else if (k == "test_camera") s.test_camera = v.get<int>();
        else if (k == "static_count") s.static_count = v.get<int>();
        else if (k == "static_extent") s.static_extent = detail::vec3_from_json(v, k);
        else if (k == "static_scale_min") s.static_scale_min = v.get<double>();
        else if (k == "static_scale_max") s.static_scale_max = v.get<double>();
        else if (k == "static_opacity") s.static_opacity = v.get<double>();
        else if (k == "points_per_blob") s.points_per_blob = v.get<int>();
        else if (k == "seed") s.seed = v.get<std::uint64_t>();
        else if (k == "dynamic_blobs") {
            if (!v.is_array()) throw ConfigError("synth spec: dynamic_blobs must be an array");
            s.dynamic_blobs.clear();
            for (const json& bj : v) {
                DynamicBlobSpec b;
                detail::visit_fields(bj, "dynamic blob", {"t_start", "t_end", "waypoints", "color", "scale", "opacity"},
                                     [&](const std::string& bk, const json& bv) {
                                         if (bk == "t_start") b.t_start = bv.get<double>();
                                         else if (bk == "t_end") b.t_end = bv.get<double>();
                                         else if (bk == "color") b.color = detail::vec3_from_json(bv, bk);
                                         else if (bk == "scale") b.scale = bv.get<double>();
                                         else if (bk == "opacity") b.opacity = bv.get<double>();
                                         else {
                                             b.waypoints.clear();
                                             for (const json& w : bv) b.waypoints.push_back(detail::vec3_from_json(w, bk));
                                         }
                                     });
                s.dynamic_blobs.push_back(std::move(b));
            }
        }
    });
    s.validate();
    return s;
}

inline std::string synth_spec_to_json(const SynthSpec& s) {
    using detail::json;
    json blobs = json::array();
    for (const DynamicBlobSpec& b : s.dynamic_blobs) {
        json w = json::array();
        for (const Vec3& p : b.waypoints) w.push_back(detail::vec3_to_json(p));
        blobs.push_back({{"t_start", b.t_start},
                         {"t_end", b.t_end},
                         {"waypoints", w},
                         {"color", detail::vec3_to_json(b.color)},
                         {"scale", b.scale},
                         {"opacity", b.opacity}});
    }
    json j{{"cameras", s.cameras},
           {"ring_radius", s.ring_radius},
           {"ring_height", s.ring_height},
           {"look_at", detail::vec3_to_json(s.look_at)},
           {"focal", s.focal},
           {"width", s.width},
           {"height", s.height},
           {"frames", s.frames},
           {"test_camera", s.test_camera},
           {"static_count", s.static_count},
           {"static_extent", detail::vec3_to_json(s.static_extent)},
           {"static_scale_min", s.static_scale_min},
           {"static_scale_max", s.static_scale_max},
           {"static_opacity", s.static_opacity},
           {"points_per_blob", s.points_per_blob},
           {"dynamic_blobs", blobs},
           {"seed", s.seed}};
    return j.dump(2) + "\n";
}

// Ground-truth primitive. Static blobs have t_start = 0, t_end = 1 and a
// single waypoint.
struct OracleBlob {
    Gaussian3D gaussian;  // center unused for dynamic blobs; see position()
    DynamicBlobSpec motion;
    bool dynamic = false;
};

struct SynthScene {
    SynthSpec spec;
    std::vector<OracleBlob> blobs;
    SceneDataset dataset;

    // Time-sliced oracle as renderer inputs. Inactive blobs are omitted.
    std::vector<SplatInput> splats_at(double t) const {
        std::vector<SplatInput> out;
        for (std::size_t i = 0; i < blobs.size(); ++i) {
            const OracleBlob& b = blobs[i];
            SplatInput in;
            in.gaussian = b.gaussian;
            if (b.dynamic) {
                constexpr double slack = 1e-9;
                if (t < b.motion.t_start - slack || t > b.motion.t_end + slack) continue;
                in.gaussian.center = spec.dynamic_position(b.motion, t);
            }
            in.anchor = static_cast<std::uint32_t>(i);
            in.base_opacity = in.gaussian.opacity;
            out.push_back(in);
        }
        return out;
    }

    Image render(const Camera& cam, double t) const {
        return render_bruteforce(splats_at(t), cam, RenderConfig::exact());
    }
};

inline std::string frame_file(int camera, int frame) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "cam%02d/f%03d.png", camera, frame);
    return buf;
}

// Builds the oracle, renders every (camera, frame) with the reference
// compositor and samples the initial point cloud from static blobs only.
inline SynthScene generate_scene(const SynthSpec& spec) {
    spec.validate();
    SynthScene out;
    out.spec = spec;
    std::mt19937_64 rng(spec.seed);
    std::uniform_real_distribution<double> unit(-1.0, 1.0), color(0.1, 0.95);
    std::uniform_real_distribution<double> scale(spec.static_scale_min, spec.static_scale_max);
    std::normal_distribution<double> normal(0.0, 1.0);

    for (int i = 0; i < spec.static_count; ++i) {
        OracleBlob b;
        b.gaussian.center = spec.look_at + spec.static_extent.cwiseProduct(Vec3(unit(rng), unit(rng), unit(rng)));
        b.gaussian.rotation = Quat(normal(rng), normal(rng), normal(rng), normal(rng)).normalized();
        b.gaussian.scale = Vec3(scale(rng), scale(rng), scale(rng));
        b.gaussian.opacity = spec.static_opacity;
        b.gaussian.color = Vec3(color(rng), color(rng), color(rng));
        b.motion.waypoints = {b.gaussian.center};
        out.blobs.push_back(b);
    }
    for (const DynamicBlobSpec& d : spec.dynamic_blobs) {
        OracleBlob b;
        b.dynamic = true;
        b.motion = d;
        b.gaussian.center = d.waypoints.front();
        b.gaussian.scale = Vec3::Constant(d.scale);
        b.gaussian.opacity = d.opacity;
        b.gaussian.color = d.color;
        out.blobs.push_back(b);
    }

    SceneDataset& ds = out.dataset;
    ds.frame_count = spec.frames;
    ds.test_camera = spec.test_camera;
    ds.pointcloud_path = "points.ply";
    const std::vector<Camera> cams = spec.ring_cameras();
    ds.images.resize(cams.size());
    for (std::size_t c = 0; c < cams.size(); ++c) {
        CameraEntry e;
        e.id = static_cast<int>(c);
        e.camera = cams[c];
        for (int f = 0; f < spec.frames; ++f) {
            e.frames.push_back(frame_file(e.id, f));
            // Frames are held at PNG precision so in-memory and on-disk datasets agree.
            Image img = out.render(cams[c], ds.frame_time(f));
            for (double& v : img.pixels) v = to_8bit(v) / 255.0;
            ds.images[c].push_back(std::move(img));
        }
        ds.cameras.push_back(std::move(e));
    }
    for (const OracleBlob& b : out.blobs) {
        if (b.dynamic) continue;
        const Mat3 r = rotation_from_quat(b.gaussian.rotation);
        for (int p = 0; p < spec.points_per_blob; ++p) {
            Vec3 z(normal(rng), normal(rng), normal(rng));
            z = z.cwiseMax(-1.5).cwiseMin(1.5);
            const Vec3 q = b.gaussian.center + r * b.gaussian.scale.cwiseProduct(z);
            Vec3 stored;  // float precision, as written to the point cloud file
            for (int a = 0; a < 3; ++a) stored[a] = static_cast<float>(q[a]);
            ds.points.push_back(stored);
            ds.colors.push_back(b.gaussian.color.unaryExpr([](double v) { return to_8bit(v) / 255.0; }));
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Metrics

inline double psnr_from_mse(double mse) {
    return mse > 0.0 ? 10.0 * std::log10(1.0 / mse) : std::numeric_limits<double>::infinity();
}

// +inf for identical images.
inline double psnr(const Image& a, const Image& b) {
    require_same_shape(a, b, "psnr");
    double se = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) se += (a.pixels[i] - b.pixels[i]) * (a.pixels[i] - b.pixels[i]);
    return psnr_from_mse(se / static_cast<double>(a.size()));
}

enum class MaskMode { kGlobalMedian, kTemporalDifference, kCombined };

inline MaskMode parse_mask_mode(const std::string& s) {
    if (s == "global_median") return MaskMode::kGlobalMedian;
    if (s == "temporal_difference") return MaskMode::kTemporalDifference;
    if (s == "combined") return MaskMode::kCombined;
    throw ConfigError("unknown mask mode \"" + s + "\"");
}

struct DynamicMask {
    MaskMode mode = MaskMode::kCombined;
    double threshold = 50.0;  // 8-bit units
    std::vector<Mask> frames;

    std::size_t count() const {
        std::size_t n = 0;
        for (const Mask& m : frames) n += m.count();
        return n;
    }
};

namespace detail {

// Max over channels of |a - b|, in 8-bit units, against the threshold.
inline bool exceeds(const Image& a, const Image& b, int x, int y, double threshold) {
    double m = 0.0;
    for (int c = 0; c < a.channels; ++c) m = std::max(m, std::abs(a.at(x, y, c) - b.at(x, y, c)));
    return m * 255.0 + 1e-9 >= threshold;
}

inline std::vector<Mask> global_median_masks(const std::vector<Image>& frames, double threshold) {
    const Image& f0 = frames.front();
    Image median(f0.width, f0.height, f0.channels);
    std::vector<double> samples(frames.size());
    for (std::size_t i = 0; i < f0.size(); ++i) {
        for (std::size_t f = 0; f < frames.size(); ++f) samples[f] = frames[f].pixels[i];
        std::sort(samples.begin(), samples.end());
        const std::size_t n = samples.size();
        median.pixels[i] = n % 2 ? samples[n / 2] : 0.5 * (samples[n / 2 - 1] + samples[n / 2]);
    }
    std::vector<Mask> out;
    for (const Image& f : frames) {
        Mask m(f.width, f.height);
        for (int y = 0; y < f.height; ++y)
            for (int x = 0; x < f.width; ++x) m.set(x, y, exceeds(f, median, x, y, threshold));
        out.push_back(std::move(m));
    }
    return out;
}

inline std::vector<Mask> temporal_difference_masks(const std::vector<Image>& frames, double threshold) {
    std::vector<Mask> out;
    for (std::size_t t = 0; t < frames.size(); ++t) {
        const Image& a = frames[t == 0 ? 1 : t];
        const Image& b = frames[t == 0 ? 0 : t - 1];
        Mask m(a.width, a.height);
        for (int y = 0; y < a.height; ++y)
            for (int x = 0; x < a.width; ++x) m.set(x, y, exceeds(a, b, x, y, threshold));
        out.push_back(std::move(m));
    }
    return out;
}

}  // namespace detail

inline DynamicMask dynamic_mask(const std::vector<Image>& frames, MaskMode mode = MaskMode::kCombined,
                                double threshold = 50.0) {
    if (frames.empty()) throw InvalidParameter("dynamic_mask: no frames");
    for (const Image& f : frames) require_same_shape(f, frames.front(), "dynamic_mask");
    if (mode != MaskMode::kGlobalMedian && frames.size() < 2)
        throw InvalidParameter("dynamic_mask: temporal difference needs at least 2 frames");
    DynamicMask out;
    out.mode = mode;
    out.threshold = threshold;
    if (mode == MaskMode::kGlobalMedian) {
        out.frames = detail::global_median_masks(frames, threshold);
    } else if (mode == MaskMode::kTemporalDifference) {
        out.frames = detail::temporal_difference_masks(frames, threshold);
    } else {
        out.frames = detail::global_median_masks(frames, threshold);
        const std::vector<Mask> td = detail::temporal_difference_masks(frames, threshold);
        for (std::size_t f = 0; f < frames.size(); ++f)
            for (std::size_t i = 0; i < td[f].values.size(); ++i) out.frames[f].values[i] |= td[f].values[i];
    }
    return out;
}

struct MaskedMetrics {
    double psnr_full = 0.0;
    double ssim_full = 0.0;
    std::optional<double> psnr_dyn;  // absent for an empty mask
    std::optional<double> ssim_dyn;
};

// Dynamic SSIM averages the full-image SSIM map over masked pixels, so each
// contributing window is centered on a masked pixel.
inline MaskedMetrics masked_metrics(const Image& render, const Image& gt, const Mask& mask) {
    require_same_shape(render, gt, "masked_metrics");
    if (mask.width != gt.width || mask.height != gt.height)
        throw InvalidParameter("masked_metrics: mask shape mismatch");
    MaskedMetrics m;
    m.psnr_full = psnr(render, gt);
    const SsimResult s = ssim(render, gt);
    m.ssim_full = s.mean;
    const int nc = gt.channels;
    double se = 0.0, ss = 0.0;
    std::size_t n = 0;
    for (std::size_t p = 0; p < gt.pixel_count(); ++p) {
        if (!mask.values[p]) continue;
        for (int c = 0; c < nc; ++c) {
            const double d = render.pixels[p * nc + c] - gt.pixels[p * nc + c];
            se += d * d;
            ss += s.map[p * nc + c];
            ++n;
        }
    }
    if (n > 0) {
        m.psnr_dyn = psnr_from_mse(se / static_cast<double>(n));
        m.ssim_dyn = ss / static_cast<double>(n);
    }
    return m;
}

// Sequence metrics: squared errors are pooled over all frames before taking
// PSNR, and SSIM is averaged over all (masked) samples.
struct SequenceMetrics {
    double psnr_full = 0.0;
    double ssim_full = 0.0;
    std::optional<double> psnr_dyn;
    std::optional<double> ssim_dyn;
    std::size_t masked_pixels = 0;
};

inline SequenceMetrics sequence_metrics(const std::vector<Image>& renders, const std::vector<Image>& gts,
                                        const DynamicMask& mask) {
    if (renders.size() != gts.size() || mask.frames.size() != gts.size() || gts.empty())
        throw InvalidParameter("sequence_metrics: frame count mismatch");
    double se_full = 0.0, ss_full = 0.0, se_dyn = 0.0, ss_dyn = 0.0;
    std::size_t n_full = 0, n_dyn = 0;
    for (std::size_t f = 0; f < gts.size(); ++f) {
        require_same_shape(renders[f], gts[f], "sequence_metrics");
        const SsimResult s = ssim(renders[f], gts[f]);
        const int nc = gts[f].channels;
        for (std::size_t p = 0; p < gts[f].pixel_count(); ++p) {
            const bool dyn = mask.frames[f].values[p] != 0;
            for (int c = 0; c < nc; ++c) {
                const std::size_t i = p * nc + c;
                const double d = renders[f].pixels[i] - gts[f].pixels[i];
                se_full += d * d;
                ss_full += s.map[i];
                ++n_full;
                if (dyn) {
                    se_dyn += d * d;
                    ss_dyn += s.map[i];
                    ++n_dyn;
                }
            }
        }
    }
    SequenceMetrics m;
    m.psnr_full = psnr_from_mse(se_full / static_cast<double>(n_full));
    m.ssim_full = ss_full / static_cast<double>(n_full);
    m.masked_pixels = mask.count();
    if (n_dyn > 0) {
        m.psnr_dyn = psnr_from_mse(se_dyn / static_cast<double>(n_dyn));
        m.ssim_dyn = ss_dyn / static_cast<double>(n_dyn);
    }
    return m;
}

}  // namespace a4dg
