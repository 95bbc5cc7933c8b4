// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <iomanip>
#include <limits>
#include <ostream>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "a4dg/anchor_grid.hpp"
#include "a4dg/checkpoint.hpp"
#include "a4dg/dataset.hpp"
#include "a4dg/error.hpp"
#include "a4dg/objective.hpp"
#include "a4dg/optimizer.hpp"
#include "a4dg/renderer.hpp"
#include "a4dg/scene.hpp"

namespace a4dg {

enum class GrowingMode { kDynamicAware, kNaive, kOff };

inline GrowingMode parse_growing(const std::string& s) {
    if (s == "dynamic_aware") return GrowingMode::kDynamicAware;
    if (s == "naive") return GrowingMode::kNaive;
    if (s == "off") return GrowingMode::kOff;
    throw ConfigError("growing must be dynamic_aware, naive or off (got \"" + s + "\")");
}
inline MotionModel parse_motion(const std::string& s) {
    if (s == "linear") return MotionModel::kLinear;
    if (s == "polynomial") return MotionModel::kPolynomial;
    throw ConfigError("motion must be linear or polynomial (got \"" + s + "\")");
}
inline OpacityModel parse_opacity(const std::string& s) {
    if (s == "generalized") return OpacityModel::kGeneralized;
    if (s == "gaussian4dgs") return OpacityModel::kGaussian4DGS;
    throw ConfigError("opacity must be generalized or gaussian4dgs (got \"" + s + "\")");
}
inline const char* to_string(GrowingMode g) {
    return g == GrowingMode::kDynamicAware ? "dynamic_aware" : g == GrowingMode::kNaive ? "naive" : "off";
}
inline const char* to_string(MotionModel m) { return m == MotionModel::kLinear ? "linear" : "polynomial"; }
inline const char* to_string(OpacityModel o) {
    return o == OpacityModel::kGeneralized ? "generalized" : "gaussian4dgs";
}

struct TrainConfig {
    int iterations = 5000;
    LossWeights loss;
    double gamma = 1.0;
    double beta = 2.0;
    int k = 10;
    int feature_dim = 32;
    double spatial_voxel = 0.1;
    double temporal_voxel = 0.0;  // 0 selects the frame interval
    double t0 = 0.0;
    std::size_t max_points = 100000;

    GrowingMode growing = GrowingMode::kDynamicAware;
    MotionModel motion = MotionModel::kLinear;
    OpacityModel opacity = OpacityModel::kGeneralized;

    int grow_interval = 100;
    int grow_start = 1500;
    double grow_stop_fraction = 0.6;
    double grow_threshold = 3e-4;  // pixel-space gradient norm
    NewAnchorFeature new_anchor_feature = NewAnchorFeature::kInherit;

    double lr_offset = 1e-2;
    double lr_offset_final = 1e-4;
    double lr_feature = 7.5e-3;
    double lr_mlp = 2e-3;
    double lr_mlp_final = 2e-4;

    SpawnInit init{0.05, 0.0, 0.1, 0.01};  // init_sigma_inv 0 selects one frame interval
    double cutoff_sigma = 3.0;
    std::uint64_t seed = 1;
    int checkpoint_every = 0;  // 0 disables intermediate checkpoints

    // Large-scene values, reachable by overriding.
    static TrainConfig large_scale() {
        TrainConfig c;
        c.iterations = 120000;
        c.spatial_voxel = 0.001;
        c.grow_threshold = 2e-4;
        c.init = SpawnInit{};
        return c;
    }

    TemporalConfig temporal() const {
        TemporalConfig t;
        t.set_beta(beta);
        t.motion = motion;
        t.opacity = opacity;
        return t;
    }

    RenderConfig render_config() const {
        RenderConfig r;
        r.projection.cutoff_sigma = cutoff_sigma;
        return r;
    }

    int grow_stop() const { return static_cast<int>(grow_stop_fraction * iterations); }

    // Returns warnings for legal but risky values.
    std::vector<std::string> validate() const {
        std::vector<std::string> warn;
        if (iterations <= 0) throw ConfigError("iterations must be > 0");
        if (!(loss.lambda_ssim >= 0.0 && loss.lambda_ssim <= 1.0)) throw ConfigError("lambda_ssim must be in [0, 1]");
        if (!(loss.lambda_vol >= 0.0 && loss.lambda_vol <= 1.0)) throw ConfigError("lambda_vol must be in [0, 1]");
        if (!(gamma >= 0.0) || !std::isfinite(gamma)) throw ConfigError("gamma must be finite and >= 0");
        if (k < 1 || feature_dim < 1) throw ConfigError("k and feature_dim must be >= 1");
        if (!(spatial_voxel > 0.0) || !(temporal_voxel >= 0.0)) throw ConfigError("voxel sizes must be > 0");
        if (grow_interval < 1 || grow_start < 0) throw ConfigError("grow_interval must be >= 1, grow_start >= 0");
        if (!(grow_stop_fraction >= 0.0 && grow_stop_fraction <= 1.0))
            throw ConfigError("grow_stop_fraction must be in [0, 1]");
        if (!(grow_threshold >= 0.0)) throw ConfigError("grow_threshold must be >= 0");
        for (double lr : {lr_offset, lr_offset_final, lr_feature, lr_mlp, lr_mlp_final})
            if (!(lr >= 0.0) || !std::isfinite(lr)) throw ConfigError("learning rates must be finite and >= 0");
        if (!(init.init_scale > 0.0) || !(init.init_sigma_inv >= 0.0))
            throw ConfigError("init_scale must be > 0 and init_sigma_inv >= 0");
        if (!(cutoff_sigma > 0.0)) throw ConfigError("cutoff_sigma must be > 0");
        if (!(t0 >= 0.0 && t0 <= 1.0)) throw ConfigError("t0 must be in [0, 1]");
        if (checkpoint_every < 0) throw ConfigError("checkpoint_every must be >= 0");
        if (auto w = temporal().validate()) warn.push_back(*w);
        return warn;
    }
};

inline TrainConfig train_config_from_json(const std::string& text, TrainConfig c = {}) {
    using nlohmann::json;
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ConfigError(std::string("train config is not valid JSON: ") + e.what());
    }
    if (!j.is_object()) throw ConfigError("train config must be a JSON object");
    const std::set<std::string> keys{
        "iterations",      "lambda_ssim",    "lambda_vol",         "gamma",          "beta",
        "k",               "feature_dim",    "spatial_voxel",      "temporal_voxel", "t0",
        "max_points",      "growing",        "motion",             "opacity",        "grow_interval",
        "grow_start",      "grow_stop_fraction", "grow_threshold", "lr_offset",      "lr_offset_final",
        "lr_feature",      "lr_mlp",         "lr_mlp_final",       "init_scale",     "init_sigma_inv",
        "init_opacity_bias", "init_output_scale", "cutoff_sigma",  "seed",           "checkpoint_every",
        "new_anchor_feature"};
    for (const auto& [key, v] : j.items()) {
        if (!keys.count(key)) throw ConfigError("train config: unknown key \"" + key + "\"");
        try {
            if (key == "iterations") c.iterations = v.get<int>();
            else if (key == "lambda_ssim") c.loss.lambda_ssim = v.get<double>();
            else if (key == "lambda_vol") c.loss.lambda_vol = v.get<double>();
            else if (key == "gamma") c.gamma = v.get<double>();
            else if (key == "beta") c.beta = v.get<double>();
            else if (key == "k") c.k = v.get<int>();
            else if (key == "feature_dim") c.feature_dim = v.get<int>();
            else if (key == "spatial_voxel") c.spatial_voxel = v.get<double>();
            else if (key == "temporal_voxel") c.temporal_voxel = v.get<double>();
            else if (key == "t0") c.t0 = v.get<double>();
            else if (key == "max_points") c.max_points = v.get<std::size_t>();
            else if (key == "growing") c.growing = parse_growing(v.get<std::string>());
            else if (key == "motion") c.motion = parse_motion(v.get<std::string>());
            else if (key == "opacity") c.opacity = parse_opacity(v.get<std::string>());
            else if (key == "grow_interval") c.grow_interval = v.get<int>();
            else if (key == "grow_start") c.grow_start = v.get<int>();
            else if (key == "grow_stop_fraction") c.grow_stop_fraction = v.get<double>();
            else if (key == "grow_threshold") c.grow_threshold = v.get<double>();
            else if (key == "lr_offset") c.lr_offset = v.get<double>();
            else if (key == "lr_offset_final") c.lr_offset_final = v.get<double>();
            else if (key == "lr_feature") c.lr_feature = v.get<double>();
            else if (key == "lr_mlp") c.lr_mlp = v.get<double>();
            else if (key == "lr_mlp_final") c.lr_mlp_final = v.get<double>();
            else if (key == "init_scale") c.init.init_scale = v.get<double>();
            else if (key == "init_sigma_inv") c.init.init_sigma_inv = v.get<double>();
            else if (key == "init_opacity_bias") c.init.opacity_bias = v.get<double>();
            else if (key == "init_output_scale") c.init.output_weight_scale = v.get<double>();
            else if (key == "cutoff_sigma") c.cutoff_sigma = v.get<double>();
            else if (key == "seed") c.seed = v.get<std::uint64_t>();
            else if (key == "checkpoint_every") c.checkpoint_every = v.get<int>();
            else if (key == "new_anchor_feature") {
                const auto m = v.get<std::string>();
                if (m != "zero" && m != "inherit") throw ConfigError("new_anchor_feature must be zero or inherit");
                c.new_anchor_feature = m == "zero" ? NewAnchorFeature::kZero : NewAnchorFeature::kInherit;
            }
        } catch (const json::exception&) {
            throw ConfigError("train config: key \"" + key + "\" has the wrong type");
        }
    }
    return c;
}

struct IterationMetrics {
    int iteration = 0;
    double loss = 0.0;
    double l1 = 0.0;
    double lssim = 0.0;
    double lvol = 0.0;
    std::size_t anchors = 0;
    std::size_t gaussians_rendered = 0;
    std::size_t grown = 0;
};

inline void write_metrics_header(std::ostream& os) {
    os << "iteration,L,L1,LSSIM,Lvol,anchors,gaussians_rendered\n";
}

inline void write_metrics_row(std::ostream& os, const IterationMetrics& m) {
    std::ostringstream line;
    line << std::setprecision(17) << m.iteration << ',' << m.loss << ',' << m.l1 << ',' << m.lssim << ','
         << m.lvol << ',' << m.anchors << ',' << m.gaussians_rendered << '\n';
    os << line.str();
}

// Single-threaded optimization loop over one dataset.
class Trainer {
public:
    Trainer(const SceneDataset& data, const TrainConfig& cfg) : data_(data), cfg_(cfg), rng_(cfg.seed) {
        cfg_.validate();
        if (data_.images.size() != data_.cameras.size())
            throw InvalidParameter("trainer: dataset images are not loaded");
        train_cams_ = data_.train_indices();
        if (train_cams_.empty()) throw ConfigError("dataset has no training cameras");
        const double frame_dt = data_.frame_count > 1 ? 1.0 / (data_.frame_count - 1) : 1.0;

        AnchorInit ai;
        ai.feature_dim = cfg_.feature_dim;
        ai.k = cfg_.k;
        ai.spatial_voxel = cfg_.spatial_voxel;
        ai.temporal_voxel = cfg_.temporal_voxel > 0.0 ? cfg_.temporal_voxel : frame_dt;
        ai.max_points = cfg_.max_points;
        InitializedAnchors init = init_anchors(std::span<const Vec3>(data_.points), cfg_.t0, ai, rng_);
        scene_.anchors = std::move(init.anchors);
        scene_.grid = std::move(init.grid);
        scene_.temporal = cfg_.temporal();
        SpawnInit spawn = cfg_.init;
        if (spawn.init_sigma_inv == 0.0) spawn.init_sigma_inv = data_.frame_count > 1 ? data_.frame_count - 1.0 : 1.0;
        scene_.mlps = make_mlp_stack(cfg_.feature_dim, cfg_.k, cfg_.motion, spawn, rng_);

        const auto n = static_cast<std::uint64_t>(cfg_.iterations);
        offsets_ = AdamGroup("offsets", {cfg_.lr_offset, cfg_.lr_offset_final, n});
        features_ = AdamGroup("features", {cfg_.lr_feature, cfg_.lr_feature, n});
        for (std::size_t b = 0; b < scene_.mlps.blocks().size(); ++b)
            mlp_groups_.emplace_back("mlp" + std::to_string(b), ExponentialSchedule{cfg_.lr_mlp, cfg_.lr_mlp_final, n});
        ledger_.resize(scene_.anchors.size(), cfg_.k);
        render_cfg_ = cfg_.render_config();
    }

    const Scene& scene() const { return scene_; }
    Scene& scene() { return scene_; }
    const TrainConfig& config() const { return cfg_; }
    const GradientLedger& ledger() const { return ledger_; }
    int iteration() const { return iteration_; }
    const RenderConfig& render_config() const { return render_cfg_; }

    bool growing_window(int it) const {
        return cfg_.growing != GrowingMode::kOff && it > cfg_.grow_start && it <= cfg_.grow_stop();
    }

    // One optimization step: sample, render, backpropagate, update, maybe grow.
    IterationMetrics step() {
        const int it = ++iteration_;
        const auto [cam_i, frame] = next_sample();
        const Camera& cam = data_.cameras[cam_i].camera;
        const Image& gt = data_.images[cam_i][frame];
        const double t = data_.frame_time(frame);

        Objective o = evaluate_objective(scene_, cam, t, gt, cfg_.loss, render_cfg_);
        if (!std::isfinite(o.loss.total)) {
            std::ostringstream msg;
            msg << "non-finite loss at iteration " << it << " (camera " << data_.cameras[cam_i].id << ", frame "
                << frame << "): L1=" << o.loss.l1 << " LSSIM=" << o.loss.ssim_term << " Lvol=" << o.loss.volume
                << ", anchors=" << scene_.anchors.size() << ", records=" << o.frame.raster.records.size()
                << ", mlps finite=" << scene_.mlps.finite();
            throw NumericalAbort(msg.str());
        }

        if (growing_window(it)) feed_ledger(o);

        const std::uint64_t s = static_cast<std::uint64_t>(it);
        offsets_.step(scene_.anchors.offsets(), o.grad.anchors.offsets, s, hyper_);
        features_.step(scene_.anchors.features(), o.grad.anchors.features, s, hyper_);
        auto params = scene_.mlps.blocks();
        auto grads = o.grad.mlps.blocks();
        for (std::size_t b = 0; b < params.size(); ++b) mlp_groups_[b].step(params[b], grads[b], s, hyper_);
        scene_.anchors.touch();
        scene_.mlps.touch();

        IterationMetrics m;
        m.iteration = it;
        m.loss = o.loss.total;
        m.l1 = o.loss.l1;
        m.lssim = o.loss.ssim_term;
        m.lvol = o.loss.volume;
        m.gaussians_rendered = o.frame.raster.records.size();

        if (growing_window(it) && it % cfg_.grow_interval == 0) {
            if (before_grow) before_grow(ledger_, it);
            m.grown = grow();
        }
        m.anchors = scene_.anchors.size();
        return m;
    }

    // Runs the remaining iterations. `on_step` sees every metrics record.
    void run(const std::function<void(const IterationMetrics&)>& on_step = {}) {
        while (iteration_ < cfg_.iterations) {
            const IterationMetrics m = step();
            if (on_step) on_step(m);
        }
    }

    std::size_t grow() {
        const GrowingStatistic stat =
            cfg_.growing == GrowingMode::kDynamicAware ? GrowingStatistic::kWeighted : GrowingStatistic::kNaive;
        const std::size_t added =
            grow_anchors(ledger_, scene_.anchors, scene_.grid, cfg_.grow_threshold, stat, rng_, cfg_.new_anchor_feature);
        offsets_.resize(scene_.anchors.offsets().size());
        features_.resize(scene_.anchors.features().size());
        scene_.anchors.touch();
        return added;
    }

    // Called with the ledger just before each growing event.
    std::function<void(const GradientLedger&, int)> before_grow;

private:
    std::pair<std::size_t, int> next_sample() {
        if (cursor_ >= order_.size()) {
            order_.clear();
            for (std::size_t c : train_cams_)
                for (int f = 0; f < data_.frame_count; ++f) order_.emplace_back(c, f);
            std::shuffle(order_.begin(), order_.end(), rng_);
            cursor_ = 0;
        }
        return order_[cursor_++];
    }

    // Weighted statistic from composited Gaussians. The naive statistic
    // counts every Gaussian inside the view this iteration, with a zero
    // gradient for those that were not composited.
    void feed_ledger(const Objective& o) {
        const Raster& r = o.frame.raster;
        std::vector<double> norm_by_input(r.inputs.size(), 0.0);
        for (std::size_t ri = 0; ri < o.records.size(); ++ri) {
            const Grad2DRecord& g = o.records[ri];
            norm_by_input[r.records[ri].input] = g.grad_norm;
            ledger_.accumulate_weighted(g.anchor, g.slot, g.grad_norm, g.alpha_prime, g.sigma, cfg_.gamma);
        }
        for (std::uint32_t i : r.frustum_visible) {
            const SplatInput& in = r.inputs[i];
            ledger_.accumulate_naive(in.anchor, in.slot, norm_by_input[i]);
        }
    }

    const SceneDataset& data_;
    TrainConfig cfg_;
    std::mt19937_64 rng_;
    Scene scene_;
    RenderConfig render_cfg_;
    AdamHyper hyper_;
    AdamGroup offsets_;
    AdamGroup features_;
    std::vector<AdamGroup> mlp_groups_;
    GradientLedger ledger_;
    std::vector<std::size_t> train_cams_;
    std::vector<std::pair<std::size_t, int>> order_;
    std::size_t cursor_ = 0;
    int iteration_ = 0;
};

struct FinalizeReport {
    std::size_t pruned = 0;
    std::size_t anchors = 0;
    InferenceCache cache;
};

// Rounds parameters to storage precision, removes anchors whose Gaussians
// all have negative base opacity and builds the inference cache. Writes a
// checkpoint when `path` is non-empty.
inline FinalizeReport finalize_scene(Scene& scene, const std::string& path = {}) {
    FinalizeReport r;
    quantize_to_f32(scene);
    const std::vector<double> rho = base_opacities(scene.anchors, scene.mlps);
    r.pruned = prune_invalid_anchors(scene.anchors, scene.grid, rho);
    r.anchors = scene.anchors.size();
    r.cache = InferenceCache::build(scene.anchors, scene.mlps);
    if (!path.empty()) save_checkpoint(scene, path);
    return r;
}

}  // namespace a4dg
