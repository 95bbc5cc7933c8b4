// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "a4dg/objective.hpp"

namespace a4dg::testing {

struct MicroScene {
    Scene scene;
    Camera cam;
    double time = 0.5;
    Image target;
};

struct MicroOptions {
    int anchors = 3;
    int k = 3;
    int feature_dim = 4;
    int size = 8;
    MotionModel motion = MotionModel::kLinear;
    OpacityModel opacity = OpacityModel::kGeneralized;
    double beta = 2.0;
};

// A handful of anchors in front of an 8x8 camera with random features,
// offsets and head weights. Base opacities stay well inside (0, 1) so the
// alpha clamp is never active.
inline MicroScene make_micro_scene(std::mt19937_64& rng, const MicroOptions& opt = {}) {
    std::normal_distribution<double> n(0.0, 1.0);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    MicroScene m;
    m.time = 0.3 + 0.4 * u(rng);
    m.cam = look_at_camera(Vec3(0.3 * n(rng), 0.3 * n(rng), -3.0), Vec3::Zero(), Vec3(0, -1, 0), 9.0, opt.size,
                           opt.size);
    SpawnInit init;
    init.init_scale = 0.25;
    init.init_sigma_inv = 2.0;
    init.opacity_bias = 0.6;
    init.output_weight_scale = 0.2;
    m.scene.mlps = make_mlp_stack(opt.feature_dim, opt.k, opt.motion, init, rng);
    m.scene.temporal.motion = opt.motion;
    m.scene.temporal.opacity = opt.opacity;
    m.scene.temporal.set_beta(opt.beta);
    m.scene.anchors = AnchorSet(opt.feature_dim, opt.k);
    m.scene.grid = VoxelGrid4D(0.25, 0.1);
    for (int i = 0; i < opt.anchors; ++i) {
        std::vector<double> f(opt.feature_dim);
        for (double& v : f) v = 0.5 * n(rng);
        std::vector<Vec4> offs(opt.k);
        for (Vec4& o : offs) o = Vec4(0.25 * n(rng), 0.25 * n(rng), 0.25 * n(rng), 0.1 * n(rng));
        const Vec4 p(0.4 * n(rng), 0.4 * n(rng), 0.4 * n(rng), m.time + 0.1 * n(rng));
        m.scene.anchors.append(m.scene.grid.snap(p), f, offs);
    }
    m.target = Image(opt.size, opt.size, 3);
    for (double& v : m.target.pixels) v = u(rng);
    return m;
}

// Result of comparing analytic scene gradients with central differences.
struct GradCheck {
    std::size_t checked = 0;
    std::size_t failed = 0;
    double worst = 0.0;
    std::string worst_name;
};

// Relative error |a - fd| / max(|a|, |fd|, floor). The floor keeps parameters
// whose gradient is numerically zero from dominating the report.
inline GradCheck check_scene_gradient(MicroScene& m, const LossWeights& w, const RenderConfig& cfg,
                                      double eps = 1e-5, double tol = 1e-4, double floor = 1e-5) {
    Objective o = evaluate_objective(m.scene, m.cam, m.time, m.target, w, cfg);
    GradCheck out;
    auto probe = [&](double& param, double analytic, const std::string& name) {
        const double keep = param;
        param = keep + eps;
        m.scene.anchors.touch();
        m.scene.mlps.touch();
        const double up = objective_value(m.scene, m.cam, m.time, m.target, w, cfg);
        param = keep - eps;
        const double down = objective_value(m.scene, m.cam, m.time, m.target, w, cfg);
        param = keep;
        const double fd = (up - down) / (2 * eps);
        const double err = std::abs(analytic - fd) / std::max({std::abs(analytic), std::abs(fd), floor});
        ++out.checked;
        if (err > tol) ++out.failed;
        if (err > out.worst) {
            out.worst = err;
            out.worst_name = name;
        }
    };
    auto blocks = m.scene.mlps.blocks();
    const auto grads = o.grad.mlps.blocks();
    for (std::size_t b = 0; b < blocks.size(); ++b)
        for (std::size_t j = 0; j < blocks[b].size(); ++j)
            probe(blocks[b][j], grads[b][j], "mlp block " + std::to_string(b) + "[" + std::to_string(j) + "]");
    for (std::size_t j = 0; j < m.scene.anchors.features().size(); ++j)
        probe(m.scene.anchors.features()[j], o.grad.anchors.features[j], "feature " + std::to_string(j));
    for (std::size_t j = 0; j < m.scene.anchors.offsets().size(); ++j)
        probe(m.scene.anchors.offsets()[j], o.grad.anchors.offsets[j], "offset " + std::to_string(j));
    return out;
}

}  // namespace a4dg::testing
