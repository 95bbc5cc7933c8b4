// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <vector>

#include "a4dg/loss.hpp"
#include "a4dg/renderer.hpp"
#include "a4dg/scene.hpp"

namespace a4dg {

struct Objective {
    SplatFrame frame;
    LossValue loss;
    SceneGrad grad;
    std::vector<Grad2DRecord> records;
};

// Scales of every composited Gaussian, in record order.
inline std::vector<Vec3> composited_scales(const SplatFrame& f) {
    std::vector<Vec3> out;
    out.reserve(f.raster.records.size());
    for (const SplatRecord& rec : f.raster.records) out.push_back(f.raster.inputs[rec.input].gaussian.scale);
    return out;
}

// Loss value only; used by finite-difference checks and evaluation.
inline double objective_value(const Scene& scene, const Camera& cam, double t, const Image& gt,
                              const LossWeights& weights, const RenderConfig& cfg) {
    const SplatFrame f = render(scene, cam, t, cfg);
    const VolumeTerm vol = volume_loss(composited_scales(f));
    return image_loss(f.image(), gt, weights, vol.value, false).total;
}

// Full forward and reverse pass for one (camera, time) sample.
inline Objective evaluate_objective(const Scene& scene, const Camera& cam, double t, const Image& gt,
                                    const LossWeights& weights, const RenderConfig& cfg) {
    Objective o;
    o.frame = render(scene, cam, t, cfg);
    const VolumeTerm vol = volume_loss(composited_scales(o.frame));
    o.loss = image_loss(o.frame.image(), gt, weights, vol.value);
    SplatBackward sb = render_backward_splats(o.frame, o.loss.grad);
    for (std::size_t i = 0; i < sb.splats.size(); ++i) sb.splats[i].d_scale += weights.lambda_vol * vol.grad[i];
    o.grad = render_backward_params(o.frame, scene, sb.splats);
    o.records = std::move(sb.records);
    return o;
}

}  // namespace a4dg
