// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <iomanip>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "a4dg/checkpoint.hpp"
#include "a4dg/dataset.hpp"
#include "a4dg/renderer.hpp"
#include "a4dg/synthetic.hpp"

namespace a4dg {

struct EvalReport {
    SequenceMetrics metrics;
    StorageReport storage;
    std::size_t masked_pixels = 0;
};

// Renders every frame of the test camera through the inference cache and
// scores it against ground truth. The dynamic mask comes from the ground-truth
// sequence.
inline std::vector<Image> render_test_sequence(const Scene& scene, const SceneDataset& data, const RenderConfig& cfg,
                                               const InferenceCache* cache = nullptr) {
    const Camera& cam = data.cameras[data.test_index()].camera;
    std::vector<Image> out;
    for (int f = 0; f < data.frame_count; ++f)
        out.push_back(render(scene, cam, data.frame_time(f), cfg, cache).image());
    return out;
}

inline EvalReport evaluate_scene(const Scene& scene, const SceneDataset& data, const RenderConfig& cfg = {},
                                 double mask_threshold = 50.0) {
    const InferenceCache cache = InferenceCache::build(scene.anchors, scene.mlps);
    const std::vector<Image> renders = render_test_sequence(scene, data, cfg, &cache);
    const std::vector<Image>& gts = data.images[data.test_index()];
    const DynamicMask mask = dynamic_mask(gts, MaskMode::kCombined, mask_threshold);
    EvalReport r;
    r.metrics = sequence_metrics(renders, gts, mask);
    r.storage = compute_storage_report(scene);
    r.masked_pixels = mask.count();
    return r;
}

inline std::string format_metric(const std::optional<double>& v) {
    if (!v) return "NA";
    if (std::isinf(*v)) return "inf";
    std::ostringstream os;
    os << std::fixed << std::setprecision(4) << *v;
    return os.str();
}

inline void write_eval_header(std::ostream& os) {
    os << "name,psnr_dyn,ssim_dyn,psnr_full,ssim_full,anchors,gaussians,storage_bytes\n";
}

inline void write_eval_row(std::ostream& os, const std::string& name, const EvalReport& r) {
    os << name << ',' << format_metric(r.metrics.psnr_dyn) << ',' << format_metric(r.metrics.ssim_dyn) << ','
       << format_metric(r.metrics.psnr_full) << ',' << format_metric(r.metrics.ssim_full) << ','
       << r.storage.n_anchors << ',' << r.storage.n_gaussians << ',' << r.storage.bytes_total << '\n';
}

}  // namespace a4dg
