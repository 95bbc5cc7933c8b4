// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <algorithm>
#include <random>

#include "a4dg/objective.hpp"
#include "support/micro_scene.hpp"

namespace a4dg {
namespace {

using testing::make_micro_scene;
using testing::MicroOptions;

Camera axis_camera(double f, int w, int h) {
    Camera cam;
    cam.fx = cam.fy = f;
    cam.cx = w / 2.0;
    cam.cy = h / 2.0;
    cam.width = w;
    cam.height = h;
    return cam;
}

SplatInput splat(const Vec3& center, double scale, double opacity, const Vec3& color, std::uint32_t id) {
    SplatInput in;
    in.gaussian.center = center;
    in.gaussian.scale = Vec3::Constant(scale);
    in.gaussian.opacity = opacity;
    in.gaussian.color = color;
    in.base_opacity = opacity;
    in.anchor = id;
    return in;
}

std::vector<SplatInput> random_splats(std::mt19937_64& rng, int n) {
    std::normal_distribution<double> g(0.0, 1.0);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<SplatInput> out;
    for (int i = 0; i < n; ++i) {
        SplatInput in = splat(Vec3(0.5 * g(rng), 0.5 * g(rng), 3.0 + g(rng)), 0.05 + 0.2 * u(rng), 0.1 + 0.85 * u(rng),
                              Vec3(u(rng), u(rng), u(rng)), static_cast<std::uint32_t>(i));
        in.gaussian.rotation = Quat(g(rng), g(rng), g(rng), g(rng));
        in.gaussian.scale = Vec3(0.05 + 0.2 * u(rng), 0.05 + 0.2 * u(rng), 0.05 + 0.2 * u(rng));
        out.push_back(in);
    }
    return out;
}

TEST(RasterizeTest, ZeroGaussiansGiveBackground) {
    RenderConfig cfg;
    cfg.background = Vec3(0.2, 0.4, 0.6);
    const Raster r = rasterize({}, axis_camera(10, 6, 5), cfg);
    for (int y = 0; y < 5; ++y)
        for (int x = 0; x < 6; ++x)
            for (int c = 0; c < 3; ++c) EXPECT_EQ(r.image.at(x, y, c), cfg.background[c]);
}

TEST(RasterizeTest, OpaqueGaussianOnPixelCenter) {
    const Camera cam = axis_camera(20.0, 9, 9);
    // Pixel (4, 4) has center (4.5, 4.5); principal point is (4.5, 4.5).
    const Raster r = rasterize({splat(Vec3(0, 0, 4), 0.3, 0.999, Vec3(0.9, 0.2, 0.4), 0)}, cam, {});
    EXPECT_NEAR(r.image.at(4, 4, 0), 0.9, 1e-3);
    EXPECT_NEAR(r.image.at(4, 4, 1), 0.2, 1e-3);
    EXPECT_NEAR(r.image.at(4, 4, 2), 0.4, 1e-3);
}

TEST(RasterizeTest, TwoHalfTransparentLayers) {
    // Huge scales make the falloff at the center pixel 1 to within 1e-12.
    const Camera cam = axis_camera(1.0, 1, 1);
    const Vec3 c1(1, 0, 0), c2(0, 1, 0), bg(0, 0, 1);
    RenderConfig cfg;
    cfg.background = bg;
    const Raster r = rasterize({splat(Vec3(0, 0, 5), 1e4, 0.5, c2, 1), splat(Vec3(0, 0, 2), 1e4, 0.5, c1, 0)}, cam, cfg);
    const Vec3 expected = 0.5 * c1 + 0.25 * c2 + 0.25 * bg;
    for (int c = 0; c < 3; ++c) EXPECT_NEAR(r.image.at(0, 0, c), expected[c], 1e-9);
}

TEST(RasterizeTest, MatchesBruteForceWithoutCulling) {
    std::mt19937_64 rng(3);
    const Camera cam = axis_camera(16.0, 12, 10);
    for (int trial = 0; trial < 10; ++trial) {
        const auto inputs = random_splats(rng, 12);
        const Raster r = rasterize(inputs, cam, RenderConfig::exact());
        const Image ref = render_bruteforce(inputs, cam, RenderConfig::exact());
        EXPECT_LT(max_abs_diff(r.image, ref), 1e-12);
    }
}

// Compositing is multilinear in the per-pixel alphas with partials in
// [-1, 1], and the footprint box only drops samples with Mahalanobis distance
// >= k. The per-pixel error is therefore at most exp(-k^2 / 2) * sum(alpha).
double truncation_bound(std::span<const SplatInput> inputs, double k) {
    double sum = 0.0;
    for (const auto& in : inputs) sum += std::max(0.0, in.gaussian.opacity);
    return std::exp(-0.5 * k * k) * sum;
}

TEST(RasterizeTest, CutoffStaysWithinTruncationBound) {
    std::mt19937_64 rng(4);
    const Camera cam = axis_camera(16.0, 12, 10);
    for (double k : {3.0, 4.0}) {
        for (int trial = 0; trial < 10; ++trial) {
            const auto inputs = random_splats(rng, 12);
            RenderConfig cfg = RenderConfig::exact();
            cfg.cutoff = true;
            cfg.projection.cutoff_sigma = k;
            const Raster r = rasterize(inputs, cam, cfg);
            const Image ref = render_bruteforce(inputs, cam, RenderConfig::exact());
            EXPECT_LE(max_abs_diff(r.image, ref), truncation_bound(inputs, k));
        }
    }
}

TEST(RasterizeTest, SingleGaussianTruncationIsTight) {
    // One pixel sits just outside the 3-sigma box of an opaque Gaussian, so
    // the cutoff path loses close to exp(-4.5) there.
    const Camera cam = axis_camera(10.0, 32, 32);
    const SplatInput in = splat(Vec3(0, 0, 5), 0.4, 0.99, Vec3::Ones(), 0);
    RenderConfig cfg = RenderConfig::exact();
    cfg.cutoff = true;
    const std::vector<SplatInput> v{in};
    const double err = max_abs_diff(rasterize(v, cam, cfg).image, render_bruteforce(v, cam, RenderConfig::exact()));
    EXPECT_GT(err, 1e-3);
    EXPECT_LE(err, truncation_bound(v, 3.0));
}

TEST(RasterizeTest, PermutationInvariance) {
    std::mt19937_64 rng(5);
    const Camera cam = axis_camera(16.0, 12, 10);
    auto inputs = random_splats(rng, 15);
    // Equal depths exercise the tie-break.
    inputs[3].gaussian.center.z() = inputs[7].gaussian.center.z();
    const Image ref = rasterize(inputs, cam, {}).image;
    for (int trial = 0; trial < 10; ++trial) {
        std::shuffle(inputs.begin(), inputs.end(), rng);
        EXPECT_EQ(rasterize(inputs, cam, {}).image.pixels, ref.pixels);
    }
}

TEST(RasterizeTest, WeightsAndTransmittanceSumToOne) {
    std::mt19937_64 rng(6);
    const Camera cam = axis_camera(16.0, 12, 10);
    auto inputs = random_splats(rng, 15);
    // With white Gaussians and a black background each pixel is exactly the
    // sum of compositing weights.
    for (auto& in : inputs) in.gaussian.color = Vec3::Ones();
    const Raster r = rasterize(inputs, cam, {});
    for (std::size_t p = 0; p < r.transmittance.size(); ++p) {
        EXPECT_GE(r.transmittance[p], 0.0);
        EXPECT_LE(r.transmittance[p], 1.0);
        EXPECT_NEAR(r.image.pixels[p * 3] + r.transmittance[p], 1.0, 1e-14);
    }
}

TEST(RasterizeTest, LinearInColor) {
    std::mt19937_64 rng(7);
    const Camera cam = axis_camera(16.0, 12, 10);
    RenderConfig cfg;
    cfg.background = Vec3(0.3, 0.1, 0.7);
    auto inputs = random_splats(rng, 10);
    const Raster a = rasterize(inputs, cam, cfg);
    const double lambda = 0.5;
    for (auto& in : inputs) in.gaussian.color *= lambda;
    const Raster b = rasterize(inputs, cam, cfg);
    for (std::size_t p = 0; p < a.transmittance.size(); ++p)
        for (int c = 0; c < 3; ++c) {
            const double ea = a.image.pixels[p * 3 + c] - a.transmittance[p] * cfg.background[c];
            const double eb = b.image.pixels[p * 3 + c] - b.transmittance[p] * cfg.background[c];
            EXPECT_NEAR(eb, lambda * ea, 1e-15);
        }
}

TEST(RenderTest, EmptySceneIsBackground) {
    Scene scene;
    scene.anchors = AnchorSet(4, 3);
    std::mt19937_64 rng(1);
    scene.mlps = make_mlp_stack(4, 3, MotionModel::kLinear, {}, rng);
    RenderConfig cfg;
    cfg.background = Vec3(1, 0.5, 0);
    const Camera cam = axis_camera(8, 8, 8);
    const SplatFrame f = render(scene, cam, 0.2, cfg);
    const Image ref = render_bruteforce(scene, cam, 0.2, cfg);
    for (int c = 0; c < 3; ++c) EXPECT_EQ(f.image().at(3, 5, c), cfg.background[c]);
    EXPECT_EQ(f.image().pixels, ref.pixels);
}

TEST(RenderTest, SceneMatchesBruteForce) {
    std::mt19937_64 rng(8);
    for (int trial = 0; trial < 5; ++trial) {
        auto m = make_micro_scene(rng, {.anchors = 4, .k = 3, .feature_dim = 4, .size = 12});
        const Image ref = render_bruteforce(m.scene, m.cam, m.time, RenderConfig::exact());
        EXPECT_LT(max_abs_diff(render(m.scene, m.cam, m.time, RenderConfig::exact()).image(), ref), 1e-12);
        RenderConfig cut = RenderConfig::exact();
        cut.cutoff = true;
        const SplatFrame f = render(m.scene, m.cam, m.time, cut);
        EXPECT_LE(max_abs_diff(f.image(), ref), truncation_bound(f.raster.inputs, 3.0));
    }
}

TEST(RenderBackwardTest, ZeroImageGradientGivesZeros) {
    std::mt19937_64 rng(9);
    auto m = make_micro_scene(rng);
    const SplatFrame f = render(m.scene, m.cam, m.time);
    RenderBackward b = render_backward(f, m.scene, Image(8, 8, 3));
    for (auto blk : b.grad.mlps.blocks())
        for (double v : blk) EXPECT_EQ(v, 0.0);
    for (double v : b.grad.anchors.features) EXPECT_EQ(v, 0.0);
    for (const auto& r : b.records) EXPECT_EQ(r.grad_norm, 0.0);
}

TEST(RenderBackwardTest, MismatchedFrameThrows) {
    std::mt19937_64 rng(10);
    auto m = make_micro_scene(rng);
    const SplatFrame f = render(m.scene, m.cam, m.time);
    m.scene.mlps.touch();
    EXPECT_THROW(render_backward(f, m.scene, Image(8, 8, 3, 0.1)), InvalidParameter);
    EXPECT_THROW(render_backward(f, m.scene, Image(7, 8, 3, 0.1)), InvalidParameter);
}

TEST(RenderBackwardTest, InactiveGaussiansLeaveNoRecord) {
    std::mt19937_64 rng(11);
    auto m = make_micro_scene(rng, {.anchors = 5});
    // Push anchor 0 far away in time.
    for (int s = 0; s < m.scene.k(); ++s) m.scene.anchors.offset(0, s)[3] = 50.0;
    m.scene.anchors.touch();
    const Objective o = evaluate_objective(m.scene, m.cam, m.time, m.target, {}, {});
    for (const auto& r : o.records) {
        EXPECT_NE(r.anchor, 0u);
        EXPECT_GT(r.alpha_prime, 1e-3);
    }
    // Every Gaussian with a non-zero compositing weight has a record.
    for (const SplatRecord& rec : o.frame.raster.records) {
        const auto& in = o.frame.raster.inputs[rec.input];
        EXPECT_TRUE(std::any_of(o.records.begin(), o.records.end(), [&](const Grad2DRecord& r) {
            return r.anchor == in.anchor && r.slot == in.slot;
        }));
    }
}

struct PipelineCase {
    MotionModel motion;
    OpacityModel opacity;
    double beta;
};

class PipelineGradientTest : public ::testing::TestWithParam<PipelineCase> {};

TEST_P(PipelineGradientTest, MatchesCentralDifferences) {
    std::mt19937_64 rng(100 + static_cast<int>(GetParam().motion) * 10 + static_cast<int>(GetParam().beta));
    for (int trial = 0; trial < 3; ++trial) {
        MicroOptions opt;
        opt.motion = GetParam().motion;
        opt.opacity = GetParam().opacity;
        opt.beta = GetParam().beta;
        auto m = make_micro_scene(rng, opt);
        const auto r = testing::check_scene_gradient(m, {}, RenderConfig::exact());
        EXPECT_EQ(r.failed, 0u) << "worst " << r.worst << " at " << r.worst_name;
        EXPECT_GT(r.checked, 1000u);
    }
}

INSTANTIATE_TEST_SUITE_P(Variants, PipelineGradientTest,
                         ::testing::Values(PipelineCase{MotionModel::kLinear, OpacityModel::kGeneralized, 2.0},
                                           PipelineCase{MotionModel::kLinear, OpacityModel::kGeneralized, 8.0},
                                           PipelineCase{MotionModel::kPolynomial, OpacityModel::kGeneralized, 4.0},
                                           PipelineCase{MotionModel::kLinear, OpacityModel::kGaussian4DGS, 2.0}));

}  // namespace
}  // namespace a4dg
