// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <limits>

#include "a4dg/synthetic.hpp"

using namespace a4dg;

namespace {

SynthSpec small_spec() {
    SynthSpec s = SynthSpec::desk_default();
    s.cameras = 3;
    s.frames = 4;
    s.width = 32;
    s.height = 32;
    s.focal = 50.0;
    s.static_count = 6;
    return s;
}

Image filled(int w, int h, double v) { return Image(w, h, 3, v); }

}  // namespace

TEST(Synthetic, NoDynamicBlobsMeansIdenticalFrames) {
    SynthSpec s = small_spec();
    s.dynamic_blobs.clear();
    const SynthScene scene = generate_scene(s);
    for (const auto& cam : scene.dataset.images)
        for (const Image& f : cam) EXPECT_EQ(f.pixels, cam.front().pixels);
    const DynamicMask m = dynamic_mask(scene.dataset.images[0], MaskMode::kCombined);
    EXPECT_EQ(m.count(), 0u);
}

TEST(Synthetic, SeedFixesEverything) {
    const SynthScene a = generate_scene(small_spec());
    const SynthScene b = generate_scene(small_spec());
    EXPECT_EQ(a.dataset.points, b.dataset.points);
    for (std::size_t c = 0; c < a.dataset.images.size(); ++c)
        for (std::size_t f = 0; f < a.dataset.images[c].size(); ++f)
            EXPECT_EQ(a.dataset.images[c][f].pixels, b.dataset.images[c][f].pixels);
    SynthSpec other = small_spec();
    other.seed = 8;
    EXPECT_NE(generate_scene(other).dataset.points, a.dataset.points);
}

TEST(Synthetic, PointCloudComesFromStaticBlobsOnly) {
    SynthSpec s = small_spec();
    const SynthScene scene = generate_scene(s);
    EXPECT_EQ(scene.dataset.points.size(), static_cast<std::size_t>(s.static_count * s.points_per_blob));
}

TEST(Synthetic, MovingBlobCentroidFollowsProjection) {
    SynthSpec s = small_spec();
    s.static_count = 0;
    DynamicBlobSpec b;
    b.waypoints = {Vec3(-0.3, 0.1, 0.2), Vec3(0.4, -0.1, -0.1)};
    b.color = Vec3(1.0, 1.0, 1.0);
    b.opacity = 0.5;
    b.scale = 0.08;
    s.dynamic_blobs = {b};
    const SynthScene scene = generate_scene(s);
    const std::vector<Camera> cams = s.ring_cameras();
    for (std::size_t c = 0; c < cams.size(); ++c) {
        for (int f = 0; f < s.frames; ++f) {
            const Image& img = scene.dataset.images[c][f];
            double w = 0, sx = 0, sy = 0;
            for (int y = 0; y < img.height; ++y)
                for (int x = 0; x < img.width; ++x) {
                    const double v = img.at(x, y, 0);
                    w += v;
                    sx += v * (x + 0.5);
                    sy += v * (y + 0.5);
                }
            const Vec3 q = cams[c].to_camera(s.dynamic_position(b, scene.dataset.frame_time(f)));
            const double u = cams[c].fx * q.x() / q.z() + cams[c].cx;
            const double v = cams[c].fy * q.y() / q.z() + cams[c].cy;
            // 8-bit quantization of the stored frame limits the agreement.
            EXPECT_NEAR(sx / w, u, 0.1) << "camera " << c << " frame " << f;
            EXPECT_NEAR(sy / w, v, 0.1) << "camera " << c << " frame " << f;
        }
    }
}

TEST(Synthetic, BlobOutsideItsTimeRangeIsAbsent) {
    SynthSpec s = small_spec();
    s.frames = 24;
    s.cameras = 2;
    const SynthScene scene = generate_scene(s);
    // Blob b lives in frames 8 to 16; the rest are static blobs and blob a.
    EXPECT_EQ(scene.splats_at(scene.dataset.frame_time(3)).size(), 6u + 1u);
    EXPECT_EQ(scene.splats_at(scene.dataset.frame_time(8)).size(), 6u + 2u);
    EXPECT_EQ(scene.splats_at(scene.dataset.frame_time(16)).size(), 6u + 2u);
    EXPECT_EQ(scene.splats_at(scene.dataset.frame_time(17)).size(), 6u + 1u);
}

TEST(Synthetic, GroundTruthReRendersIdentically) {
    const SynthScene scene = generate_scene(small_spec());
    const std::vector<Camera> cams = scene.spec.ring_cameras();
    for (std::size_t c = 0; c < cams.size(); ++c)
        for (int f = 0; f < scene.spec.frames; ++f) {
            Image r = scene.render(cams[c], scene.dataset.frame_time(f));
            EXPECT_LE(max_abs_diff(r, scene.dataset.images[c][f]), 0.5 / 255.0 + 1e-12);
            for (double& v : r.pixels) v = to_8bit(v) / 255.0;
            EXPECT_EQ(r.pixels, scene.dataset.images[c][f].pixels);
        }
}

TEST(Synthetic, InMemoryDatasetMatchesSavedDataset) {
    const SynthScene scene = generate_scene(small_spec());
    const std::filesystem::path dir = std::filesystem::temp_directory_path() / "a4dg_synth_roundtrip";
    std::filesystem::remove_all(dir);
    save_dataset(scene.dataset, dir);
    const SceneDataset back = load_dataset(dir);
    EXPECT_EQ(back.points, scene.dataset.points);
    EXPECT_EQ(back.colors, scene.dataset.colors);
    ASSERT_EQ(back.images.size(), scene.dataset.images.size());
    for (std::size_t c = 0; c < back.images.size(); ++c)
        for (std::size_t f = 0; f < back.images[c].size(); ++f)
            EXPECT_EQ(back.images[c][f].pixels, scene.dataset.images[c][f].pixels) << c << " " << f;
    std::filesystem::remove_all(dir);
}

TEST(Synthetic, SceneVolumeMustStayInView) {
    SynthSpec s = small_spec();
    s.static_extent = Vec3(5.0, 0.3, 0.3);
    EXPECT_THROW(s.validate(), ConfigError);
    s = small_spec();
    s.dynamic_blobs[0].waypoints.push_back(Vec3(0.0, 3.0, 0.0));
    EXPECT_THROW(generate_scene(s), ConfigError);
}

TEST(Synthetic, SpecJsonRoundTripAndStrictKeys) {
    const SynthSpec s = small_spec();
    const SynthSpec back = synth_spec_from_json(synth_spec_to_json(s));
    EXPECT_EQ(synth_spec_to_json(back), synth_spec_to_json(s));
    EXPECT_THROW(synth_spec_from_json(R"({"camera_count": 3})"), ConfigError);
}

TEST(Psnr, SentinelAndKnownValues) {
    const Image a = filled(8, 8, 0.3);
    EXPECT_EQ(psnr(a, a), std::numeric_limits<double>::infinity());
    EXPECT_NEAR(psnr(a, filled(8, 8, 0.4)), 20.0, 1e-9);
    Image black = filled(8, 8, 0.0), checker = filled(8, 8, 0.0);
    for (int y = 0; y < 8; ++y)
        for (int x = 0; x < 8; ++x)
            for (int c = 0; c < 3; ++c) {
                black.at(x, y, c) = (x + y) % 2 ? 1.0 : 0.0;
                checker.at(x, y, c) = (x + y) % 2 ? 0.0 : 1.0;
            }
    EXPECT_NEAR(psnr(black, checker), 0.0, 1e-12);
}

TEST(Mask, StaticSequenceIsEmpty) {
    const std::vector<Image> seq(5, filled(6, 6, 0.4));
    for (MaskMode m : {MaskMode::kGlobalMedian, MaskMode::kTemporalDifference, MaskMode::kCombined})
        EXPECT_EQ(dynamic_mask(seq, m).count(), 0u);
}

TEST(Mask, StepChangeAndUnion) {
    std::vector<Image> seq(5, filled(6, 6, 0.2));
    for (int f = 3; f < 5; ++f) seq[f].at(2, 2, 1) = 0.9;  // one pixel switches on at frame 3
    const DynamicMask gm = dynamic_mask(seq, MaskMode::kGlobalMedian);
    const DynamicMask td = dynamic_mask(seq, MaskMode::kTemporalDifference);
    const DynamicMask all = dynamic_mask(seq, MaskMode::kCombined);
    // The median is the "off" value, so the two "on" frames are flagged.
    for (int f = 0; f < 5; ++f) EXPECT_EQ(gm.frames[f].at(2, 2), f >= 3) << f;
    // Only the transition frame differs from its predecessor.
    for (int f = 0; f < 5; ++f) EXPECT_EQ(td.frames[f].at(2, 2), f == 3) << f;
    EXPECT_EQ(gm.count(), 2u);
    EXPECT_EQ(td.count(), 1u);
    for (int f = 0; f < 5; ++f)
        for (std::size_t i = 0; i < all.frames[f].values.size(); ++i) {
            EXPECT_GE(all.frames[f].values[i], gm.frames[f].values[i]);
            EXPECT_GE(all.frames[f].values[i], td.frames[f].values[i]);
        }
    // Just below the threshold in 8-bit units does not count.
    std::vector<Image> faint(3, filled(4, 4, 0.0));
    faint[2].at(1, 1, 0) = 49.0 / 255.0;
    EXPECT_EQ(dynamic_mask(faint).count(), 0u);
    faint[2].at(1, 1, 0) = 50.0 / 255.0;
    EXPECT_GT(dynamic_mask(faint).count(), 0u);
}

TEST(Mask, FirstFrameUsesForwardDifference) {
    std::vector<Image> seq(3, filled(4, 4, 0.2));
    seq[0].at(0, 0, 0) = 1.0;
    const DynamicMask td = dynamic_mask(seq, MaskMode::kTemporalDifference);
    EXPECT_TRUE(td.frames[0].at(0, 0));
    EXPECT_TRUE(td.frames[1].at(0, 0));
    EXPECT_FALSE(td.frames[2].at(0, 0));
}

TEST(Mask, TemporalDifferenceNeedsTwoFrames) {
    const std::vector<Image> one(1, filled(4, 4, 0.1));
    EXPECT_THROW(dynamic_mask(one, MaskMode::kTemporalDifference), InvalidParameter);
    EXPECT_THROW(dynamic_mask(one, MaskMode::kCombined), InvalidParameter);
    EXPECT_NO_THROW(dynamic_mask(one, MaskMode::kGlobalMedian));
    EXPECT_THROW(parse_mask_mode("median"), ConfigError);
}

TEST(MaskedMetrics, FullMaskMatchesFullImage) {
    Image gt = filled(12, 12, 0.5), r = filled(12, 12, 0.5);
    for (std::size_t i = 0; i < r.size(); ++i) r.pixels[i] += 0.05 * std::sin(0.7 * static_cast<double>(i));
    const MaskedMetrics m = masked_metrics(r, gt, Mask(12, 12, true));
    ASSERT_TRUE(m.psnr_dyn && m.ssim_dyn);
    EXPECT_NEAR(*m.psnr_dyn, m.psnr_full, 1e-9);
    EXPECT_NEAR(*m.ssim_dyn, m.ssim_full, 1e-12);
    const MaskedMetrics none = masked_metrics(r, gt, Mask(12, 12, false));
    EXPECT_FALSE(none.psnr_dyn.has_value());
    EXPECT_FALSE(none.ssim_dyn.has_value());
}

TEST(MaskedMetrics, DegradingMaskedRegionLowersDynamicScore) {
    Image gt = filled(16, 16, 0.5), r = filled(16, 16, 0.5);
    for (std::size_t i = 0; i < r.size(); ++i) r.pixels[i] += 0.01 * std::sin(1.3 * static_cast<double>(i));
    Mask mask(16, 16);
    for (int y = 4; y < 8; ++y)
        for (int x = 4; x < 8; ++x) {
            mask.set(x, y, true);
            for (int c = 0; c < 3; ++c) r.at(x, y, c) = 0.9;
        }
    const MaskedMetrics m = masked_metrics(r, gt, mask);
    ASSERT_TRUE(m.psnr_dyn.has_value());
    EXPECT_LT(*m.psnr_dyn, m.psnr_full);
    EXPECT_LT(*m.ssim_dyn, m.ssim_full);
}

TEST(SequenceMetrics, PoolsSquaredErrorOverFrames) {
    const std::vector<Image> gts(2, filled(8, 8, 0.5));
    const std::vector<Image> renders{filled(8, 8, 0.5), filled(8, 8, 0.6)};
    const DynamicMask mask = dynamic_mask(gts);
    const SequenceMetrics m = sequence_metrics(renders, gts, mask);
    EXPECT_NEAR(m.psnr_full, psnr_from_mse(0.01 / 2.0), 1e-9);
    EXPECT_FALSE(m.psnr_dyn.has_value());
}
