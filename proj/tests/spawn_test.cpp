// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <random>

#include "a4dg/spawn.hpp"

namespace a4dg {
namespace {

struct SpawnFixture : ::testing::Test {
    std::mt19937_64 rng{21};
    AnchorSet anchors{6, 3};
    MLPStack mlps;

    void build(MotionModel motion = MotionModel::kLinear, double out_scale = 0.3) {
        SpawnInit init;
        init.output_weight_scale = out_scale;
        init.init_scale = 0.2;
        init.init_sigma_inv = 3.0;
        mlps = make_mlp_stack(6, 3, motion, init, rng);
        std::normal_distribution<double> n(0.0, 0.5);
        for (int i = 0; i < 4; ++i) {
            std::vector<double> f(6);
            for (double& v : f) v = n(rng);
            std::vector<Vec4> offs(3);
            for (Vec4& o : offs) o = Vec4(n(rng), n(rng), n(rng), n(rng)) * 0.1;
            anchors.append(Vec4(i, 0.5 * i, -0.25, 0.1 * i), f, offs);
        }
        for (TwoLayerMLP* h : mlps.heads())
            for (double& b : h->output.bias) b += n(rng);
    }
};

TEST(MlpStackTest, ParameterCountsMatchArchitecture) {
    const MLPStack s(32, 10);
    const std::size_t hidden = 32 * 32 + 32;
    EXPECT_EQ(s.opacity.parameter_count(), hidden + 32 * 10 + 10);
    EXPECT_EQ(s.shape.parameter_count(), hidden + 32 * 80 + 80);
    EXPECT_EQ(s.color.parameter_count(), 35 * 32 + 32 + 32 * 30 + 30);
    EXPECT_EQ(s.velocity.parameter_count(), hidden + 32 * 30 + 30);
    EXPECT_EQ(s.parameter_count(), s.opacity.parameter_count() + s.shape.parameter_count() +
                                       s.color.parameter_count() + s.velocity.parameter_count());
}

TEST_F(SpawnFixture, ZeroNetwork) {
    build();
    mlps.zero();
    const auto gs = spawn(anchors, 1, Vec3(0, 0, 1), mlps);
    ASSERT_EQ(gs.size(), 3u);
    for (int s = 0; s < 3; ++s) {
        EXPECT_EQ(gs[s].base_opacity, 0.0);
        EXPECT_EQ(gs[s].scale, Vec3(1, 1, 1));
        EXPECT_EQ(gs[s].color, Vec3(0.5, 0.5, 0.5));
        EXPECT_EQ(gs[s].sigma_inv, 1.0);
        EXPECT_EQ(gs[s].position, anchors.gaussian_position(1, s));
    }
}

TEST_F(SpawnFixture, ViewDirectionOnlyChangesColor) {
    build();
    const auto a = spawn(anchors, 2, Vec3(0, 0, 1), mlps);
    const auto b = spawn(anchors, 2, Vec3(0.6, 0.8, 0), mlps);
    bool color_changed = false;
    for (int s = 0; s < 3; ++s) {
        EXPECT_EQ(a[s].base_opacity, b[s].base_opacity);
        EXPECT_EQ(a[s].rotation, b[s].rotation);
        EXPECT_EQ(a[s].scale, b[s].scale);
        EXPECT_EQ(a[s].sigma_inv, b[s].sigma_inv);
        EXPECT_EQ(a[s].motion[0], b[s].motion[0]);
        color_changed = color_changed || a[s].color != b[s].color;
    }
    EXPECT_TRUE(color_changed);
}

TEST_F(SpawnFixture, ActivationRangesHoldForLargeWeights) {
    build(MotionModel::kLinear, 30.0);
    for (std::size_t i = 0; i < anchors.size(); ++i) {
        for (const auto& g : spawn(anchors, i, Vec3(0, 1, 0), mlps)) {
            EXPECT_GE(g.base_opacity, -1.0);
            EXPECT_LE(g.base_opacity, 1.0);
            EXPECT_GE(g.color.minCoeff(), 0.0);
            EXPECT_LE(g.color.maxCoeff(), 1.0);
            EXPECT_GT(g.scale.minCoeff(), 0.0);
            EXPECT_GT(g.sigma_inv, 0.0);
        }
    }
}

TEST_F(SpawnFixture, NonFiniteWeightsAreRejected) {
    build();
    mlps.shape.hidden.weight[3] = std::nan("");
    EXPECT_THROW(spawn(anchors, 0, Vec3(0, 0, 1), mlps), InvalidParameter);
}

TEST_F(SpawnFixture, AnchorPermutationPermutesGaussians) {
    build();
    AnchorSet reversed(6, 3);
    for (std::size_t i = anchors.size(); i-- > 0;) {
        std::vector<Vec4> offs;
        for (int s = 0; s < 3; ++s) offs.push_back(anchors.offset(i, s));
        reversed.append(anchors.position(i), anchors.feature(i), offs);
    }
    const Vec3 dir(0, 0, 1);
    for (std::size_t i = 0; i < anchors.size(); ++i) {
        const auto a = spawn(anchors, i, dir, mlps);
        const auto b = spawn(reversed, anchors.size() - 1 - i, dir, mlps);
        for (int s = 0; s < 3; ++s) {
            EXPECT_EQ(a[s].position, b[s].position);
            EXPECT_EQ(a[s].color, b[s].color);
            EXPECT_EQ(a[s].scale, b[s].scale);
        }
    }
}

// Scalar test function over the activated properties of one anchor.
struct Probe {
    std::vector<Gaussian4DGrad> weights;

    explicit Probe(int k, std::mt19937_64& rng) : weights(k) {
        std::normal_distribution<double> n(0.0, 1.0);
        for (auto& w : weights) {
            w.d_position = Vec4(n(rng), n(rng), n(rng), n(rng));
            w.d_base_opacity = n(rng);
            w.d_rotation = Quat(n(rng), n(rng), n(rng), n(rng));
            w.d_scale = Vec3(n(rng), n(rng), n(rng));
            w.d_sigma_inv = n(rng);
            for (auto& m : w.d_motion) m = Vec3(n(rng), n(rng), n(rng));
            w.d_color = Vec3(n(rng), n(rng), n(rng));
        }
    }

    double operator()(std::span<const NeuralGaussian4D> gs) const {
        double v = 0.0;
        for (std::size_t s = 0; s < gs.size(); ++s) {
            const auto& g = gs[s];
            const auto& w = weights[s];
            v += w.d_position.dot(g.position) + w.d_base_opacity * g.base_opacity + w.d_rotation.dot(g.rotation) +
                 w.d_scale.dot(g.scale) + w.d_sigma_inv * g.sigma_inv + w.d_color.dot(g.color);
            for (int d = 0; d < kPolynomialDegree; ++d) v += w.d_motion[d].dot(g.motion[d]);
        }
        return v;
    }
};

void check_backward_against_fd(SpawnFixture& fx, std::size_t anchor) {
    const Vec3 dir = Vec3(0.3, -0.4, 0.866).normalized();
    Probe probe(3, fx.rng);
    SpawnTape tape;
    std::vector<NeuralGaussian4D> gs(3);
    spawn(fx.anchors, anchor, dir, fx.mlps, gs, &tape);
    MLPStack gm = fx.mlps;
    gm.zero();
    AnchorGrad ga;
    ga.resize(fx.anchors);
    spawn_backward(fx.anchors, anchor, dir, fx.mlps, tape, gs, probe.weights, gm, ga);

    auto eval = [&]() { return probe(spawn(fx.anchors, anchor, dir, fx.mlps)); };
    const double eps = 1e-5;
    auto fd_check = [&](double& param, double analytic) {
        const double keep = param;
        param = keep + eps;
        const double up = eval();
        param = keep - eps;
        const double down = eval();
        param = keep;
        const double fd = (up - down) / (2 * eps);
        EXPECT_NEAR(analytic, fd, 1e-5 * std::max(1.0, std::abs(fd)));
    };
    auto blocks = fx.mlps.blocks();
    auto grad_blocks = gm.blocks();
    for (std::size_t b = 0; b < blocks.size(); ++b)
        for (std::size_t j = 0; j < blocks[b].size(); ++j) fd_check(blocks[b][j], grad_blocks[b][j]);
    for (int a = 0; a < fx.anchors.feature_dim(); ++a)
        fd_check(fx.anchors.features()[anchor * 6 + a], ga.features[anchor * 6 + a]);
    for (int j = 0; j < 12; ++j) {
        fd_check(fx.anchors.offsets()[anchor * 12 + j], ga.offsets[anchor * 12 + j]);
        EXPECT_EQ(ga.offsets[anchor * 12 + j], probe.weights[j / 4].d_position[j % 4]);
    }
}

TEST_F(SpawnFixture, BackwardMatchesFiniteDifferencesLinear) {
    build();
    check_backward_against_fd(*this, 2);
}

TEST_F(SpawnFixture, BackwardMatchesFiniteDifferencesPolynomial) {
    build(MotionModel::kPolynomial);
    check_backward_against_fd(*this, 1);
}

TEST_F(SpawnFixture, ZeroUpstreamGivesZeroGradients) {
    build();
    SpawnTape tape;
    std::vector<NeuralGaussian4D> gs(3);
    spawn(anchors, 0, Vec3(0, 0, 1), mlps, gs, &tape);
    MLPStack gm = mlps;
    gm.zero();
    AnchorGrad ga;
    ga.resize(anchors);
    const std::vector<Gaussian4DGrad> zero(3);
    spawn_backward(anchors, 0, Vec3(0, 0, 1), mlps, tape, gs, zero, gm, ga);
    for (auto b : gm.blocks())
        for (double v : b) EXPECT_EQ(v, 0.0);
    for (double v : ga.features) EXPECT_EQ(v, 0.0);
    for (double v : ga.offsets) EXPECT_EQ(v, 0.0);
}

TEST_F(SpawnFixture, CacheMatchesUncachedExactly) {
    build();
    const InferenceCache cache = InferenceCache::build(anchors, mlps);
    EXPECT_EQ(cache.scalar_count(), anchors.size() * 3 * (1 + 8 + 3));
    const Vec3 dir = Vec3(1, 2, 3).normalized();
    for (std::size_t i = 0; i < anchors.size(); ++i) {
        const auto a = spawn(anchors, i, dir, mlps);
        std::vector<NeuralGaussian4D> b(3);
        cache.spawn(anchors, i, dir, mlps, b);
        for (int s = 0; s < 3; ++s) {
            EXPECT_EQ(a[s].position, b[s].position);
            EXPECT_EQ(a[s].base_opacity, b[s].base_opacity);
            EXPECT_EQ(a[s].rotation, b[s].rotation);
            EXPECT_EQ(a[s].scale, b[s].scale);
            EXPECT_EQ(a[s].sigma_inv, b[s].sigma_inv);
            EXPECT_EQ(a[s].motion[0], b[s].motion[0]);
            EXPECT_EQ(a[s].color, b[s].color);
        }
    }
}

TEST_F(SpawnFixture, CacheDetectsParameterUpdates) {
    build();
    const InferenceCache cache = InferenceCache::build(anchors, mlps);
    std::vector<NeuralGaussian4D> out(3);
    mlps.opacity.output.bias[0] += 0.1;
    mlps.touch();
    EXPECT_THROW(cache.spawn(anchors, 0, Vec3(0, 0, 1), mlps, out), StaleCache);
    const InferenceCache fresh = InferenceCache::build(anchors, mlps);
    anchors.features()[0] += 1.0;
    anchors.touch();
    EXPECT_THROW(fresh.spawn(anchors, 0, Vec3(0, 0, 1), mlps, out), StaleCache);
}

}  // namespace
}  // namespace a4dg
