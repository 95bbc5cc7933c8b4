// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "a4dg/anchor_grid.hpp"
#include "a4dg/mlp.hpp"
#include "a4dg/temporal.hpp"

namespace a4dg {

// Per-slot layout of the shape head: quaternion (4), log-scale (3), log inverse temporal scale (1).
inline constexpr int kShapeStride = 8;
inline constexpr int kHiddenWidth = 32;

struct SpawnInit {
    double init_scale = 0.001;          // initial spatial scale, exp of the scale bias
    double init_sigma_inv = 299.0;      // initial inverse temporal scale
    double opacity_bias = 0.1;          // pre-tanh
    double output_weight_scale = 0.01;
};

// The four shared heads. Hidden width 32, ReLU; raw outputs are activated by
// the spawner (tanh opacity, exp scale and inverse temporal scale, sigmoid color).
struct MLPStack {
    int feature_dim = 32;
    int k = 10;
    int degree = 1;  // motion coefficients per slot
    TwoLayerMLP opacity;
    TwoLayerMLP shape;
    TwoLayerMLP color;
    TwoLayerMLP velocity;

    MLPStack() = default;
    MLPStack(int feature_dim_, int k_, int degree_ = 1, int width = kHiddenWidth)
        : feature_dim(feature_dim_), k(k_), degree(degree_),
          opacity(feature_dim_, width, k_),
          shape(feature_dim_, width, k_ * kShapeStride),
          color(feature_dim_ + 3, width, k_ * 3),
          velocity(feature_dim_, width, k_ * 3 * degree_) {}

    std::size_t parameter_count() const {
        return opacity.parameter_count() + shape.parameter_count() + color.parameter_count() +
               velocity.parameter_count();
    }
    bool finite() const { return opacity.finite() && shape.finite() && color.finite() && velocity.finite(); }

    // Heads in serialization order.
    std::vector<TwoLayerMLP*> heads() { return {&opacity, &shape, &color, &velocity}; }
    std::vector<const TwoLayerMLP*> heads() const { return {&opacity, &shape, &color, &velocity}; }

    std::vector<std::span<double>> blocks() {
        std::vector<std::span<double>> out;
        for (TwoLayerMLP* h : heads())
            for (auto b : h->blocks()) out.push_back(b);
        return out;
    }

    void zero() {
        for (TwoLayerMLP* h : heads()) h->zero();
    }

    std::uint64_t version() const { return version_; }
    void touch() { ++version_; }

private:
    std::uint64_t version_ = 0;
};

template <typename Rng>
MLPStack make_mlp_stack(int feature_dim, int k, MotionModel motion, const SpawnInit& init, Rng& rng) {
    MLPStack s(feature_dim, k, motion_degree(motion));
    for (TwoLayerMLP* h : s.heads()) init_mlp(*h, rng, init.output_weight_scale);
    for (int slot = 0; slot < k; ++slot) {
        s.opacity.output.bias[slot] = init.opacity_bias;
        double* b = s.shape.output.bias.data() + slot * kShapeStride;
        b[0] = 1.0;  // identity rotation
        b[4] = b[5] = b[6] = std::log(init.init_scale);
        b[7] = std::log(init.init_sigma_inv);
    }
    return s;
}

// Unit vector from the camera center to the anchor's spatial position.
inline Vec3 view_direction(const Vec3& camera_center, const Vec4& anchor_position) {
    const Vec3 d = anchor_position.head<3>() - camera_center;
    const double n = d.norm();
    return n > 0.0 ? Vec3(d / n) : Vec3(0.0, 0.0, 1.0);
}

// Hidden pre-activations of one anchor's forward pass.
struct SpawnTape {
    Eigen::VectorXd pre_opacity;
    Eigen::VectorXd pre_shape;
    Eigen::VectorXd pre_color;
    Eigen::VectorXd pre_velocity;
};

namespace detail {

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Activated, view-invariant slot values: rho, q(4), s(3), sigma_inv, motion(3 * degree).
inline void decode_invariant(const MLPStack& m, int slot, const Eigen::VectorXd& raw_opacity,
                             const Eigen::VectorXd& raw_shape, const Eigen::VectorXd& raw_velocity,
                             NeuralGaussian4D& g) {
    g.base_opacity = std::tanh(raw_opacity[slot]);
    const double* s = raw_shape.data() + slot * kShapeStride;
    g.rotation = Quat(s[0], s[1], s[2], s[3]);
    g.scale = Vec3(std::exp(s[4]), std::exp(s[5]), std::exp(s[6]));
    g.sigma_inv = std::exp(s[7]);
    for (int d = 0; d < kPolynomialDegree; ++d) {
        g.motion[d] = d < m.degree ? Vec3(Eigen::Map<const Vec3>(raw_velocity.data() + (slot * m.degree + d) * 3))
                                   : Vec3::Zero();
    }
}

inline Eigen::VectorXd color_input(std::span<const double> feature, const Vec3& view_dir) {
    Eigen::VectorXd x(feature.size() + 3);
    for (std::size_t i = 0; i < feature.size(); ++i) x[i] = feature[i];
    x.tail<3>() = view_dir;
    return x;
}

}  // namespace detail

// Decodes the K Gaussians of anchor `i` into `out` (size K). When `tape` is
// non-null it receives the hidden pre-activations for spawn_backward.
inline void spawn(const AnchorSet& anchors, std::size_t i, const Vec3& view_dir, const MLPStack& mlps,
                  std::span<NeuralGaussian4D> out, SpawnTape* tape = nullptr) {
    if (static_cast<int>(out.size()) != mlps.k || anchors.k() != mlps.k || anchors.feature_dim() != mlps.feature_dim)
        throw InvalidParameter("spawn: anchor/MLP shape mismatch");
    const std::span<const double> f = anchors.feature(i);
    const ConstVecMap x(f.data(), static_cast<Eigen::Index>(f.size()));
    SpawnTape local;
    SpawnTape& t = tape ? *tape : local;
    Eigen::VectorXd raw_o, raw_s, raw_c, raw_v;
    mlps.opacity.forward(x, t.pre_opacity, raw_o);
    mlps.shape.forward(x, t.pre_shape, raw_s);
    mlps.velocity.forward(x, t.pre_velocity, raw_v);
    mlps.color.forward(detail::color_input(f, view_dir), t.pre_color, raw_c);
    for (int slot = 0; slot < mlps.k; ++slot) {
        NeuralGaussian4D& g = out[slot];
        g.position = anchors.gaussian_position(i, slot);
        detail::decode_invariant(mlps, slot, raw_o, raw_s, raw_v, g);
        g.color = Vec3(detail::sigmoid(raw_c[slot * 3]), detail::sigmoid(raw_c[slot * 3 + 1]),
                       detail::sigmoid(raw_c[slot * 3 + 2]));
    }
}

inline std::vector<NeuralGaussian4D> spawn(const AnchorSet& anchors, std::size_t i, const Vec3& view_dir,
                                           const MLPStack& mlps) {
    if (!mlps.finite()) throw InvalidParameter("spawn: non-finite MLP weights");
    std::vector<NeuralGaussian4D> out(mlps.k);
    spawn(anchors, i, view_dir, mlps, out);
    return out;
}

// Gradients of the anchor-side parameters. Layout matches AnchorSet.
struct AnchorGrad {
    std::vector<double> features;
    std::vector<double> offsets;

    void resize(const AnchorSet& a) {
        features.assign(a.features().size(), 0.0);
        offsets.assign(a.offsets().size(), 0.0);
    }
};

// Reverse pass for one anchor. `upstream[slot]` holds dL/d(activated property)
// for each spawned Gaussian and `spawned` the forward values. Parameter
// gradients are accumulated into `grad_mlps` and `grad_anchors`.
inline void spawn_backward(const AnchorSet& anchors, std::size_t i, const Vec3& view_dir, const MLPStack& mlps,
                           const SpawnTape& tape, std::span<const NeuralGaussian4D> spawned,
                           std::span<const Gaussian4DGrad> upstream, MLPStack& grad_mlps,
                           AnchorGrad& grad_anchors) {
    const int k = mlps.k;
    Eigen::VectorXd d_o = Eigen::VectorXd::Zero(k);
    Eigen::VectorXd d_s = Eigen::VectorXd::Zero(k * kShapeStride);
    Eigen::VectorXd d_c = Eigen::VectorXd::Zero(k * 3);
    Eigen::VectorXd d_v = Eigen::VectorXd::Zero(k * 3 * mlps.degree);
    bool any = false;
    for (int slot = 0; slot < k; ++slot) {
        const NeuralGaussian4D& g = spawned[slot];
        const Gaussian4DGrad& u = upstream[slot];
        for (int a = 0; a < 4; ++a) grad_anchors.offsets[(i * k + slot) * 4 + a] += u.d_position[a];
        d_o[slot] = u.d_base_opacity * (1.0 - g.base_opacity * g.base_opacity);
        double* s = d_s.data() + slot * kShapeStride;
        for (int a = 0; a < 4; ++a) s[a] = u.d_rotation[a];
        for (int a = 0; a < 3; ++a) s[4 + a] = u.d_scale[a] * g.scale[a];
        s[7] = u.d_sigma_inv * g.sigma_inv;
        for (int a = 0; a < 3; ++a) d_c[slot * 3 + a] = u.d_color[a] * g.color[a] * (1.0 - g.color[a]);
        for (int d = 0; d < mlps.degree; ++d)
            for (int a = 0; a < 3; ++a) d_v[(slot * mlps.degree + d) * 3 + a] = u.d_motion[d][a];
        any = any || u.d_base_opacity != 0.0 || !u.d_rotation.isZero(0.0) || !u.d_scale.isZero(0.0) ||
              u.d_sigma_inv != 0.0 || !u.d_color.isZero(0.0) || !u.d_position.isZero(0.0);
        for (int d = 0; d < kPolynomialDegree; ++d) any = any || !u.d_motion[d].isZero(0.0);
    }
    if (!any) return;

    const std::span<const double> f = anchors.feature(i);
    const ConstVecMap x(f.data(), static_cast<Eigen::Index>(f.size()));
    Eigen::VectorXd d_x = mlps.opacity.backward(x, tape.pre_opacity, d_o, grad_mlps.opacity);
    d_x += mlps.shape.backward(x, tape.pre_shape, d_s, grad_mlps.shape);
    d_x += mlps.velocity.backward(x, tape.pre_velocity, d_v, grad_mlps.velocity);
    const Eigen::VectorXd d_xc = mlps.color.backward(detail::color_input(f, view_dir), tape.pre_color, d_c, grad_mlps.color);
    d_x += d_xc.head(mlps.feature_dim);
    for (int a = 0; a < mlps.feature_dim; ++a) grad_anchors.features[i * mlps.feature_dim + a] += d_x[a];
}

// View- and time-invariant head outputs per anchor, tagged with the parameter
// versions they were computed from.
class InferenceCache {
public:
    // rho, q(4), s(3), sigma_inv, motion(3 * degree)
    static int stride(int degree) { return 1 + kShapeStride + 3 * degree; }

    InferenceCache() = default;

    static InferenceCache build(const AnchorSet& anchors, const MLPStack& mlps) {
        InferenceCache c;
        c.k_ = mlps.k;
        c.degree_ = mlps.degree;
        c.anchor_version_ = anchors.version();
        c.mlp_version_ = mlps.version();
        c.anchor_count_ = anchors.size();
        c.values_.resize(anchors.size() * mlps.k * stride(mlps.degree));
        Eigen::VectorXd pre, raw_o, raw_s, raw_v;
        NeuralGaussian4D g;
        for (std::size_t i = 0; i < anchors.size(); ++i) {
            const std::span<const double> f = anchors.feature(i);
            const ConstVecMap x(f.data(), static_cast<Eigen::Index>(f.size()));
            mlps.opacity.forward(x, pre, raw_o);
            mlps.shape.forward(x, pre, raw_s);
            mlps.velocity.forward(x, pre, raw_v);
            for (int slot = 0; slot < mlps.k; ++slot) {
                detail::decode_invariant(mlps, slot, raw_o, raw_s, raw_v, g);
                double* v = c.slot_data(i, slot);
                v[0] = g.base_opacity;
                for (int a = 0; a < 4; ++a) v[1 + a] = g.rotation[a];
                for (int a = 0; a < 3; ++a) v[5 + a] = g.scale[a];
                v[8] = g.sigma_inv;
                for (int d = 0; d < mlps.degree; ++d)
                    for (int a = 0; a < 3; ++a) v[9 + d * 3 + a] = g.motion[d][a];
            }
        }
        return c;
    }

    std::size_t scalar_count() const { return values_.size(); }
    std::size_t anchor_count() const { return anchor_count_; }

    void check(const AnchorSet& anchors, const MLPStack& mlps) const {
        if (anchors.version() != anchor_version_ || mlps.version() != mlp_version_ ||
            anchors.size() != anchor_count_ || mlps.k != k_ || mlps.degree != degree_)
            throw StaleCache("parameters changed since the cache was built");
    }

    // Same result as spawn(), with only the color head evaluated.
    void spawn(const AnchorSet& anchors, std::size_t i, const Vec3& view_dir, const MLPStack& mlps,
               std::span<NeuralGaussian4D> out) const {
        check(anchors, mlps);
        const std::span<const double> f = anchors.feature(i);
        Eigen::VectorXd pre, raw_c;
        mlps.color.forward(detail::color_input(f, view_dir), pre, raw_c);
        for (int slot = 0; slot < k_; ++slot) {
            const double* v = slot_data(i, slot);
            NeuralGaussian4D& g = out[slot];
            g.position = anchors.gaussian_position(i, slot);
            g.base_opacity = v[0];
            g.rotation = Quat(v[1], v[2], v[3], v[4]);
            g.scale = Vec3(v[5], v[6], v[7]);
            g.sigma_inv = v[8];
            for (int d = 0; d < kPolynomialDegree; ++d)
                g.motion[d] = d < degree_ ? Vec3(v[9 + d * 3], v[10 + d * 3], v[11 + d * 3]) : Vec3::Zero();
            g.color = Vec3(detail::sigmoid(raw_c[slot * 3]), detail::sigmoid(raw_c[slot * 3 + 1]),
                           detail::sigmoid(raw_c[slot * 3 + 2]));
        }
    }

    double base_opacity(std::size_t i, int slot) const { return slot_data(i, slot)[0]; }

private:
    double* slot_data(std::size_t i, int slot) { return values_.data() + (i * k_ + slot) * stride(degree_); }
    const double* slot_data(std::size_t i, int slot) const {
        return values_.data() + (i * k_ + slot) * stride(degree_);
    }

    int k_ = 0;
    int degree_ = 1;
    std::uint64_t anchor_version_ = 0;
    std::uint64_t mlp_version_ = 0;
    std::size_t anchor_count_ = 0;
    std::vector<double> values_;
};

// Base opacity of every Gaussian, laid out [anchor * k + slot].
inline std::vector<double> base_opacities(const AnchorSet& anchors, const MLPStack& mlps) {
    std::vector<double> out(anchors.size() * mlps.k);
    Eigen::VectorXd pre, raw;
    for (std::size_t i = 0; i < anchors.size(); ++i) {
        const std::span<const double> f = anchors.feature(i);
        mlps.opacity.forward(ConstVecMap(f.data(), static_cast<Eigen::Index>(f.size())), pre, raw);
        for (int s = 0; s < mlps.k; ++s) out[i * mlps.k + s] = std::tanh(raw[s]);
    }
    return out;
}

}  // namespace a4dg
