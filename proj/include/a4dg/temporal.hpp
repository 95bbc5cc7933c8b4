// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cmath>
#include <optional>
#include <string>

#include "a4dg/error.hpp"
#include "a4dg/geometry.hpp"

namespace a4dg {

enum class OpacityModel { kGeneralized, kGaussian4DGS };
enum class MotionModel { kLinear, kPolynomial };

// Degree of the polynomial trajectory ablation. Linear motion is degree 1.
inline constexpr int kPolynomialDegree = 3;

inline int motion_degree(MotionModel m) { return m == MotionModel::kLinear ? 1 : kPolynomialDegree; }

// Shape exponent is kept as beta' with beta = 2 beta'.
struct TemporalConfig {
    double beta_prime = 1.0;
    OpacityModel opacity = OpacityModel::kGeneralized;
    MotionModel motion = MotionModel::kLinear;

    double beta() const { return 2.0 * beta_prime; }
    void set_beta(double beta) { beta_prime = 0.5 * beta; }

    // Throws on invalid values; returns a warning for legal but unstable ones.
    std::optional<std::string> validate() const {
        if (!std::isfinite(beta_prime) || beta_prime <= 0.0)
            throw ConfigError("beta must be finite and > 0");
        if (beta() > 8.0)
            return "beta = " + std::to_string(beta()) + " is above 8; training may be unstable";
        return std::nullopt;
    }
};

// Per-Gaussian temporal parameters.
template <typename Scalar = double>
struct TemporalParams {
    Scalar center = 0;     // normalized time in [0,1]
    Scalar sigma_inv = 1;  // inverse temporal scale, > 0
    Eigen::Matrix<Scalar, 3, 1> velocity = Eigen::Matrix<Scalar, 3, 1>::Zero();

    bool valid() const {
        return std::isfinite(center) && std::isfinite(sigma_inv) && sigma_inv > 0 &&
               velocity.allFinite();
    }
};

template <typename Scalar>
Eigen::Matrix<Scalar, 3, 1> motion_offset(Scalar t, Scalar center,
                                          const Eigen::Matrix<Scalar, 3, 1>& velocity) {
    return (t - center) * velocity;
}

namespace detail {

// x^n for a non-negative integer n, by repeated squaring.
template <typename Scalar>
Scalar ipow(Scalar x, long n) {
    Scalar r = 1;
    while (n > 0) {
        if (n & 1) r *= x;
        x *= x;
        n >>= 1;
    }
    return r;
}

inline bool is_integer(double v) { return std::floor(v) == v && std::abs(v) < 1e9; }

}  // namespace detail

// exp(-(|t - center| * sigma_inv)^beta). With beta = 2 beta' and integer beta'
// the power is taken on the squared distance, so no absolute value is needed.
template <typename Scalar>
Scalar temporal_opacity(Scalar t, Scalar center, Scalar sigma_inv, Scalar beta) {
    const Scalar z = (t - center) * sigma_inv;
    const Scalar half = beta / 2;
    if (detail::is_integer(static_cast<double>(half)))
        return std::exp(-detail::ipow(z * z, static_cast<long>(half)));
    return std::exp(-std::pow(std::abs(z), beta));
}

template <typename Scalar>
struct TemporalOpacityGrad {
    Scalar d_center = 0;
    Scalar d_sigma_inv = 0;
};

template <typename Scalar>
TemporalOpacityGrad<Scalar> temporal_opacity_grad(Scalar t, Scalar center, Scalar sigma_inv,
                                                  Scalar beta) {
    const Scalar delta = t - center;
    const Scalar g = temporal_opacity(t, center, sigma_inv, beta);
    const Scalar half = beta / 2;
    // d/dz of z^beta, written for signed z so that beta = 2 beta' needs no sign().
    Scalar dpow_dz;
    const Scalar z = delta * sigma_inv;
    if (detail::is_integer(static_cast<double>(half))) {
        dpow_dz = beta * z * detail::ipow(z * z, static_cast<long>(half) - 1);
    } else {
        const Scalar az = std::abs(z);
        dpow_dz = az == 0 ? Scalar(0) : beta * std::pow(az, beta - 1) * (z > 0 ? Scalar(1) : Scalar(-1));
    }
    TemporalOpacityGrad<Scalar> out;
    out.d_center = -g * dpow_dz * (-sigma_inv);
    out.d_sigma_inv = -g * dpow_dz * delta;
    return out;
}

// Univariate Gaussian opacity used by 4DGS-style methods: exp(-0.5 dt^2 sigma_inv^2).
template <typename Scalar>
Scalar temporal_opacity_4dgs(Scalar t, Scalar center, Scalar sigma_inv) {
    const Scalar z = (t - center) * sigma_inv;
    return std::exp(Scalar(-0.5) * z * z);
}

template <typename Scalar>
TemporalOpacityGrad<Scalar> temporal_opacity_4dgs_grad(Scalar t, Scalar center, Scalar sigma_inv) {
    const Scalar delta = t - center;
    const Scalar g = temporal_opacity_4dgs(t, center, sigma_inv);
    TemporalOpacityGrad<Scalar> out;
    out.d_center = g * delta * sigma_inv * sigma_inv;
    out.d_sigma_inv = -g * delta * delta * sigma_inv;
    return out;
}

inline double evaluate_temporal_opacity(const TemporalConfig& cfg, double t, double center,
                                        double sigma_inv) {
    return cfg.opacity == OpacityModel::kGeneralized
               ? temporal_opacity(t, center, sigma_inv, cfg.beta())
               : temporal_opacity_4dgs(t, center, sigma_inv);
}

inline TemporalOpacityGrad<double> evaluate_temporal_opacity_grad(const TemporalConfig& cfg, double t,
                                                                  double center, double sigma_inv) {
    return cfg.opacity == OpacityModel::kGeneralized
               ? temporal_opacity_grad(t, center, sigma_inv, cfg.beta())
               : temporal_opacity_4dgs_grad(t, center, sigma_inv);
}

// A spawned space-time Gaussian. `motion[0]` is the velocity; higher entries
// are only used by the polynomial trajectory ablation.
struct NeuralGaussian4D {
    Vec4 position = Vec4::Zero();  // (x, y, z, t) canonical position
    double base_opacity = 0.0;     // tanh-activated, in (-1, 1)
    Quat rotation{1.0, 0.0, 0.0, 0.0};
    Vec3 scale = Vec3::Ones();
    double sigma_inv = 1.0;
    std::array<Vec3, kPolynomialDegree> motion{Vec3::Zero(), Vec3::Zero(), Vec3::Zero()};
    Vec3 color = Vec3::Constant(0.5);

    const Vec3& velocity() const { return motion[0]; }
    Vec3 spatial() const { return position.head<3>(); }
    double time() const { return position[3]; }
};

// Position offset at time t for the configured motion model.
inline Vec3 trajectory_offset(const NeuralGaussian4D& g, double t, MotionModel model) {
    const double tau = t - g.time();
    if (model == MotionModel::kLinear) return motion_offset(t, g.time(), g.motion[0]);
    Vec3 h = Vec3::Zero();
    double p = 1.0;
    for (int d = 0; d < kPolynomialDegree; ++d) {
        p *= tau;
        h += p * g.motion[d];
    }
    return h;
}

// Time-variant opacity factor (alpha') of a 4D Gaussian at time t.
inline double temporal_factor(const NeuralGaussian4D& g, double t, const TemporalConfig& cfg) {
    return evaluate_temporal_opacity(cfg, t, g.time(), g.sigma_inv);
}

// Evaluates the 4D Gaussian at render time t: position moves along the
// trajectory, opacity is modulated by the temporal factor; rotation, scale and
// color are time-invariant.
inline Gaussian3D slice_to_3d(const NeuralGaussian4D& g, double t, const TemporalConfig& cfg = {}) {
    Gaussian3D out;
    out.center = g.spatial() + trajectory_offset(g, t, cfg.motion);
    out.opacity = g.base_opacity * temporal_factor(g, t, cfg);
    out.rotation = g.rotation;
    out.scale = g.scale;
    out.color = g.color;
    return out;
}

// Gradient of a sliced Gaussian with respect to its 4D parameters.
struct Gaussian4DGrad {
    Vec4 d_position = Vec4::Zero();
    double d_base_opacity = 0.0;
    Quat d_rotation = Quat::Zero();
    Vec3 d_scale = Vec3::Zero();
    double d_sigma_inv = 0.0;
    std::array<Vec3, kPolynomialDegree> d_motion{Vec3::Zero(), Vec3::Zero(), Vec3::Zero()};
    Vec3 d_color = Vec3::Zero();
};

// Pulls dL/dcenter and dL/dopacity of the sliced 3D Gaussian back to the
// 4D parameters. Rotation, scale and color gradients pass through unchanged.
inline void slice_to_3d_backward(const NeuralGaussian4D& g, double t, const TemporalConfig& cfg,
                                 const Vec3& d_center, double d_opacity, Gaussian4DGrad& out) {
    const double tau = t - g.time();
    out.d_position.head<3>() += d_center;
    if (cfg.motion == MotionModel::kLinear) {
        out.d_position[3] += -d_center.dot(g.motion[0]);
        out.d_motion[0] += tau * d_center;
    } else {
        double p = 1.0;  // tau^(d)
        for (int d = 0; d < kPolynomialDegree; ++d) {
            // dh/dtau = sum (d+1) a_d tau^d ; dtau/dx_t = -1
            out.d_position[3] += -(d + 1) * p * d_center.dot(g.motion[d]);
            out.d_motion[d] += (p * tau) * d_center;
            p *= tau;
        }
    }
    const double gt = temporal_factor(g, t, cfg);
    const auto dg = evaluate_temporal_opacity_grad(cfg, t, g.time(), g.sigma_inv);
    out.d_base_opacity += d_opacity * gt;
    out.d_position[3] += d_opacity * g.base_opacity * dg.d_center;
    out.d_sigma_inv += d_opacity * g.base_opacity * dg.d_sigma_inv;
}

}  // namespace a4dg
