// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Core>
#include <Eigen/Eigenvalues>

#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "a4dg/error.hpp"

namespace a4dg {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Vec4 = Eigen::Vector4d;
using Mat2 = Eigen::Matrix2d;
using Mat3 = Eigen::Matrix3d;
using Mat23 = Eigen::Matrix<double, 2, 3>;

// Quaternions are stored as (w, x, y, z) and normalized on use.
using Quat = Eigen::Vector4d;

// Pinhole camera without distortion. `rotation` and `translation` map world
// points into camera space (x right, y down, z forward).
struct Camera {
    double fx = 1.0;
    double fy = 1.0;
    double cx = 0.0;
    double cy = 0.0;
    Mat3 rotation = Mat3::Identity();
    Vec3 translation = Vec3::Zero();
    int width = 1;
    int height = 1;
    double near_plane = 0.01;
    double far_plane = 100.0;

    Vec3 to_camera(const Vec3& world) const { return rotation * world + translation; }
    Vec3 center() const { return -rotation.transpose() * translation; }

    void validate() const {
        if ((rotation * rotation.transpose() - Mat3::Identity()).cwiseAbs().maxCoeff() > 1e-9)
            throw InvalidParameter("camera rotation is not orthonormal");
        if (!(near_plane > 0.0 && near_plane < far_plane))
            throw InvalidParameter("camera requires 0 < near < far");
        if (width < 1 || height < 1) throw InvalidParameter("camera image size must be >= 1");
        if (!std::isfinite(fx) || !std::isfinite(fy) || !std::isfinite(cx) || !std::isfinite(cy) ||
            !translation.allFinite())
            throw InvalidParameter("camera has non-finite intrinsics or translation");
    }
};

// Builds a camera at `eye` looking at `target`. `up` is the approximate world
// up direction; camera y points opposite to it.
inline Camera look_at_camera(const Vec3& eye, const Vec3& target, const Vec3& up, double focal,
                             int width, int height) {
    Vec3 forward = (target - eye).normalized();
    Vec3 right = forward.cross(up).normalized();
    Vec3 down = forward.cross(right);
    Camera cam;
    cam.rotation.row(0) = right.transpose();
    cam.rotation.row(1) = down.transpose();
    cam.rotation.row(2) = forward.transpose();
    cam.translation = -cam.rotation * eye;
    cam.fx = cam.fy = focal;
    cam.cx = width / 2.0;
    cam.cy = height / 2.0;
    cam.width = width;
    cam.height = height;
    return cam;
}

// A time-sliced Gaussian ready for projection. Opacity is signed: negative
// values are legal and removed by the opacity threshold.
struct Gaussian3D {
    Vec3 center = Vec3::Zero();
    Quat rotation{1.0, 0.0, 0.0, 0.0};
    Vec3 scale = Vec3::Ones();
    double opacity = 0.0;
    Vec3 color = Vec3::Zero();
};

inline Mat3 rotation_from_quat(const Quat& q_raw) {
    const double n = q_raw.norm();
    const Quat q = q_raw / n;
    const double w = q[0], x = q[1], y = q[2], z = q[3];
    Mat3 r;
    r << 1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
         2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
         2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y);
    return r;
}

// Pulls dL/dR back to the raw (unnormalized) quaternion.
inline Quat rotation_from_quat_backward(const Quat& q_raw, const Mat3& grad_r) {
    const double n = q_raw.norm();
    const Quat q = q_raw / n;
    const double w = q[0], x = q[1], y = q[2], z = q[3];
    const Mat3& g = grad_r;
    Quat gq;
    gq[0] = 2 * (-z * g(0, 1) + y * g(0, 2) + z * g(1, 0) - x * g(1, 2) - y * g(2, 0) + x * g(2, 1));
    gq[1] = 2 * (y * g(0, 1) + z * g(0, 2) + y * g(1, 0) - 2 * x * g(1, 1) - w * g(1, 2) +
                 z * g(2, 0) + w * g(2, 1) - 2 * x * g(2, 2));
    gq[2] = 2 * (-2 * y * g(0, 0) + x * g(0, 1) + w * g(0, 2) + x * g(1, 0) + z * g(1, 2) -
                 w * g(2, 0) + z * g(2, 1) - 2 * y * g(2, 2));
    gq[3] = 2 * (-2 * z * g(0, 0) - w * g(0, 1) + x * g(0, 2) + w * g(1, 0) - 2 * z * g(1, 1) +
                 y * g(1, 2) + x * g(2, 0) + y * g(2, 1));
    // Project out the radial component introduced by normalization.
    return (gq - q * q.dot(gq)) / n;
}

// Sigma = R(q) diag(s^2) R(q)^T, mirrored so the result is exactly symmetric.
inline Mat3 covariance_from_qs(const Quat& q, const Vec3& s) {
    if (!q.allFinite() || !s.allFinite()) throw InvalidParameter("non-finite quaternion or scale");
    if (q.norm() <= 0.0) throw InvalidParameter("zero quaternion");
    if ((s.array() <= 0.0).any()) throw InvalidParameter("scale must be strictly positive");
    const Mat3 m = rotation_from_quat(q) * s.asDiagonal();
    Mat3 cov = m * m.transpose();
    cov(1, 0) = cov(0, 1);
    cov(2, 0) = cov(0, 2);
    cov(2, 1) = cov(1, 2);
    return cov;
}

struct CovarianceGrad {
    Quat d_rotation = Quat::Zero();
    Vec3 d_scale = Vec3::Zero();
};

inline CovarianceGrad covariance_from_qs_backward(const Quat& q, const Vec3& s, const Mat3& grad_cov) {
    const Mat3 r = rotation_from_quat(q);
    const Mat3 m = r * s.asDiagonal();
    const Mat3 grad_m = (grad_cov + grad_cov.transpose()) * m;
    CovarianceGrad out;
    for (int i = 0; i < 3; ++i) out.d_scale[i] = grad_m.col(i).dot(r.col(i));
    out.d_rotation = rotation_from_quat_backward(q, grad_m * s.asDiagonal());
    return out;
}

struct ProjectionConfig {
    double lowpass = 0.3;          // px^2 added to the projected covariance
    double cutoff_sigma = 3.0;     // footprint radius multiplier
};

struct Projection {
    Vec2 mean = Vec2::Zero();
    Mat2 cov = Mat2::Identity();
    double depth = 0.0;
    Vec3 cam_point = Vec3::Zero();
};

// Local affine approximation of the pinhole projection at camera point `t`.
inline Mat23 projection_jacobian(const Camera& cam, const Vec3& t) {
    const double iz = 1.0 / t.z();
    Mat23 j;
    j << cam.fx * iz, 0.0, -cam.fx * t.x() * iz * iz,
         0.0, cam.fy * iz, -cam.fy * t.y() * iz * iz;
    return j;
}

// EWA projection of a 3D Gaussian. Returns nullopt when the center is outside
// the (near, far) depth range.
inline std::optional<Projection> project_gaussian(const Vec3& center, const Mat3& cov3d,
                                                  const Camera& cam,
                                                  const ProjectionConfig& cfg = {}) {
    const Vec3 t = cam.to_camera(center);
    if (!(t.z() > cam.near_plane && t.z() < cam.far_plane)) return std::nullopt;
    Projection p;
    p.cam_point = t;
    p.depth = t.z();
    p.mean = Vec2(cam.fx * t.x() / t.z() + cam.cx, cam.fy * t.y() / t.z() + cam.cy);
    const Mat23 jw = projection_jacobian(cam, t) * cam.rotation;
    Mat2 c = jw * cov3d * jw.transpose();
    c(1, 0) = c(0, 1);
    c(0, 0) += cfg.lowpass;
    c(1, 1) += cfg.lowpass;
    p.cov = c;
    return p;
}

inline std::optional<Projection> project_gaussian(const Gaussian3D& g, const Camera& cam,
                                                  const ProjectionConfig& cfg = {}) {
    return project_gaussian(g.center, covariance_from_qs(g.rotation, g.scale), cam, cfg);
}

struct ProjectionGrad {
    Vec3 d_center = Vec3::Zero();
    Mat3 d_cov3d = Mat3::Zero();
};

// Reverse of project_gaussian given dL/dmean and dL/dcov (full-matrix convention).
inline ProjectionGrad project_gaussian_backward(const Vec3& center, const Mat3& cov3d,
                                                const Camera& cam, const Vec2& grad_mean,
                                                const Mat2& grad_cov) {
    const Vec3 t = cam.to_camera(center);
    const double iz = 1.0 / t.z();
    const Mat23 j = projection_jacobian(cam, t);
    const Mat23 jw = j * cam.rotation;

    ProjectionGrad out;
    out.d_cov3d = jw.transpose() * grad_cov * jw;

    // dL/dJW, then dL/dJ.
    const Mat23 grad_jw = grad_cov * jw * cov3d.transpose() + grad_cov.transpose() * jw * cov3d;
    const Mat23 grad_j = grad_jw * cam.rotation.transpose();

    Vec3 grad_t = Vec3::Zero();
    // mean = (fx x/z + cx, fy y/z + cy)
    grad_t.x() += grad_mean.x() * cam.fx * iz;
    grad_t.y() += grad_mean.y() * cam.fy * iz;
    grad_t.z() += -grad_mean.x() * cam.fx * t.x() * iz * iz - grad_mean.y() * cam.fy * t.y() * iz * iz;
    // J entries: (0,0)=fx/z, (0,2)=-fx x/z^2, (1,1)=fy/z, (1,2)=-fy y/z^2
    const double iz2 = iz * iz, iz3 = iz2 * iz;
    grad_t.x() += grad_j(0, 2) * (-cam.fx * iz2);
    grad_t.y() += grad_j(1, 2) * (-cam.fy * iz2);
    grad_t.z() += grad_j(0, 0) * (-cam.fx * iz2) + grad_j(1, 1) * (-cam.fy * iz2) +
                  grad_j(0, 2) * (2.0 * cam.fx * t.x() * iz3) +
                  grad_j(1, 2) * (2.0 * cam.fy * t.y() * iz3);
    out.d_center = cam.rotation.transpose() * grad_t;
    return out;
}

// Footprint radius in pixels: cutoff multiplier times the largest standard
// deviation of the projected covariance.
inline double footprint_radius(const Mat2& cov, double cutoff_sigma) {
    const double mid = 0.5 * (cov(0, 0) + cov(1, 1));
    const double det = cov(0, 0) * cov(1, 1) - cov(0, 1) * cov(1, 0);
    const double lambda_max = mid + std::sqrt(std::max(0.1, mid * mid - det));
    return cutoff_sigma * std::sqrt(lambda_max);
}

// Keeps Gaussians in the depth range whose footprint disk touches the image
// and whose opacity exceeds `opacity_threshold`.
inline std::vector<std::size_t> frustum_cull(std::span<const Gaussian3D> gaussians, const Camera& cam,
                                             double opacity_threshold,
                                             const ProjectionConfig& cfg = {}) {
    std::vector<std::size_t> kept;
    for (std::size_t i = 0; i < gaussians.size(); ++i) {
        const Gaussian3D& g = gaussians[i];
        if (!(g.opacity > opacity_threshold)) continue;
        const auto p = project_gaussian(g, cam, cfg);
        if (!p) continue;
        const double r = footprint_radius(p->cov, cfg.cutoff_sigma);
        if (p->mean.x() + r < 0.0 || p->mean.x() - r > cam.width || p->mean.y() + r < 0.0 ||
            p->mean.y() - r > cam.height)
            continue;
        kept.push_back(i);
    }
    return kept;
}

}  // namespace a4dg
