// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <cstring>
#include <string>
#include <vector>

#include "a4dg/error.hpp"
#include "a4dg/image_io.hpp"
#include "a4dg/scene.hpp"

namespace a4dg {

// Checkpoint layout, all little-endian:
//
//   "A4DG"  u32 version  u32 C  u32 K  f64 beta  f64 spatial_voxel
//   f64 temporal_voxel  u64 anchor_count
//   per anchor:  f32 position[4]  f32 feature[C]  f32 offsets[K][4]
//   per head (opacity, shape, color, velocity):
//       u32 layer_count, then per layer u32 rows, u32 cols,
//       f32 weight[rows * cols] (row-major), f32 bias[rows]
//   u32 temporal_flags   (bit 0: unnormalized-Gaussian temporal opacity)
//
// The motion degree is implied by the velocity head's output size. Quaternions
// are stored as produced by the shape head in (w, x, y, z) order.
inline constexpr char kCheckpointMagic[4] = {'A', '4', 'D', 'G'};
inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr std::size_t kCheckpointHeaderBytes = 4 + 4 + 4 + 4 + 8 + 8 + 8 + 8;
inline constexpr std::size_t kCheckpointTrailerBytes = 4;

inline float to_f32(double v) { return static_cast<float>(v); }

// Rounds every stored parameter to float, so the in-memory scene renders
// exactly like one reloaded from disk.
inline void quantize_to_f32(Scene& scene) {
    auto round = [](double& v) { v = static_cast<double>(static_cast<float>(v)); };
    for (double& v : scene.anchors.features()) round(v);
    for (double& v : scene.anchors.offsets()) round(v);
    for (auto block : scene.mlps.blocks())
        for (double& v : block) round(v);
    for (std::size_t i = 0; i < scene.anchors.size(); ++i) {
        Vec4 p = scene.anchors.position(i);
        for (int j = 0; j < 4; ++j) round(p[j]);
        scene.anchors.set_position(i, p);
    }
    scene.anchors.touch();
    scene.mlps.touch();
}

inline std::vector<unsigned char> serialize_checkpoint(const Scene& scene) {
    using detail::put_le;
    std::vector<unsigned char> out(kCheckpointMagic, kCheckpointMagic + 4);
    const AnchorSet& a = scene.anchors;
    put_le<std::uint32_t>(out, kCheckpointVersion);
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(a.feature_dim()));
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(a.k()));
    put_le<double>(out, scene.temporal.beta());
    put_le<double>(out, scene.grid.spatial_size());
    put_le<double>(out, scene.grid.temporal_size());
    put_le<std::uint64_t>(out, a.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        for (int j = 0; j < 4; ++j) put_le<float>(out, to_f32(a.position(i)[j]));
        for (double v : a.feature(i)) put_le<float>(out, to_f32(v));
        for (int s = 0; s < a.k(); ++s)
            for (int j = 0; j < 4; ++j) put_le<float>(out, to_f32(a.offset(i, s)[j]));
    }
    for (const TwoLayerMLP* h : scene.mlps.heads()) {
        put_le<std::uint32_t>(out, 2);
        for (const Dense* layer : {&h->hidden, &h->output}) {
            put_le<std::uint32_t>(out, static_cast<std::uint32_t>(layer->rows));
            put_le<std::uint32_t>(out, static_cast<std::uint32_t>(layer->cols));
            for (double v : layer->weight) put_le<float>(out, to_f32(v));
            for (double v : layer->bias) put_le<float>(out, to_f32(v));
        }
    }
    const std::uint32_t flags = scene.temporal.opacity == OpacityModel::kGaussian4DGS ? 1u : 0u;
    put_le<std::uint32_t>(out, flags);
    return out;
}

namespace detail {

// Bounds-checked little-endian reader over a byte buffer.
class ByteReader {
public:
    explicit ByteReader(const std::vector<unsigned char>& b) : bytes_(b) {}

    template <typename T>
    T get(const char* what) {
        if (pos_ + sizeof(T) > bytes_.size())
            throw ParseError(std::string("checkpoint truncated while reading ") + what + " (need " +
                                 std::to_string(pos_ + sizeof(T)) + " bytes, have " + std::to_string(bytes_.size()) +
                                 ")",
                             pos_);
        const T v = get_le<T>(bytes_.data() + pos_);
        pos_ += sizeof(T);
        return v;
    }

    std::size_t pos() const { return pos_; }
    std::size_t remaining() const { return bytes_.size() - pos_; }

private:
    const std::vector<unsigned char>& bytes_;
    std::size_t pos_ = 0;
};

}  // namespace detail

inline Scene deserialize_checkpoint(const std::vector<unsigned char>& bytes) {
    if (bytes.size() < 4 || std::memcmp(bytes.data(), kCheckpointMagic, 4) != 0)
        throw ParseError("bad checkpoint magic (expected \"A4DG\")", 0);
    detail::ByteReader r(bytes);
    r.get<std::uint32_t>("magic");
    const auto version = r.get<std::uint32_t>("version");
    if (version != kCheckpointVersion)
        throw ParseError("unsupported checkpoint version " + std::to_string(version) + " (this build reads " +
                             std::to_string(kCheckpointVersion) + ")",
                         4);
    const auto c = r.get<std::uint32_t>("feature dimension");
    const auto k = r.get<std::uint32_t>("K");
    const double beta = r.get<double>("beta");
    const double spatial = r.get<double>("spatial voxel");
    const double temporal = r.get<double>("temporal voxel");
    const auto n = r.get<std::uint64_t>("anchor count");
    if (c == 0 || k == 0 || !(beta > 0.0) || !(spatial > 0.0) || !(temporal > 0.0))
        throw ParseError("checkpoint header holds invalid values", 8);
    const std::size_t per_anchor = 4 * (4 + static_cast<std::size_t>(c) + 4 * static_cast<std::size_t>(k));
    if (n > r.remaining() / per_anchor)
        throw ParseError("checkpoint truncated: header declares " + std::to_string(n) + " anchors", r.pos());

    Scene scene;
    scene.temporal.set_beta(beta);
    scene.grid = VoxelGrid4D(spatial, temporal);
    scene.anchors = AnchorSet(static_cast<int>(c), static_cast<int>(k));
    std::vector<double> feature(c);
    std::vector<Vec4> offsets(k);
    for (std::uint64_t i = 0; i < n; ++i) {
        Vec4 p;
        for (int j = 0; j < 4; ++j) p[j] = r.get<float>("anchor position");
        for (double& v : feature) v = r.get<float>("anchor feature");
        for (Vec4& o : offsets)
            for (int j = 0; j < 4; ++j) o[j] = r.get<float>("anchor offset");
        scene.anchors.append(p, feature, offsets);
    }

    std::vector<TwoLayerMLP> heads;
    for (int h = 0; h < 4; ++h) {
        const std::size_t at = r.pos();
        if (r.get<std::uint32_t>("layer count") != 2) throw ParseError("each head must have 2 layers", at);
        TwoLayerMLP mlp;
        for (Dense* layer : {&mlp.hidden, &mlp.output}) {
            const auto rows = r.get<std::uint32_t>("layer rows");
            const auto cols = r.get<std::uint32_t>("layer cols");
            if (static_cast<std::uint64_t>(rows) * cols > r.remaining() / 4)
                throw ParseError("checkpoint truncated inside a layer", r.pos());
            *layer = Dense(static_cast<int>(rows), static_cast<int>(cols));
            for (double& v : layer->weight) v = r.get<float>("weight");
            for (double& v : layer->bias) v = r.get<float>("bias");
        }
        if (mlp.output.cols != mlp.hidden.rows) throw ParseError("head layer shapes do not chain", at);
        heads.push_back(std::move(mlp));
    }
    const auto flags = r.get<std::uint32_t>("temporal flags");
    if (r.remaining() != 0) throw ParseError("trailing bytes after checkpoint", r.pos());

    const int velocity_out = heads[3].output.rows;
    if (velocity_out % (3 * static_cast<int>(k)) != 0)
        throw ParseError("velocity head size is not a multiple of 3K", 0);
    const int degree = velocity_out / (3 * static_cast<int>(k));
    if (degree != 1 && degree != kPolynomialDegree) throw ParseError("unsupported motion degree", 0);
    MLPStack mlps(static_cast<int>(c), static_cast<int>(k), degree, heads[0].width());
    mlps.opacity = std::move(heads[0]);
    mlps.shape = std::move(heads[1]);
    mlps.color = std::move(heads[2]);
    mlps.velocity = std::move(heads[3]);
    if (mlps.opacity.input_dim() != static_cast<int>(c) || mlps.opacity.output_dim() != static_cast<int>(k) ||
        mlps.shape.output_dim() != static_cast<int>(k) * kShapeStride ||
        mlps.color.input_dim() != static_cast<int>(c) + 3 || mlps.color.output_dim() != 3 * static_cast<int>(k))
        throw ParseError("head shapes do not match C and K", 0);
    scene.mlps = std::move(mlps);
    scene.temporal.motion = degree == 1 ? MotionModel::kLinear : MotionModel::kPolynomial;
    scene.temporal.opacity = (flags & 1u) ? OpacityModel::kGaussian4DGS : OpacityModel::kGeneralized;
    scene.grid.rebuild(scene.anchors);
    return scene;
}

inline void save_checkpoint(const Scene& scene, const std::string& path) {
    detail::write_bytes(path, serialize_checkpoint(scene));
}

inline Scene load_checkpoint(const std::string& path) { return deserialize_checkpoint(detail::read_bytes(path)); }

struct StorageReport {
    std::uint64_t bytes_total = 0;
    std::uint64_t bytes_header = 0;  // fixed header plus trailer
    std::uint64_t bytes_anchors = 0;
    std::uint64_t bytes_mlps = 0;
    std::uint64_t n_anchors = 0;
    std::uint64_t n_gaussians = 0;
};

// Byte attribution by section, derived from the field layout.
inline StorageReport compute_storage_report(const Scene& scene) {
    StorageReport r;
    const std::uint64_t c = scene.feature_dim(), k = scene.k();
    r.n_anchors = scene.anchors.size();
    r.n_gaussians = r.n_anchors * k;
    r.bytes_header = kCheckpointHeaderBytes + kCheckpointTrailerBytes;
    r.bytes_anchors = r.n_anchors * (16 + 4 * c + 16 * k);
    for (const TwoLayerMLP* h : scene.mlps.heads()) {
        r.bytes_mlps += 4;
        for (const Dense* layer : {&h->hidden, &h->output})
            r.bytes_mlps += 8 + 4 * static_cast<std::uint64_t>(layer->weight.size() + layer->bias.size());
    }
    r.bytes_total = r.bytes_header + r.bytes_anchors + r.bytes_mlps;
    return r;
}

}  // namespace a4dg
