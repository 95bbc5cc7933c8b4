// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <iterator>
#include <limits>
#include <ostream>
#include <random>
#include <span>
#include <unordered_map>
#include <utility>
#include <vector>

#include "a4dg/error.hpp"
#include "a4dg/geometry.hpp"

namespace a4dg {

// Anchors stored as parallel flat arrays so the optimizer can treat features
// and offsets as contiguous parameter blocks.
class AnchorSet {
public:
    AnchorSet() = default;
    AnchorSet(int feature_dim, int k) : feature_dim_(feature_dim), k_(k) {}

    int feature_dim() const { return feature_dim_; }
    int k() const { return k_; }
    std::size_t size() const { return positions_.size(); }
    bool empty() const { return positions_.empty(); }

    const Vec4& position(std::size_t i) const { return positions_[i]; }
    void set_position(std::size_t i, const Vec4& p) {
        positions_[i] = p;
        touch();
    }

    std::span<const double> feature(std::size_t i) const {
        return {features_.data() + i * feature_dim_, static_cast<std::size_t>(feature_dim_)};
    }
    std::span<double> feature(std::size_t i) {
        return {features_.data() + i * feature_dim_, static_cast<std::size_t>(feature_dim_)};
    }

    Vec4 offset(std::size_t i, int slot) const {
        return Eigen::Map<const Vec4>(offsets_.data() + (i * k_ + slot) * 4);
    }
    Eigen::Map<Vec4> offset(std::size_t i, int slot) {
        return Eigen::Map<Vec4>(offsets_.data() + (i * k_ + slot) * 4);
    }

    // Canonical 4D position of Gaussian `slot` of anchor `i`: p + dx_k.
    Vec4 gaussian_position(std::size_t i, int slot) const { return positions_[i] + offset(i, slot); }

    std::vector<double>& features() { return features_; }
    const std::vector<double>& features() const { return features_; }
    std::vector<double>& offsets() { return offsets_; }
    const std::vector<double>& offsets() const { return offsets_; }

    void append(const Vec4& position, std::span<const double> feature, std::span<const Vec4> offsets) {
        if (static_cast<int>(feature.size()) != feature_dim_ || static_cast<int>(offsets.size()) != k_)
            throw InvalidParameter("anchor append: feature or offset count mismatch");
        positions_.push_back(position);
        features_.insert(features_.end(), feature.begin(), feature.end());
        for (const Vec4& o : offsets) offsets_.insert(offsets_.end(), o.data(), o.data() + 4);
        touch();
    }

    // Compacts the set to the anchors with keep[i] == true.
    void retain(const std::vector<bool>& keep) {
        std::size_t out = 0;
        for (std::size_t i = 0; i < size(); ++i) {
            if (!keep[i]) continue;
            if (out != i) {
                positions_[out] = positions_[i];
                std::copy_n(features_.begin() + i * feature_dim_, feature_dim_,
                            features_.begin() + out * feature_dim_);
                std::copy_n(offsets_.begin() + i * k_ * 4, k_ * 4, offsets_.begin() + out * k_ * 4);
            }
            ++out;
        }
        positions_.resize(out);
        features_.resize(out * feature_dim_);
        offsets_.resize(out * k_ * 4);
        touch();
    }

    // Bumped whenever features or offsets may have changed.
    std::uint64_t version() const { return version_; }
    void touch() { ++version_; }

private:
    int feature_dim_ = 32;
    int k_ = 10;
    std::vector<Vec4> positions_;
    std::vector<double> features_;
    std::vector<double> offsets_;
    std::uint64_t version_ = 0;
};

using CellKey = std::array<std::int64_t, 4>;

struct CellKeyHash {
    std::size_t operator()(const CellKey& k) const noexcept {
        std::uint64_t h = 1469598103934665603ull;
        for (std::int64_t v : k) {
            h ^= static_cast<std::uint64_t>(v) + 0x9e3779b97f4a7c15ull + (h << 6) + (h >> 2);
        }
        return static_cast<std::size_t>(h);
    }
};

// Sparse occupancy over a regular 4D grid. Cell c covers
// [c * size, (c + 1) * size) on each axis; its center is (c + 0.5) * size.
class VoxelGrid4D {
public:
    VoxelGrid4D() = default;
    VoxelGrid4D(double spatial, double temporal) : spatial_(spatial), temporal_(temporal) {
        if (!(spatial > 0.0) || !(temporal > 0.0)) throw InvalidParameter("voxel sizes must be > 0");
    }

    double spatial_size() const { return spatial_; }
    double temporal_size() const { return temporal_; }

    CellKey cell_of(const Vec4& p) const {
        return {static_cast<std::int64_t>(std::floor(p[0] / spatial_)),
                static_cast<std::int64_t>(std::floor(p[1] / spatial_)),
                static_cast<std::int64_t>(std::floor(p[2] / spatial_)),
                static_cast<std::int64_t>(std::floor(p[3] / temporal_))};
    }

    Vec4 center_of(const CellKey& c) const {
        return {(c[0] + 0.5) * spatial_, (c[1] + 0.5) * spatial_, (c[2] + 0.5) * spatial_,
                (c[3] + 0.5) * temporal_};
    }

    Vec4 snap(const Vec4& p) const { return center_of(cell_of(p)); }

    bool occupied(const CellKey& c) const { return cells_.count(c) != 0; }
    std::size_t occupied_count() const { return cells_.size(); }

    // Returns false if the cell is already taken.
    bool insert(const CellKey& c, std::size_t anchor_id) { return cells_.emplace(c, anchor_id).second; }

    void rebuild(const AnchorSet& anchors) {
        cells_.clear();
        for (std::size_t i = 0; i < anchors.size(); ++i) {
            if (!insert(cell_of(anchors.position(i)), i))
                throw InvalidParameter("two anchors share a 4D cell");
        }
    }

    const std::unordered_map<CellKey, std::size_t, CellKeyHash>& cells() const { return cells_; }

private:
    double spatial_ = 0.001;
    double temporal_ = 1.0;
    std::unordered_map<CellKey, std::size_t, CellKeyHash> cells_;
};

// Uniform offsets in +-0.25 cell on every axis.
template <typename Rng>
std::vector<Vec4> random_offsets(int k, const VoxelGrid4D& grid, Rng& rng) {
    std::uniform_real_distribution<double> u(-0.25, 0.25);
    std::vector<Vec4> out(k);
    for (Vec4& o : out) {
        o[0] = u(rng) * grid.spatial_size();
        o[1] = u(rng) * grid.spatial_size();
        o[2] = u(rng) * grid.spatial_size();
        o[3] = u(rng) * grid.temporal_size();
    }
    return out;
}

struct AnchorInit {
    int feature_dim = 32;
    int k = 10;
    double spatial_voxel = 0.001;
    double temporal_voxel = 1.0 / 299.0;
    std::size_t max_points = 100000;
};

struct InitializedAnchors {
    AnchorSet anchors;
    VoxelGrid4D grid;
    std::size_t points_used = 0;
};

// Random subset of at most `max_points` points, order preserved.
template <typename Rng>
std::vector<Vec3> downsample_points(std::span<const Vec3> points, std::size_t max_points, Rng& rng) {
    std::vector<Vec3> out;
    if (points.size() <= max_points) return {points.begin(), points.end()};
    out.reserve(max_points);
    std::sample(points.begin(), points.end(), std::back_inserter(out), max_points, rng);
    return out;
}

// One anchor per occupied spatial voxel, placed at the voxel center and at the
// temporal cell containing t0. Features start at zero.
template <typename Rng>
InitializedAnchors init_anchors(std::span<const Vec3> points, double t0, const AnchorInit& cfg, Rng& rng) {
    if (points.empty()) throw InvalidParameter("init_anchors: empty point set");
    InitializedAnchors out{AnchorSet(cfg.feature_dim, cfg.k), VoxelGrid4D(cfg.spatial_voxel, cfg.temporal_voxel), 0};
    const std::vector<Vec3> kept = downsample_points(points, cfg.max_points, rng);
    out.points_used = kept.size();
    const std::vector<double> zero_feature(cfg.feature_dim, 0.0);
    for (const Vec3& p : kept) {
        if (!p.allFinite()) continue;
        const CellKey cell = out.grid.cell_of(Vec4(p.x(), p.y(), p.z(), t0));
        if (out.grid.occupied(cell)) continue;
        out.grid.insert(cell, out.anchors.size());
        out.anchors.append(out.grid.center_of(cell), zero_feature, random_offsets(cfg.k, out.grid, rng));
    }
    return out;
}

inline double growing_weight(double alpha_prime, double sigma, double gamma) {
    return alpha_prime * std::pow(1.0 / sigma, gamma);
}

enum class GrowingStatistic { kWeighted, kNaive };

// Per-Gaussian densification statistics keyed by (anchor id, slot).
class GradientLedger {
public:
    GradientLedger() = default;
    GradientLedger(std::size_t anchors, int k) { resize(anchors, k); }

    void resize(std::size_t anchors, int k) {
        k_ = k;
        const std::size_t n = anchors * static_cast<std::size_t>(k);
        weighted_num_.assign(n, 0.0);
        weighted_den_.assign(n, 0.0);
        naive_sum_.assign(n, 0.0);
        naive_count_.assign(n, 0);
        sigma_.assign(n, 0.0);
    }

    void reset() { resize(anchor_count(), k_); }

    std::size_t anchor_count() const { return k_ == 0 ? 0 : naive_count_.size() / k_; }
    int k() const { return k_; }
    std::size_t entries() const { return naive_count_.size(); }

    std::size_t index(std::size_t anchor, int slot) const {
        const std::size_t i = anchor * k_ + slot;
        if (slot < 0 || slot >= k_ || i >= naive_count_.size())
            throw InvalidParameter("ledger: unknown gaussian id (" + std::to_string(anchor) + ", " +
                                   std::to_string(slot) + ")");
        return i;
    }

    // Weighted statistic for a Gaussian whose temporal factor is active.
    void accumulate_weighted(std::size_t anchor, int slot, double grad2d_norm, double alpha_prime,
                             double sigma, double gamma) {
        const std::size_t i = index(anchor, slot);
        const double w = growing_weight(alpha_prime, sigma, gamma);
        weighted_num_[i] += w * grad2d_norm;
        weighted_den_[i] += w;
        sigma_[i] = sigma;
    }

    // Naive statistic: one sample per iteration in which the Gaussian was rasterized.
    void accumulate_naive(std::size_t anchor, int slot, double grad2d_norm) {
        const std::size_t i = index(anchor, slot);
        naive_sum_[i] += grad2d_norm;
        naive_count_[i] += 1;
    }

    void accumulate(std::size_t anchor, int slot, double grad2d_norm, double alpha_prime, double sigma,
                    double gamma) {
        accumulate_weighted(anchor, slot, grad2d_norm, alpha_prime, sigma, gamma);
        accumulate_naive(anchor, slot, grad2d_norm);
    }

    double weighted_mean(std::size_t anchor, int slot) const {
        const std::size_t i = index(anchor, slot);
        return weighted_den_[i] > 0.0 ? weighted_num_[i] / weighted_den_[i] : 0.0;
    }
    double naive_mean(std::size_t anchor, int slot) const {
        const std::size_t i = index(anchor, slot);
        return naive_count_[i] > 0 ? naive_sum_[i] / static_cast<double>(naive_count_[i]) : 0.0;
    }
    double statistic(std::size_t anchor, int slot, GrowingStatistic s) const {
        return s == GrowingStatistic::kWeighted ? weighted_mean(anchor, slot) : naive_mean(anchor, slot);
    }
    double weighted_denominator(std::size_t anchor, int slot) const { return weighted_den_[index(anchor, slot)]; }
    std::uint64_t naive_count(std::size_t anchor, int slot) const { return naive_count_[index(anchor, slot)]; }
    double last_sigma(std::size_t anchor, int slot) const { return sigma_[index(anchor, slot)]; }

    // CSV columns: anchor_id, slot, grad_weighted, grad_naive, sigma
    void write_csv(std::ostream& os) const {
        os << "anchor_id,slot,grad_weighted,grad_naive,sigma\n";
        for (std::size_t a = 0; a < anchor_count(); ++a)
            for (int s = 0; s < k_; ++s)
                os << a << ',' << s << ',' << weighted_mean(a, s) << ',' << naive_mean(a, s) << ','
                   << last_sigma(a, s) << '\n';
    }

private:
    int k_ = 0;
    std::vector<double> weighted_num_;
    std::vector<double> weighted_den_;
    std::vector<double> naive_sum_;
    std::vector<std::uint64_t> naive_count_;
    std::vector<double> sigma_;
};

enum class NewAnchorFeature { kZero, kInherit };

// Adds one fresh anchor per unoccupied 4D cell that contains the canonical
// position of a Gaussian whose statistic exceeds `threshold`. New anchors get
// a zero feature, or with kInherit the feature of the anchor whose Gaussian
// claimed the cell first. The ledger is reset afterwards. Returns the number
// of anchors added.
template <typename Rng>
std::size_t grow_anchors(GradientLedger& ledger, AnchorSet& anchors, VoxelGrid4D& grid, double threshold,
                         GrowingStatistic statistic, Rng& rng,
                         NewAnchorFeature feature_init = NewAnchorFeature::kZero) {
    const std::vector<double> zero_feature(anchors.feature_dim(), 0.0);
    const std::size_t existing = std::min(anchors.size(), ledger.anchor_count());
    std::vector<std::pair<CellKey, std::size_t>> fresh;  // cell, source anchor
    for (std::size_t a = 0; a < existing; ++a) {
        for (int s = 0; s < anchors.k(); ++s) {
            if (!(ledger.statistic(a, s, statistic) > threshold)) continue;
            const CellKey cell = grid.cell_of(anchors.gaussian_position(a, s));
            if (grid.occupied(cell)) continue;
            grid.insert(cell, anchors.size() + fresh.size());
            fresh.emplace_back(cell, a);
        }
    }
    std::vector<double> feature;
    for (const auto& [cell, source] : fresh) {
        if (feature_init == NewAnchorFeature::kInherit) {
            const auto f = anchors.feature(source);
            feature.assign(f.begin(), f.end());
        } else {
            feature = zero_feature;
        }
        anchors.append(grid.center_of(cell), feature, random_offsets(anchors.k(), grid, rng));
    }
    ledger.resize(anchors.size(), anchors.k());
    return fresh.size();
}

// Keep mask for anchors that have at least one Gaussian with non-negative base
// opacity. `base_opacity` is laid out as [anchor * k + slot].
inline std::vector<bool> valid_anchor_mask(std::span<const double> base_opacity, int k) {
    const std::size_t n = k == 0 ? 0 : base_opacity.size() / k;
    std::vector<bool> keep(n, false);
    for (std::size_t a = 0; a < n; ++a) {
        double best = -std::numeric_limits<double>::infinity();
        for (int s = 0; s < k; ++s) best = std::max(best, base_opacity[a * k + s]);
        keep[a] = !(best < 0.0);
    }
    return keep;
}

// Removes anchors whose Gaussians all have negative base opacity and rebuilds
// the grid. Returns the number removed.
inline std::size_t prune_invalid_anchors(AnchorSet& anchors, VoxelGrid4D& grid,
                                         std::span<const double> base_opacity) {
    if (base_opacity.size() != anchors.size() * anchors.k())
        throw InvalidParameter("prune: base opacity count does not match anchors");
    const std::vector<bool> keep = valid_anchor_mask(base_opacity, anchors.k());
    const std::size_t removed = static_cast<std::size_t>(std::count(keep.begin(), keep.end(), false));
    if (removed != 0) anchors.retain(keep);
    grid.rebuild(anchors);
    return removed;
}

}  // namespace a4dg
