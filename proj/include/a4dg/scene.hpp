// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "a4dg/anchor_grid.hpp"
#include "a4dg/spawn.hpp"
#include "a4dg/temporal.hpp"

namespace a4dg {

// Everything needed to render: anchors, their grid, the shared heads and the
// temporal model they were trained with.
struct Scene {
    AnchorSet anchors;
    VoxelGrid4D grid;
    MLPStack mlps;
    TemporalConfig temporal;

    int k() const { return mlps.k; }
    int feature_dim() const { return mlps.feature_dim; }
    std::size_t gaussian_count() const { return anchors.size() * static_cast<std::size_t>(mlps.k); }
};

// Gradient buffers shaped like a scene's learnable parameters.
struct SceneGrad {
    MLPStack mlps;
    AnchorGrad anchors;

    static SceneGrad zeros_like(const Scene& s) {
        SceneGrad g;
        g.mlps = s.mlps;
        g.mlps.zero();
        g.anchors.resize(s.anchors);
        return g;
    }
};

}  // namespace a4dg
