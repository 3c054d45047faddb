#pragma once

#include <algorithm>
#include <cmath>

#include "core.hpp"
#include "parallel.hpp"
#include "warp.hpp"

namespace volreg {

// Determinant clamp bounds used by the volume-change field.
inline constexpr double kDetClampLo = 1e-6;
inline constexpr double kDetClampHi = 1e6;

class JacobianField {
public:
    JacobianField(GridInfo grid, std::vector<double> det)
        : grid_(grid), det_(std::move(det)) {
        detail::require_size(grid_, det_.size(), "jacobian field");
    }
    const GridInfo& grid() const { return grid_; }
    const std::vector<double>& det() const { return det_; }

private:
    GridInfo grid_;
    std::vector<double> det_;
};

struct FoldingStats {
    double nonpositive_pct; // percentage of voxels with det <= 0
    double det_std;         // population standard deviation of det
};

struct DistanceField {
    ScalarVolume d;      // per-voxel volume-change penalty, >= 1
    double organ_ratio;  // warped organ volume over moving organ volume
};

namespace detail {

// d(u_i)/d(x_j) at one voxel: central differences inside, one-sided on the
// faces. Grids smaller than 3 on any axis cannot host the stencil.
inline void jacobian_at(const double* const comp[3], const GridInfo& g,
                        std::size_t i, int x, int y, int z, double J[3][3]) {
    const int n[3] = {g.nx(), g.ny(), g.nz()};
    const std::ptrdiff_t stride[3] = {1, n[0], static_cast<std::ptrdiff_t>(n[0]) * n[1]};
    const int pos[3] = {x, y, z};
    for (int j = 0; j < 3; ++j) {
        std::ptrdiff_t s = stride[j];
        double scale;
        std::ptrdiff_t lo, hi;
        if (pos[j] == 0) { lo = 0; hi = s; scale = 1.0; }
        else if (pos[j] == n[j] - 1) { lo = -s; hi = 0; scale = 1.0; }
        else { lo = -s; hi = s; scale = 0.5; }
        J[0][j] = (comp[0][i + hi] - comp[0][i + lo]) * scale;
        J[1][j] = (comp[1][i + hi] - comp[1][i + lo]) * scale;
        J[2][j] = (comp[2][i + hi] - comp[2][i + lo]) * scale;
    }
    J[0][0] += 1.0; J[1][1] += 1.0; J[2][2] += 1.0;
}

inline double det3(const double J[3][3]) {
    return J[0][0] * (J[1][1] * J[2][2] - J[1][2] * J[2][1]) -
           J[0][1] * (J[1][0] * J[2][2] - J[1][2] * J[2][0]) +
           J[0][2] * (J[1][0] * J[2][1] - J[1][1] * J[2][0]);
}

// Writes det and, when cof != nullptr, the nine cofactors (d det / d J_rc)
// in row-major order at cof[9*i ..].
inline void jacobian_scan(const double* const comp[3], const GridInfo& g,
                          double* det_out, double* cof) {
    if (g.nx() < 3 || g.ny() < 3 || g.nz() < 3)
        throw ValidationError("jacobian: every grid dimension must be >= 3");
    par::for_blocks(g.voxel_count(), [&](std::size_t begin, std::size_t end) {
        int x, y, z;
        decompose(g, begin, x, y, z);
        for (std::size_t i = begin; i < end; ++i) {
            double J[3][3];
            jacobian_at(comp, g, i, x, y, z, J);
            det_out[i] = det3(J);
            if (cof) {
                double* c = cof + 9 * i;
                c[0] = J[1][1] * J[2][2] - J[1][2] * J[2][1];
                c[1] = -(J[1][0] * J[2][2] - J[1][2] * J[2][0]);
                c[2] = J[1][0] * J[2][1] - J[1][1] * J[2][0];
                c[3] = -(J[0][1] * J[2][2] - J[0][2] * J[2][1]);
                c[4] = J[0][0] * J[2][2] - J[0][2] * J[2][0];
                c[5] = -(J[0][0] * J[2][1] - J[0][1] * J[2][0]);
                c[6] = J[0][1] * J[1][2] - J[0][2] * J[1][1];
                c[7] = -(J[0][0] * J[1][2] - J[0][2] * J[1][0]);
                c[8] = J[0][0] * J[1][1] - J[0][1] * J[1][0];
            }
            if (++x == g.nx()) { x = 0; if (++y == g.ny()) { y = 0; ++z; } }
        }
    });
}

/// Per-voxel penalty from local volume change c = 1/det and the global
/// organ ratio R. Proportional change (c == R) gives 1; both directions
/// of disproportionate change are penalized symmetrically.
inline double volume_penalty(double det, double organ_ratio) {
    double c = 1.0 / std::clamp(det, kDetClampLo, kDetClampHi);
    double dprime = c / organ_ratio;
    return dprime >= 1.0 / dprime ? dprime : 1.0 / dprime;
}

} // namespace detail

inline JacobianField jacobian_det(const DisplacementField& field) {
    const GridInfo& g = field.grid();
    const double* comp[3] = {field.component(0), field.component(1), field.component(2)};
    std::vector<double> det(g.voxel_count());
    detail::jacobian_scan(comp, g, det.data(), nullptr);
    return JacobianField(g, std::move(det));
}

inline FoldingStats folding_stats(const JacobianField& jf) {
    const auto& det = jf.det();
    const std::size_t n = det.size();
    auto sums = par::reduce_blocks(n, 3, [&](std::size_t b, std::size_t e, double* acc) {
        for (std::size_t i = b; i < e; ++i) {
            acc[0] += det[i] <= 0.0 ? 1.0 : 0.0;
            acc[1] += det[i];
            acc[2] += det[i] * det[i];
        }
    });
    double mean = sums[1] / static_cast<double>(n);
    double var = sums[2] / static_cast<double>(n) - mean * mean;
    return {100.0 * sums[0] / static_cast<double>(n), std::sqrt(std::max(var, 0.0))};
}

/// Volume-change penalty field for a warp, relative to how the organ as a
/// whole changed. organ_moving must be non-empty.
inline DistanceField distance_field(const DisplacementField& field, const BinaryMask& organ_moving) {
    if (field.grid() != organ_moving.grid())
        throw ValidationError("distance_field: field and organ grids differ");
    if (organ_moving.count() == 0)
        throw ValidationError("distance_field: organ mask is empty");
    ScalarVolume warped_organ = warp_real(organ_moving, field);
    const auto& w = warped_organ.values();
    auto sums = par::reduce_blocks(w.size(), 1, [&](std::size_t b, std::size_t e, double* acc) {
        for (std::size_t i = b; i < e; ++i) acc[0] += w[i];
    });
    double ratio = sums[0] / static_cast<double>(organ_moving.count());
    if (!(ratio > 0.0))
        throw NumericalError("distance_field: warped organ has vanished");
    JacobianField jf = jacobian_det(field);
    std::vector<double> d(w.size());
    const auto& det = jf.det();
    par::for_blocks(d.size(), [&](std::size_t b, std::size_t e) {
        for (std::size_t i = b; i < e; ++i) d[i] = detail::volume_penalty(det[i], ratio);
    });
    return {ScalarVolume(field.grid(), std::move(d)), ratio};
}

} // namespace volreg
