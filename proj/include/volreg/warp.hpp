#pragma once

#include <algorithm>
#include <array>
#include <cmath>

#include "core.hpp"
#include "parallel.hpp"

namespace volreg {

namespace detail {

// Trilinear interpolation cell for one sample position. Out-of-range
// positions clamp to the grid; a clamped axis contributes zero gradient.
struct TriCell {
    std::size_t base;
    std::size_t dx, dy, dz;
    double fx, fy, fz;
    double gx_scale, gy_scale, gz_scale; // 0 when the axis clamped

    static TriCell make(const GridInfo& g, double px, double py, double pz) {
        TriCell c;
        const auto& n = g.dims();
        double p[3] = {px, py, pz};
        int i0[3];
        double f[3], gs[3];
        for (int a = 0; a < 3; ++a) {
            double hi = static_cast<double>(n[a] - 1);
            double pc = p[a];
            double scale = 1.0;
            if (pc < 0.0) { pc = 0.0; scale = 0.0; }
            else if (pc > hi) { pc = hi; scale = 0.0; }
            int i = static_cast<int>(pc);
            if (i > n[a] - 2) i = n[a] - 2;
            i0[a] = i;
            f[a] = pc - i;
            gs[a] = scale;
        }
        c.base = g.index(i0[0], i0[1], i0[2]);
        c.dx = 1;
        c.dy = static_cast<std::size_t>(n[0]);
        c.dz = static_cast<std::size_t>(n[0]) * n[1];
        c.fx = f[0]; c.fy = f[1]; c.fz = f[2];
        c.gx_scale = gs[0]; c.gy_scale = gs[1]; c.gz_scale = gs[2];
        return c;
    }

    double sample(const double* v) const {
        const double* p0 = v + base;
        double c00 = p0[0] + (p0[dx] - p0[0]) * fx;
        double c10 = p0[dy] + (p0[dy + dx] - p0[dy]) * fx;
        double c01 = p0[dz] + (p0[dz + dx] - p0[dz]) * fx;
        double c11 = p0[dz + dy] + (p0[dz + dy + dx] - p0[dz + dy]) * fx;
        double c0 = c00 + (c10 - c00) * fy;
        double c1 = c01 + (c11 - c01) * fy;
        return c0 + (c1 - c0) * fz;
    }

    void sample_grad(const double* v, double& value, double grad[3]) const {
        const double* p0 = v + base;
        double v000 = p0[0], v100 = p0[dx];
        double v010 = p0[dy], v110 = p0[dy + dx];
        double v001 = p0[dz], v101 = p0[dz + dx];
        double v011 = p0[dz + dy], v111 = p0[dz + dy + dx];
        double c00 = v000 + (v100 - v000) * fx;
        double c10 = v010 + (v110 - v010) * fx;
        double c01 = v001 + (v101 - v001) * fx;
        double c11 = v011 + (v111 - v011) * fx;
        double c0 = c00 + (c10 - c00) * fy;
        double c1 = c01 + (c11 - c01) * fy;
        value = c0 + (c1 - c0) * fz;
        double ex0 = (v100 - v000) + ((v110 - v010) - (v100 - v000)) * fy;
        double ex1 = (v101 - v001) + ((v111 - v011) - (v101 - v001)) * fy;
        grad[0] = (ex0 + (ex1 - ex0) * fz) * gx_scale;
        double ey0 = (c10 - c00), ey1 = (c11 - c01);
        grad[1] = (ey0 + (ey1 - ey0) * fz) * gy_scale;
        grad[2] = (c1 - c0) * gz_scale;
    }
};

inline void decompose(const GridInfo& g, std::size_t idx, int& x, int& y, int& z) {
    const auto& n = g.dims();
    x = static_cast<int>(idx % n[0]);
    std::size_t rest = idx / n[0];
    y = static_cast<int>(rest % n[1]);
    z = static_cast<int>(rest / n[1]);
}

} // namespace detail

/// Backward warp of a scalar image: out(x) = moving(x + u(x)).
inline ScalarVolume warp_scalar(const ScalarVolume& moving, const DisplacementField& field) {
    if (moving.grid() != field.grid())
        throw ValidationError("warp: image and field grids differ");
    const GridInfo& g = moving.grid();
    const double* src = moving.values().data();
    const double* ux = field.component(0);
    const double* uy = field.component(1);
    const double* uz = field.component(2);
    std::vector<double> out(g.voxel_count());
    par::for_blocks(g.voxel_count(), [&](std::size_t begin, std::size_t end) {
        int x, y, z;
        detail::decompose(g, begin, x, y, z);
        for (std::size_t i = begin; i < end; ++i) {
            auto cell = detail::TriCell::make(g, x + ux[i], y + uy[i], z + uz[i]);
            out[i] = cell.sample(src);
            if (++x == g.nx()) { x = 0; if (++y == g.ny()) { y = 0; ++z; } }
        }
    });
    return ScalarVolume(g, std::move(out));
}

/// Backward warp of a mask without thresholding: interpolated occupancy
/// in [0, 1]. The volume-ratio computation uses this directly.
inline ScalarVolume warp_real(const BinaryMask& mask, const DisplacementField& field) {
    if (mask.grid() != field.grid())
        throw ValidationError("warp: mask and field grids differ");
    const GridInfo& g = mask.grid();
    std::vector<double> src(g.voxel_count());
    for (std::size_t i = 0; i < src.size(); ++i) src[i] = mask.values()[i];
    const double* ux = field.component(0);
    const double* uy = field.component(1);
    const double* uz = field.component(2);
    std::vector<double> out(g.voxel_count());
    par::for_blocks(g.voxel_count(), [&](std::size_t begin, std::size_t end) {
        int x, y, z;
        detail::decompose(g, begin, x, y, z);
        for (std::size_t i = begin; i < end; ++i) {
            auto cell = detail::TriCell::make(g, x + ux[i], y + uy[i], z + uz[i]);
            out[i] = cell.sample(src.data());
            if (++x == g.nx()) { x = 0; if (++y == g.ny()) { y = 0; ++z; } }
        }
    });
    return ScalarVolume(g, std::move(out));
}

/// Mask transport: interpolate then threshold (>= threshold maps to 1).
inline BinaryMask warp_mask(const BinaryMask& mask, const DisplacementField& field,
                            double threshold = 0.5) {
    if (!(threshold > 0.0 && threshold <= 1.0))
        throw ValidationError("warp_mask: threshold must lie in (0, 1]");
    ScalarVolume occupancy = warp_real(mask, field);
    std::vector<std::uint8_t> out(occupancy.values().size());
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = occupancy.values()[i] >= threshold ? 1 : 0;
    return BinaryMask(mask.grid(), std::move(out));
}

/// Maps a point through the warp: p + u(p), u interpolated at p.
inline std::array<double, 3> map_point(const DisplacementField& field,
                                       const std::array<double, 3>& p) {
    const GridInfo& g = field.grid();
    if (!g.contains(p[0], p[1], p[2]))
        throw ValidationError("map_point: position outside grid");
    auto cell = detail::TriCell::make(g, p[0], p[1], p[2]);
    return {p[0] + cell.sample(field.component(0)),
            p[1] + cell.sample(field.component(1)),
            p[2] + cell.sample(field.component(2))};
}

} // namespace volreg
