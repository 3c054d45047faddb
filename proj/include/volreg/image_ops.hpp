#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "core.hpp"
#include "parallel.hpp"
#include "warp.hpp"

namespace volreg {

/// Edge-preserving smoothing. sigma_range is a fraction of the image
/// intensity range, so the filter behaves the same across intensity scales.
inline ScalarVolume bilateral_filter(const ScalarVolume& img, double sigma_space,
                                     double sigma_range) {
    if (!(sigma_space > 0.0) || !(sigma_range > 0.0))
        throw ValidationError("bilateral_filter: sigmas must be > 0");
    const GridInfo& g = img.grid();
    const auto& v = img.values();
    double lo = v[0], hi = v[0];
    for (double x : v) { lo = std::min(lo, x); hi = std::max(hi, x); }
    if (hi == lo) return img; // constant image is a fixed point
    const double sr = sigma_range * (hi - lo);
    const double inv2sr2 = 1.0 / (2.0 * sr * sr);
    const int radius = static_cast<int>(std::ceil(2.0 * sigma_space));
    const double inv2ss2 = 1.0 / (2.0 * sigma_space * sigma_space);

    const int w = 2 * radius + 1;
    std::vector<double> spatial(static_cast<std::size_t>(w) * w * w);
    for (int dz = -radius; dz <= radius; ++dz)
        for (int dy = -radius; dy <= radius; ++dy)
            for (int dx = -radius; dx <= radius; ++dx) {
                std::size_t k = (static_cast<std::size_t>(dz + radius) * w + (dy + radius)) * w + (dx + radius);
                spatial[k] = std::exp(-(dx * dx + dy * dy + dz * dz) * inv2ss2);
            }

    std::vector<double> out(g.voxel_count());
    par::for_blocks(g.voxel_count(), [&](std::size_t begin, std::size_t end) {
        int x, y, z;
        detail::decompose(g, begin, x, y, z);
        for (std::size_t i = begin; i < end; ++i) {
            const double center = v[i];
            double num = 0.0, den = 0.0;
            const int z0 = std::max(z - radius, 0), z1 = std::min(z + radius, g.nz() - 1);
            const int y0 = std::max(y - radius, 0), y1 = std::min(y + radius, g.ny() - 1);
            const int x0 = std::max(x - radius, 0), x1 = std::min(x + radius, g.nx() - 1);
            for (int zz = z0; zz <= z1; ++zz)
                for (int yy = y0; yy <= y1; ++yy) {
                    const double* row = v.data() + g.index(0, yy, zz);
                    const double* srow = spatial.data() +
                        (static_cast<std::size_t>(zz - z + radius) * w + (yy - y + radius)) * w + radius - x;
                    for (int xx = x0; xx <= x1; ++xx) {
                        double dv = row[xx] - center;
                        double wgt = srow[xx] * std::exp(-dv * dv * inv2sr2);
                        num += wgt * row[xx];
                        den += wgt;
                    }
                }
            out[i] = num / den;
            if (++x == g.nx()) { x = 0; if (++y == g.ny()) { y = 0; ++z; } }
        }
    });
    return ScalarVolume(g, std::move(out));
}

namespace detail {

inline GridInfo half_grid(const GridInfo& g) {
    auto d = g.dims();
    auto s = g.spacing();
    for (int a = 0; a < 3; ++a) {
        d[a] = (d[a] + 1) / 2;
        s[a] *= 2.0;
    }
    return GridInfo(d, s);
}

// Mean over the up-to-2x2x2 block of source voxels behind each output voxel.
template <typename Src>
std::vector<double> block_mean(const GridInfo& src_grid, const Src& src, const GridInfo& dst_grid) {
    std::vector<double> out(dst_grid.voxel_count());
    par::for_blocks(dst_grid.voxel_count(), [&](std::size_t begin, std::size_t end) {
        int X, Y, Z;
        decompose(dst_grid, begin, X, Y, Z);
        for (std::size_t i = begin; i < end; ++i) {
            double sum = 0.0;
            int cnt = 0;
            for (int dz = 0; dz < 2; ++dz) {
                int z = 2 * Z + dz;
                if (z >= src_grid.nz()) break;
                for (int dy = 0; dy < 2; ++dy) {
                    int y = 2 * Y + dy;
                    if (y >= src_grid.ny()) break;
                    for (int dx = 0; dx < 2; ++dx) {
                        int x = 2 * X + dx;
                        if (x >= src_grid.nx()) break;
                        sum += src[src_grid.index(x, y, z)];
                        ++cnt;
                    }
                }
            }
            out[i] = sum / cnt;
            if (++X == dst_grid.nx()) { X = 0; if (++Y == dst_grid.ny()) { Y = 0; ++Z; } }
        }
    });
    return out;
}

} // namespace detail

/// Halves each dimension (rounding up) by block averaging; spacing doubles.
inline ScalarVolume downsample(const ScalarVolume& img) {
    GridInfo out = detail::half_grid(img.grid());
    return ScalarVolume(out, detail::block_mean(img.grid(), img.values(), out));
}

inline SoftMask downsample(const SoftMask& m) {
    GridInfo out = detail::half_grid(m.grid());
    return SoftMask(out, detail::block_mean(m.grid(), m.values(), out));
}

/// Majority vote per block; exact ties map to 1.
inline BinaryMask downsample(const BinaryMask& m) {
    GridInfo out = detail::half_grid(m.grid());
    std::vector<double> means = detail::block_mean(m.grid(), m.values(), out);
    std::vector<std::uint8_t> bits(means.size());
    for (std::size_t i = 0; i < means.size(); ++i) bits[i] = means[i] >= 0.5 ? 1 : 0;
    return BinaryMask(out, std::move(bits));
}

/// Resamples a coarse field onto a finer grid. Sample positions align voxel
/// centers of the two grids; displacement components are rescaled by the
/// dimension ratio so they stay in units of target-grid voxels.
inline DisplacementField upsample_field(const DisplacementField& coarse, const GridInfo& target) {
    const GridInfo& cg = coarse.grid();
    std::vector<double> out(3 * target.voxel_count());
    const std::size_t n = target.voxel_count();
    double ratio[3], off[3];
    for (int a = 0; a < 3; ++a) {
        ratio[a] = static_cast<double>(target.dims()[a]) / cg.dims()[a];
        off[a] = 1.0 / ratio[a];
    }
    for (int c = 0; c < 3; ++c) {
        const double* src = coarse.component(c);
        double* dst = out.data() + static_cast<std::size_t>(c) * n;
        const double scale = ratio[c];
        par::for_blocks(n, [&](std::size_t begin, std::size_t end) {
            int x, y, z;
            detail::decompose(target, begin, x, y, z);
            for (std::size_t i = begin; i < end; ++i) {
                double px = (x + 0.5) * off[0] - 0.5;
                double py = (y + 0.5) * off[1] - 0.5;
                double pz = (z + 0.5) * off[2] - 0.5;
                auto cell = detail::TriCell::make(cg, px, py, pz);
                dst[i] = cell.sample(src) * scale;
                if (++x == target.nx()) { x = 0; if (++y == target.ny()) { y = 0; ++z; } }
            }
        });
    }
    return DisplacementField(target, std::move(out));
}

} // namespace volreg
