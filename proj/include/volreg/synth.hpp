#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <optional>
#include <string>

#include "core.hpp"
#include "rng.hpp"

namespace volreg {

enum class Scenario { vanishing_tumor, shrinking_tumor, matched_tumor };

inline std::string to_string(Scenario s) {
    switch (s) {
        case Scenario::vanishing_tumor: return "vanishing";
        case Scenario::shrinking_tumor: return "shrinking";
        case Scenario::matched_tumor: return "matched";
    }
    return "vanishing";
}

inline Scenario parse_scenario(const std::string& s) {
    if (s == "vanishing") return Scenario::vanishing_tumor;
    if (s == "shrinking") return Scenario::shrinking_tumor;
    if (s == "matched") return Scenario::matched_tumor;
    throw ValidationError("scenario: expected vanishing, shrinking or matched, got '" + s + "'");
}

struct PhantomCase {
    Scenario scenario;
    ScalarVolume moving;
    ScalarVolume fixed;
    BinaryMask organ_moving;
    BinaryMask organ_fixed;
    BinaryMask tumor_moving;
    BinaryMask tumor_fixed; // where the moving tumor lands under the true map
    LandmarkSet landmarks;
    DisplacementField gt_field;
};

namespace detail {

inline double smoothstep(double t) {
    t = std::clamp(t, 0.0, 1.0);
    return t * t * (3.0 - 2.0 * t);
}

// Analytic scene shared by both frames: ellipsoidal organ with a low
// frequency texture on a dark background, plus an optional bright tumor.
struct PhantomScene {
    std::array<double, 3> center;
    std::array<double, 3> axes;
    std::array<double, 3> tumor_center;
    double tumor_radius; // moving-frame tumor
    double tex_amp;
    std::array<double, 3> tex_freq;
    std::array<double, 3> tex_phase;

    double organ_level(const std::array<double, 3>& y) const {
        double l = 0.0;
        for (int a = 0; a < 3; ++a) {
            double d = (y[a] - center[a]) / axes[a];
            l += d * d;
        }
        return l;
    }

    double texture(const std::array<double, 3>& y) const {
        double t = tex_amp;
        for (int a = 0; a < 3; ++a)
            t *= std::sin(tex_freq[a] * y[a] + tex_phase[a]);
        return t;
    }

    double value(const std::array<double, 3>& y, double tumor_r) const {
        double l = std::sqrt(organ_level(y));
        double mean_axis = (axes[0] + axes[1] + axes[2]) / 3.0;
        double edge = smoothstep((1.0 - l) * mean_axis / 1.2);
        double v = 0.1 + (0.5 + texture(y)) * edge;
        if (tumor_r > 0.0) {
            double d = 0.0;
            for (int a = 0; a < 3; ++a) {
                double dd = y[a] - tumor_center[a];
                d += dd * dd;
            }
            d = std::sqrt(d);
            double t = smoothstep((tumor_r - d) / 0.6);
            v += (0.9 - v) * t;
        }
        return v;
    }
};

// True correspondence: fixed coordinates to moving coordinates. A global
// contraction about the organ center plus a smooth sinusoidal perturbation.
struct PhantomWarp {
    std::array<double, 3> center;
    double scale;
    std::array<double, 3> amp;
    std::array<std::array<double, 3>, 3> wave;
    std::array<double, 3> phase;

    std::array<double, 3> apply(const std::array<double, 3>& x) const {
        std::array<double, 3> y;
        for (int i = 0; i < 3; ++i) {
            double arg = phase[i];
            for (int a = 0; a < 3; ++a) arg += wave[i][a] * x[a];
            y[i] = center[i] + scale * (x[i] - center[i]) + amp[i] * std::sin(arg);
        }
        return y;
    }

    // Inverse by fixed-point iteration; the perturbation is a contraction.
    std::array<double, 3> invert(const std::array<double, 3>& y) const {
        std::array<double, 3> x;
        for (int i = 0; i < 3; ++i) x[i] = center[i] + (y[i] - center[i]) / scale;
        for (int it = 0; it < 40; ++it) {
            std::array<double, 3> fx = apply(x);
            double err = 0.0;
            for (int i = 0; i < 3; ++i) {
                double d = (fx[i] - y[i]) / scale;
                x[i] -= d;
                err += d * d;
            }
            if (err < 1e-24) break;
        }
        return x;
    }
};

} // namespace detail

/// Deterministic synthetic case: a textured ellipsoidal organ whose fixed
/// frame is contracted and perturbed, carrying a small bright tumor whose
/// fate depends on the scenario. Ground truth (masks in both frames, the
/// dense map, landmark pairs) comes from the analytic construction, not
/// from any discrete resampling.
inline PhantomCase generate_phantom(Scenario scenario, const GridInfo& grid, std::uint64_t seed) {
    const auto& dims = grid.dims();
    int min_dim = std::min({dims[0], dims[1], dims[2]});
    if (min_dim < 32)
        throw ValidationError("phantom: every grid dimension must be >= 32");

    Rng rng(seed * 0x51ed2701u + static_cast<std::uint64_t>(scenario) + 1);

    detail::PhantomScene scene;
    for (int a = 0; a < 3; ++a)
        scene.center[a] = 0.5 * (dims[a] - 1) + rng.uniform(-1.5, 1.5);
    const double base_frac[3] = {0.40, 0.36, 0.38};
    for (int a = 0; a < 3; ++a)
        scene.axes[a] = base_frac[a] * dims[a] * rng.uniform(0.97, 1.03);
    scene.tex_amp = 0.14;
    for (int a = 0; a < 3; ++a) {
        scene.tex_freq[a] = 2.0 * M_PI * rng.uniform(2.5, 4.0) / dims[a];
        scene.tex_phase[a] = rng.uniform(0.0, 2.0 * M_PI);
    }

    double tumor_r = 0.132 * min_dim * rng.uniform(0.95, 1.05);
    {
        // park the tumor off-center but comfortably inside the organ
        double theta = rng.uniform(0.0, 2.0 * M_PI);
        double phi = std::acos(rng.uniform(-0.6, 0.6));
        std::array<double, 3> dir = {std::sin(phi) * std::cos(theta),
                                     std::sin(phi) * std::sin(theta),
                                     std::cos(phi)};
        double frac = 0.45;
        for (int attempt = 0; attempt < 12; ++attempt) {
            for (int a = 0; a < 3; ++a)
                scene.tumor_center[a] = scene.center[a] + frac * scene.axes[a] * dir[a];
            // worst-case level of the tumor surface along the offset direction
            double margin = 0.0;
            for (int a = 0; a < 3; ++a) {
                double d = std::abs(scene.tumor_center[a] - scene.center[a]) + tumor_r;
                double dd = d / scene.axes[a];
                margin += dd * dd;
            }
            if (margin <= 0.8 * 0.8) break;
            frac *= 0.88;
            if (attempt == 11)
                throw ValidationError("phantom: could not place tumor inside organ");
        }
    }
    scene.tumor_radius = tumor_r;

    detail::PhantomWarp warp;
    warp.center = scene.center;
    warp.scale = rng.uniform(1.10, 1.14);
    for (int i = 0; i < 3; ++i) {
        warp.amp[i] = rng.uniform(1.5, 1.72);
        warp.phase[i] = rng.uniform(0.0, 2.0 * M_PI);
        for (int a = 0; a < 3; ++a) warp.wave[i][a] = 0.0;
        int a1 = static_cast<int>(rng.next_below(3));
        int a2 = (a1 + 1 + static_cast<int>(rng.next_below(2))) % 3;
        warp.wave[i][a1] = 2.0 * M_PI * rng.uniform(0.8, 1.4) / dims[a1];
        warp.wave[i][a2] = 2.0 * M_PI * rng.uniform(0.4, 0.9) / dims[a2];
    }

    double fixed_tumor_r;
    switch (scenario) {
        case Scenario::vanishing_tumor: fixed_tumor_r = 0.0; break;
        case Scenario::shrinking_tumor: fixed_tumor_r = 0.5 * tumor_r; break;
        case Scenario::matched_tumor: fixed_tumor_r = tumor_r; break;
        default: fixed_tumor_r = 0.0; break;
    }
    double site_r = scenario == Scenario::shrinking_tumor ? 0.5 * tumor_r : tumor_r;

    const std::size_t n = grid.voxel_count();
    std::vector<double> moving(n), fixed(n), gt(3 * n);
    std::vector<std::uint8_t> om(n), of(n), tm(n), tf(n);
    std::size_t i = 0;
    for (int z = 0; z < dims[2]; ++z)
        for (int y = 0; y < dims[1]; ++y)
            for (int x = 0; x < dims[0]; ++x, ++i) {
                std::array<double, 3> p = {static_cast<double>(x), static_cast<double>(y),
                                           static_cast<double>(z)};
                moving[i] = scene.value(p, tumor_r);
                om[i] = scene.organ_level(p) <= 1.0 ? 1 : 0;
                double dt = 0.0;
                for (int a = 0; a < 3; ++a) {
                    double d = p[a] - scene.tumor_center[a];
                    dt += d * d;
                }
                tm[i] = dt <= tumor_r * tumor_r ? 1 : 0;
                std::array<double, 3> q = warp.apply(p);
                fixed[i] = scene.value(q, fixed_tumor_r);
                of[i] = scene.organ_level(q) <= 1.0 ? 1 : 0;
                double df = 0.0;
                for (int a = 0; a < 3; ++a) {
                    double d = q[a] - scene.tumor_center[a];
                    df += d * d;
                }
                tf[i] = df <= site_r * site_r ? 1 : 0;
                gt[i] = q[0] - p[0];
                gt[i + n] = q[1] - p[1];
                gt[i + 2 * n] = q[2] - p[2];
            }

    // a tumor voxel outside the organ means the placement guard failed
    for (std::size_t k = 0; k < n; ++k) {
        if (tm[k] && !om[k])
            throw ValidationError("phantom: tumor mask leaked outside the organ");
    }

    std::vector<Landmark> lms;
    auto add_pair = [&](const std::string& id, const std::array<double, 3>& pm) {
        std::array<double, 3> pf = warp.invert(pm);
        if (!grid.contains(pm[0], pm[1], pm[2]) || !grid.contains(pf[0], pf[1], pf[2]))
            throw ValidationError("phantom: landmark fell outside the grid");
        lms.push_back({id, LandmarkSpace::fixed, pf});
        lms.push_back({id, LandmarkSpace::moving, pm});
    };
    const double golden = M_PI * (3.0 - std::sqrt(5.0));
    int id_counter = 0;
    for (int k = 0; k < 20; ++k) {
        double zc = 1.0 - 2.0 * (k + 0.5) / 20.0;
        double rad = std::sqrt(std::max(0.0, 1.0 - zc * zc));
        double ang = golden * k;
        std::array<double, 3> dir = {rad * std::cos(ang), rad * std::sin(ang), zc};
        // radial stretch to the smoothed organ surface along dir
        double denom = 0.0;
        for (int a = 0; a < 3; ++a) {
            double d = dir[a] / scene.axes[a];
            denom += d * d;
        }
        double t_surface = 1.0 / std::sqrt(denom);
        double t = k < 12 ? 0.97 * t_surface : 0.5 * t_surface;
        std::array<double, 3> pm;
        for (int a = 0; a < 3; ++a) pm[a] = scene.center[a] + t * dir[a];
        char id[16];
        std::snprintf(id, sizeof(id), "lm%02d", id_counter++);
        add_pair(id, pm);
    }

    PhantomCase out{scenario,
                    ScalarVolume(grid, std::move(moving)),
                    ScalarVolume(grid, std::move(fixed)),
                    BinaryMask(grid, std::move(om)),
                    BinaryMask(grid, std::move(of)),
                    BinaryMask(grid, std::move(tm)),
                    BinaryMask(grid, std::move(tf)),
                    LandmarkSet(lms, grid),
                    DisplacementField(grid, std::move(gt))};

    double frac = static_cast<double>(out.tumor_moving.count()) /
                  static_cast<double>(out.organ_moving.count());
    if (frac < 0.005 || frac > 0.05)
        throw ValidationError("phantom: tumor fraction " + std::to_string(frac) +
                              " outside [0.005, 0.05]");
    if (out.tumor_fixed.count() == 0)
        throw ValidationError("phantom: mapped tumor site mask is empty");
    return out;
}

/// Degrades a ground-truth tumor mask to a requested overlap level by
/// adding false-positive organ voxels; every true tumor voxel is kept.
/// target_dice = 1 returns the mask unchanged.
inline BinaryMask noisy_mask(const BinaryMask& gt_tumor, const BinaryMask& organ,
                             double target_dice, std::uint64_t seed) {
    if (gt_tumor.grid() != organ.grid())
        throw ValidationError("noisy_mask: mask grids differ");
    if (!(target_dice > 0.0 && target_dice <= 1.0))
        throw ValidationError("noisy_mask: target dice must lie in (0, 1]");
    if (gt_tumor.count() == 0)
        throw ValidationError("noisy_mask: tumor mask is empty");
    const auto& tv = gt_tumor.values();
    const auto& ov = organ.values();
    for (std::size_t i = 0; i < tv.size(); ++i) {
        if (tv[i] && !ov[i])
            throw ValidationError("noisy_mask: tumor mask must lie inside the organ");
    }
    const double t_count = static_cast<double>(gt_tumor.count());
    // dice of (gt + f false positives) vs gt is 2T / (2T + f)
    auto extra = static_cast<std::size_t>(std::llround(2.0 * t_count * (1.0 - target_dice) / target_dice));
    if (extra == 0) return gt_tumor;
    std::vector<std::size_t> candidates;
    candidates.reserve(organ.count());
    for (std::size_t i = 0; i < tv.size(); ++i) {
        if (ov[i] && !tv[i]) candidates.push_back(i);
    }
    if (extra > candidates.size())
        throw ValidationError("noisy_mask: organ too small to reach the requested dice");
    Rng rng(seed ^ 0x6d2b79f5u);
    std::vector<std::uint8_t> out = tv;
    for (std::size_t k = 0; k < extra; ++k) {
        std::size_t j = k + static_cast<std::size_t>(rng.next_below(candidates.size() - k));
        std::swap(candidates[k], candidates[j]);
        out[candidates[k]] = 1;
    }
    double achieved = 2.0 * t_count / (2.0 * t_count + static_cast<double>(extra));
    if (std::abs(achieved - target_dice) > 0.05)
        throw ValidationError("noisy_mask: quantization error exceeds 0.05 for this mask size");
    return BinaryMask(gt_tumor.grid(), std::move(out));
}

} // namespace volreg
