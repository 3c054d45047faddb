#pragma once

#include <cmath>
#include <cstdio>
#include <optional>
#include <vector>

#include "core.hpp"
#include "image_ops.hpp"
#include "objective.hpp"
#include "parallel.hpp"

namespace volreg {

struct RegistrationResult {
    DisplacementField field;
    std::vector<LossBreakdown> trace; // one entry per evaluated iterate, coarsest level first
    bool converged;                   // finest level reached its plateau before the budget
};

namespace detail {

struct PyramidLevel {
    ScalarVolume moving;
    ScalarVolume fixed;
    std::optional<SoftMask> stm;
    std::optional<BinaryMask> organ;
};

inline constexpr double kConvergenceTol = 1e-5;
inline constexpr int kConvergenceWindow = 10;

} // namespace detail

/// Deformable registration of moving onto fixed. The soft mask, when given,
/// down-weights similarity inside it and (with alpha_vp > 0) activates the
/// volume penalty, which needs the moving organ mask. The field is optimized
/// coarse to fine; each level keeps its best-seen iterate, so the result
/// never scores worse than that level's starting point.
inline RegistrationResult register_volumes(const ScalarVolume& moving, const ScalarVolume& fixed,
                                           const BinaryMask* organ_moving, const SoftMask* stm,
                                           const RegistrationConfig& config) {
    config.validate();
    if (moving.grid() != fixed.grid())
        throw ValidationError("register: moving and fixed grids differ");
    const bool use_vp = stm != nullptr && config.alpha_vp > 0.0;
    if (use_vp && organ_moving == nullptr)
        throw ValidationError("register: volume penalty needs an organ mask");

    const int levels = config.pyramid_levels;
    const int min_dim = use_vp ? 3 : 2;
    std::vector<detail::PyramidLevel> chain; // finest first
    chain.push_back({moving, fixed,
                     stm ? std::optional<SoftMask>(*stm) : std::nullopt,
                     use_vp ? std::optional<BinaryMask>(*organ_moving) : std::nullopt});
    for (int l = 1; l < levels; ++l) {
        const detail::PyramidLevel& prev = chain.back();
        for (int a = 0; a < 3; ++a) {
            int next = (prev.moving.grid().dims()[a] + 1) / 2;
            if (next < min_dim)
                throw ValidationError("register: pyramid_levels too deep for a grid of this size");
        }
        detail::PyramidLevel next{downsample(prev.moving), downsample(prev.fixed),
                                  prev.stm ? std::optional<SoftMask>(downsample(*prev.stm)) : std::nullopt,
                                  prev.organ ? std::optional<BinaryMask>(downsample(*prev.organ)) : std::nullopt};
        chain.push_back(std::move(next));
    }
    if (use_vp) {
        for (int a = 0; a < 3; ++a) {
            if (moving.grid().dims()[a] < 3)
                throw ValidationError("register: volume penalty needs every dimension >= 3");
        }
    }

    LossWeights weights{config.sim_weight, use_vp ? config.alpha_vp : 0.0, config.alpha_reg};
    std::vector<LossBreakdown> trace;
    bool converged = false;
    std::optional<DisplacementField> field;

    for (int k = 0; k < levels; ++k) {
        const detail::PyramidLevel& lv = chain[static_cast<std::size_t>(levels - 1 - k)];
        const GridInfo& g = lv.moving.grid();
        const std::size_t n3 = 3 * g.voxel_count();
        DisplacementField init = field ? upsample_field(*field, g) : DisplacementField::zero(g);
        std::vector<double> u = init.data();

        detail::Evaluator ev(detail::Problem(lv.moving, lv.fixed,
                                             lv.stm ? &*lv.stm : nullptr,
                                             lv.organ ? &*lv.organ : nullptr));
        const int iters = config.iterations_per_level[k];
        const double step = config.step_size / static_cast<double>(1 << k);
        const bool finest = k == levels - 1;
        const std::size_t level_start = trace.size();

        std::vector<double> grad(n3), m(n3, 0.0), v(n3, 0.0);
        std::vector<double> best_u = u;
        double best_total = 0.0;
        bool have_best = false;
        double b1t = 1.0, b2t = 1.0;

        auto record = [&](const LossBreakdown& lb, int it) {
            if (!std::isfinite(lb.total)) {
                char buf[256];
                std::snprintf(buf, sizeof(buf),
                              "optimization diverged at level %d iteration %d "
                              "(similarity=%g, vp=%g, smoothness=%g)",
                              k, it, lb.similarity, lb.vp, lb.smoothness);
                throw NumericalError(buf);
            }
            trace.push_back(lb);
            if (!have_best || lb.total < best_total) {
                best_total = lb.total;
                best_u = u;
                have_best = true;
            }
        };

        for (int it = 0; it < iters; ++it) {
            LossBreakdown lb = ev.evaluate(u.data(), weights, grad.data());
            record(lb, it);
            if (finest && static_cast<int>(trace.size() - level_start) > detail::kConvergenceWindow) {
                const LossBreakdown& prev = trace[trace.size() - 1 - detail::kConvergenceWindow];
                double scale = std::max(std::abs(prev.total), 1e-12);
                if (std::abs(prev.total - lb.total) / scale < detail::kConvergenceTol) {
                    converged = true;
                    break;
                }
            }
            b1t *= config.moment_beta1;
            b2t *= config.moment_beta2;
            const double c1 = 1.0 - b1t, c2 = 1.0 - b2t;
            const double b1 = config.moment_beta1, b2 = config.moment_beta2, eps = config.moment_eps;
            par::for_blocks(n3, [&](std::size_t b, std::size_t e) {
                for (std::size_t i = b; i < e; ++i) {
                    double gi = grad[i];
                    m[i] = b1 * m[i] + (1.0 - b1) * gi;
                    v[i] = b2 * v[i] + (1.0 - b2) * gi * gi;
                    u[i] -= step * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps);
                }
            });
        }
        if (iters == 0) {
            LossBreakdown lb = ev.evaluate(u.data(), weights, nullptr);
            record(lb, 0);
        }
        field = DisplacementField(g, std::move(best_u));
    }
    return {std::move(*field), std::move(trace), converged};
}

/// Volume-preserving registration: both the soft mask and the organ mask
/// are required, and the penalty weight must be active.
inline RegistrationResult register_stage2(const ScalarVolume& moving, const ScalarVolume& fixed,
                                          const BinaryMask& organ_moving, const SoftMask& stm,
                                          const RegistrationConfig& config) {
    if (!(config.alpha_vp > 0.0))
        throw ValidationError("register_stage2: alpha_vp must be > 0");
    return register_volumes(moving, fixed, &organ_moving, &stm, config);
}

} // namespace volreg
