#pragma once

#include <algorithm>
#include <cmath>

#include "core.hpp"
#include "field_analysis.hpp"
#include "image_ops.hpp"
#include "registration.hpp"
#include "warp.hpp"

namespace volreg {

/// Maps the volume-change penalty (>= 1) to a soft mask value. The sigmoid
/// pivots at 1.5 with slope 5, so a voxel whose volume changed 1.5x against
/// the organ trend scores 0.5 and stronger changes saturate toward 1.
inline double transform_sigmoid(double d) {
    return 1.0 / (1.0 + std::exp(-5.0 * (d - 1.5)));
}

/// Sine ramp between penalty 1 and 2, flat outside that band. Agrees with
/// the sigmoid at the 1.5 pivot.
inline double transform_sine(double d) {
    double c = std::clamp(d, 1.0, 2.0);
    return 0.5 * std::sin(M_PI * (c - 1.5)) + 0.5;
}

/// Indicator of penalty >= threshold.
inline double transform_hard(double d, double threshold) {
    return d >= threshold ? 1.0 : 0.0;
}

inline double apply_transform(double d, const MaskTransform& t) {
    switch (t.kind) {
        case MaskTransformKind::sigmoid: return transform_sigmoid(d);
        case MaskTransformKind::sine: return transform_sine(d);
        case MaskTransformKind::hard: return transform_hard(d, t.hard_threshold);
    }
    return transform_sigmoid(d);
}

inline SoftMask apply_transform(const ScalarVolume& d, const MaskTransform& t) {
    std::vector<double> out(d.values().size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = apply_transform(d.values()[i], t);
    return SoftMask(d.grid(), std::move(out));
}

struct MaskEstimate {
    SoftMask stm;                    // soft tumor mask on the fixed grid
    DisplacementField prereg_field;  // edge-aligning first pass (zero if skipped)
    DisplacementField residual_field;
    ScalarVolume penalty;            // volume-change penalty the mask was cut from
    BinaryMask organ_in_fixed;       // organ transported by the pre-registration
    double organ_ratio;
};

/// Unsupervised soft tumor mask. First pass: register a bilateral-filtered
/// copy of the moving image so edges line up without committing to texture
/// detail. Second pass: register the pre-aligned raw image; its residual
/// deformation concentrates the volume change that the organ-wide trend
/// cannot explain. The penalty of that residual, pushed through the mask
/// transform and clipped to the transported organ, is the mask.
inline MaskEstimate estimate_soft_mask(const ScalarVolume& moving, const ScalarVolume& fixed,
                                       const BinaryMask& organ_moving,
                                       const RegistrationConfig& config,
                                       bool skip_prereg = false) {
    config.validate();
    if (moving.grid() != fixed.grid())
        throw ValidationError("estimate_soft_mask: moving and fixed grids differ");
    if (organ_moving.grid() != moving.grid())
        throw ValidationError("estimate_soft_mask: organ grid differs");
    if (organ_moving.count() == 0)
        throw ValidationError("estimate_soft_mask: organ mask is empty");

    DisplacementField prereg = DisplacementField::zero(moving.grid());
    ScalarVolume prealigned = moving;
    BinaryMask organ_aligned = organ_moving;
    if (!skip_prereg) {
        // The pre-registration runs at organ scale: extra coarse pyramid
        // levels with all iterations at the top, so it can align boundaries
        // but has no degrees of freedom at tumor scale. A full-resolution
        // first pass would absorb the tumor shrinkage itself and leave the
        // residual pass nothing to flag.
        RegistrationConfig coarse = config;
        const auto& d = moving.grid().dims();
        int min_dim = std::min({d[0], d[1], d[2]});
        int levels = 1;
        while (min_dim / 2 >= 8 && levels < 6) { min_dim /= 2; ++levels; }
        coarse.pyramid_levels = levels;
        coarse.iterations_per_level.assign(levels, 0);
        int budget = 0;
        for (int it : config.iterations_per_level) budget += it;
        coarse.iterations_per_level[0] = budget;
        ScalarVolume smoothed =
            bilateral_filter(moving, config.bilateral_sigma_space, config.bilateral_sigma_range);
        prereg = register_volumes(smoothed, fixed, nullptr, nullptr, coarse).field;
        prealigned = warp_scalar(moving, prereg);
        organ_aligned = warp_mask(organ_moving, prereg);
        if (organ_aligned.count() == 0)
            throw NumericalError("estimate_soft_mask: organ mask vanished under the pre-registration");
    }

    DisplacementField residual =
        register_volumes(prealigned, fixed, nullptr, nullptr, config).field;
    DistanceField df = distance_field(residual, organ_aligned);

    std::vector<double> stm(df.d.values().size());
    for (std::size_t i = 0; i < stm.size(); ++i) {
        stm[i] = organ_aligned.values()[i]
                     ? apply_transform(df.d.values()[i], config.transform)
                     : 0.0;
    }
    return {SoftMask(moving.grid(), std::move(stm)), std::move(prereg), std::move(residual),
            std::move(df.d), std::move(organ_aligned), df.organ_ratio};
}

/// Transports an organ mask from an annotated reference image onto a new
/// image via similarity-only registration of the reference to that image.
inline BinaryMask propagate_organ_mask(const ScalarVolume& reference,
                                       const BinaryMask& reference_organ,
                                       const ScalarVolume& target,
                                       const RegistrationConfig& config) {
    config.validate();
    if (reference.grid() != target.grid() || reference_organ.grid() != reference.grid())
        throw ValidationError("propagate_organ_mask: grids differ");
    if (reference_organ.count() == 0)
        throw ValidationError("propagate_organ_mask: reference organ mask is empty");
    RegistrationResult reg = register_volumes(reference, target, nullptr, nullptr, config);
    return warp_mask(reference_organ, reg.field);
}

} // namespace volreg
