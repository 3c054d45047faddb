#pragma once

#include <cmath>
#include <optional>

#include <json.hpp>

#include "core.hpp"
#include "field_analysis.hpp"
#include "io.hpp"
#include "warp.hpp"

namespace volreg {

/// Overlap of two masks: 2|A and B| / (|A| + |B|). Two empty masks count
/// as perfect agreement.
inline double dice(const BinaryMask& a, const BinaryMask& b) {
    if (a.grid() != b.grid())
        throw ValidationError("dice: mask grids differ");
    if (a.count() == 0 && b.count() == 0) return 1.0;
    std::size_t inter = 0;
    const auto& av = a.values();
    const auto& bv = b.values();
    for (std::size_t i = 0; i < av.size(); ++i) inter += av[i] & bv[i];
    return 2.0 * static_cast<double>(inter) / static_cast<double>(a.count() + b.count());
}

/// Tumor-to-organ size ratio by voxel count. Callers may pass a flag to
/// learn whether the tumor leaks outside the organ; that is tolerated.
inline double tsr(const BinaryMask& tumor, const BinaryMask& organ,
                  bool* subset_violated = nullptr) {
    if (tumor.grid() != organ.grid())
        throw ValidationError("tsr: mask grids differ");
    if (organ.count() == 0)
        throw ValidationError("tsr: organ mask is empty");
    if (subset_violated) {
        *subset_violated = false;
        const auto& tv = tumor.values();
        const auto& ov = organ.values();
        for (std::size_t i = 0; i < tv.size(); ++i) {
            if (tv[i] && !ov[i]) { *subset_violated = true; break; }
        }
    }
    return static_cast<double>(tumor.count()) / static_cast<double>(organ.count());
}

/// Symmetric change of the tumor-to-organ ratio across warping, squared so
/// that moderate drift is amplified. 1 means the ratio was preserved.
inline double stsr(const BinaryMask& tumor_moving, const BinaryMask& organ_moving,
                   const BinaryMask& tumor_warped, const BinaryMask& organ_warped) {
    double tm = tsr(tumor_moving, organ_moving);
    double tw = tsr(tumor_warped, organ_warped);
    if (!(tm > 0.0) || !(tw > 0.0))
        throw ValidationError("stsr: tumor mask is empty");
    double r = std::max(tm / tw, tw / tm);
    return r * r;
}

/// Mean distance in mm between warped fixed-frame landmarks and their
/// moving-frame counterparts.
inline double landmark_distance(const LandmarkSet& lms, const DisplacementField& field) {
    if (lms.size() == 0)
        throw ValidationError("landmark_distance: no landmark pairs");
    const auto& sp = field.grid().spacing();
    double sum = 0.0;
    for (const auto& p : lms.pairs()) {
        std::array<double, 3> mapped = map_point(field, p.fixed_pos);
        double d2 = 0.0;
        for (int a = 0; a < 3; ++a) {
            double d = (mapped[a] - p.moving_pos[a]) * sp[a];
            d2 += d * d;
        }
        sum += std::sqrt(d2);
    }
    return sum / static_cast<double>(lms.size());
}

struct MetricsReport {
    double dice_organ;
    std::optional<double> landmark_distance_mm; // absent without landmarks
    double folding_pct;
    double jacobian_std;
    double tsr_moving;
    double tsr_warped;
    std::optional<double> stsr; // absent when a warped mask came out empty
    bool tumor_outside_organ;   // subset warning, not part of the json body
};

/// Evaluates a finished registration: organ overlap, landmark error,
/// field regularity, and how the tumor-to-organ ratio survived the warp.
inline MetricsReport full_report(const DisplacementField& field,
                                 const BinaryMask& organ_moving, const BinaryMask& organ_fixed,
                                 const BinaryMask& tumor_moving, const LandmarkSet* landmarks) {
    if (organ_moving.grid() != field.grid() || organ_fixed.grid() != field.grid() ||
        tumor_moving.grid() != field.grid())
        throw ValidationError("full_report: mask grids differ from field");
    BinaryMask organ_warped = warp_mask(organ_moving, field);
    BinaryMask tumor_warped = warp_mask(tumor_moving, field);
    MetricsReport r{};
    r.dice_organ = dice(organ_warped, organ_fixed);
    if (landmarks) r.landmark_distance_mm = landmark_distance(*landmarks, field);
    FoldingStats fs = folding_stats(jacobian_det(field));
    r.folding_pct = fs.nonpositive_pct;
    r.jacobian_std = fs.det_std;
    bool warn = false;
    r.tsr_moving = tsr(tumor_moving, organ_moving, &warn);
    r.tumor_outside_organ = warn;
    if (organ_warped.count() == 0)
        throw NumericalError("full_report: warped organ mask is empty");
    if (tumor_warped.count() == 0) {
        r.tsr_warped = 0.0;
        r.stsr = std::nullopt;
    } else {
        bool warn_w = false;
        r.tsr_warped = tsr(tumor_warped, organ_warped, &warn_w);
        r.tumor_outside_organ = r.tumor_outside_organ || warn_w;
        if (tumor_moving.count() > 0)
            r.stsr = stsr(tumor_moving, organ_moving, tumor_warped, organ_warped);
    }
    return r;
}

inline nlohmann::json report_to_json(const MetricsReport& r, const RegistrationConfig& config) {
    nlohmann::json j;
    j["dice_organ"] = r.dice_organ;
    if (r.landmark_distance_mm) j["landmark_distance_mm"] = *r.landmark_distance_mm;
    else j["landmark_distance_mm"] = nullptr;
    j["folding_pct"] = r.folding_pct;
    j["jacobian_std"] = r.jacobian_std;
    j["tsr_moving"] = r.tsr_moving;
    j["tsr_warped"] = r.tsr_warped;
    if (r.stsr) j["stsr"] = *r.stsr;
    else j["stsr"] = nullptr;
    j["config"] = io::config_to_json(config);
    j["version"] = kVersion;
    return j;
}

inline MetricsReport report_from_json(const nlohmann::json& j) {
    MetricsReport r{};
    try {
        r.dice_organ = j.at("dice_organ").get<double>();
        if (!j.at("landmark_distance_mm").is_null())
            r.landmark_distance_mm = j.at("landmark_distance_mm").get<double>();
        r.folding_pct = j.at("folding_pct").get<double>();
        r.jacobian_std = j.at("jacobian_std").get<double>();
        r.tsr_moving = j.at("tsr_moving").get<double>();
        r.tsr_warped = j.at("tsr_warped").get<double>();
        if (!j.at("stsr").is_null()) r.stsr = j.at("stsr").get<double>();
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("report: missing or malformed field: ") + e.what());
    }
    return r;
}

} // namespace volreg
