#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace volreg {

inline constexpr const char* kVersion = "0.1.0";

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Bad inputs: shape mismatches, out-of-range values, malformed masks.
class ValidationError : public Error {
public:
    using Error::Error;
};

/// Unreadable or malformed files.
class IoError : public Error {
public:
    using Error::Error;
};

/// Non-finite values produced during optimization.
class NumericalError : public Error {
public:
    using Error::Error;
};

// Voxel grid geometry. Dimensions count voxels, spacing is mm per voxel.
// Linear index order is x-fastest: index(x,y,z) = (z*ny + y)*nx + x.
class GridInfo {
public:
    GridInfo(std::array<int, 3> dims, std::array<double, 3> spacing_mm)
        : dims_(dims), spacing_(spacing_mm) {
        for (int a = 0; a < 3; ++a) {
            if (dims_[a] < 2)
                throw ValidationError("grid dimension must be >= 2, got " +
                                      std::to_string(dims_[a]) + " on axis " + std::to_string(a));
            if (!(spacing_[a] > 0.0) || !std::isfinite(spacing_[a]))
                throw ValidationError("grid spacing must be positive and finite");
        }
    }

    const std::array<int, 3>& dims() const { return dims_; }
    const std::array<double, 3>& spacing() const { return spacing_; }
    int nx() const { return dims_[0]; }
    int ny() const { return dims_[1]; }
    int nz() const { return dims_[2]; }

    std::size_t voxel_count() const {
        return static_cast<std::size_t>(dims_[0]) * dims_[1] * dims_[2];
    }

    std::size_t index(int x, int y, int z) const {
        return (static_cast<std::size_t>(z) * dims_[1] + y) * dims_[0] + x;
    }

    bool contains(double x, double y, double z) const {
        return x >= 0.0 && x <= dims_[0] - 1 && y >= 0.0 && y <= dims_[1] - 1 &&
               z >= 0.0 && z <= dims_[2] - 1;
    }

    bool operator==(const GridInfo& o) const {
        return dims_ == o.dims_ && spacing_ == o.spacing_;
    }
    bool operator!=(const GridInfo& o) const { return !(*this == o); }

private:
    std::array<int, 3> dims_;
    std::array<double, 3> spacing_;
};

namespace detail {

inline void require_size(const GridInfo& g, std::size_t got, const char* what) {
    if (got != g.voxel_count())
        throw ValidationError(std::string(what) + ": expected " +
                              std::to_string(g.voxel_count()) + " values, got " +
                              std::to_string(got));
}

inline void require_finite(const std::vector<double>& v, const char* what) {
    for (double x : v) {
        if (!std::isfinite(x))
            throw ValidationError(std::string(what) + ": non-finite value");
    }
}

} // namespace detail

// Dense scalar image on a grid. Values are finite doubles.
class ScalarVolume {
public:
    ScalarVolume(GridInfo grid, std::vector<double> values)
        : grid_(grid), values_(std::move(values)) {
        detail::require_size(grid_, values_.size(), "scalar volume");
        detail::require_finite(values_, "scalar volume");
    }

    static ScalarVolume constant(const GridInfo& grid, double v) {
        return ScalarVolume(grid, std::vector<double>(grid.voxel_count(), v));
    }

    const GridInfo& grid() const { return grid_; }
    const std::vector<double>& values() const { return values_; }
    double at(int x, int y, int z) const { return values_[grid_.index(x, y, z)]; }

private:
    GridInfo grid_;
    std::vector<double> values_;
};

// Binary mask stored as 0/1 bytes. The set-voxel count is cached.
class BinaryMask {
public:
    BinaryMask(GridInfo grid, std::vector<std::uint8_t> values)
        : grid_(grid), values_(std::move(values)) {
        detail::require_size(grid_, values_.size(), "binary mask");
        count_ = 0;
        for (std::uint8_t v : values_) {
            if (v > 1) throw ValidationError("binary mask: value not 0 or 1");
            count_ += v;
        }
    }

    static BinaryMask empty(const GridInfo& grid) {
        return BinaryMask(grid, std::vector<std::uint8_t>(grid.voxel_count(), 0));
    }

    const GridInfo& grid() const { return grid_; }
    const std::vector<std::uint8_t>& values() const { return values_; }
    std::uint8_t at(int x, int y, int z) const { return values_[grid_.index(x, y, z)]; }
    std::size_t count() const { return count_; }

private:
    GridInfo grid_;
    std::vector<std::uint8_t> values_;
    std::size_t count_;
};

// Per-voxel weights in [0, 1].
class SoftMask {
public:
    SoftMask(GridInfo grid, std::vector<double> values)
        : grid_(grid), values_(std::move(values)) {
        detail::require_size(grid_, values_.size(), "soft mask");
        for (double v : values_) {
            if (!(v >= 0.0 && v <= 1.0))
                throw ValidationError("soft mask: value outside [0, 1]");
        }
    }

    static SoftMask zeros(const GridInfo& grid) {
        return SoftMask(grid, std::vector<double>(grid.voxel_count(), 0.0));
    }

    const GridInfo& grid() const { return grid_; }
    const std::vector<double>& values() const { return values_; }
    double at(int x, int y, int z) const { return values_[grid_.index(x, y, z)]; }

private:
    GridInfo grid_;
    std::vector<double> values_;
};

// Dense displacement field u, voxel units. phi(x) = x + u(x). Storage is
// planar: component c occupies [c*N, (c+1)*N) in x-fastest order.
class DisplacementField {
public:
    DisplacementField(GridInfo grid, std::vector<double> planar_components)
        : grid_(grid), u_(std::move(planar_components)) {
        if (u_.size() != 3 * grid_.voxel_count())
            throw ValidationError("displacement field: expected " +
                                  std::to_string(3 * grid_.voxel_count()) +
                                  " values, got " + std::to_string(u_.size()));
        detail::require_finite(u_, "displacement field");
    }

    static DisplacementField zero(const GridInfo& grid) {
        return DisplacementField(grid, std::vector<double>(3 * grid.voxel_count(), 0.0));
    }

    const GridInfo& grid() const { return grid_; }
    const std::vector<double>& data() const { return u_; }
    const double* component(int c) const { return u_.data() + static_cast<std::size_t>(c) * grid_.voxel_count(); }
    double u(int c, std::size_t idx) const { return component(c)[idx]; }
    double u(int c, int x, int y, int z) const { return component(c)[grid_.index(x, y, z)]; }

private:
    GridInfo grid_;
    std::vector<double> u_;
};

enum class LandmarkSpace { fixed, moving };

struct Landmark {
    std::string id;
    LandmarkSpace space;
    std::array<double, 3> pos; // voxel coordinates
};

// Paired anatomical points. Every id appears exactly once per space and
// both positions lie inside the grid.
class LandmarkSet {
public:
    struct Pair {
        std::string id;
        std::array<double, 3> fixed_pos;
        std::array<double, 3> moving_pos;
    };

    LandmarkSet(const std::vector<Landmark>& entries, const GridInfo& grid) {
        std::vector<const Landmark*> fixed, moving;
        for (const auto& lm : entries) {
            if (!grid.contains(lm.pos[0], lm.pos[1], lm.pos[2]))
                throw ValidationError("landmark '" + lm.id + "': position outside grid");
            auto& dst = lm.space == LandmarkSpace::fixed ? fixed : moving;
            for (const Landmark* prior : dst) {
                if (prior->id == lm.id)
                    throw ValidationError("landmark '" + lm.id + "': duplicate id in one space");
            }
            dst.push_back(&lm);
        }
        if (fixed.size() != moving.size())
            throw ValidationError("landmarks: fixed and moving counts differ");
        for (const Landmark* f : fixed) {
            const Landmark* match = nullptr;
            for (const Landmark* m : moving) {
                if (m->id == f->id) { match = m; break; }
            }
            if (!match)
                throw ValidationError("landmark '" + f->id + "': no moving counterpart");
            pairs_.push_back({f->id, f->pos, match->pos});
        }
    }

    const std::vector<Pair>& pairs() const { return pairs_; }
    std::size_t size() const { return pairs_.size(); }

private:
    std::vector<Pair> pairs_;
};

enum class MaskTransformKind { sigmoid, sine, hard };

struct MaskTransform {
    MaskTransformKind kind = MaskTransformKind::sigmoid;
    double hard_threshold = 1.5; // used only by hard

    static MaskTransform sigmoid() { return {MaskTransformKind::sigmoid, 1.5}; }
    static MaskTransform sine() { return {MaskTransformKind::sine, 1.5}; }
    static MaskTransform hard(double threshold) { return {MaskTransformKind::hard, threshold}; }
};

struct RegistrationConfig {
    double alpha_vp = 0.1;
    double alpha_reg = 0.1;
    double sim_weight = 1.0;
    int pyramid_levels = 3;
    std::vector<int> iterations_per_level = {200, 150, 100}; // coarsest first
    double step_size = 0.5;
    double moment_beta1 = 0.9;
    double moment_beta2 = 0.999;
    double moment_eps = 1e-8;
    MaskTransform transform = MaskTransform::sigmoid();
    double bilateral_sigma_space = 2.0;
    double bilateral_sigma_range = 0.1;
    std::int64_t seed = 0;

    // iterations_per_level may contain zeros; a zero-iteration level keeps
    // the field it inherited from the coarser level.
    void validate() const {
        if (!(alpha_vp >= 0.0) || !(alpha_reg >= 0.0))
            throw ValidationError("config: alpha_vp and alpha_reg must be >= 0");
        if (!(sim_weight > 0.0))
            throw ValidationError("config: sim_weight must be > 0");
        if (pyramid_levels < 1)
            throw ValidationError("config: pyramid_levels must be >= 1");
        if (static_cast<int>(iterations_per_level.size()) != pyramid_levels)
            throw ValidationError("config: iterations_per_level must list one entry per pyramid level");
        for (int it : iterations_per_level) {
            if (it < 0) throw ValidationError("config: iteration counts must be >= 0");
        }
        if (!(step_size > 0.0))
            throw ValidationError("config: step_size must be > 0");
        if (!(moment_beta1 >= 0.0 && moment_beta1 < 1.0) || !(moment_beta2 >= 0.0 && moment_beta2 < 1.0))
            throw ValidationError("config: adam betas must lie in [0, 1)");
        if (!(moment_eps > 0.0))
            throw ValidationError("config: moment_eps must be > 0");
        if (transform.kind == MaskTransformKind::hard && !(transform.hard_threshold >= 1.0))
            throw ValidationError("config: hard transform threshold must be >= 1");
        if (!(bilateral_sigma_space > 0.0) || !(bilateral_sigma_range > 0.0))
            throw ValidationError("config: bilateral sigmas must be > 0");
    }
};

inline std::string to_string(MaskTransform t) {
    switch (t.kind) {
        case MaskTransformKind::sigmoid: return "sigmoid";
        case MaskTransformKind::sine: return "sin";
        case MaskTransformKind::hard: {
            char buf[48];
            std::snprintf(buf, sizeof(buf), "hard:%g", t.hard_threshold);
            return buf;
        }
    }
    return "sigmoid";
}

inline MaskTransform parse_transform(const std::string& s) {
    if (s == "sigmoid") return MaskTransform::sigmoid();
    if (s == "sin") return MaskTransform::sine();
    if (s.rfind("hard:", 0) == 0) {
        char* end = nullptr;
        double t = std::strtod(s.c_str() + 5, &end);
        if (end == s.c_str() + 5 || *end != '\0' || !std::isfinite(t))
            throw ValidationError("mask transform: bad threshold in '" + s + "'");
        return MaskTransform::hard(t);
    }
    throw ValidationError("mask transform: expected sigmoid, sin or hard:<t>, got '" + s + "'");
}

} // namespace volreg
