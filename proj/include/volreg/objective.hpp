#pragma once

#include <cmath>
#include <cstring>
#include <vector>

#include "core.hpp"
#include "field_analysis.hpp"
#include "parallel.hpp"
#include "warp.hpp"

namespace volreg {

struct LossBreakdown {
    double similarity; // correlation-like measure in [-1, 1], higher is better
    double vp;         // mean volume-change penalty weighted by the soft mask
    double smoothness; // mean squared forward difference of the field
    double total;      // sim_weight*(1 - similarity) + alpha_vp*vp + alpha_reg*smoothness
};

struct LossWeights {
    double sim_weight = 1.0;
    double alpha_vp = 0.0;
    double alpha_reg = 0.0;
};

namespace detail {

// Variance below this is treated as a constant image.
inline constexpr double kVarFloor = 1e-18;

struct CorrStats {
    double weight_sum;    // W
    double mean_f_w;      // weighted mean of the fixed image
    double var_f;         // unweighted population variance of the fixed image
};

inline CorrStats fixed_stats(const std::vector<double>& fixed, const std::vector<double>& weight) {
    const std::size_t n = fixed.size();
    auto s = par::reduce_blocks(n, 3, [&](std::size_t b, std::size_t e, double* acc) {
        for (std::size_t i = b; i < e; ++i) {
            acc[0] += weight[i];
            acc[1] += weight[i] * fixed[i];
            acc[2] += fixed[i];
        }
    });
    if (!(s[0] > 0.0))
        throw ValidationError("similarity: all weights are zero");
    CorrStats st;
    st.weight_sum = s[0];
    st.mean_f_w = s[1] / s[0];
    double mean_f = s[2] / static_cast<double>(n);
    auto c = par::reduce_blocks(n, 1, [&](std::size_t b, std::size_t e, double* acc) {
        for (std::size_t i = b; i < e; ++i) {
            double d = fixed[i] - mean_f;
            acc[0] += d * d;
        }
    });
    st.var_f = c[0] / static_cast<double>(n);
    if (st.var_f <= kVarFloor)
        throw ValidationError("similarity: fixed image is constant");
    return st;
}

// Weighted correlation of warped-vs-fixed values. The numerator uses the
// given weights (down-weighting masked regions); the denominator keeps the
// unweighted variances so that muting a region cannot be gamed by inflating
// contrast elsewhere.
inline double correlation(const std::vector<double>& warped, const std::vector<double>& fixed,
                          const std::vector<double>& weight, const CorrStats& st) {
    const std::size_t n = fixed.size();
    auto s = par::reduce_blocks(n, 2, [&](std::size_t b, std::size_t e, double* acc) {
        for (std::size_t i = b; i < e; ++i) {
            acc[0] += weight[i] * warped[i];
            acc[1] += warped[i];
        }
    });
    double mean_w_w = s[0] / st.weight_sum;
    double mean_w = s[1] / static_cast<double>(n);
    auto c = par::reduce_blocks(n, 2, [&](std::size_t b, std::size_t e, double* acc) {
        for (std::size_t i = b; i < e; ++i) {
            acc[0] += weight[i] * (warped[i] - mean_w_w) * (fixed[i] - st.mean_f_w);
            double d = warped[i] - mean_w;
            acc[1] += d * d;
        }
    });
    double cov = c[0] / st.weight_sum;
    double var_w = c[1] / static_cast<double>(n);
    if (var_w <= kVarFloor)
        throw ValidationError("similarity: warped image is constant");
    return cov / std::sqrt(var_w * st.var_f);
}

} // namespace detail

/// Similarity between a warped image and the fixed image, optionally
/// down-weighting voxels by a soft mask (weight = 1 - mask).
inline double similarity(const ScalarVolume& warped, const ScalarVolume& fixed,
                         const SoftMask* mask = nullptr) {
    if (warped.grid() != fixed.grid())
        throw ValidationError("similarity: image grids differ");
    if (mask && mask->grid() != fixed.grid())
        throw ValidationError("similarity: mask grid differs");
    const std::size_t n = fixed.grid().voxel_count();
    std::vector<double> weight(n, 1.0);
    if (mask) {
        for (std::size_t i = 0; i < n; ++i) weight[i] = 1.0 - mask->values()[i];
    }
    detail::CorrStats st = detail::fixed_stats(fixed.values(), weight);
    return detail::correlation(warped.values(), fixed.values(), weight, st);
}

/// Volume-preservation penalty: mean over the grid of the per-voxel
/// volume-change penalty weighted by the soft mask. Recomputed from the
/// current field each call.
inline double vp_loss(const DisplacementField& field, const SoftMask& mask,
                      const BinaryMask& organ_moving) {
    if (mask.grid() != field.grid())
        throw ValidationError("vp_loss: mask grid differs from field");
    DistanceField df = distance_field(field, organ_moving);
    const auto& d = df.d.values();
    const auto& m = mask.values();
    auto s = par::reduce_blocks(d.size(), 1, [&](std::size_t b, std::size_t e, double* acc) {
        for (std::size_t i = b; i < e; ++i) acc[0] += d[i] * m[i];
    });
    return s[0] / static_cast<double>(d.size());
}

/// Mean squared forward difference over all components and axes. The last
/// slice along each axis has no forward neighbor and contributes nothing.
inline double smoothness(const DisplacementField& field) {
    const GridInfo& g = field.grid();
    const std::size_t n = g.voxel_count();
    const int nx = g.nx(), ny = g.ny(), nz = g.nz();
    const std::size_t sy = static_cast<std::size_t>(nx), sz = sy * ny;
    double total = 0.0;
    for (int c = 0; c < 3; ++c) {
        const double* u = field.component(c);
        auto s = par::reduce_blocks(n, 1, [&](std::size_t b, std::size_t e, double* acc) {
            int x, y, z;
            detail::decompose(g, b, x, y, z);
            for (std::size_t i = b; i < e; ++i) {
                if (x + 1 < nx) { double d = u[i + 1] - u[i]; acc[0] += d * d; }
                if (y + 1 < ny) { double d = u[i + sy] - u[i]; acc[0] += d * d; }
                if (z + 1 < nz) { double d = u[i + sz] - u[i]; acc[0] += d * d; }
                if (++x == nx) { x = 0; if (++y == ny) { y = 0; ++z; } }
            }
        });
        total += s[0];
    }
    return total / static_cast<double>(n);
}

namespace detail {

// One registration problem at a fixed resolution, with everything the
// evaluator needs laid out as flat arrays.
struct Problem {
    GridInfo grid;
    std::vector<double> moving;
    std::vector<double> fixed;
    std::vector<double> weight;  // 1 - stm (all ones when no mask)
    std::vector<double> stm;     // empty when no mask
    std::vector<double> organ;   // 0/1 as doubles, empty when unused
    double organ_count = 0.0;
    CorrStats stats;

    Problem(const ScalarVolume& mov, const ScalarVolume& fix,
            const SoftMask* mask, const BinaryMask* organ_moving)
        : grid(mov.grid()), moving(mov.values()), fixed(fix.values()),
          weight(mov.grid().voxel_count(), 1.0),
          stats{0, 0, 0} {
        if (fix.grid() != grid)
            throw ValidationError("registration: moving and fixed grids differ");
        if (mask) {
            if (mask->grid() != grid)
                throw ValidationError("registration: soft mask grid differs");
            stm = mask->values();
            for (std::size_t i = 0; i < weight.size(); ++i) weight[i] = 1.0 - stm[i];
        }
        if (organ_moving) {
            if (organ_moving->grid() != grid)
                throw ValidationError("registration: organ mask grid differs");
            if (organ_moving->count() == 0)
                throw ValidationError("registration: organ mask is empty");
            organ.resize(weight.size());
            for (std::size_t i = 0; i < organ.size(); ++i) organ[i] = organ_moving->values()[i];
            organ_count = static_cast<double>(organ_moving->count());
        }
        stats = fixed_stats(fixed, weight);
    }
};

// Loss and analytic gradient for one problem. Scratch buffers persist
// across calls so the optimizer allocates nothing per iteration.
class Evaluator {
public:
    explicit Evaluator(Problem problem) : p_(std::move(problem)) {
        const std::size_t n = p_.grid.voxel_count();
        iw_.resize(n);
        diw_.resize(3 * n);
        if (!p_.organ.empty()) {
            mw_.resize(n);
            dmw_.resize(3 * n);
            det_.resize(n);
            cof_.resize(9 * n);
            q_.resize(n);
        }
    }

    const Problem& problem() const { return p_; }

    // u and grad are planar 3N arrays; grad may be null for loss-only.
    LossBreakdown evaluate(const double* u, const LossWeights& w, double* grad) {
        const GridInfo& g = p_.grid;
        const std::size_t n = g.voxel_count();
        const bool vp_on = w.alpha_vp > 0.0;
        if (vp_on && (p_.stm.empty() || p_.organ.empty()))
            throw ValidationError("objective: volume penalty needs a soft mask and an organ mask");
        const bool need_mask_warp = !p_.organ.empty() && vp_on;

        const double* ux = u;
        const double* uy = u + n;
        const double* uz = u + 2 * n;

        // Warp samples, their position-gradients, and first-order sums.
        auto s1 = par::reduce_blocks(n, 3, [&](std::size_t b, std::size_t e, double* acc) {
            int x, y, z;
            decompose(g, b, x, y, z);
            for (std::size_t i = b; i < e; ++i) {
                auto cell = TriCell::make(g, x + ux[i], y + uy[i], z + uz[i]);
                double gradp[3];
                double v;
                cell.sample_grad(p_.moving.data(), v, gradp);
                iw_[i] = v;
                diw_[i] = gradp[0];
                diw_[i + n] = gradp[1];
                diw_[i + 2 * n] = gradp[2];
                acc[0] += p_.weight[i] * v;
                acc[1] += v;
                if (need_mask_warp) {
                    double mv, mg[3];
                    cell.sample_grad(p_.organ.data(), mv, mg);
                    mw_[i] = mv;
                    dmw_[i] = mg[0];
                    dmw_[i + n] = mg[1];
                    dmw_[i + 2 * n] = mg[2];
                    acc[2] += mv;
                }
                if (++x == g.nx()) { x = 0; if (++y == g.ny()) { y = 0; ++z; } }
            }
        });
        const double N = static_cast<double>(n);
        const double mean_w_w = s1[0] / p_.stats.weight_sum;
        const double mean_w = s1[1] / N;

        // Centered similarity sums.
        auto s2 = par::reduce_blocks(n, 2, [&](std::size_t b, std::size_t e, double* acc) {
            for (std::size_t i = b; i < e; ++i) {
                acc[0] += p_.weight[i] * (iw_[i] - mean_w_w) * (p_.fixed[i] - p_.stats.mean_f_w);
                double d = iw_[i] - mean_w;
                acc[1] += d * d;
            }
        });
        const double cov = s2[0] / p_.stats.weight_sum;
        const double var_w = s2[1] / N;
        if (var_w <= kVarFloor)
            throw ValidationError("similarity: warped image is constant");
        const double denom = std::sqrt(var_w * p_.stats.var_f);
        const double rho = cov / denom;

        double vp_value = 0.0;
        double ratio = 0.0;
        double g_ratio = 0.0;
        if (vp_on) {
            ratio = s1[2] / p_.organ_count;
            if (!(ratio > 0.0))
                throw NumericalError("objective: warped organ has vanished");
            const double* comp[3] = {ux, uy, uz};
            jacobian_scan(comp, g, det_.data(), grad ? cof_.data() : nullptr);
            auto s3 = par::reduce_blocks(n, 2, [&](std::size_t b, std::size_t e, double* acc) {
                for (std::size_t i = b; i < e; ++i) {
                    double det = det_[i];
                    bool inside = det > kDetClampLo && det < kDetClampHi;
                    double cd = std::clamp(det, kDetClampLo, kDetClampHi);
                    double c = 1.0 / cd;
                    double dp = c / ratio;
                    double dval, dd_ddp;
                    if (dp >= 1.0 / dp) { dval = dp; dd_ddp = 1.0; }
                    else { dval = 1.0 / dp; dd_ddp = -1.0 / (dp * dp); }
                    acc[0] += p_.stm[i] * dval;
                    if (grad) {
                        double common = w.alpha_vp * p_.stm[i] / N * dd_ddp;
                        q_[i] = inside ? common * (1.0 / ratio) * (-c * c) : 0.0;
                        acc[1] += common * (-dp / ratio);
                    }
                }
            });
            vp_value = s3[0] / N;
            g_ratio = s3[1];
        }

        const double smooth_value = smoothness_sum(u) / N;
        const double total = w.sim_weight * (1.0 - rho) +
                             w.alpha_vp * vp_value +
                             w.alpha_reg * smooth_value;

        if (grad) {
            assemble_gradient(u, w, rho, var_w, denom, mean_w, g_ratio, vp_on, grad);
        }
        return {rho, vp_value, smooth_value, total};
    }

private:
    double smoothness_sum(const double* u) const {
        const GridInfo& g = p_.grid;
        const std::size_t n = g.voxel_count();
        const int nx = g.nx(), ny = g.ny(), nz = g.nz();
        const std::size_t sy = static_cast<std::size_t>(nx), sz = sy * ny;
        double total = 0.0;
        for (int c = 0; c < 3; ++c) {
            const double* uc = u + static_cast<std::size_t>(c) * n;
            auto s = par::reduce_blocks(n, 1, [&](std::size_t b, std::size_t e, double* acc) {
                int x, y, z;
                decompose(g, b, x, y, z);
                for (std::size_t i = b; i < e; ++i) {
                    if (x + 1 < nx) { double d = uc[i + 1] - uc[i]; acc[0] += d * d; }
                    if (y + 1 < ny) { double d = uc[i + sy] - uc[i]; acc[0] += d * d; }
                    if (z + 1 < nz) { double d = uc[i + sz] - uc[i]; acc[0] += d * d; }
                    if (++x == nx) { x = 0; if (++y == ny) { y = 0; ++z; } }
                }
            });
            total += s[0];
        }
        return total;
    }

    void assemble_gradient(const double* u, const LossWeights& w, double rho,
                           double var_w, double denom, double mean_w,
                           double g_ratio, bool vp_on, double* grad) {
        const GridInfo& g = p_.grid;
        const std::size_t n = g.voxel_count();
        const double N = static_cast<double>(n);
        const int nx = g.nx(), ny = g.ny(), nz = g.nz();
        const std::ptrdiff_t stride[3] = {1, nx, static_cast<std::ptrdiff_t>(nx) * ny};
        const int dims[3] = {nx, ny, nz};
        const double sim_scale = -w.sim_weight;      // total carries (1 - similarity)
        const double g_ratio_per_voxel = vp_on ? g_ratio / p_.organ_count : 0.0;
        const double smooth_scale = 2.0 * w.alpha_reg / N;

        par::for_blocks(n, [&](std::size_t begin, std::size_t end) {
            int x, y, z;
            decompose(g, begin, x, y, z);
            for (std::size_t i = begin; i < end; ++i) {
                const int pos[3] = {x, y, z};
                // similarity chain through the interpolated intensity
                double d_rho_d_iw =
                    p_.weight[i] * (p_.fixed[i] - p_.stats.mean_f_w) / (p_.stats.weight_sum * denom) -
                    rho * (iw_[i] - mean_w) / (N * var_w);
                double gi = sim_scale * d_rho_d_iw;
                for (int c = 0; c < 3; ++c) {
                    const std::size_t ci = i + static_cast<std::size_t>(c) * n;
                    double acc = gi * diw_[ci];
                    if (vp_on) {
                        acc += g_ratio_per_voxel * dmw_[ci];
                        // determinant path: stencil neighbors whose jacobian
                        // entry (row c, axis j) reads u_c at this voxel
                        for (int j = 0; j < 3; ++j) {
                            const std::ptrdiff_t s = stride[j];
                            const int pj = pos[j], nj = dims[j];
                            if (pj > 0) {
                                double coeff = pj == 1 ? 1.0 : 0.5;
                                std::size_t xn = i - s;
                                acc += coeff * q_[xn] * cof_[9 * xn + 3 * c + j];
                            }
                            if (pj < nj - 1) {
                                double coeff = pj == nj - 2 ? -1.0 : -0.5;
                                std::size_t xn = i + s;
                                acc += coeff * q_[xn] * cof_[9 * xn + 3 * c + j];
                            }
                            if (pj == 0)
                                acc += -1.0 * q_[i] * cof_[9 * i + 3 * c + j];
                            else if (pj == nj - 1)
                                acc += 1.0 * q_[i] * cof_[9 * i + 3 * c + j];
                        }
                    }
                    if (w.alpha_reg > 0.0) {
                        const double* uc = u + static_cast<std::size_t>(c) * n;
                        double sacc = 0.0;
                        for (int j = 0; j < 3; ++j) {
                            const std::ptrdiff_t s = stride[j];
                            if (pos[j] > 0) sacc += uc[i] - uc[i - s];
                            if (pos[j] < dims[j] - 1) sacc -= uc[i + s] - uc[i];
                        }
                        acc += smooth_scale * sacc;
                    }
                    grad[ci] = acc;
                }
                if (++x == nx) { x = 0; if (++y == ny) { y = 0; ++z; } }
            }
        });
    }

    Problem p_;
    std::vector<double> iw_, diw_, mw_, dmw_, det_, cof_, q_;
};

} // namespace detail

/// All loss terms for one field. vp requires both masks; pass stm = nullptr
/// for a similarity-only objective (the vp term reports 0).
inline LossBreakdown total_loss(const DisplacementField& field, const ScalarVolume& moving,
                                const ScalarVolume& fixed, const SoftMask* stm,
                                const BinaryMask* organ_moving, const RegistrationConfig& config) {
    config.validate();
    if (field.grid() != moving.grid())
        throw ValidationError("total_loss: field and image grids differ");
    ScalarVolume warped = warp_scalar(moving, field);
    double sim = similarity(warped, fixed, stm);
    double vp = 0.0;
    if (stm && config.alpha_vp > 0.0) {
        if (!organ_moving)
            throw ValidationError("total_loss: volume penalty needs an organ mask");
        vp = vp_loss(field, *stm, *organ_moving);
    }
    double sm = smoothness(field);
    double total = config.sim_weight * (1.0 - sim) + config.alpha_vp * vp + config.alpha_reg * sm;
    return {sim, vp, sm, total};
}

/// Analytic gradient of the total loss with respect to every displacement
/// component. Matches finite differences of total_loss away from the
/// interpolation and clamp kinks.
inline DisplacementField total_gradient(const DisplacementField& field, const ScalarVolume& moving,
                                        const ScalarVolume& fixed, const SoftMask* stm,
                                        const BinaryMask* organ_moving,
                                        const RegistrationConfig& config) {
    config.validate();
    if (field.grid() != moving.grid())
        throw ValidationError("total_gradient: field and image grids differ");
    const bool vp_on = stm && config.alpha_vp > 0.0;
    detail::Problem problem(moving, fixed, stm, vp_on ? organ_moving : nullptr);
    if (vp_on && !organ_moving)
        throw ValidationError("total_gradient: volume penalty needs an organ mask");
    detail::Evaluator ev(std::move(problem));
    LossWeights w{config.sim_weight, vp_on ? config.alpha_vp : 0.0, config.alpha_reg};
    std::vector<double> grad(3 * field.grid().voxel_count());
    ev.evaluate(field.data().data(), w, grad.data());
    return DisplacementField(field.grid(), std::move(grad));
}

} // namespace volreg
