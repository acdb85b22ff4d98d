#pragma once

#include <span>

#include "lbf/geometry.hpp"
#include "lbf/patch.hpp"

namespace lbf {

/// Mixing weight between projection and repulsion terms plus the support
/// angle of the normal-similarity weight.
struct LossWeights {
    double eta = 0.97;               // total = eta * bi_proj + (1 - eta) * rep
    double epsilon_n_degrees = 15.0; // support angle, in (0, 90)
};

/// Which center the denominator's Gaussian weight uses. The printed formula
/// evaluates the denominator at the patch center instead of the filtered
/// point; kFilteredCenter (default) normalizes the numerator's own weights.
enum class PhiMode { kFilteredCenter, kPrintedDenominator };

struct LossBreakdown {
    double l_proj1 = 0.0;
    double l_proj2 = 0.0;
    double l_bi_proj = 0.0;
    double l_rep = 0.0;
    double total = 0.0;
    Vec3 d_total_d_point = Vec3::Zero();  // analytic gradient w.r.t. the filtered point
};

/// View of a clean patch at one scale; `m` is the paired noisy patch size
/// used by the epsilon_p formula.
struct CleanPatchView {
    std::span<const Vec3> points;
    std::span<const Vec3> normals;
    int m = 0;
};

CleanPatchView make_view(const TargetPatch& target, int scale);

/// Gaussian proximity weight exp(-|a-b|^2 / eps_p^2), in (0, 1].
double phi(const Vec3& a, const Vec3& b, double eps_p);

/// Support radius of phi: 4 * sqrt(d / m) with d the clean patch's bbox
/// diagonal and m the paired noisy patch size. Throws DegenerateGeometry when
/// the patch has zero extent.
double epsilon_p(std::span<const Vec3> clean_points, int m);

/// Normal-similarity weight exp(-(1 - <n_a, n_b>) / (1 - cos eps_n)), in (0, 1].
double theta(const Vec3& n_a, const Vec3& n_b, double eps_n_degrees);

struct ProjectionResult {
    double l_proj1 = 0.0;
    double l_proj2 = 0.0;
    Vec3 d_proj1 = Vec3::Zero();  // gradients w.r.t. p_bar (n_pbar held fixed)
    Vec3 d_proj2 = Vec3::Zero();
};

/// Weighted projection residuals of the filtered point against the clean
/// patch: l_proj1 projects onto each neighbor's normal, l_proj2 onto the
/// center normal; both share the phi*theta weights. Weight sums are
/// stabilized by factoring out the largest weight. `noisy_center` is only
/// used by PhiMode::kPrintedDenominator.
ProjectionResult projection_loss(const Vec3& p_bar, std::span<const Vec3> points,
                                 std::span<const Vec3> normals, const Vec3& n_center,
                                 const Vec3& n_pbar, double eps_p, double eps_n_degrees,
                                 PhiMode mode = PhiMode::kFilteredCenter,
                                 const Vec3& noisy_center = Vec3::Zero());

/// max_j |p_bar - p_j| over the clean patch.
double repulsion_loss(const Vec3& p_bar, std::span<const Vec3> points);

/// Full objective eta * (l_proj1 + l_proj2) + (1 - eta) * l_rep with the
/// analytic gradient w.r.t. p_bar. Subgradients: sign(0) = 0 for the absolute
/// values, lowest index on repulsion argmax ties.
LossBreakdown total_loss(const Vec3& p_bar, const CleanPatchView& patch, const Vec3& n_center,
                         const Vec3& n_pbar, const LossWeights& weights,
                         PhiMode mode = PhiMode::kFilteredCenter,
                         const Vec3& noisy_center = Vec3::Zero());

}  // namespace lbf
