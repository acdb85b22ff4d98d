#include "lbf/loss.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

namespace lbf {

CleanPatchView make_view(const TargetPatch& target, int scale) {
    return {std::span<const Vec3>(target.scale_points[scale]),
            std::span<const Vec3>(target.scale_normals[scale]), target.m};
}

double phi(const Vec3& a, const Vec3& b, double eps_p) {
    if (!(eps_p > 0.0)) throw ConfigError("phi: eps_p must be positive");
    return std::exp(-(a - b).squaredNorm() / (eps_p * eps_p));
}

double epsilon_p(std::span<const Vec3> clean_points, int m) {
    if (clean_points.empty()) throw InsufficientNeighbors("epsilon_p: empty patch");
    if (m < 1) throw ConfigError("epsilon_p: patch size m must be >= 1");
    Vec3 lo = clean_points.front();
    Vec3 hi = lo;
    for (const Vec3& p : clean_points) {
        lo = lo.cwiseMin(p);
        hi = hi.cwiseMax(p);
    }
    const double d = (hi - lo).norm();
    if (d <= 0.0) throw DegenerateGeometry("epsilon_p: degenerate patch bounding box");
    return 4.0 * std::sqrt(d / static_cast<double>(m));
}

namespace {

double cos_support(double eps_n_degrees) {
    if (!(eps_n_degrees > 0.0) || !(eps_n_degrees < 90.0))
        throw ConfigError("support angle must be in (0, 90) degrees");
    return std::cos(eps_n_degrees * std::numbers::pi / 180.0);
}

double sign_or_zero(double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); }

}  // namespace

double theta(const Vec3& n_a, const Vec3& n_b, double eps_n_degrees) {
    return std::exp(-(1.0 - n_a.dot(n_b)) / (1.0 - cos_support(eps_n_degrees)));
}

ProjectionResult projection_loss(const Vec3& p_bar, std::span<const Vec3> points,
                                 std::span<const Vec3> normals, const Vec3& n_center,
                                 const Vec3& n_pbar, double eps_p, double eps_n_degrees,
                                 PhiMode mode, const Vec3& noisy_center) {
    if (points.empty()) throw InsufficientNeighbors("projection_loss: empty clean patch");
    if (points.size() != normals.size())
        throw ConfigMismatch("projection_loss: points/normals size mismatch");
    if (!(eps_p > 0.0)) throw ConfigError("projection_loss: eps_p must be positive");
    const double inv_eps2 = 1.0 / (eps_p * eps_p);
    const double theta_scale = 1.0 / (1.0 - cos_support(eps_n_degrees));
    const std::size_t n = points.size();

    // log-weights for numerator (always at p_bar) and denominator (mode-dependent)
    std::vector<double> lw_num(n), lw_den(n);
    double max_num = -std::numeric_limits<double>::infinity();
    double max_den = max_num;
    for (std::size_t j = 0; j < n; ++j) {
        const double lt = -(1.0 - n_pbar.dot(normals[j])) * theta_scale;
        lw_num[j] = -(p_bar - points[j]).squaredNorm() * inv_eps2 + lt;
        max_num = std::max(max_num, lw_num[j]);
        if (mode == PhiMode::kPrintedDenominator) {
            lw_den[j] = -(noisy_center - points[j]).squaredNorm() * inv_eps2 + lt;
            max_den = std::max(max_den, lw_den[j]);
        }
    }
    if (mode == PhiMode::kFilteredCenter) {
        lw_den = lw_num;
        max_den = max_num;
    }

    double den = 0.0;
    double num1 = 0.0, num2 = 0.0;
    Vec3 dnum1 = Vec3::Zero(), dnum2 = Vec3::Zero(), dden = Vec3::Zero();
    for (std::size_t j = 0; j < n; ++j) {
        const double wn = std::exp(lw_num[j] - max_num);
        const double wd = (mode == PhiMode::kFilteredCenter) ? wn : std::exp(lw_den[j] - max_den);
        const Vec3 diff = p_bar - points[j];
        const double r1 = diff.dot(normals[j]);
        const double r2 = diff.dot(n_center);
        const double a1 = std::abs(r1);
        const double a2 = std::abs(r2);
        const Vec3 dw = wn * (-2.0 * inv_eps2) * diff;  // d(wn)/d(p_bar)

        den += wd;
        num1 += a1 * wn;
        num2 += a2 * wn;
        dnum1 += sign_or_zero(r1) * normals[j] * wn + a1 * dw;
        dnum2 += sign_or_zero(r2) * n_center * wn + a2 * dw;
        if (mode == PhiMode::kFilteredCenter) dden += dw;
    }

    ProjectionResult out;
    const double scale = std::exp(max_num - max_den);  // 1 when numerator weights normalize themselves
    out.l_proj1 = scale * num1 / den;
    out.l_proj2 = scale * num2 / den;
    if (mode == PhiMode::kFilteredCenter) {
        out.d_proj1 = (dnum1 - out.l_proj1 * dden) / den;
        out.d_proj2 = (dnum2 - out.l_proj2 * dden) / den;
    } else {
        out.d_proj1 = scale * dnum1 / den;
        out.d_proj2 = scale * dnum2 / den;
    }
    return out;
}

double repulsion_loss(const Vec3& p_bar, std::span<const Vec3> points) {
    if (points.empty()) throw InsufficientNeighbors("repulsion_loss: empty clean patch");
    double best = 0.0;
    for (const Vec3& p : points) best = std::max(best, (p_bar - p).norm());
    return best;
}

LossBreakdown total_loss(const Vec3& p_bar, const CleanPatchView& patch, const Vec3& n_center,
                         const Vec3& n_pbar, const LossWeights& weights, PhiMode mode,
                         const Vec3& noisy_center) {
    if (!(weights.eta >= 0.0) || !(weights.eta <= 1.0))
        throw ConfigError("total_loss: eta must be in [0, 1]");
    if (patch.points.empty()) throw InsufficientNeighbors("total_loss: empty clean patch");

    const double eps_p = epsilon_p(patch.points, patch.m);
    const ProjectionResult proj =
        projection_loss(p_bar, patch.points, patch.normals, n_center, n_pbar, eps_p,
                        weights.epsilon_n_degrees, mode, noisy_center);

    // repulsion with argmax subgradient, lowest index on ties
    std::size_t arg = 0;
    double best = -1.0;
    for (std::size_t j = 0; j < patch.points.size(); ++j) {
        const double d = (p_bar - patch.points[j]).norm();
        if (d > best) {
            best = d;
            arg = j;
        }
    }
    Vec3 d_rep = Vec3::Zero();
    if (best > 0.0) d_rep = (p_bar - patch.points[arg]) / best;

    LossBreakdown out;
    out.l_proj1 = proj.l_proj1;
    out.l_proj2 = proj.l_proj2;
    out.l_bi_proj = proj.l_proj1 + proj.l_proj2;
    out.l_rep = best;
    out.total = weights.eta * out.l_bi_proj + (1.0 - weights.eta) * out.l_rep;
    out.d_total_d_point =
        weights.eta * (proj.d_proj1 + proj.d_proj2) + (1.0 - weights.eta) * d_rep;
    return out;
}

}  // namespace lbf
