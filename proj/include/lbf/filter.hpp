#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "lbf/geometry.hpp"
#include "lbf/patch.hpp"

namespace lbf {

struct LbfModel;

/// Bilateral filter bandwidths, in the units of the coordinates being
/// filtered (world units for the classical path, canonical units for the
/// learned path). Both must be strictly positive.
struct FilterParams {
    double sigma_d = 0.0;
    double sigma_n = 0.0;
};

/// Per-point outcome of a whole-cloud denoising pass.
struct DenoiseReport {
    std::vector<Vec3> displacements;        // denoised minus input, per point
    std::vector<FilterParams> params_used;  // zeros for skipped points
    std::vector<int> skipped;               // indices with insufficient neighbors
};

struct DenoiseResult {
    PointCloud cloud;
    DenoiseReport report;
};

/// Signed offset along n_p of the bilateral-weighted neighborhood average:
///   delta_p = sum_q w(q) <n_p, q-p> / sum_q w(q),
///   w(q)    = exp(-|q-p|^2 / 2 sigma_d^2) * exp(-<n_p, q-p>^2 / 2 sigma_n^2).
/// Weights are normalized by the maximum exponent, so tiny sigmas cannot
/// underflow the denominator. Throws InsufficientNeighbors on an empty list.
double bilateral_displacement(const Vec3& p, std::span<const Vec3> neighbors, const Vec3& n_p,
                              const FilterParams& params);

/// Classical bilateral denoising: per point, estimate the PCA normal over the
/// radius neighborhood, compute delta_p with fixed params, and move the point
/// by delta_p * n_p. All reads within one iteration use the pre-iteration
/// cloud. Points with fewer than 3 neighbors pass through and are recorded in
/// the report.
DenoiseResult denoise_classical(const PointCloud& cloud, double radius, const FilterParams& params,
                                int iterations);

/// Learned bilateral denoising (single pass): per point, extract the
/// multi-scale patch, predict (sigma_d, sigma_n) in canonical units, filter
/// the real largest-scale canonical points, and map the displacement back to
/// world space through the patch frame. Throws ConfigMismatch when the model
/// was built for a different K or M.
DenoiseResult denoise_learned(const PointCloud& cloud, const LbfModel& model,
                              const std::vector<ScaleSpec>& scales, int M, std::uint64_t seed);

}  // namespace lbf
