#include "lbf/filter.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "lbf/network.hpp"
#include "lbf/parallel.hpp"

namespace lbf {

double bilateral_displacement(const Vec3& p, std::span<const Vec3> neighbors, const Vec3& n_p,
                              const FilterParams& params) {
    if (neighbors.empty()) throw InsufficientNeighbors("bilateral_displacement: no neighbors");
    if (!(params.sigma_d > 0.0) || !(params.sigma_n > 0.0))
        throw ConfigError("bilateral_displacement: sigmas must be positive");

    const double inv_2sd2 = 1.0 / (2.0 * params.sigma_d * params.sigma_d);
    const double inv_2sn2 = 1.0 / (2.0 * params.sigma_n * params.sigma_n);

    // two passes: find the max exponent, then accumulate shifted weights
    double max_exp = -std::numeric_limits<double>::infinity();
    for (const Vec3& q : neighbors) {
        const Vec3 d = q - p;
        const double dn = n_p.dot(d);
        const double e = -d.squaredNorm() * inv_2sd2 - dn * dn * inv_2sn2;
        max_exp = std::max(max_exp, e);
    }
    double sum_w = 0.0;
    double sum_wdn = 0.0;
    for (const Vec3& q : neighbors) {
        const Vec3 d = q - p;
        const double dn = n_p.dot(d);
        const double e = -d.squaredNorm() * inv_2sd2 - dn * dn * inv_2sn2;
        const double w = std::exp(e - max_exp);
        sum_w += w;
        sum_wdn += w * dn;
    }
    return sum_wdn / sum_w;  // sum_w >= 1: the max-exponent term contributes exp(0)
}

DenoiseResult denoise_classical(const PointCloud& cloud, double radius, const FilterParams& params,
                                int iterations) {
    if (radius <= 0.0) throw ConfigError("denoise_classical: radius must be positive");
    if (iterations < 1) throw ConfigError("denoise_classical: iterations must be >= 1");
    if (cloud.points.empty()) throw EmptyInput("denoise_classical: empty cloud");

    const std::size_t n = cloud.size();
    std::vector<Vec3> current = cloud.points;
    std::vector<std::uint8_t> skipped_mask(n, 0);

    for (int it = 0; it < iterations; ++it) {
        PointCloud snapshot;
        snapshot.points = current;
        const KdTree index(snapshot);
        std::vector<Vec3> next(n);

        parallel_for(n, [&](std::size_t i) {
            const Vec3& p = snapshot.points[i];
            const std::vector<int> nbr_idx = index.radius_query(p, radius);
            if (nbr_idx.size() < 3) {
                next[i] = p;
                skipped_mask[i] = 1;
                return;
            }
            std::vector<Vec3> nbrs;
            nbrs.reserve(nbr_idx.size());
            for (int j : nbr_idx) nbrs.push_back(snapshot.points[j]);
            const Vec3 n_p = estimate_normal(nbrs);
            const double dp = bilateral_displacement(p, nbrs, n_p, params);
            next[i] = p + dp * n_p;
        });
        current = std::move(next);
    }

    DenoiseResult res;
    res.cloud.points = std::move(current);
    res.report.displacements.resize(n);
    res.report.params_used.assign(n, params);
    for (std::size_t i = 0; i < n; ++i) {
        res.report.displacements[i] = res.cloud.points[i] - cloud.points[i];
        if (skipped_mask[i]) res.report.skipped.push_back(static_cast<int>(i));
    }
    return res;
}

DenoiseResult denoise_learned(const PointCloud& cloud, const LbfModel& model,
                              const std::vector<ScaleSpec>& scales, int M, std::uint64_t seed) {
    if (cloud.points.empty()) throw EmptyInput("denoise_learned: empty cloud");
    if (model.scale_count != static_cast<int>(scales.size()) || model.patch_size != M)
        throw ConfigMismatch("denoise_learned: model was built for different K or M");

    const ResolvedScales resolved = resolve_scales(scales, bbox_diagonal(cloud));
    const KdTree index(cloud);
    const std::size_t n = cloud.size();

    DenoiseResult res;
    res.cloud.points.resize(n);
    res.report.displacements.assign(n, Vec3::Zero());
    res.report.params_used.assign(n, FilterParams{});
    std::vector<std::uint8_t> skipped_mask(n, 0);

    parallel_for(n, [&](std::size_t i) {
        const Vec3& p = cloud.points[i];
        try {
            const MultiScalePatch patch =
                extract_multiscale(index, cloud, static_cast<int>(i), resolved, M, seed);
            const FilterParams params = forward(patch, model);

            const int valid = patch.valid_counts.back();
            if (valid < 3) throw InsufficientNeighbors("denoise_learned: <3 real points");
            const std::span<const Vec3> real_pts(patch.scales.back().data(),
                                                 static_cast<std::size_t>(valid));
            const Vec3 n_p = estimate_normal({real_pts.begin(), real_pts.end()});
            const double dp = bilateral_displacement(Vec3::Zero(), real_pts, n_p, params);
            const Vec3 world_disp = uncanonicalize_displacement(patch.frame, patch.r_max, dp * n_p);

            res.cloud.points[i] = p + world_disp;
            res.report.displacements[i] = world_disp;
            res.report.params_used[i] = params;
        } catch (const InsufficientNeighbors&) {
            res.cloud.points[i] = p;
            skipped_mask[i] = 1;
        } catch (const DegenerateGeometry&) {
            res.cloud.points[i] = p;
            skipped_mask[i] = 1;
        }
    });
    for (std::size_t i = 0; i < n; ++i)
        if (skipped_mask[i]) res.report.skipped.push_back(static_cast<int>(i));
    return res;
}

}  // namespace lbf
