#include "lbf/patch.hpp"

#include <algorithm>
#include <random>

#include "lbf/rng.hpp"

namespace lbf {

ResolvedScales resolve_scales(const std::vector<ScaleSpec>& scales, double bbox_diag) {
    if (scales.empty()) throw ConfigError("resolve_scales: no scales given");
    if (bbox_diag <= 0.0) throw DegenerateGeometry("resolve_scales: non-positive bbox diagonal");
    ResolvedScales out;
    out.radii.reserve(scales.size());
    double prev = 0.0;
    for (const ScaleSpec& s : scales) {
        if (s.radius_fraction <= 0.0 || s.radius_fraction >= 1.0)
            throw ConfigError("resolve_scales: radius_fraction must be in (0,1)");
        if (s.radius_fraction * bbox_diag <= prev)
            throw ConfigError("resolve_scales: radii must be strictly increasing");
        prev = s.radius_fraction * bbox_diag;
        out.radii.push_back(prev);
    }
    out.r_max = out.radii.back();
    return out;
}

namespace {

// Selects `m` positions out of [0, n) uniformly without replacement,
// deterministic for a given seed; result sorted ascending so the retained
// neighbors keep their index order.
std::vector<int> sample_without_replacement(int n, int m, std::uint64_t seed) {
    std::vector<int> positions(n);
    for (int i = 0; i < n; ++i) positions[i] = i;
    std::mt19937_64 rng(seed);
    for (int i = 0; i < m; ++i) {
        std::uniform_int_distribution<int> pick(i, n - 1);
        std::swap(positions[i], positions[pick(rng)]);
    }
    positions.resize(m);
    std::sort(positions.begin(), positions.end());
    return positions;
}

}  // namespace

MultiScalePatch extract_multiscale(const KdTree& index, const PointCloud& cloud, int i,
                                   const ResolvedScales& scales, int M, std::uint64_t seed) {
    if (M < 1) throw ConfigError("extract_multiscale: M must be >= 1");
    const Vec3 center = cloud.points[i];
    const int K = static_cast<int>(scales.count());

    const std::vector<int> largest = index.radius_query(center, scales.r_max);
    if (largest.size() < 3)
        throw InsufficientNeighbors("extract_multiscale: largest-scale neighborhood has <3 points");

    std::vector<Vec3> largest_pts;
    largest_pts.reserve(largest.size());
    for (int j : largest) largest_pts.push_back(cloud.points[j]);
    const Mat3 rotation = pca_frame(largest_pts).frame.rotation;
    const Mat3 rot_t = rotation.transpose();

    MultiScalePatch patch;
    patch.center_index = i;
    patch.frame.rotation = rotation;
    patch.frame.centroid = center;
    patch.r_max = scales.r_max;
    patch.scales.resize(K);
    patch.valid_counts.resize(K);

    for (int k = 0; k < K; ++k) {
        // every scale is a subset of the largest one
        std::vector<int> nbrs = (k == K - 1) ? largest : index.radius_query(center, scales.radii[k]);
        if (static_cast<int>(nbrs.size()) > M) {
            const std::vector<int> keep = sample_without_replacement(
                static_cast<int>(nbrs.size()), M, mix_seed(seed, static_cast<std::uint64_t>(i), k));
            std::vector<int> reduced;
            reduced.reserve(M);
            for (int pos : keep) reduced.push_back(nbrs[pos]);
            nbrs = std::move(reduced);
        }

        std::vector<Vec3>& dst = patch.scales[k];
        dst.reserve(M);
        for (int j : nbrs) dst.push_back(rot_t * ((cloud.points[j] - center) / scales.r_max));
        patch.valid_counts[k] = static_cast<int>(dst.size());
        dst.resize(M, Vec3::Zero());
    }
    return patch;
}

TargetPatch canonicalize_target(const MultiScalePatch& patch, const ResolvedScales& scales,
                                const PointCloud& clean_cloud, const KdTree& clean_index) {
    if (!clean_cloud.has_normals())
        throw MissingNormals("canonicalize_target: clean cloud has no normals");
    const int K = patch.scale_count();
    if (static_cast<int>(scales.count()) != K || scales.r_max != patch.r_max)
        throw ConfigMismatch("canonicalize_target: scales do not match the patch");

    const Vec3 center = patch.frame.centroid;
    const Mat3 rot_t = patch.frame.rotation.transpose();

    TargetPatch target;
    target.scale_points.resize(K);
    target.scale_normals.resize(K);
    target.m = static_cast<int>(patch.scales.empty() ? 0 : patch.scales.front().size());

    for (int k = 0; k < K; ++k) {
        const std::vector<int> nbrs = clean_index.radius_query(center, scales.radii[k]);
        auto& pts = target.scale_points[k];
        auto& nrm = target.scale_normals[k];
        pts.reserve(nbrs.size());
        nrm.reserve(nbrs.size());
        for (int j : nbrs) {
            pts.push_back(rot_t * ((clean_cloud.points[j] - center) / patch.r_max));
            nrm.push_back(rot_t * clean_cloud.normals[j]);
        }
    }
    if (target.scale_points.back().empty())
        throw InsufficientNeighbors("canonicalize_target: empty clean neighborhood");
    return target;
}

Vec3 uncanonicalize_displacement(const Frame& frame, double r_max, const Vec3& disp_canonical) {
    return r_max * (frame.rotation * disp_canonical);
}

}  // namespace lbf
