#pragma once

#include <cstdint>
#include <vector>

#include "lbf/geometry.hpp"

namespace lbf {

/// One patch scale: index plus radius as a fraction of the bbox diagonal.
struct ScaleSpec {
    int k = 0;
    double radius_fraction = 0.0;
};

/// Scale radii resolved against a concrete cloud's bbox diagonal.
struct ResolvedScales {
    std::vector<double> radii;  // strictly increasing, world units
    double r_max = 0.0;

    std::size_t count() const { return radii.size(); }
};

/// Validates the scale list (fractions in (0,1), strictly increasing) and
/// converts to world-unit radii. Throws ConfigError on invalid specs.
ResolvedScales resolve_scales(const std::vector<ScaleSpec>& scales, double bbox_diag);

/// K canonicalized fixed-size neighborhoods of one query point. Coordinates
/// are centered on the noisy query point, divided by r_max and rotated into
/// the PCA frame of the largest-scale neighborhood. Real points come first;
/// origin padding fills each scale up to M entries.
struct MultiScalePatch {
    int center_index = -1;
    std::vector<std::vector<Vec3>> scales;  // K lists of exactly M canonical points
    std::vector<int> valid_counts;          // per-scale count of real (non-padded) points
    Frame frame;                            // rotation R; centroid = noisy query point
    double r_max = 0.0;

    int scale_count() const { return static_cast<int>(scales.size()); }
};

/// Clean-cloud counterpart of a MultiScalePatch: the clean neighbors of the
/// *noisy* center, in the same frame and r_max normalization; no padding or
/// downsampling. Normals are rotated by the same R^T. `m` records the fixed
/// patch size M of the paired noisy patch (the paper's |P̂_{i,k}|).
struct TargetPatch {
    std::vector<std::vector<Vec3>> scale_points;
    std::vector<std::vector<Vec3>> scale_normals;
    int m = 0;
};

/// Extracts the multi-scale patch around cloud point i. Neighborhoods use the
/// strict-inequality radius query; the shared rotation comes from the PCA of
/// the largest-scale neighborhood. Patches with fewer than M points are
/// padded with the origin; larger ones are uniformly downsampled without
/// replacement, seeded by (seed, i). Throws InsufficientNeighbors when the
/// largest-scale neighborhood has fewer than 3 points.
MultiScalePatch extract_multiscale(const KdTree& index, const PointCloud& cloud, int i,
                                   const ResolvedScales& scales, int M, std::uint64_t seed);

/// Gathers the clean neighbors of the noisy patch's center at every scale and
/// transforms them (and their normals) into the patch's canonical frame.
/// `scales` must be the ones the patch was extracted with. Requires clean
/// normals; throws InsufficientNeighbors when the largest-scale clean
/// neighborhood is empty.
TargetPatch canonicalize_target(const MultiScalePatch& patch, const ResolvedScales& scales,
                                const PointCloud& clean_cloud, const KdTree& clean_index);

/// Maps a canonical-frame displacement back to world space: r_max * R * disp.
Vec3 uncanonicalize_displacement(const Frame& frame, double r_max, const Vec3& disp_canonical);

}  // namespace lbf
