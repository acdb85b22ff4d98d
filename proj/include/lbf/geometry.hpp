#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <cstdint>
#include <vector>

#include "lbf/errors.hpp"

namespace lbf {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

/// Ordered list of 3D points with optional per-point unit normals.
struct PointCloud {
    std::vector<Vec3> points;
    std::vector<Vec3> normals;  // empty, or same length as points

    std::size_t size() const { return points.size(); }
    bool has_normals() const { return !normals.empty(); }
};

struct BoundingBox {
    Vec3 min;
    Vec3 max;

    Vec3 extent() const { return max - min; }
    double diagonal() const { return (max - min).norm(); }
};

/// Rigid frame: orthonormal rotation (det +1) plus an origin point.
struct Frame {
    Mat3 rotation = Mat3::Identity();  // columns are the frame axes in world coordinates
    Vec3 centroid = Vec3::Zero();
};

/// PCA of a point set: frame axes ordered by descending eigenvalue.
struct PcaResult {
    Frame frame;
    Vec3 eigenvalues;  // descending
};

BoundingBox compute_bbox(const PointCloud& cloud);

/// Length of the bounding-box diagonal. Throws DegenerateGeometry when all
/// points coincide.
double bbox_diagonal(const PointCloud& cloud);

/// Balanced kd-tree over a point cloud. Immutable once built; concurrent
/// read-only queries are safe. Queries return exactly the brute-force result.
class KdTree {
public:
    /// Throws EmptyInput on an empty cloud. Keeps a copy of the coordinates.
    explicit KdTree(const PointCloud& cloud);

    std::size_t size() const { return points_.size(); }

    /// Indices i with ||p_i - center|| < r (strict), sorted ascending.
    std::vector<int> radius_query(const Vec3& center, double r) const;

    /// The k nearest points to center, sorted by (distance, index).
    /// Returns fewer than k when the cloud is smaller than k.
    std::vector<int> knn_query(const Vec3& center, int k) const;

    const Vec3& point(int i) const { return points_[static_cast<std::size_t>(i)]; }

private:
    struct Node {
        // leaf: [begin,end) into order_; internal: split axis/value and children
        int begin = 0, end = 0;
        int axis = -1;
        double split = 0.0;
        int left = -1, right = -1;
        bool is_leaf() const { return axis < 0; }
    };

    int build(int begin, int end);

    std::vector<Vec3> points_;
    std::vector<int> order_;
    std::vector<Node> nodes_;
    int root_ = -1;

    static constexpr int kLeafSize = 16;
};

/// PCA frame of a point set: centroid is the arithmetic mean, rotation
/// columns are covariance eigenvectors by descending eigenvalue with a
/// deterministic sign convention and det +1. Covariance uses the 1/m
/// normalization. Throws DegenerateGeometry for <3 points or collinear input.
PcaResult pca_frame(const std::vector<Vec3>& points);

/// Unoriented PCA normal of the neighborhood N_r(center): eigenvector of the
/// smallest covariance eigenvalue, unit length, sign fixed so the
/// largest-magnitude component is positive. Throws InsufficientNeighbors when
/// the neighborhood has fewer than 3 points.
Vec3 estimate_normal(const KdTree& index, const PointCloud& cloud, int center_idx, double r);

/// Same as above for an explicit point list (already gathered neighborhood).
Vec3 estimate_normal(const std::vector<Vec3>& neighborhood);

/// Deterministic sign convention shared by pca_frame and estimate_normal:
/// flip v so its largest-magnitude component is positive; ties broken by the
/// first nonzero component.
Vec3 apply_sign_convention(const Vec3& v);

}  // namespace lbf
