#include "lbf/geometry.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <queue>

namespace lbf {

BoundingBox compute_bbox(const PointCloud& cloud) {
    if (cloud.points.empty()) throw EmptyInput("compute_bbox: empty cloud");
    Vec3 lo = cloud.points.front();
    Vec3 hi = cloud.points.front();
    for (const Vec3& p : cloud.points) {
        lo = lo.cwiseMin(p);
        hi = hi.cwiseMax(p);
    }
    return {lo, hi};
}

double bbox_diagonal(const PointCloud& cloud) {
    const double d = compute_bbox(cloud).diagonal();
    if (d <= 0.0) throw DegenerateGeometry("bbox_diagonal: all points coincide");
    return d;
}

KdTree::KdTree(const PointCloud& cloud) : points_(cloud.points) {
    if (points_.empty()) throw EmptyInput("KdTree: empty cloud");
    order_.resize(points_.size());
    for (std::size_t i = 0; i < points_.size(); ++i) order_[i] = static_cast<int>(i);
    nodes_.reserve(2 * points_.size() / kLeafSize + 2);
    root_ = build(0, static_cast<int>(points_.size()));
}

int KdTree::build(int begin, int end) {
    const int node_idx = static_cast<int>(nodes_.size());
    nodes_.emplace_back();

    if (end - begin <= kLeafSize) {
        nodes_[node_idx].begin = begin;
        nodes_[node_idx].end = end;
        return node_idx;
    }

    Vec3 lo = points_[order_[begin]];
    Vec3 hi = lo;
    for (int i = begin + 1; i < end; ++i) {
        lo = lo.cwiseMin(points_[order_[i]]);
        hi = hi.cwiseMax(points_[order_[i]]);
    }
    int axis = 0;
    (hi - lo).maxCoeff(&axis);
    if (hi[axis] == lo[axis]) {
        // all points identical along every axis: keep as a leaf
        nodes_[node_idx].begin = begin;
        nodes_[node_idx].end = end;
        return node_idx;
    }

    const int mid = begin + (end - begin) / 2;
    std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end,
                     [&](int a, int b) { return points_[a][axis] < points_[b][axis]; });

    nodes_[node_idx].axis = axis;
    nodes_[node_idx].split = points_[order_[mid]][axis];
    const int left = build(begin, mid);
    const int right = build(mid, end);
    nodes_[node_idx].left = left;
    nodes_[node_idx].right = right;
    return node_idx;
}

std::vector<int> KdTree::radius_query(const Vec3& center, double r) const {
    std::vector<int> out;
    const double r2 = r * r;

    std::vector<int> stack{root_};
    while (!stack.empty()) {
        const Node& node = nodes_[stack.back()];
        stack.pop_back();
        if (node.is_leaf()) {
            for (int i = node.begin; i < node.end; ++i) {
                const int idx = order_[i];
                if ((points_[idx] - center).squaredNorm() < r2) out.push_back(idx);
            }
            continue;
        }
        const double d = center[node.axis] - node.split;
        // points with coordinate < split are left, >= split right; a sphere of
        // radius r around center can only miss a side when it is at least r away
        if (d < r) stack.push_back(node.left);
        if (d > -r) stack.push_back(node.right);
    }
    std::sort(out.begin(), out.end());
    return out;
}

std::vector<int> KdTree::knn_query(const Vec3& center, int k) const {
    if (k <= 0) return {};
    using Entry = std::pair<double, int>;  // (squared distance, index)
    std::priority_queue<Entry> heap;       // max-heap on distance

    auto consider = [&](int idx) {
        const double d2 = (points_[idx] - center).squaredNorm();
        if (static_cast<int>(heap.size()) < k) {
            heap.emplace(d2, idx);
        } else if (Entry(d2, idx) < heap.top()) {
            heap.pop();
            heap.emplace(d2, idx);
        }
    };

    // recursive best-first descent
    auto visit = [&](auto&& self, int node_idx) -> void {
        const Node& node = nodes_[node_idx];
        if (node.is_leaf()) {
            for (int i = node.begin; i < node.end; ++i) consider(order_[i]);
            return;
        }
        const double d = center[node.axis] - node.split;
        const int near = d < 0 ? node.left : node.right;
        const int far = d < 0 ? node.right : node.left;
        self(self, near);
        if (static_cast<int>(heap.size()) < k || d * d <= heap.top().first) self(self, far);
    };
    visit(visit, root_);

    std::vector<Entry> entries;
    entries.reserve(heap.size());
    while (!heap.empty()) {
        entries.push_back(heap.top());
        heap.pop();
    }
    std::sort(entries.begin(), entries.end());
    std::vector<int> out;
    out.reserve(entries.size());
    for (const Entry& e : entries) out.push_back(e.second);
    return out;
}

Vec3 apply_sign_convention(const Vec3& v) {
    int dominant = 0;
    v.cwiseAbs().maxCoeff(&dominant);
    double pivot = v[dominant];
    if (pivot == 0.0) {
        for (int i = 0; i < 3; ++i) {
            if (v[i] != 0.0) {
                pivot = v[i];
                break;
            }
        }
    }
    return pivot < 0.0 ? Vec3(-v) : v;
}

namespace {

// Covariance (1/m normalization) about the mean, plus the mean itself.
std::pair<Mat3, Vec3> covariance(const std::vector<Vec3>& points) {
    Vec3 mean = Vec3::Zero();
    for (const Vec3& p : points) mean += p;
    mean /= static_cast<double>(points.size());
    Mat3 cov = Mat3::Zero();
    for (const Vec3& p : points) {
        const Vec3 d = p - mean;
        cov += d * d.transpose();
    }
    cov /= static_cast<double>(points.size());
    return {cov, mean};
}

}  // namespace

PcaResult pca_frame(const std::vector<Vec3>& points) {
    if (points.size() < 3) throw DegenerateGeometry("pca_frame: needs at least 3 points");
    const auto [cov, mean] = covariance(points);

    Eigen::SelfAdjointEigenSolver<Mat3> solver(cov);
    const Vec3 evals_asc = solver.eigenvalues();   // ascending
    const Mat3 evecs_asc = solver.eigenvectors();

    PcaResult res;
    res.frame.centroid = mean;
    for (int i = 0; i < 3; ++i) {
        res.eigenvalues[i] = evals_asc[2 - i];
        res.frame.rotation.col(i) = apply_sign_convention(evecs_asc.col(2 - i));
    }

    // collinear (or fully degenerate) input: direction of the second axis is meaningless
    if (res.eigenvalues[0] <= 0.0 || res.eigenvalues[1] <= res.eigenvalues[0] * 1e-12)
        throw DegenerateGeometry("pca_frame: points are collinear");

    if (res.frame.rotation.determinant() < 0.0) res.frame.rotation.col(2) *= -1.0;
    return res;
}

Vec3 estimate_normal(const std::vector<Vec3>& neighborhood) {
    if (neighborhood.size() < 3)
        throw InsufficientNeighbors("estimate_normal: needs at least 3 neighbors");
    const auto [cov, mean] = covariance(neighborhood);
    (void)mean;
    Eigen::SelfAdjointEigenSolver<Mat3> solver(cov);
    const Vec3 n = solver.eigenvectors().col(0);  // smallest eigenvalue
    return apply_sign_convention(n.normalized());
}

Vec3 estimate_normal(const KdTree& index, const PointCloud& cloud, int center_idx, double r) {
    const std::vector<int> nbrs = index.radius_query(cloud.points[center_idx], r);
    if (nbrs.size() < 3)
        throw InsufficientNeighbors("estimate_normal: fewer than 3 points within radius");
    std::vector<Vec3> pts;
    pts.reserve(nbrs.size());
    for (int i : nbrs) pts.push_back(cloud.points[i]);
    return estimate_normal(pts);
}

}  // namespace lbf
