#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "lbf/geometry.hpp"

// Independent brute-force references used to pin expected values. These stay
// deliberately naive so they share no code path with the implementations they
// check.
namespace lbf::oracle {

inline std::vector<int> radius_scan(const PointCloud& cloud, const Vec3& center, double r) {
    std::vector<int> out;
    for (std::size_t i = 0; i < cloud.size(); ++i)
        if ((cloud.points[i] - center).norm() < r) out.push_back(static_cast<int>(i));
    return out;
}

inline std::vector<int> knn_scan(const PointCloud& cloud, const Vec3& center, int k) {
    std::vector<std::pair<double, int>> all;
    for (std::size_t i = 0; i < cloud.size(); ++i)
        all.emplace_back((cloud.points[i] - center).squaredNorm(), static_cast<int>(i));
    std::sort(all.begin(), all.end());
    std::vector<int> out;
    for (int i = 0; i < std::min<int>(k, static_cast<int>(all.size())); ++i)
        out.push_back(all[i].second);
    return out;
}

inline double chamfer_scan(const PointCloud& a, const PointCloud& b) {
    auto one_way = [](const PointCloud& from, const PointCloud& to) {
        double total = 0.0;
        for (const Vec3& p : from.points) {
            double best = std::numeric_limits<double>::infinity();
            for (const Vec3& q : to.points) best = std::min(best, (p - q).squaredNorm());
            total += best;
        }
        return total / static_cast<double>(from.size());
    };
    return one_way(a, b) + one_way(b, a);
}

inline double mse_scan(const PointCloud& denoised, const PointCloud& clean, int k) {
    double total = 0.0;
    for (const Vec3& p : denoised.points) {
        std::vector<double> d;
        for (const Vec3& q : clean.points) d.push_back((p - q).norm());
        std::sort(d.begin(), d.end());
        double s = 0.0;
        for (int i = 0; i < k; ++i) s += d[static_cast<std::size_t>(i)];
        total += s / static_cast<double>(k);
    }
    return total / static_cast<double>(denoised.size());
}

// Classic Jacobi eigenvalue iteration for symmetric 3x3 matrices; independent
// of Eigen's solver. Returns eigenvalues descending with matching columns.
inline void jacobi_eigen(const Mat3& a_in, Vec3& eigenvalues, Mat3& eigenvectors) {
    Mat3 a = a_in;
    Mat3 v = Mat3::Identity();
    for (int sweep = 0; sweep < 100; ++sweep) {
        double off = 0.0;
        for (int p = 0; p < 3; ++p)
            for (int q = p + 1; q < 3; ++q) off += a(p, q) * a(p, q);
        if (off < 1e-30) break;
        for (int p = 0; p < 3; ++p) {
            for (int q = p + 1; q < 3; ++q) {
                if (std::abs(a(p, q)) < 1e-300) continue;
                const double theta = (a(q, q) - a(p, p)) / (2.0 * a(p, q));
                const double t =
                    (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;
                Mat3 rot = Mat3::Identity();
                rot(p, p) = c;
                rot(q, q) = c;
                rot(p, q) = s;
                rot(q, p) = -s;
                a = rot.transpose() * a * rot;
                v = v * rot;
            }
        }
    }
    std::vector<int> order{0, 1, 2};
    std::sort(order.begin(), order.end(), [&](int i, int j) { return a(i, i) > a(j, j); });
    for (int i = 0; i < 3; ++i) {
        eigenvalues[i] = a(order[i], order[i]);
        eigenvectors.col(i) = v.col(order[i]);
    }
}

// Least-squares plane fit z = ax + by + c via normal equations; returns the
// unit plane normal. Valid for near-horizontal planes (test fixtures).
inline Vec3 plane_fit_normal(const std::vector<Vec3>& pts) {
    Eigen::Matrix3d ata = Eigen::Matrix3d::Zero();
    Eigen::Vector3d atz = Eigen::Vector3d::Zero();
    for (const Vec3& p : pts) {
        const Eigen::Vector3d row(p.x(), p.y(), 1.0);
        ata += row * row.transpose();
        atz += row * p.z();
    }
    const Eigen::Vector3d coef = ata.ldlt().solve(atz);
    Vec3 n(-coef[0], -coef[1], 1.0);
    return n.normalized();
}

}  // namespace lbf::oracle
