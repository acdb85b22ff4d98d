#pragma once

#include <cmath>
#include <numbers>
#include <random>

#include "lbf/geometry.hpp"

// Synthetic test shapes with analytic normals.
namespace lbf::shapes {

inline PointCloud plane(int n, std::uint64_t seed, double side = 1.0) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, side);
    PointCloud c;
    c.points.reserve(n);
    c.normals.reserve(n);
    for (int i = 0; i < n; ++i) {
        c.points.emplace_back(u(rng), u(rng), 0.0);
        c.normals.emplace_back(0.0, 0.0, 1.0);
    }
    return c;
}

inline PointCloud sphere(int n, std::uint64_t seed, double radius = 0.5) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> g(0.0, 1.0);
    PointCloud c;
    c.points.reserve(n);
    c.normals.reserve(n);
    for (int i = 0; i < n; ++i) {
        Vec3 d(g(rng), g(rng), g(rng));
        while (d.norm() < 1e-9) d = Vec3(g(rng), g(rng), g(rng));
        d.normalize();
        c.points.push_back(radius * d);
        c.normals.push_back(d);
    }
    return c;
}

// axis-aligned cube surface, side 1 centered at the origin
inline PointCloud cube(int n, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(-0.5, 0.5);
    std::uniform_int_distribution<int> face(0, 5);
    PointCloud c;
    c.points.reserve(n);
    c.normals.reserve(n);
    for (int i = 0; i < n; ++i) {
        const int f = face(rng);
        const int axis = f / 2;
        const double s = (f % 2 == 0) ? -0.5 : 0.5;
        Vec3 p(u(rng), u(rng), u(rng));
        p[axis] = s;
        Vec3 nrm = Vec3::Zero();
        nrm[axis] = (f % 2 == 0) ? -1.0 : 1.0;
        c.points.push_back(p);
        c.normals.push_back(nrm);
    }
    return c;
}

inline PointCloud torus(int n, std::uint64_t seed, double R = 0.4, double r = 0.15) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 2.0 * std::numbers::pi);
    PointCloud c;
    c.points.reserve(n);
    c.normals.reserve(n);
    for (int i = 0; i < n; ++i) {
        const double a = u(rng);  // around the tube center circle
        const double b = u(rng);  // around the tube
        const Vec3 ring(std::cos(a), std::sin(a), 0.0);
        const Vec3 nrm = std::cos(b) * ring + std::sin(b) * Vec3(0, 0, 1);
        c.points.push_back(R * ring + r * nrm);
        c.normals.push_back(nrm);
    }
    return c;
}

// cylinder with caps, radius r, height h, axis z, centered
inline PointCloud cylinder(int n, std::uint64_t seed, double r = 0.3, double h = 0.8) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    const double side_area = 2.0 * std::numbers::pi * r * h;
    const double cap_area = std::numbers::pi * r * r;
    const double p_side = side_area / (side_area + 2.0 * cap_area);
    PointCloud c;
    c.points.reserve(n);
    c.normals.reserve(n);
    for (int i = 0; i < n; ++i) {
        const double pick = u01(rng);
        const double ang = 2.0 * std::numbers::pi * u01(rng);
        if (pick < p_side) {
            const double z = (u01(rng) - 0.5) * h;
            c.points.emplace_back(r * std::cos(ang), r * std::sin(ang), z);
            c.normals.emplace_back(std::cos(ang), std::sin(ang), 0.0);
        } else {
            const double rad = r * std::sqrt(u01(rng));
            const double z = (pick < p_side + (1.0 - p_side) / 2.0) ? h / 2.0 : -h / 2.0;
            c.points.emplace_back(rad * std::cos(ang), rad * std::sin(ang), z);
            c.normals.emplace_back(0.0, 0.0, z > 0.0 ? 1.0 : -1.0);
        }
    }
    return c;
}

inline PointCloud random_box(int n, std::uint64_t seed, double side = 1.0) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, side);
    PointCloud c;
    c.points.reserve(n);
    for (int i = 0; i < n; ++i) c.points.emplace_back(u(rng), u(rng), u(rng));
    return c;
}

inline Mat3 random_rotation(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> g(0.0, 1.0);
    Eigen::Quaterniond q(g(rng), g(rng), g(rng), g(rng));
    q.normalize();
    return q.toRotationMatrix();
}

inline PointCloud transformed(const PointCloud& cloud, const Mat3& rot, const Vec3& shift) {
    PointCloud out;
    out.points.reserve(cloud.size());
    for (const Vec3& p : cloud.points) out.points.push_back(rot * p + shift);
    out.normals.reserve(cloud.normals.size());
    for (const Vec3& n : cloud.normals) out.normals.push_back(rot * n);
    return out;
}

}  // namespace lbf::shapes
