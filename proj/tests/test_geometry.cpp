#include <doctest.h>

#include <random>

#include "lbf/geometry.hpp"
#include "support/oracles.hpp"
#include "support/shapes.hpp"

using namespace lbf;

TEST_CASE("bbox diagonal") {
    PointCloud cube;
    for (int x = 0; x <= 1; ++x)
        for (int y = 0; y <= 1; ++y)
            for (int z = 0; z <= 1; ++z) cube.points.emplace_back(x, y, z);
    CHECK(bbox_diagonal(cube) == doctest::Approx(std::sqrt(3.0)).epsilon(1e-12));

    PointCloud two;
    two.points = {{0, 0, 0}, {3, 4, 0}};
    CHECK(bbox_diagonal(two) == doctest::Approx(5.0).epsilon(1e-12));

    // permutation invariance + oracle on a random cloud
    PointCloud rnd = shapes::random_box(200, 7);
    const double d = bbox_diagonal(rnd);
    Vec3 lo = rnd.points[0], hi = rnd.points[0];
    for (const Vec3& p : rnd.points) {
        lo = lo.cwiseMin(p);
        hi = hi.cwiseMax(p);
    }
    CHECK(d == doctest::Approx((hi - lo).norm()).epsilon(1e-15));
    std::reverse(rnd.points.begin(), rnd.points.end());
    CHECK(bbox_diagonal(rnd) == d);

    PointCloud degenerate;
    degenerate.points = {{1, 1, 1}, {1, 1, 1}};
    CHECK_THROWS_AS(bbox_diagonal(degenerate), DegenerateGeometry);
    CHECK_THROWS_AS(bbox_diagonal(PointCloud{}), EmptyInput);
}

TEST_CASE("kd-tree radius query matches brute force") {
    PointCloud cloud = shapes::random_box(1000, 42);
    KdTree index(cloud);
    for (int i = 0; i < 1000; i += 17) {
        const auto got = index.radius_query(cloud.points[i], 0.1);
        const auto want = oracle::radius_scan(cloud, cloud.points[i], 0.1);
        CHECK(got == want);
    }

    // unit cube grid, query from the center
    PointCloud grid;
    for (int x = 0; x < 10; ++x)
        for (int y = 0; y < 10; ++y)
            for (int z = 0; z < 10; ++z) grid.points.emplace_back(x / 9.0, y / 9.0, z / 9.0);
    KdTree gi(grid);
    const Vec3 c(0.5, 0.5, 0.5);
    CHECK(gi.radius_query(c, 0.2) == oracle::radius_scan(grid, c, 0.2));

    // radius beyond the diagonal returns everything
    CHECK(gi.radius_query(c, 10.0).size() == grid.size());
}

TEST_CASE("kd-tree strict inequality and duplicates") {
    PointCloud cloud;
    cloud.points = {{0, 0, 0}, {1, 0, 0}, {0, 0, 0}, {0.5, 0, 0}};
    KdTree index(cloud);

    // r ~ 0 keeps only exact duplicates of the center
    const auto dup = index.radius_query(Vec3(0, 0, 0), 1e-12);
    CHECK(dup == std::vector<int>{0, 2});

    // a point at exactly distance r is excluded
    CHECK(index.radius_query(Vec3(0, 0, 0), 0.5) == std::vector<int>{0, 2});
    CHECK(index.radius_query(Vec3(0, 0, 0), 0.5 + 1e-9) == std::vector<int>{0, 2, 3});

    PointCloud single;
    single.points = {{1, 2, 3}};
    KdTree si(single);
    CHECK(si.radius_query(Vec3(1, 2, 3), 0.1) == std::vector<int>{0});
    CHECK(si.radius_query(Vec3(9, 9, 9), 0.1).empty());

    CHECK_THROWS_AS(KdTree(PointCloud{}), EmptyInput);
}

TEST_CASE("kd-tree knn matches brute force") {
    PointCloud cloud = shapes::random_box(500, 3);
    KdTree index(cloud);
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> u(0, 1);
    for (int t = 0; t < 50; ++t) {
        const Vec3 q(u(rng), u(rng), u(rng));
        for (int k : {1, 5, 10}) {
            CHECK(index.knn_query(q, k) == oracle::knn_scan(cloud, q, k));
        }
    }
    CHECK(index.knn_query(Vec3(0, 0, 0), 1000).size() == cloud.size());
}

TEST_CASE("pca_frame planar and degenerate input") {
    const std::vector<Vec3> planar = {{1, 0, 0}, {-1, 0, 0}, {0, 1, 0}, {0, -1, 0}};
    const PcaResult res = pca_frame(planar);
    CHECK(res.eigenvalues[2] == doctest::Approx(0.0).epsilon(1e-15));
    CHECK(std::abs(res.frame.rotation.col(2).z()) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(res.frame.centroid.norm() == doctest::Approx(0.0).epsilon(1e-15));

    CHECK_THROWS_AS(pca_frame({{0, 0, 0}, {1, 1, 1}}), DegenerateGeometry);
    // collinear
    CHECK_THROWS_AS(pca_frame({{0, 0, 0}, {1, 0, 0}, {2, 0, 0}, {3, 0, 0}}), DegenerateGeometry);
}

TEST_CASE("pca_frame matches an independent Jacobi eigensolver") {
    std::mt19937_64 rng(5);
    std::normal_distribution<double> g(0.0, 1.0);
    std::vector<Vec3> pts;
    for (int i = 0; i < 500; ++i) pts.emplace_back(3.0 * g(rng), 2.0 * g(rng), 1.0 * g(rng));

    const PcaResult res = pca_frame(pts);

    // rebuild the covariance exactly as specified (1/m, about the mean)
    Vec3 mean = Vec3::Zero();
    for (const Vec3& p : pts) mean += p;
    mean /= static_cast<double>(pts.size());
    Mat3 cov = Mat3::Zero();
    for (const Vec3& p : pts) cov += (p - mean) * (p - mean).transpose();
    cov /= static_cast<double>(pts.size());

    Vec3 evals;
    Mat3 evecs;
    oracle::jacobi_eigen(cov, evals, evecs);
    for (int i = 0; i < 3; ++i) {
        CHECK(res.eigenvalues[i] == doctest::Approx(evals[i]).epsilon(1e-9));
        // compare directions up to sign
        CHECK(std::abs(res.frame.rotation.col(i).dot(evecs.col(i))) ==
              doctest::Approx(1.0).epsilon(1e-9));
    }
    // near axis-aligned for this anisotropic sample
    for (int i = 0; i < 3; ++i) CHECK(std::abs(res.frame.rotation(i, i)) > 0.99);
}

TEST_CASE("pca_frame orthonormality, determinant, equivariance") {
    std::mt19937_64 rng(9);
    std::normal_distribution<double> g(0.0, 1.0);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<Vec3> pts;
        for (int i = 0; i < 50; ++i)
            pts.emplace_back(2.5 * g(rng), 1.3 * g(rng), 0.4 * g(rng));
        const PcaResult res = pca_frame(pts);
        const Mat3 R = res.frame.rotation;
        CHECK((R.transpose() * R - Mat3::Identity()).norm() < 1e-6);
        CHECK(R.determinant() == doctest::Approx(1.0).epsilon(1e-6));
        CHECK(res.eigenvalues[0] >= res.eigenvalues[1]);
        CHECK(res.eigenvalues[1] >= res.eigenvalues[2]);

        const Mat3 Q = shapes::random_rotation(100 + trial);
        std::vector<Vec3> rotated;
        for (const Vec3& p : pts) rotated.push_back(Q * p);
        const PcaResult rres = pca_frame(rotated);
        for (int i = 0; i < 3; ++i) {
            CHECK(std::abs(rres.frame.rotation.col(i).dot(Q * R.col(i))) ==
                  doctest::Approx(1.0).epsilon(1e-9));
        }
    }
}

TEST_CASE("estimate_normal on exact and noisy planes") {
    PointCloud plane = shapes::plane(300, 21);
    KdTree index(plane);
    const Vec3 n = estimate_normal(index, plane, 150, 0.3);
    CHECK(std::abs(n.z()) == doctest::Approx(1.0).epsilon(1e-9));

    // noisy plane: within 2 degrees of +z, cross-checked with a regression fit
    std::mt19937_64 rng(2);
    std::normal_distribution<double> g(0.0, 0.01);
    std::vector<Vec3> nbrs;
    std::uniform_real_distribution<double> u(-0.5, 0.5);
    for (int i = 0; i < 200; ++i) nbrs.emplace_back(u(rng), u(rng), g(rng));
    const Vec3 noisy_n = estimate_normal(nbrs);
    CHECK(std::abs(noisy_n.z()) > std::cos(2.0 * std::numbers::pi / 180.0));
    const Vec3 fit = oracle::plane_fit_normal(nbrs);
    CHECK(std::abs(noisy_n.dot(fit)) > std::cos(2.0 * std::numbers::pi / 180.0));
}

TEST_CASE("estimate_normal on a sphere approximates the radial direction") {
    PointCloud sph = shapes::sphere(5000, 77);
    KdTree index(sph);
    for (int i = 0; i < 5000; i += 531) {
        const Vec3 n = estimate_normal(index, sph, i, 0.08);
        const Vec3 radial = sph.points[i].normalized();
        CHECK(std::abs(n.dot(radial)) > std::cos(5.0 * std::numbers::pi / 180.0));
    }
}

TEST_CASE("estimate_normal needs three neighbors") {
    PointCloud tiny;
    tiny.points = {{0, 0, 0}, {1, 0, 0}, {5, 5, 5}};
    KdTree index(tiny);
    CHECK_THROWS_AS(estimate_normal(index, tiny, 0, 1.5), InsufficientNeighbors);
}
