#include "lbf/metrics.hpp"

#include "lbf/parallel.hpp"

#include <atomic>
#include <vector>

namespace lbf {

namespace {

// mean over `from` of the squared distance to the nearest point of `to`
double mean_nearest_sq(const PointCloud& from, const KdTree& to_index) {
    std::vector<double> d2(from.size());
    parallel_for(from.size(), [&](std::size_t i) {
        const std::vector<int> nn = to_index.knn_query(from.points[i], 1);
        d2[i] = (to_index.point(nn.front()) - from.points[i]).squaredNorm();
    });
    double sum = 0.0;
    for (double v : d2) sum += v;
    return sum / static_cast<double>(from.size());
}

}  // namespace

double chamfer_distance(const PointCloud& a, const PointCloud& b) {
    if (a.points.empty() || b.points.empty()) throw EmptyInput("chamfer_distance: empty cloud");
    const KdTree ia(a);
    const KdTree ib(b);
    return mean_nearest_sq(a, ib) + mean_nearest_sq(b, ia);
}

double mse(const PointCloud& denoised, const PointCloud& clean, int k) {
    if (denoised.points.empty() || clean.points.empty()) throw EmptyInput("mse: empty cloud");
    if (k < 1 || static_cast<std::size_t>(k) > clean.size())
        throw ConfigError("mse: k must be in [1, |clean|]");
    const KdTree index(clean);
    std::vector<double> avg(denoised.size());
    parallel_for(denoised.size(), [&](std::size_t i) {
        const std::vector<int> nn = index.knn_query(denoised.points[i], k);
        double s = 0.0;
        for (int j : nn) s += (index.point(j) - denoised.points[i]).norm();
        avg[i] = s / static_cast<double>(nn.size());
    });
    double sum = 0.0;
    for (double v : avg) sum += v;
    return sum / static_cast<double>(denoised.size());
}

EvalReport evaluate(const PointCloud& denoised, const PointCloud& clean, int k) {
    EvalReport rep;
    rep.cd = chamfer_distance(denoised, clean);
    rep.mse = mse(denoised, clean, k);
    rep.n_denoised = denoised.size();
    rep.n_clean = clean.size();
    return rep;
}

}  // namespace lbf
