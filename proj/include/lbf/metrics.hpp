#pragma once

#include "lbf/geometry.hpp"

namespace lbf {

struct EvalReport {
    double cd = 0.0;
    double mse = 0.0;
    std::size_t n_denoised = 0;
    std::size_t n_clean = 0;
};

/// Chamfer distance, squared bidirectional-mean convention:
///   CD = mean_a min_b |a-b|^2 + mean_b min_a |a-b|^2.
/// Symmetric in its arguments. Throws EmptyInput on an empty cloud.
double chamfer_distance(const PointCloud& a, const PointCloud& b);

/// Mean over denoised points of the average Euclidean distance to their k
/// nearest clean points (not symmetric). Throws ConfigError when k exceeds
/// the clean cloud size.
double mse(const PointCloud& denoised, const PointCloud& clean, int k = 10);

EvalReport evaluate(const PointCloud& denoised, const PointCloud& clean, int k = 10);

}  // namespace lbf
