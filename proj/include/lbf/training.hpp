#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "lbf/filter.hpp"
#include "lbf/loss.hpp"
#include "lbf/network.hpp"
#include "lbf/patch.hpp"

namespace lbf {

struct TrainConfig {
    std::vector<double> noise_levels{0.005, 0.010, 0.015};  // fractions of the bbox diagonal
    std::vector<ScaleSpec> scales{{0, 0.03}, {1, 0.04}, {2, 0.05}};
    int patch_size = 400;  // M
    double lr = 1e-4;
    double lr_decay = 0.1;
    int decay_every = 5;  // epochs
    int epochs = 25;
    int batch_size = 32;
    double eta = 0.97;
    double eps_n_degrees = 15.0;
    std::uint64_t seed = 0;
    // desk-scale knobs
    int max_patches_per_shape = 1000;  // per epoch, split across noise levels
    unsigned threads = 0;              // 0 = hardware concurrency
    Architecture architecture;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_epsilon = 1e-8;
};

/// Throws ConfigError on out-of-range values (noise levels above 1.5%, eta
/// outside [0,1], non-positive lr, ...).
void validate(const TrainConfig& cfg);

/// Canonical key=value rendering of a config; hashed into checkpoints so a
/// resume can detect a mismatched configuration.
std::string config_text(const TrainConfig& cfg);
std::uint64_t config_hash(const TrainConfig& cfg);

/// Applies key=value lines onto an existing config. In strict mode malformed
/// lines and unknown keys raise ParseError; otherwise they are skipped (used
/// when re-reading checkpoint sidecars, which carry extra keys).
void apply_config_text(TrainConfig& cfg, const std::string& text, bool strict);

/// lr(epoch) = lr * lr_decay^(epoch / decay_every), integer power by
/// repeated multiplication.
double learning_rate(const TrainConfig& cfg, int epoch);

/// One noisy patch paired with its clean target in the same canonical frame.
struct TrainSample {
    MultiScalePatch noisy;
    TargetPatch clean;
    int shape_id = 0;
    int noise_index = 0;
};

/// Per-coordinate Gaussian perturbation with sigma = sigma_fraction *
/// bbox_diagonal(cloud). The noisy copy drops normals. Bit-reproducible for a
/// given seed.
PointCloud add_gaussian_noise(const PointCloud& cloud, double sigma_fraction, std::uint64_t seed);

/// Materializes the epoch-0 sample set: every shape x noise level, one sample
/// per selected point (all points when the per-shape cap is not exceeded),
/// ordered by (shape, noise level, point index). Points whose neighborhoods
/// are too sparse to form a patch are dropped. Throws MissingNormals when a
/// shape lacks normals.
std::vector<TrainSample> build_dataset(const std::vector<PointCloud>& shapes,
                                       const TrainConfig& cfg);

/// Analytic derivative of bilateral_displacement with respect to the sigmas:
///   d w / d sigma_d = w * d_d^2 / sigma_d^3,  d w / d sigma_n = w * d_n^2 / sigma_n^3,
/// combined through the quotient rule. Returns (d/d sigma_d, d/d sigma_n).
std::pair<double, double> d_delta_p_d_sigmas(const Vec3& p, std::span<const Vec3> neighbors,
                                             const Vec3& n_p, const FilterParams& params);

/// Forward pass of the training chain on one sample: network -> bilateral
/// filter -> filtered point -> loss against the clean patch (largest scale).
/// The center/filtered-point normals are looked up in the clean patch unless
/// frozen values are supplied (the finite-difference harness freezes them to
/// keep the chain differentiable).
struct ChainResult {
    LossBreakdown loss;
    FilterParams params;
    double delta_p = 0.0;
    Vec3 p_bar = Vec3::Zero();
    Vec3 n_p = Vec3::Zero();
    Vec3 n_center = Vec3::Zero();
    Vec3 n_pbar = Vec3::Zero();
};

ChainResult chain_forward(const LbfModel& model, const TrainSample& sample,
                          const LossWeights& weights, ForwardCache* cache = nullptr,
                          const Vec3* frozen_n_center = nullptr,
                          const Vec3* frozen_n_pbar = nullptr);

/// Accumulates d(loss.total)/d(model weights) for the chain evaluated by
/// chain_forward with `cache`.
void chain_backward(const LbfModel& model, const ForwardCache& cache, const ChainResult& result,
                    const TrainSample& sample, Gradients& accum);

struct AdamState {
    Eigen::VectorXd m;
    Eigen::VectorXd v;
    std::uint64_t t = 0;
};

/// One optimizer step over all trainable tensors in declaration order.
void adam_step(LbfModel& model, const Gradients& grads, AdamState& state, double lr,
               const TrainConfig& cfg);

struct EpochLog {
    int epoch = 0;
    double lr = 0.0;
    double mean_loss = 0.0;
    std::size_t samples = 0;
};

/// Model + optimizer state + completed-epoch counter. All sampling noise is
/// derived functionally from (config seed, epoch, indices), so no generator
/// state needs to survive a resume.
struct Checkpoint {
    LbfModel model;
    AdamState adam;
    int epochs_done = 0;
    TrainConfig config;
};

/// Writes `path` (model, LBF1 format), `path.opt` (optimizer state) and
/// `path.meta` (key=value sidecar).
void save_checkpoint(const Checkpoint& cp, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// End-to-end training. Checkpoints to out_path after every epoch; resuming
/// from a checkpoint of the same config reproduces the uninterrupted run
/// bitwise. Gradient accumulation is ordered by sample index, so results do
/// not depend on the worker count. Throws TrainingDiverged on a non-finite
/// loss, identifying the offending sample.
Checkpoint train(const std::vector<PointCloud>& shapes, const TrainConfig& cfg,
                 const std::filesystem::path& out_path, std::vector<EpochLog>* log = nullptr,
                 const Checkpoint* resume = nullptr);

}  // namespace lbf
