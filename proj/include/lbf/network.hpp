#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <filesystem>
#include <vector>

#include "lbf/filter.hpp"
#include "lbf/patch.hpp"

namespace lbf {

inline constexpr std::uint32_t kModelFormatVersion = 1;
inline constexpr double kSigmaFloor = 1e-4;

enum class Activation : std::uint32_t { Relu = 0 };

/// One affine layer, y = weight * x + bias. weight is (out x in).
struct DenseLayer {
    Eigen::MatrixXd weight;
    Eigen::VectorXd bias;
};

struct Mlp {
    std::vector<DenseLayer> layers;
};

/// Free architecture constants (the encoder widths follow the paper; decoder
/// and fusion widths are recorded in the model file so runs are comparable).
struct Architecture {
    std::vector<int> encoder_widths{64, 128, 256, 512};
    std::vector<int> head_widths{256, 64};
    std::vector<int> fusion_widths{64};
};

/// Parameter-prediction network: per-scale point encoders with max-pooling,
/// per-scale sigma heads over the concatenated features, and a fusion stack
/// that softmax-weights the per-scale sigma predictions.
struct LbfModel {
    std::uint32_t version = kModelFormatVersion;
    Activation activation = Activation::Relu;
    int scale_count = 0;  // K
    int patch_size = 0;   // M
    std::vector<Mlp> encoders;       // K stacks, input width 3
    std::vector<Mlp> sigma_d_heads;  // K stacks, input K*feature_dim, output 1
    std::vector<Mlp> sigma_n_heads;  // K stacks, input K*feature_dim, output 1
    Mlp fusion;                      // input K*feature_dim, output K logits

    int feature_dim() const {
        return encoders.empty() ? 0 : static_cast<int>(encoders.front().layers.back().bias.size());
    }
};

/// Same tensor layout as the trainable fields of LbfModel.
struct Gradients {
    std::vector<Mlp> encoders;
    std::vector<Mlp> sigma_d_heads;
    std::vector<Mlp> sigma_n_heads;
    Mlp fusion;
};

/// Applies fn(DenseLayer&) to every layer in declaration order: encoders,
/// sigma_d heads, sigma_n heads, fusion. Works on LbfModel and Gradients.
template <typename ModelLike, typename Fn>
void for_each_layer(ModelLike& m, Fn&& fn) {
    for (auto& mlp : m.encoders)
        for (auto& layer : mlp.layers) fn(layer);
    for (auto& mlp : m.sigma_d_heads)
        for (auto& layer : mlp.layers) fn(layer);
    for (auto& mlp : m.sigma_n_heads)
        for (auto& layer : mlp.layers) fn(layer);
    for (auto& layer : m.fusion.layers) fn(layer);
}

/// Glorot-uniform initialized model (biases zero), deterministic in the seed.
LbfModel make_model(int K, int M, const Architecture& arch, std::uint64_t seed);

/// Stub whose heads ignore the input and always emit the given sigmas; used
/// by the classical-equivalence oracle. Uses a minimal architecture.
LbfModel make_constant_model(int K, int M, double sigma_d, double sigma_n);

Gradients make_zero_gradients(const LbfModel& model);
std::size_t parameter_count(const LbfModel& model);

/// Activations recorded by forward() for use by backward(). One cache per
/// concurrent caller.
struct ForwardCache {
    struct ScaleCache {
        Eigen::MatrixXd input;                       // deduplicated points, D x 3
        std::vector<Eigen::MatrixXd> activations;    // post-relu per layer, D x width
        std::vector<int> winners;                    // argmax row per feature column
    };
    std::vector<ScaleCache> scales;
    Eigen::VectorXd concat;                          // fused feature vector
    std::vector<std::vector<Eigen::VectorXd>> head_hidden[2];  // [param][k][layer]
    std::vector<double> raw_sigma[2];                // pre-softplus head outputs
    std::vector<double> soft_sigma[2];               // after positivity map
    std::vector<Eigen::VectorXd> fusion_hidden;
    Eigen::VectorXd fusion_weights;                  // softmax output, sums to 1
    bool evaluated = false;
};

/// Shared per-point MLP over one scale's M canonical points followed by a
/// componentwise max over the point features. Duplicate rows (padding) are
/// collapsed before the MLP, which makes the feature exactly invariant to
/// point order and duplication. Throws ConfigMismatch on shape mismatch.
Eigen::VectorXd encode_scale(const std::vector<Vec3>& patch_points, const LbfModel& model,
                             int scale_idx);

/// Decodes K per-scale features into filter parameters: per-scale heads emit
/// raw sigmas, the positivity map softplus(x) + 1e-4 is applied, and the
/// fusion stack softmax-weights the per-scale results.
FilterParams fuse_and_decode(const Eigen::MatrixXd& features, const LbfModel& model);

FilterParams forward(const MultiScalePatch& patch, const LbfModel& model);
FilterParams forward(const MultiScalePatch& patch, const LbfModel& model, ForwardCache& cache);

/// Exact reverse-mode gradients of forward() given the upstream derivatives
/// with respect to (sigma_d, sigma_n). Requires the cache filled by forward;
/// throws UsageError otherwise. Accumulates into `accum`.
void backward(const LbfModel& model, const ForwardCache& cache, double d_sigma_d,
              double d_sigma_n, Gradients& accum);
Gradients backward(const LbfModel& model, const ForwardCache& cache, double d_sigma_d,
                   double d_sigma_n);

/// Little-endian binary model format: magic "LBF1", format version,
/// activation, K, M, per-group layer counts, a (rows, cols) shape table, then
/// per layer the row-major f64 weight matrix followed by the bias vector.
std::vector<std::uint8_t> serialize(const LbfModel& model);
LbfModel deserialize(const std::vector<std::uint8_t>& bytes);

void save_model(const LbfModel& model, const std::filesystem::path& path);
LbfModel load_model(const std::filesystem::path& path);

/// Numerically stable softplus and logistic; exposed for the gradient tests.
double softplus(double x);
double logistic(double x);

}  // namespace lbf
