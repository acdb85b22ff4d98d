#include "lbf/network.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <random>

#include "lbf/rng.hpp"

namespace lbf {

double softplus(double x) {
    return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

double logistic(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

namespace {

double softplus_inverse(double y) {
    // y = log(1 + e^x)  =>  x = log(e^y - 1)
    return y > 30.0 ? y : std::log(std::expm1(y));
}

Mlp make_mlp(const std::vector<int>& widths, std::mt19937_64& rng) {
    Mlp mlp;
    mlp.layers.reserve(widths.size() - 1);
    for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
        const int in = widths[l];
        const int out = widths[l + 1];
        const double a = std::sqrt(6.0 / static_cast<double>(in + out));
        std::uniform_real_distribution<double> dist(-a, a);
        DenseLayer layer;
        layer.weight.resize(out, in);
        for (int r = 0; r < out; ++r)
            for (int c = 0; c < in; ++c) layer.weight(r, c) = dist(rng);
        layer.bias = Eigen::VectorXd::Zero(out);
        mlp.layers.push_back(std::move(layer));
    }
    return mlp;
}

std::vector<int> chain(int input, const std::vector<int>& hidden, int output) {
    std::vector<int> widths{input};
    widths.insert(widths.end(), hidden.begin(), hidden.end());
    widths.push_back(output);
    return widths;
}

}  // namespace

LbfModel make_model(int K, int M, const Architecture& arch, std::uint64_t seed) {
    if (K < 1 || M < 1) throw ConfigError("make_model: K and M must be >= 1");
    if (arch.encoder_widths.empty()) throw ConfigError("make_model: empty encoder widths");

    LbfModel model;
    model.scale_count = K;
    model.patch_size = M;
    const int feat = arch.encoder_widths.back();

    std::uint64_t counter = 0;
    auto next_rng = [&] { return std::mt19937_64(mix_seed(seed, counter++)); };

    std::vector<int> enc_widths{3};
    enc_widths.insert(enc_widths.end(), arch.encoder_widths.begin(), arch.encoder_widths.end());
    for (int k = 0; k < K; ++k) {
        auto rng = next_rng();
        model.encoders.push_back(make_mlp(enc_widths, rng));
    }
    const std::vector<int> head_widths = chain(K * feat, arch.head_widths, 1);
    for (int k = 0; k < K; ++k) {
        auto rng = next_rng();
        model.sigma_d_heads.push_back(make_mlp(head_widths, rng));
    }
    for (int k = 0; k < K; ++k) {
        auto rng = next_rng();
        model.sigma_n_heads.push_back(make_mlp(head_widths, rng));
    }
    auto rng = next_rng();
    model.fusion = make_mlp(chain(K * feat, arch.fusion_widths, K), rng);
    return model;
}

LbfModel make_constant_model(int K, int M, double sigma_d, double sigma_n) {
    if (sigma_d <= kSigmaFloor || sigma_n <= kSigmaFloor)
        throw ConfigError("make_constant_model: sigmas must exceed the positivity floor");
    Architecture arch;
    arch.encoder_widths = {4};
    arch.head_widths = {};
    arch.fusion_widths = {};
    LbfModel model = make_model(K, M, arch, 0);
    for_each_layer(model, [](DenseLayer& layer) {
        layer.weight.setZero();
        layer.bias.setZero();
    });
    for (int k = 0; k < K; ++k) {
        model.sigma_d_heads[k].layers.back().bias[0] = softplus_inverse(sigma_d - kSigmaFloor);
        model.sigma_n_heads[k].layers.back().bias[0] = softplus_inverse(sigma_n - kSigmaFloor);
    }
    return model;
}

Gradients make_zero_gradients(const LbfModel& model) {
    Gradients g;
    auto zero_of = [](const Mlp& src) {
        Mlp out;
        out.layers.reserve(src.layers.size());
        for (const DenseLayer& l : src.layers)
            out.layers.push_back({Eigen::MatrixXd::Zero(l.weight.rows(), l.weight.cols()),
                                  Eigen::VectorXd::Zero(l.bias.size())});
        return out;
    };
    for (const Mlp& m : model.encoders) g.encoders.push_back(zero_of(m));
    for (const Mlp& m : model.sigma_d_heads) g.sigma_d_heads.push_back(zero_of(m));
    for (const Mlp& m : model.sigma_n_heads) g.sigma_n_heads.push_back(zero_of(m));
    g.fusion = zero_of(model.fusion);
    return g;
}

std::size_t parameter_count(const LbfModel& model) {
    std::size_t n = 0;
    for_each_layer(const_cast<LbfModel&>(model), [&](DenseLayer& l) {
        n += static_cast<std::size_t>(l.weight.size() + l.bias.size());
    });
    return n;
}

namespace {

// Distinct patch rows in lexicographic order. Collapsing duplicates before
// the MLP makes the pooled feature exactly independent of point order and
// multiplicity, and skips redundant work on origin padding.
Eigen::MatrixXd dedup_rows(const std::vector<Vec3>& points) {
    std::vector<Vec3> rows = points;
    auto less = [](const Vec3& a, const Vec3& b) {
        if (a.x() != b.x()) return a.x() < b.x();
        if (a.y() != b.y()) return a.y() < b.y();
        return a.z() < b.z();
    };
    std::sort(rows.begin(), rows.end(), less);
    rows.erase(std::unique(rows.begin(), rows.end(),
                           [](const Vec3& a, const Vec3& b) { return a == b; }),
               rows.end());
    Eigen::MatrixXd X(static_cast<Eigen::Index>(rows.size()), 3);
    for (std::size_t i = 0; i < rows.size(); ++i) X.row(static_cast<Eigen::Index>(i)) = rows[i];
    return X;
}

// Runs the per-point MLP and max-pool for one scale, filling the cache entry.
Eigen::VectorXd encode_scale_impl(const std::vector<Vec3>& pts, const Mlp& encoder,
                                  ForwardCache::ScaleCache* cache) {
    Eigen::MatrixXd A = dedup_rows(pts);
    if (cache) cache->input = A;
    for (const DenseLayer& layer : encoder.layers) {
        Eigen::MatrixXd Z = (A * layer.weight.transpose()).rowwise() + layer.bias.transpose();
        A = Z.cwiseMax(0.0);
        if (cache) cache->activations.push_back(A);
    }
    const Eigen::Index D = A.rows();
    const Eigen::Index F = A.cols();
    Eigen::VectorXd feature(F);
    if (cache) cache->winners.assign(static_cast<std::size_t>(F), 0);
    for (Eigen::Index j = 0; j < F; ++j) {
        Eigen::Index winner = 0;
        double best = A(0, j);
        for (Eigen::Index r = 1; r < D; ++r) {
            if (A(r, j) > best) {
                best = A(r, j);
                winner = r;
            }
        }
        feature[j] = best;
        if (cache) cache->winners[static_cast<std::size_t>(j)] = static_cast<int>(winner);
    }
    return feature;
}

// MLP forward on a vector: relu on all but the last layer.
Eigen::VectorXd mlp_forward(const Mlp& mlp, const Eigen::VectorXd& input,
                            std::vector<Eigen::VectorXd>* hidden) {
    Eigen::VectorXd h = input;
    for (std::size_t l = 0; l < mlp.layers.size(); ++l) {
        Eigen::VectorXd z = mlp.layers[l].weight * h + mlp.layers[l].bias;
        if (l + 1 < mlp.layers.size()) {
            h = z.cwiseMax(0.0);
            if (hidden) hidden->push_back(h);
        } else {
            h = std::move(z);
        }
    }
    return h;
}

// Backward through an MLP given d(loss)/d(output); accumulates layer grads
// and returns d(loss)/d(input).
Eigen::VectorXd mlp_backward(const Mlp& mlp, const Eigen::VectorXd& input,
                             const std::vector<Eigen::VectorXd>& hidden,
                             Eigen::VectorXd grad_out, Mlp& grad_accum) {
    for (std::size_t l = mlp.layers.size(); l-- > 0;) {
        const Eigen::VectorXd& layer_in = (l == 0) ? input : hidden[l - 1];
        if (l + 1 < mlp.layers.size()) {
            // relu was applied to this layer's output
            const Eigen::VectorXd& act = hidden[l];
            for (Eigen::Index i = 0; i < grad_out.size(); ++i)
                if (act[i] <= 0.0) grad_out[i] = 0.0;
        }
        grad_accum.layers[l].weight.noalias() += grad_out * layer_in.transpose();
        grad_accum.layers[l].bias += grad_out;
        grad_out = mlp.layers[l].weight.transpose() * grad_out;
    }
    return grad_out;
}

Eigen::VectorXd stable_softmax(const Eigen::VectorXd& logits) {
    const double m = logits.maxCoeff();
    Eigen::VectorXd w = (logits.array() - m).exp();
    return w / w.sum();
}

}  // namespace

Eigen::VectorXd encode_scale(const std::vector<Vec3>& patch_points, const LbfModel& model,
                             int scale_idx) {
    if (scale_idx < 0 || scale_idx >= model.scale_count)
        throw ConfigMismatch("encode_scale: scale index out of range");
    if (static_cast<int>(patch_points.size()) != model.patch_size)
        throw ConfigMismatch("encode_scale: patch size does not match the model");
    return encode_scale_impl(patch_points, model.encoders[scale_idx], nullptr);
}

FilterParams fuse_and_decode(const Eigen::MatrixXd& features, const LbfModel& model) {
    const int K = model.scale_count;
    const int F = model.feature_dim();
    if (features.rows() != K || features.cols() != F)
        throw ConfigMismatch("fuse_and_decode: feature shape does not match the model");

    Eigen::VectorXd concat(K * F);
    for (int k = 0; k < K; ++k) concat.segment(k * F, F) = features.row(k);

    const Eigen::VectorXd logits = mlp_forward(model.fusion, concat, nullptr);
    const Eigen::VectorXd weights = stable_softmax(logits);

    FilterParams out;
    for (int k = 0; k < K; ++k) {
        const double sd = softplus(mlp_forward(model.sigma_d_heads[k], concat, nullptr)[0]) + kSigmaFloor;
        const double sn = softplus(mlp_forward(model.sigma_n_heads[k], concat, nullptr)[0]) + kSigmaFloor;
        out.sigma_d += weights[k] * sd;
        out.sigma_n += weights[k] * sn;
    }
    return out;
}

namespace {

FilterParams forward_impl(const MultiScalePatch& patch, const LbfModel& model,
                          ForwardCache* cache) {
    const int K = model.scale_count;
    const int F = model.feature_dim();
    if (patch.scale_count() != K)
        throw ConfigMismatch("forward: patch scale count does not match the model");
    for (const auto& pts : patch.scales)
        if (static_cast<int>(pts.size()) != model.patch_size)
            throw ConfigMismatch("forward: patch size does not match the model");

    if (cache) {
        *cache = ForwardCache{};
        cache->scales.resize(K);
    }

    Eigen::VectorXd concat(K * F);
    for (int k = 0; k < K; ++k) {
        concat.segment(k * F, F) = encode_scale_impl(patch.scales[k], model.encoders[k],
                                                     cache ? &cache->scales[k] : nullptr);
    }

    std::vector<Eigen::VectorXd>* fusion_hidden = cache ? &cache->fusion_hidden : nullptr;
    const Eigen::VectorXd logits = mlp_forward(model.fusion, concat, fusion_hidden);
    const Eigen::VectorXd weights = stable_softmax(logits);

    FilterParams out;
    for (int p = 0; p < 2; ++p) {
        const auto& heads = (p == 0) ? model.sigma_d_heads : model.sigma_n_heads;
        double& sigma = (p == 0) ? out.sigma_d : out.sigma_n;
        if (cache) cache->head_hidden[p].resize(K);
        for (int k = 0; k < K; ++k) {
            std::vector<Eigen::VectorXd>* hh = cache ? &cache->head_hidden[p][k] : nullptr;
            const double raw = mlp_forward(heads[k], concat, hh)[0];
            const double s = softplus(raw) + kSigmaFloor;
            if (cache) {
                cache->raw_sigma[p].push_back(raw);
                cache->soft_sigma[p].push_back(s);
            }
            sigma += weights[k] * s;
        }
    }
    if (cache) {
        cache->concat = std::move(concat);
        cache->fusion_weights = weights;
        cache->evaluated = true;
    }
    return out;
}

}  // namespace

FilterParams forward(const MultiScalePatch& patch, const LbfModel& model) {
    return forward_impl(patch, model, nullptr);
}

FilterParams forward(const MultiScalePatch& patch, const LbfModel& model, ForwardCache& cache) {
    return forward_impl(patch, model, &cache);
}

void backward(const LbfModel& model, const ForwardCache& cache, double d_sigma_d,
              double d_sigma_n, Gradients& accum) {
    if (!cache.evaluated) throw UsageError("backward: forward has not been evaluated");
    const int K = model.scale_count;
    const int F = model.feature_dim();
    const Eigen::VectorXd& weights = cache.fusion_weights;

    Eigen::VectorXd concat_grad = Eigen::VectorXd::Zero(K * F);

    // heads: sigma = sum_k weights_k * (softplus(raw_k) + floor)
    Eigen::VectorXd weight_grad = Eigen::VectorXd::Zero(K);
    for (int p = 0; p < 2; ++p) {
        const double upstream = (p == 0) ? d_sigma_d : d_sigma_n;
        const auto& heads = (p == 0) ? model.sigma_d_heads : model.sigma_n_heads;
        auto& head_grads = (p == 0) ? accum.sigma_d_heads : accum.sigma_n_heads;
        for (int k = 0; k < K; ++k) {
            weight_grad[k] += upstream * cache.soft_sigma[p][k];
            const double d_raw =
                upstream * weights[k] * logistic(cache.raw_sigma[p][static_cast<std::size_t>(k)]);
            Eigen::VectorXd g(1);
            g[0] = d_raw;
            concat_grad +=
                mlp_backward(heads[k], cache.concat, cache.head_hidden[p][k], g, head_grads[k]);
        }
    }

    // softmax jacobian: d logits_j = w_j * (g_j - <w, g>)
    const double dot = weights.dot(weight_grad);
    const Eigen::VectorXd logit_grad =
        (weights.array() * (weight_grad.array() - dot)).matrix();
    concat_grad +=
        mlp_backward(model.fusion, cache.concat, cache.fusion_hidden, logit_grad, accum.fusion);

    // max-pool routes each feature gradient to its winning point row
    for (int k = 0; k < K; ++k) {
        const auto& sc = cache.scales[k];
        const Eigen::Index D = sc.input.rows();
        Eigen::MatrixXd G = Eigen::MatrixXd::Zero(D, F);
        for (int j = 0; j < F; ++j) G(sc.winners[static_cast<std::size_t>(j)], j) += concat_grad[k * F + j];

        const auto& layers = model.encoders[k].layers;
        auto& enc_grads = accum.encoders[k].layers;
        for (std::size_t l = layers.size(); l-- > 0;) {
            const Eigen::MatrixXd& act = sc.activations[l];
            for (Eigen::Index r = 0; r < G.rows(); ++r)
                for (Eigen::Index c = 0; c < G.cols(); ++c)
                    if (act(r, c) <= 0.0) G(r, c) = 0.0;
            const Eigen::MatrixXd& layer_in = (l == 0) ? sc.input : sc.activations[l - 1];
            enc_grads[l].weight.noalias() += G.transpose() * layer_in;
            enc_grads[l].bias += G.colwise().sum().transpose();
            if (l > 0) G = (G * layers[l].weight).eval();
        }
    }
}

Gradients backward(const LbfModel& model, const ForwardCache& cache, double d_sigma_d,
                   double d_sigma_n) {
    Gradients g = make_zero_gradients(model);
    backward(model, cache, d_sigma_d, d_sigma_n, g);
    return g;
}

// ---------------------------------------------------------------------------
// serialization

namespace {

constexpr char kMagic[4] = {'L', 'B', 'F', '1'};

void append_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xff));
}

void append_f64(std::vector<std::uint8_t>& out, double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, 8);
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>((bits >> (8 * i)) & 0xff));
}

struct Reader {
    const std::vector<std::uint8_t>& bytes;
    std::size_t pos = 0;

    std::uint32_t u32() {
        if (pos + 4 > bytes.size()) throw ModelFormatError("model file truncated");
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes[pos + i]) << (8 * i);
        pos += 4;
        return v;
    }
    double f64() {
        if (pos + 8 > bytes.size()) throw ModelFormatError("model file truncated");
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes[pos + i]) << (8 * i);
        pos += 8;
        double d;
        std::memcpy(&d, &v, 8);
        return d;
    }
};

}  // namespace

std::vector<std::uint8_t> serialize(const LbfModel& model) {
    std::vector<std::uint8_t> out;
    out.insert(out.end(), kMagic, kMagic + 4);
    append_u32(out, model.version);
    append_u32(out, static_cast<std::uint32_t>(model.activation));
    append_u32(out, static_cast<std::uint32_t>(model.scale_count));
    append_u32(out, static_cast<std::uint32_t>(model.patch_size));
    append_u32(out, static_cast<std::uint32_t>(model.encoders.front().layers.size()));
    append_u32(out, static_cast<std::uint32_t>(model.sigma_d_heads.front().layers.size()));
    append_u32(out, static_cast<std::uint32_t>(model.fusion.layers.size()));

    auto& m = const_cast<LbfModel&>(model);
    std::uint32_t layer_count = 0;
    for_each_layer(m, [&](DenseLayer&) { ++layer_count; });
    append_u32(out, layer_count);
    for_each_layer(m, [&](DenseLayer& l) {
        append_u32(out, static_cast<std::uint32_t>(l.weight.rows()));
        append_u32(out, static_cast<std::uint32_t>(l.weight.cols()));
    });
    for_each_layer(m, [&](DenseLayer& l) {
        for (Eigen::Index r = 0; r < l.weight.rows(); ++r)
            for (Eigen::Index c = 0; c < l.weight.cols(); ++c) append_f64(out, l.weight(r, c));
        for (Eigen::Index i = 0; i < l.bias.size(); ++i) append_f64(out, l.bias[i]);
    });
    return out;
}

LbfModel deserialize(const std::vector<std::uint8_t>& bytes) {
    if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0)
        throw ModelFormatError("bad magic: not a model file");
    Reader rd{bytes, 4};

    LbfModel model;
    model.version = rd.u32();
    if (model.version != kModelFormatVersion)
        throw ModelFormatError("unsupported model format version " + std::to_string(model.version));
    const std::uint32_t act = rd.u32();
    if (act != static_cast<std::uint32_t>(Activation::Relu))
        throw ModelFormatError("unknown activation kind");
    model.activation = static_cast<Activation>(act);
    model.scale_count = static_cast<int>(rd.u32());
    model.patch_size = static_cast<int>(rd.u32());
    const std::uint32_t enc_layers = rd.u32();
    const std::uint32_t head_layers = rd.u32();
    const std::uint32_t fusion_layers = rd.u32();
    const std::uint32_t layer_count = rd.u32();

    const std::uint64_t want = static_cast<std::uint64_t>(model.scale_count) * enc_layers +
                               2ull * model.scale_count * head_layers + fusion_layers;
    if (model.scale_count < 1 || model.patch_size < 1 || layer_count != want)
        throw ModelFormatError("inconsistent layer table");

    std::vector<std::pair<std::uint32_t, std::uint32_t>> shapes;
    shapes.reserve(layer_count);
    for (std::uint32_t i = 0; i < layer_count; ++i) {
        const std::uint32_t rows = rd.u32();
        const std::uint32_t cols = rd.u32();
        if (rows == 0 || cols == 0) throw ModelFormatError("zero-sized layer");
        shapes.emplace_back(rows, cols);
    }

    std::size_t next = 0;
    auto read_mlp = [&](std::uint32_t n_layers) {
        Mlp mlp;
        for (std::uint32_t l = 0; l < n_layers; ++l) {
            const auto [rows, cols] = shapes[next++];
            DenseLayer layer;
            layer.weight.resize(rows, cols);
            for (std::uint32_t r = 0; r < rows; ++r)
                for (std::uint32_t c = 0; c < cols; ++c) {
                    const double v = rd.f64();
                    if (!std::isfinite(v)) throw ModelFormatError("non-finite weight");
                    layer.weight(r, c) = v;
                }
            layer.bias.resize(rows);
            for (std::uint32_t r = 0; r < rows; ++r) {
                const double v = rd.f64();
                if (!std::isfinite(v)) throw ModelFormatError("non-finite bias");
                layer.bias[r] = v;
            }
            mlp.layers.push_back(std::move(layer));
        }
        return mlp;
    };

    for (int k = 0; k < model.scale_count; ++k) model.encoders.push_back(read_mlp(enc_layers));
    for (int k = 0; k < model.scale_count; ++k)
        model.sigma_d_heads.push_back(read_mlp(head_layers));
    for (int k = 0; k < model.scale_count; ++k)
        model.sigma_n_heads.push_back(read_mlp(head_layers));
    model.fusion = read_mlp(fusion_layers);

    if (rd.pos != bytes.size()) throw ModelFormatError("trailing bytes after model payload");

    // shape consistency
    const int F = model.feature_dim();
    if (model.encoders.front().layers.front().weight.cols() != 3 ||
        model.fusion.layers.back().weight.rows() != model.scale_count ||
        model.fusion.layers.front().weight.cols() != model.scale_count * F ||
        model.sigma_d_heads.front().layers.back().weight.rows() != 1)
        throw ModelFormatError("layer shapes are mutually inconsistent");
    return model;
}

void save_model(const LbfModel& model, const std::filesystem::path& path) {
    const std::vector<std::uint8_t> bytes = serialize(model);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot open model file for writing: " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error("failed writing model file: " + path.string());
}

LbfModel load_model(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open model file: " + path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                    std::istreambuf_iterator<char>());
    return deserialize(bytes);
}

}  // namespace lbf
