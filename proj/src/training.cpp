#include "lbf/training.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <condition_variable>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <mutex>
#include <random>
#include <sstream>
#include <thread>

#include "lbf/rng.hpp"

namespace lbf {

void validate(const TrainConfig& cfg) {
    if (cfg.epochs < 1) throw ConfigError("config: epochs must be >= 1");
    if (!(cfg.lr > 0.0)) throw ConfigError("config: lr must be positive");
    if (!(cfg.lr_decay > 0.0) || !(cfg.lr_decay <= 1.0))
        throw ConfigError("config: lr_decay must be in (0, 1]");
    if (cfg.decay_every < 1) throw ConfigError("config: decay_every must be >= 1");
    if (cfg.batch_size < 1) throw ConfigError("config: batch_size must be >= 1");
    if (cfg.patch_size < 1) throw ConfigError("config: patch_size must be >= 1");
    if (cfg.max_patches_per_shape < 1) throw ConfigError("config: max_patches_per_shape must be >= 1");
    if (!(cfg.eta >= 0.0) || !(cfg.eta <= 1.0)) throw ConfigError("config: eta must be in [0, 1]");
    if (!(cfg.eps_n_degrees > 0.0) || !(cfg.eps_n_degrees < 90.0))
        throw ConfigError("config: eps_n_degrees must be in (0, 90)");
    if (cfg.noise_levels.empty()) throw ConfigError("config: no noise levels");
    for (double v : cfg.noise_levels)
        if (!(v >= 0.0) || !(v <= 0.015))
            throw ConfigError("config: noise levels must lie in [0, 0.015]");
    if (cfg.scales.empty()) throw ConfigError("config: no scales");
    double prev = 0.0;
    for (const ScaleSpec& s : cfg.scales) {
        if (!(s.radius_fraction > 0.0) || !(s.radius_fraction < 1.0))
            throw ConfigError("config: scale fractions must be in (0, 1)");
        if (s.radius_fraction <= prev) throw ConfigError("config: scale fractions must increase");
        prev = s.radius_fraction;
    }
    if (cfg.architecture.encoder_widths.empty())
        throw ConfigError("config: empty encoder widths");
}

namespace {

void append_list(std::ostringstream& os, const char* key, const auto& values) {
    os << key << '=';
    bool first = true;
    for (const auto& v : values) {
        if (!first) os << ',';
        os << v;
        first = false;
    }
    os << '\n';
}

}  // namespace

std::string config_text(const TrainConfig& cfg) {
    std::ostringstream os;
    os.precision(17);
    append_list(os, "noise_levels", cfg.noise_levels);
    std::vector<double> fracs;
    for (const ScaleSpec& s : cfg.scales) fracs.push_back(s.radius_fraction);
    append_list(os, "scales", fracs);
    os << "patch_size=" << cfg.patch_size << '\n';
    os << "lr=" << cfg.lr << '\n';
    os << "lr_decay=" << cfg.lr_decay << '\n';
    os << "decay_every=" << cfg.decay_every << '\n';
    os << "epochs=" << cfg.epochs << '\n';
    os << "batch_size=" << cfg.batch_size << '\n';
    os << "eta=" << cfg.eta << '\n';
    os << "eps_n_degrees=" << cfg.eps_n_degrees << '\n';
    os << "seed=" << cfg.seed << '\n';
    os << "max_patches_per_shape=" << cfg.max_patches_per_shape << '\n';
    append_list(os, "encoder_widths", cfg.architecture.encoder_widths);
    append_list(os, "head_widths", cfg.architecture.head_widths);
    append_list(os, "fusion_widths", cfg.architecture.fusion_widths);
    os << "adam_beta1=" << cfg.adam_beta1 << '\n';
    os << "adam_beta2=" << cfg.adam_beta2 << '\n';
    os << "adam_epsilon=" << cfg.adam_epsilon << '\n';
    return os.str();
}

std::uint64_t config_hash(const TrainConfig& cfg) {
    // FNV-1a over the canonical text
    std::uint64_t h = 1469598103934665603ULL;
    for (char c : config_text(cfg)) {
        h ^= static_cast<unsigned char>(c);
        h *= 1099511628211ULL;
    }
    return h;
}

double learning_rate(const TrainConfig& cfg, int epoch) {
    if (epoch < 0) throw ConfigError("learning_rate: negative epoch");
    double lr = cfg.lr;
    for (int i = 0; i < epoch / cfg.decay_every; ++i) lr *= cfg.lr_decay;
    return lr;
}

PointCloud add_gaussian_noise(const PointCloud& cloud, double sigma_fraction,
                              std::uint64_t seed) {
    if (sigma_fraction < 0.0) throw ConfigError("add_gaussian_noise: negative sigma fraction");
    PointCloud out;
    out.points = cloud.points;  // normals intentionally dropped
    if (sigma_fraction == 0.0) return out;

    const double sigma = sigma_fraction * bbox_diagonal(cloud);
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> gauss(0.0, sigma);
    for (Vec3& p : out.points) {
        p.x() += gauss(rng);
        p.y() += gauss(rng);
        p.z() += gauss(rng);
    }
    return out;
}

namespace {

// select m of [0, n) uniformly without replacement, sorted ascending
std::vector<int> select_subset(int n, int m, std::uint64_t seed) {
    std::vector<int> positions(n);
    for (int i = 0; i < n; ++i) positions[i] = i;
    if (m >= n) return positions;
    std::mt19937_64 rng(seed);
    for (int i = 0; i < m; ++i) {
        std::uniform_int_distribution<int> pick(i, n - 1);
        std::swap(positions[i], positions[pick(rng)]);
    }
    positions.resize(m);
    std::sort(positions.begin(), positions.end());
    return positions;
}

struct SampleKey {
    int shape = 0;
    int level = 0;
    int point = 0;
};

// Clean shapes, their noisy counterparts, and the spatial indexes; owns the
// deterministic per-epoch sample selection.
class TrainingData {
public:
    TrainingData(const std::vector<PointCloud>& shapes, const TrainConfig& cfg)
        : shapes_(shapes), cfg_(cfg) {
        if (shapes.empty()) throw EmptyInput("training: no shapes");
        for (std::size_t s = 0; s < shapes.size(); ++s) {
            if (!shapes[s].has_normals())
                throw MissingNormals("training: shape " + std::to_string(s) + " has no normals");
            clean_indexes_.push_back(std::make_unique<KdTree>(shapes[s]));
            auto& row = entries_.emplace_back();
            for (std::size_t v = 0; v < cfg.noise_levels.size(); ++v) {
                Entry e;
                e.noisy = add_gaussian_noise(shapes[s], cfg.noise_levels[v],
                                             mix_seed(cfg.seed, 0x6e6f6973ULL, s, v));
                e.scales = resolve_scales(cfg.scales, bbox_diagonal(e.noisy));
                e.index = std::make_unique<KdTree>(e.noisy);
                row.push_back(std::move(e));
            }
        }
    }

    std::vector<SampleKey> epoch_keys(int epoch) const {
        std::vector<SampleKey> keys;
        const int levels = static_cast<int>(cfg_.noise_levels.size());
        const int cap = std::max(1, cfg_.max_patches_per_shape / levels);
        for (std::size_t s = 0; s < shapes_.size(); ++s) {
            for (int v = 0; v < levels; ++v) {
                const int n = static_cast<int>(shapes_[s].size());
                const std::vector<int> pts = select_subset(
                    n, cap, mix_seed(cfg_.seed, 0x65706f63ULL + static_cast<std::uint64_t>(epoch),
                                     s, static_cast<std::uint64_t>(v)));
                for (int p : pts) keys.push_back({static_cast<int>(s), v, p});
            }
        }
        return keys;
    }

    std::optional<TrainSample> make_sample(const SampleKey& key) const {
        const Entry& e = entries_[key.shape][key.level];
        try {
            TrainSample sample;
            sample.noisy = extract_multiscale(*e.index, e.noisy, key.point, e.scales,
                                              cfg_.patch_size, cfg_.seed);
            if (sample.noisy.valid_counts.back() < 3) return std::nullopt;
            sample.clean = canonicalize_target(sample.noisy, e.scales, shapes_[key.shape],
                                               *clean_indexes_[key.shape]);
            sample.shape_id = key.shape;
            sample.noise_index = key.level;
            return sample;
        } catch (const InsufficientNeighbors&) {
            return std::nullopt;
        } catch (const DegenerateGeometry&) {
            return std::nullopt;
        }
    }

private:
    struct Entry {
        PointCloud noisy;
        ResolvedScales scales;
        std::unique_ptr<KdTree> index;
    };

    const std::vector<PointCloud>& shapes_;
    const TrainConfig& cfg_;
    std::vector<std::unique_ptr<KdTree>> clean_indexes_;
    std::vector<std::vector<Entry>> entries_;
};

}  // namespace

std::vector<TrainSample> build_dataset(const std::vector<PointCloud>& shapes,
                                       const TrainConfig& cfg) {
    validate(cfg);
    const TrainingData data(shapes, cfg);
    std::vector<TrainSample> samples;
    for (const SampleKey& key : data.epoch_keys(0)) {
        if (auto s = data.make_sample(key)) samples.push_back(std::move(*s));
    }
    return samples;
}

std::pair<double, double> d_delta_p_d_sigmas(const Vec3& p, std::span<const Vec3> neighbors,
                                             const Vec3& n_p, const FilterParams& params) {
    if (neighbors.empty()) throw InsufficientNeighbors("d_delta_p_d_sigmas: no neighbors");
    if (!(params.sigma_d > 0.0) || !(params.sigma_n > 0.0))
        throw ConfigError("d_delta_p_d_sigmas: sigmas must be positive");

    const double inv_2sd2 = 1.0 / (2.0 * params.sigma_d * params.sigma_d);
    const double inv_2sn2 = 1.0 / (2.0 * params.sigma_n * params.sigma_n);
    const double inv_sd3 = 1.0 / (params.sigma_d * params.sigma_d * params.sigma_d);
    const double inv_sn3 = 1.0 / (params.sigma_n * params.sigma_n * params.sigma_n);

    double max_exp = -std::numeric_limits<double>::infinity();
    for (const Vec3& q : neighbors) {
        const Vec3 d = q - p;
        const double dn = n_p.dot(d);
        max_exp = std::max(max_exp, -d.squaredNorm() * inv_2sd2 - dn * dn * inv_2sn2);
    }

    // The common stabilization factor cancels in the quotient-rule expression,
    // so the naive per-term derivatives w * d^2 / sigma^3 remain exact.
    double sw = 0.0, swd = 0.0;
    double sdw_d = 0.0, sdw_n = 0.0;      // sums of dw/dsigma
    double sdwd_d = 0.0, sdwd_n = 0.0;    // sums of (dw/dsigma) * d_n
    for (const Vec3& q : neighbors) {
        const Vec3 d = q - p;
        const double dd2 = d.squaredNorm();
        const double dn = n_p.dot(d);
        const double w = std::exp(-dd2 * inv_2sd2 - dn * dn * inv_2sn2 - max_exp);
        const double dw_d = w * dd2 * inv_sd3;
        const double dw_n = w * dn * dn * inv_sn3;
        sw += w;
        swd += w * dn;
        sdw_d += dw_d;
        sdw_n += dw_n;
        sdwd_d += dw_d * dn;
        sdwd_n += dw_n * dn;
    }
    const double inv_sw2 = 1.0 / (sw * sw);
    return {(sdwd_d * sw - swd * sdw_d) * inv_sw2, (sdwd_n * sw - swd * sdw_n) * inv_sw2};
}

ChainResult chain_forward(const LbfModel& model, const TrainSample& sample,
                          const LossWeights& weights, ForwardCache* cache,
                          const Vec3* frozen_n_center, const Vec3* frozen_n_pbar) {
    ChainResult res;
    res.params = cache ? forward(sample.noisy, model, *cache) : forward(sample.noisy, model);

    const int last = sample.noisy.scale_count() - 1;
    const int valid = sample.noisy.valid_counts[last];
    if (valid < 3) throw InsufficientNeighbors("chain_forward: <3 real points at largest scale");
    const std::span<const Vec3> real_pts(sample.noisy.scales[last].data(),
                                         static_cast<std::size_t>(valid));

    res.n_p = estimate_normal({real_pts.begin(), real_pts.end()});
    res.delta_p = bilateral_displacement(Vec3::Zero(), real_pts, res.n_p, res.params);
    res.p_bar = res.delta_p * res.n_p;

    const CleanPatchView view = make_view(sample.clean, last);
    auto nearest_normal = [&](const Vec3& query) {
        std::size_t arg = 0;
        double best = std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < view.points.size(); ++j) {
            const double d = (view.points[j] - query).squaredNorm();
            if (d < best) {
                best = d;
                arg = j;
            }
        }
        return view.normals[arg];
    };
    res.n_center = frozen_n_center ? *frozen_n_center : nearest_normal(Vec3::Zero());
    res.n_pbar = frozen_n_pbar ? *frozen_n_pbar : nearest_normal(res.p_bar);

    res.loss = total_loss(res.p_bar, view, res.n_center, res.n_pbar, weights);
    return res;
}

void chain_backward(const LbfModel& model, const ForwardCache& cache, const ChainResult& result,
                    const TrainSample& sample, Gradients& accum) {
    const int last = sample.noisy.scale_count() - 1;
    const std::span<const Vec3> real_pts(
        sample.noisy.scales[last].data(),
        static_cast<std::size_t>(sample.noisy.valid_counts[last]));
    const auto [dd, dn] = d_delta_p_d_sigmas(Vec3::Zero(), real_pts, result.n_p, result.params);
    const double g = result.loss.d_total_d_point.dot(result.n_p);
    backward(model, cache, g * dd, g * dn, accum);
}

namespace {

std::vector<std::span<double>> tensor_views(LbfModel& model) {
    std::vector<std::span<double>> views;
    for_each_layer(model, [&](DenseLayer& l) {
        views.emplace_back(l.weight.data(), static_cast<std::size_t>(l.weight.size()));
        views.emplace_back(l.bias.data(), static_cast<std::size_t>(l.bias.size()));
    });
    return views;
}

std::vector<std::span<const double>> tensor_views(const Gradients& grads) {
    std::vector<std::span<const double>> views;
    for_each_layer(grads, [&](const DenseLayer& l) {
        views.emplace_back(l.weight.data(), static_cast<std::size_t>(l.weight.size()));
        views.emplace_back(l.bias.data(), static_cast<std::size_t>(l.bias.size()));
    });
    return views;
}

void zero_gradients(Gradients& g) {
    for_each_layer(g, [](DenseLayer& l) {
        l.weight.setZero();
        l.bias.setZero();
    });
}

void add_gradients(Gradients& dst, const Gradients& src) {
    auto add_mlp = [](Mlp& d, const Mlp& s) {
        for (std::size_t l = 0; l < d.layers.size(); ++l) {
            d.layers[l].weight += s.layers[l].weight;
            d.layers[l].bias += s.layers[l].bias;
        }
    };
    for (std::size_t k = 0; k < dst.encoders.size(); ++k) add_mlp(dst.encoders[k], src.encoders[k]);
    for (std::size_t k = 0; k < dst.sigma_d_heads.size(); ++k)
        add_mlp(dst.sigma_d_heads[k], src.sigma_d_heads[k]);
    for (std::size_t k = 0; k < dst.sigma_n_heads.size(); ++k)
        add_mlp(dst.sigma_n_heads[k], src.sigma_n_heads[k]);
    add_mlp(dst.fusion, src.fusion);
}

void scale_gradients(Gradients& g, double s) {
    for_each_layer(g, [s](DenseLayer& l) {
        l.weight *= s;
        l.bias *= s;
    });
}

}  // namespace

void adam_step(LbfModel& model, const Gradients& grads, AdamState& state, double lr,
               const TrainConfig& cfg) {
    const auto params = tensor_views(model);
    const auto gviews = tensor_views(grads);
    if (params.size() != gviews.size())
        throw ConfigMismatch("adam_step: gradient layout does not match the model");

    std::size_t total = 0;
    for (const auto& v : params) total += v.size();
    if (state.m.size() == 0) {
        state.m = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(total));
        state.v = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(total));
    } else if (state.m.size() != static_cast<Eigen::Index>(total)) {
        throw ConfigMismatch("adam_step: optimizer state size does not match the model");
    }

    state.t += 1;
    const double bc1 = 1.0 - std::pow(cfg.adam_beta1, static_cast<double>(state.t));
    const double bc2 = 1.0 - std::pow(cfg.adam_beta2, static_cast<double>(state.t));

    std::size_t off = 0;
    for (std::size_t i = 0; i < params.size(); ++i) {
        std::span<double> w = params[i];
        std::span<const double> g = gviews[i];
        for (std::size_t j = 0; j < w.size(); ++j) {
            double& m = state.m[static_cast<Eigen::Index>(off + j)];
            double& v = state.v[static_cast<Eigen::Index>(off + j)];
            m = cfg.adam_beta1 * m + (1.0 - cfg.adam_beta1) * g[j];
            v = cfg.adam_beta2 * v + (1.0 - cfg.adam_beta2) * g[j] * g[j];
            const double mhat = m / bc1;
            const double vhat = v / bc2;
            w[j] -= lr * mhat / (std::sqrt(vhat) + cfg.adam_epsilon);
        }
        off += w.size();
    }
}

// ---------------------------------------------------------------------------
// checkpoint files

namespace {

constexpr char kOptMagic[4] = {'L', 'B', 'F', 'O'};

void write_u32(std::ofstream& out, std::uint32_t v) {
    out.write(reinterpret_cast<const char*>(&v), 4);
}
void write_u64(std::ofstream& out, std::uint64_t v) {
    out.write(reinterpret_cast<const char*>(&v), 8);
}
std::uint32_t read_u32(std::ifstream& in) {
    std::uint32_t v = 0;
    in.read(reinterpret_cast<char*>(&v), 4);
    if (!in) throw ModelFormatError("optimizer state truncated");
    return v;
}
std::uint64_t read_u64(std::ifstream& in) {
    std::uint64_t v = 0;
    in.read(reinterpret_cast<char*>(&v), 8);
    if (!in) throw ModelFormatError("optimizer state truncated");
    return v;
}

TrainConfig parse_config_lines(const std::string& text);

}  // namespace

void save_checkpoint(const Checkpoint& cp, const std::filesystem::path& path) {
    save_model(cp.model, path);

    std::filesystem::path opt_path = path;
    opt_path += ".opt";
    std::ofstream opt(opt_path, std::ios::binary | std::ios::trunc);
    if (!opt) throw Error("cannot open " + opt_path.string());
    opt.write(kOptMagic, 4);
    write_u32(opt, 1);
    write_u64(opt, config_hash(cp.config));
    write_u32(opt, static_cast<std::uint32_t>(cp.epochs_done));
    write_u64(opt, cp.adam.t);
    write_u64(opt, static_cast<std::uint64_t>(cp.adam.m.size()));
    opt.write(reinterpret_cast<const char*>(cp.adam.m.data()),
              static_cast<std::streamsize>(cp.adam.m.size() * 8));
    opt.write(reinterpret_cast<const char*>(cp.adam.v.data()),
              static_cast<std::streamsize>(cp.adam.v.size() * 8));
    if (!opt) throw Error("failed writing " + opt_path.string());

    std::filesystem::path meta_path = path;
    meta_path += ".meta";
    std::ofstream meta(meta_path, std::ios::trunc);
    if (!meta) throw Error("cannot open " + meta_path.string());
    meta << "epoch=" << cp.epochs_done << '\n';
    meta << "next_lr=" << std::setprecision(17)
         << learning_rate(cp.config, std::min(cp.epochs_done, cp.config.epochs - 1)) << '\n';
    meta << "config_hash=" << config_hash(cp.config) << '\n';
    meta << config_text(cp.config);
    if (!meta) throw Error("failed writing " + meta_path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    Checkpoint cp;
    cp.model = load_model(path);

    std::filesystem::path meta_path = path;
    meta_path += ".meta";
    std::ifstream meta(meta_path);
    if (!meta) throw Error("cannot open " + meta_path.string());
    std::stringstream buf;
    buf << meta.rdbuf();
    cp.config = parse_config_lines(buf.str());

    std::filesystem::path opt_path = path;
    opt_path += ".opt";
    std::ifstream opt(opt_path, std::ios::binary);
    if (!opt) throw Error("cannot open " + opt_path.string());
    char magic[4];
    opt.read(magic, 4);
    if (!opt || std::memcmp(magic, kOptMagic, 4) != 0)
        throw ModelFormatError("bad optimizer state magic");
    if (read_u32(opt) != 1) throw ModelFormatError("unsupported optimizer state version");
    const std::uint64_t hash = read_u64(opt);
    if (hash != config_hash(cp.config))
        throw ConfigMismatch("checkpoint sidecar does not match optimizer state");
    cp.epochs_done = static_cast<int>(read_u32(opt));
    cp.adam.t = read_u64(opt);
    const std::uint64_t n = read_u64(opt);
    cp.adam.m.resize(static_cast<Eigen::Index>(n));
    cp.adam.v.resize(static_cast<Eigen::Index>(n));
    opt.read(reinterpret_cast<char*>(cp.adam.m.data()), static_cast<std::streamsize>(n * 8));
    opt.read(reinterpret_cast<char*>(cp.adam.v.data()), static_cast<std::streamsize>(n * 8));
    if (!opt) throw ModelFormatError("optimizer state truncated");
    return cp;
}

// ---------------------------------------------------------------------------
// training loop

Checkpoint train(const std::vector<PointCloud>& shapes, const TrainConfig& cfg,
                 const std::filesystem::path& out_path, std::vector<EpochLog>* log,
                 const Checkpoint* resume) {
    validate(cfg);
    const TrainingData data(shapes, cfg);

    Checkpoint cp;
    cp.config = cfg;
    if (resume) {
        if (config_hash(resume->config) != config_hash(cfg))
            throw ConfigMismatch("train: resume checkpoint was created with a different config");
        cp.model = resume->model;
        cp.adam = resume->adam;
        cp.epochs_done = resume->epochs_done;
    } else {
        const int K = static_cast<int>(cfg.scales.size());
        cp.model = make_model(K, cfg.patch_size, cfg.architecture,
                              mix_seed(cfg.seed, 0x696e6974ULL));
    }

    const LossWeights weights{cfg.eta, cfg.eps_n_degrees};
    const unsigned workers =
        cfg.threads ? cfg.threads : std::max(1u, std::thread::hardware_concurrency());

    for (int epoch = cp.epochs_done; epoch < cfg.epochs; ++epoch) {
        const double lr = learning_rate(cfg, epoch);
        const std::vector<SampleKey> keys = data.epoch_keys(epoch);

        double epoch_loss = 0.0;
        std::size_t epoch_samples = 0;

        for (std::size_t begin = 0; begin < keys.size(); begin += cfg.batch_size) {
            const std::size_t end = std::min(keys.size(), begin + cfg.batch_size);
            const std::size_t batch_n = end - begin;

            Gradients batch_grads = make_zero_gradients(cp.model);
            double batch_loss = 0.0;
            std::size_t batch_used = 0;
            std::string divergence;

            // Workers claim samples dynamically but commit their gradients in
            // sample order, so the accumulated sum is identical for any
            // worker count.
            std::atomic<std::size_t> claim{0};
            std::mutex mu;
            std::condition_variable cv;
            std::size_t next_commit = 0;

            auto run_worker = [&] {
                Gradients local = make_zero_gradients(cp.model);
                while (true) {
                    const std::size_t s = claim.fetch_add(1);
                    if (s >= batch_n) break;
                    const SampleKey& key = keys[begin + s];

                    bool ok = false;
                    double loss_val = 0.0;
                    std::string error;
                    zero_gradients(local);
                    if (auto sample = data.make_sample(key)) {
                        ForwardCache cache;
                        const ChainResult r = chain_forward(cp.model, *sample, weights, &cache);
                        if (!std::isfinite(r.loss.total)) {
                            std::ostringstream os;
                            os << "non-finite loss at epoch " << epoch << ", shape " << key.shape
                               << ", noise level " << key.level << ", point " << key.point
                               << " (sigma_d=" << r.params.sigma_d
                               << ", sigma_n=" << r.params.sigma_n << ", delta_p=" << r.delta_p
                               << ")";
                            error = os.str();
                        } else {
                            chain_backward(cp.model, cache, r, *sample, local);
                            loss_val = r.loss.total;
                            ok = true;
                        }
                    }

                    std::unique_lock<std::mutex> lk(mu);
                    cv.wait(lk, [&] { return next_commit == s; });
                    if (!error.empty() && divergence.empty()) divergence = error;
                    if (ok) {
                        add_gradients(batch_grads, local);
                        batch_loss += loss_val;
                        ++batch_used;
                    }
                    ++next_commit;
                    cv.notify_all();
                }
            };

            std::vector<std::thread> pool;
            for (unsigned w = 1; w < workers; ++w) pool.emplace_back(run_worker);
            run_worker();
            for (std::thread& t : pool) t.join();

            if (!divergence.empty()) throw TrainingDiverged(divergence);
            if (batch_used == 0) continue;

            scale_gradients(batch_grads, 1.0 / static_cast<double>(batch_used));
            adam_step(cp.model, batch_grads, cp.adam, lr, cfg);
            epoch_loss += batch_loss;
            epoch_samples += batch_used;
        }

        cp.epochs_done = epoch + 1;
        if (log) {
            EpochLog e;
            e.epoch = epoch;
            e.lr = lr;
            e.mean_loss = epoch_samples ? epoch_loss / static_cast<double>(epoch_samples) : 0.0;
            e.samples = epoch_samples;
            log->push_back(e);
        }
        save_checkpoint(cp, out_path);
    }
    return cp;
}

// ---------------------------------------------------------------------------
// config text parsing

namespace {

std::vector<std::string> split_csv(const std::string& s) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : s) {
        if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else {
            cur += c;
        }
    }
    if (!cur.empty()) out.push_back(cur);
    return out;
}

double to_double(const std::string& s) {
    double v = 0.0;
    const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size())
        throw ConfigError("config: bad numeric value '" + s + "'");
    return v;
}

long long to_int(const std::string& s) {
    long long v = 0;
    const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size())
        throw ConfigError("config: bad integer value '" + s + "'");
    return v;
}

TrainConfig parse_config_lines(const std::string& text) {
    TrainConfig cfg;
    apply_config_text(cfg, text, /*strict=*/false);
    return cfg;
}

}  // namespace

void apply_config_text(TrainConfig& cfg, const std::string& text, bool strict) {
    std::istringstream in(text);
    std::string line;
    long line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line[0] == '#') continue;
        const std::size_t eq = line.find('=');
        if (eq == std::string::npos) {
            if (strict) throw ParseError("config line is not key=value", line_no);
            continue;
        }
        const std::string key = line.substr(0, eq);
        const std::string value = line.substr(eq + 1);

        auto ints = [&] {
            std::vector<int> out;
            for (const std::string& t : split_csv(value)) out.push_back(static_cast<int>(to_int(t)));
            return out;
        };

        if (key == "noise_levels") {
            cfg.noise_levels.clear();
            for (const std::string& t : split_csv(value)) cfg.noise_levels.push_back(to_double(t));
        } else if (key == "scales") {
            cfg.scales.clear();
            int k = 0;
            for (const std::string& t : split_csv(value)) cfg.scales.push_back({k++, to_double(t)});
        } else if (key == "patch_size") {
            cfg.patch_size = static_cast<int>(to_int(value));
        } else if (key == "lr") {
            cfg.lr = to_double(value);
        } else if (key == "lr_decay") {
            cfg.lr_decay = to_double(value);
        } else if (key == "decay_every") {
            cfg.decay_every = static_cast<int>(to_int(value));
        } else if (key == "epochs") {
            cfg.epochs = static_cast<int>(to_int(value));
        } else if (key == "batch_size") {
            cfg.batch_size = static_cast<int>(to_int(value));
        } else if (key == "eta") {
            cfg.eta = to_double(value);
        } else if (key == "eps_n_degrees") {
            cfg.eps_n_degrees = to_double(value);
        } else if (key == "seed") {
            cfg.seed = static_cast<std::uint64_t>(to_int(value));
        } else if (key == "max_patches_per_shape") {
            cfg.max_patches_per_shape = static_cast<int>(to_int(value));
        } else if (key == "threads") {
            cfg.threads = static_cast<unsigned>(to_int(value));
        } else if (key == "encoder_widths") {
            cfg.architecture.encoder_widths = ints();
        } else if (key == "head_widths") {
            cfg.architecture.head_widths = ints();
        } else if (key == "fusion_widths") {
            cfg.architecture.fusion_widths = ints();
        } else if (key == "adam_beta1") {
            cfg.adam_beta1 = to_double(value);
        } else if (key == "adam_beta2") {
            cfg.adam_beta2 = to_double(value);
        } else if (key == "adam_epsilon") {
            cfg.adam_epsilon = to_double(value);
        } else if (strict) {
            throw ParseError("unknown config key '" + key + "'", line_no);
        }
    }
}

}  // namespace lbf
