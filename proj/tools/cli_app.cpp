#include "cli_app.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "lbf/errors.hpp"
#include "lbf/filter.hpp"
#include "lbf/metrics.hpp"
#include "lbf/network.hpp"
#include "lbf/training.hpp"
#include "lbf/xyz_io.hpp"

namespace fs = std::filesystem;

namespace lbf::cli {

namespace {

std::vector<ScaleSpec> to_scales(const std::vector<double>& fractions) {
    std::vector<ScaleSpec> scales;
    int k = 0;
    for (double f : fractions) scales.push_back({k++, f});
    return scales;
}

void write_report(const fs::path& path, const DenoiseReport& report) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw Error("cannot open report file: " + path.string());
    out << "# per-point denoising report\n";
    out << "# columns: index sigma_d sigma_n disp_x disp_y disp_z skipped\n";
    out.precision(9);
    std::vector<char> skipped(report.displacements.size(), 0);
    for (int i : report.skipped) skipped[static_cast<std::size_t>(i)] = 1;
    for (std::size_t i = 0; i < report.displacements.size(); ++i) {
        const Vec3& d = report.displacements[i];
        out << i << ' ' << report.params_used[i].sigma_d << ' ' << report.params_used[i].sigma_n
            << ' ' << d.x() << ' ' << d.y() << ' ' << d.z() << ' ' << int(skipped[i]) << '\n';
    }
    if (!out) throw Error("failed writing report file: " + path.string());
}

int run_noise(const fs::path& input, const fs::path& output, double sigma_pct,
              std::uint64_t seed) {
    const PointCloud cloud = read_xyz(input, &std::cerr);
    const PointCloud noisy = add_gaussian_noise(cloud, sigma_pct / 100.0, seed);
    write_xyz(noisy, output);
    std::cout << "noised " << cloud.size() << " points (sigma = " << sigma_pct
              << "% of bbox diagonal) -> " << output.string() << "\n";
    return kExitOk;
}

int run_denoise_classical(const fs::path& input, const fs::path& output, double radius_pct,
                          double sigma_d, double sigma_n, int iterations,
                          const std::string& report_path) {
    const PointCloud cloud = read_xyz(input, &std::cerr);
    const double radius = radius_pct / 100.0 * bbox_diagonal(cloud);
    const DenoiseResult res = denoise_classical(cloud, radius, {sigma_d, sigma_n}, iterations);
    write_xyz(res.cloud, output);
    if (!report_path.empty()) write_report(report_path, res.report);
    std::cout << "denoised " << cloud.size() << " points, " << res.report.skipped.size()
              << " skipped -> " << output.string() << "\n";
    return kExitOk;
}

int run_denoise_learned(const fs::path& input, const fs::path& output, const fs::path& model_path,
                        std::vector<double> scale_fractions, std::uint64_t seed,
                        const std::string& report_path) {
    const LbfModel model = load_model(model_path);

    // a checkpoint sidecar next to the model records the training scales
    fs::path meta = model_path;
    meta += ".meta";
    if (scale_fractions.empty() && fs::exists(meta)) {
        std::ifstream in(meta);
        std::stringstream buf;
        buf << in.rdbuf();
        TrainConfig from_meta;
        apply_config_text(from_meta, buf.str(), /*strict=*/false);
        for (const ScaleSpec& s : from_meta.scales) scale_fractions.push_back(s.radius_fraction);
    }
    if (scale_fractions.empty()) scale_fractions = {0.03, 0.04, 0.05};

    const PointCloud cloud = read_xyz(input, &std::cerr);
    const DenoiseResult res =
        denoise_learned(cloud, model, to_scales(scale_fractions), model.patch_size, seed);
    write_xyz(res.cloud, output);
    if (!report_path.empty()) write_report(report_path, res.report);
    std::cout << "denoised " << cloud.size() << " points, " << res.report.skipped.size()
              << " skipped -> " << output.string() << "\n";
    return kExitOk;
}

int run_eval(const fs::path& denoised_path, const fs::path& clean_path, int k) {
    const PointCloud denoised = read_xyz(denoised_path, &std::cerr);
    const PointCloud clean = read_xyz(clean_path, &std::cerr);
    const EvalReport rep = evaluate(denoised, clean, k);

    std::ostringstream machine;
    machine.setf(std::ios::scientific);
    machine.precision(6);
    machine << "cd=" << rep.cd << " mse=" << rep.mse;

    std::cout << "metric  value         convention\n";
    std::cout << "cd      " << std::scientific << rep.cd
              << "  squared bidirectional mean over " << rep.n_denoised << "/" << rep.n_clean
              << " points\n";
    std::cout << "mse     " << std::scientific << rep.mse << "  mean distance to k=" << k
              << " nearest clean points\n";
    std::cout << machine.str() << "\n";
    return kExitOk;
}

int run_train(const std::string& data_dir, const fs::path& out, const std::string& config_path,
              TrainConfig cfg, const std::vector<std::string>& set_flags,
              const std::string& resume_path) {
    // config file first, then explicit flags override
    if (!config_path.empty()) {
        std::ifstream in(config_path);
        if (!in) throw Error("cannot open config file: " + config_path);
        std::stringstream buf;
        buf << in.rdbuf();
        TrainConfig file_cfg;
        apply_config_text(file_cfg, buf.str(), /*strict=*/true);
        // flags already parsed into cfg; reapply them on top of the file config
        TrainConfig merged = file_cfg;
        std::ostringstream flag_text;
        for (const std::string& f : set_flags) flag_text << f << '\n';
        apply_config_text(merged, flag_text.str(), /*strict=*/true);
        cfg = merged;
    }
    validate(cfg);

    std::vector<PointCloud> shapes;
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(data_dir))
        if (entry.is_regular_file() && entry.path().extension() == ".xyz")
            files.push_back(entry.path());
    std::sort(files.begin(), files.end());
    if (files.empty()) throw Error("no .xyz files in " + data_dir);
    for (const fs::path& f : files) {
        PointCloud c = read_xyz(f, &std::cerr);
        if (!c.has_normals()) throw MissingNormals("training shape without normals: " + f.string());
        shapes.push_back(std::move(c));
    }

    std::cout << "resolved config:\n" << config_text(cfg);
    std::cout << "shapes: " << shapes.size() << " from " << data_dir << "\n";

    Checkpoint resume;
    const Checkpoint* resume_ptr = nullptr;
    if (!resume_path.empty()) {
        resume = load_checkpoint(resume_path);
        resume_ptr = &resume;
        std::cout << "resuming from epoch " << resume.epochs_done << "\n";
    }

    std::vector<EpochLog> log;
    train(shapes, cfg, out, &log, resume_ptr);
    for (const EpochLog& e : log)
        std::cout << "epoch " << e.epoch << ": lr=" << e.lr << " mean_loss=" << e.mean_loss
                  << " samples=" << e.samples << "\n";
    std::cout << "checkpoint -> " << out.string() << "\n";
    return kExitOk;
}

}  // namespace

int run(const std::vector<std::string>& args) {
    CLI::App app{"point cloud denoising with classical and learnable bilateral filters", "lbf"};
    app.require_subcommand(1);

    // noise
    auto* noise = app.add_subcommand("noise", "add Gaussian noise to a cloud");
    std::string n_in, n_out;
    double n_sigma_pct = 1.0;
    std::uint64_t n_seed = 0;
    noise->add_option("--input", n_in, "input .xyz")->required();
    noise->add_option("--output", n_out, "output .xyz")->required();
    noise->add_option("--sigma-pct", n_sigma_pct, "noise sigma, percent of bbox diagonal")
        ->required()
        ->check(CLI::NonNegativeNumber);
    noise->add_option("--seed", n_seed, "rng seed");

    // denoise
    auto* denoise = app.add_subcommand("denoise", "denoise a cloud");
    denoise->require_subcommand(1);

    auto* classical = denoise->add_subcommand("classical", "fixed-parameter bilateral filter");
    std::string c_in, c_out, c_report;
    double c_radius_pct = 5.0, c_sigma_d = 0.0, c_sigma_n = 0.0;
    int c_iterations = 1;
    classical->add_option("--input", c_in)->required();
    classical->add_option("--output", c_out)->required();
    classical->add_option("--radius-pct", c_radius_pct, "neighborhood radius, percent of bbox diagonal")
        ->check(CLI::PositiveNumber);
    classical->add_option("--sigma-d", c_sigma_d, "spatial bandwidth, world units")
        ->required()
        ->check(CLI::PositiveNumber);
    classical->add_option("--sigma-n", c_sigma_n, "normal-offset bandwidth, world units")
        ->required()
        ->check(CLI::PositiveNumber);
    classical->add_option("--iterations", c_iterations)->check(CLI::PositiveNumber);
    classical->add_option("--report", c_report, "write per-point report");

    auto* learned = denoise->add_subcommand("learned", "network-predicted per-point parameters");
    std::string l_in, l_out, l_model, l_report;
    std::vector<double> l_scales;
    std::uint64_t l_seed = 0;
    learned->add_option("--input", l_in)->required();
    learned->add_option("--output", l_out)->required();
    learned->add_option("--model", l_model, "model or checkpoint file")->required();
    learned->add_option("--scales", l_scales,
                        "patch radii as fractions of the bbox diagonal (default: from the "
                        "model's .meta sidecar, else 0.03 0.04 0.05)");
    learned->add_option("--seed", l_seed, "rng seed for patch downsampling");
    learned->add_option("--report", l_report, "write per-point sigma report");

    // train
    auto* train_cmd = app.add_subcommand("train", "train the parameter-prediction network");
    std::string t_data, t_out, t_config, t_resume;
    TrainConfig cfg;
    train_cmd->add_option("--data", t_data, "directory of .xyz shapes with normals")->required();
    train_cmd->add_option("--out", t_out, "checkpoint output path")->required();
    train_cmd->add_option("--config", t_config, "key=value config file");
    train_cmd->add_option("--resume", t_resume, "checkpoint to resume from");
    auto* f_epochs = train_cmd->add_option("--epochs", cfg.epochs);
    auto* f_lr = train_cmd->add_option("--lr", cfg.lr);
    auto* f_batch = train_cmd->add_option("--batch-size", cfg.batch_size);
    auto* f_eta = train_cmd->add_option("--eta", cfg.eta);
    auto* f_seed = train_cmd->add_option("--seed", cfg.seed);
    std::vector<double> t_noise, t_scales;
    auto* f_noise = train_cmd->add_option("--noise-levels", t_noise,
                                          "noise sigmas as fractions of the bbox diagonal");
    auto* f_scales =
        train_cmd->add_option("--scales", t_scales, "patch radii as fractions of the bbox diagonal");
    auto* f_patch = train_cmd->add_option("--patch-size", cfg.patch_size);
    auto* f_max = train_cmd->add_option("--max-patches", cfg.max_patches_per_shape,
                                        "patches per shape per epoch");
    auto* f_threads = train_cmd->add_option("--threads", cfg.threads);

    // eval
    auto* eval_cmd = app.add_subcommand("eval", "compare a denoised cloud against ground truth");
    std::string e_denoised, e_clean;
    int e_k = 10;
    eval_cmd->add_option("--denoised", e_denoised)->required();
    eval_cmd->add_option("--clean", e_clean)->required();
    eval_cmd->add_option("--k", e_k, "clean neighbors per point for mse")->check(CLI::PositiveNumber);

    std::vector<const char*> argv;
    argv.push_back("lbf");
    for (const std::string& a : args) argv.push_back(a.c_str());

    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitUsage;
    }

    try {
        if (noise->parsed()) return run_noise(n_in, n_out, n_sigma_pct, n_seed);
        if (classical->parsed())
            return run_denoise_classical(c_in, c_out, c_radius_pct, c_sigma_d, c_sigma_n,
                                         c_iterations, c_report);
        if (learned->parsed())
            return run_denoise_learned(l_in, l_out, l_model, l_scales, l_seed, l_report);
        if (eval_cmd->parsed()) return run_eval(e_denoised, e_clean, e_k);
        if (train_cmd->parsed()) {
            if (!t_noise.empty()) {
                cfg.noise_levels = t_noise;
            }
            if (!t_scales.empty()) cfg.scales = to_scales(t_scales);
            // remember which flags were set explicitly so they survive a config file
            std::vector<std::string> set_flags;
            std::ostringstream v;
            v.precision(17);
            auto note = [&](CLI::Option* opt, auto value, const char* key) {
                if (opt->count() > 0) {
                    v.str("");
                    v << key << '=' << value;
                    set_flags.push_back(v.str());
                }
            };
            note(f_epochs, cfg.epochs, "epochs");
            note(f_lr, cfg.lr, "lr");
            note(f_batch, cfg.batch_size, "batch_size");
            note(f_eta, cfg.eta, "eta");
            note(f_seed, cfg.seed, "seed");
            note(f_patch, cfg.patch_size, "patch_size");
            note(f_max, cfg.max_patches_per_shape, "max_patches_per_shape");
            note(f_threads, cfg.threads, "threads");
            if (f_noise->count() > 0) {
                v.str("");
                v << "noise_levels=";
                for (std::size_t i = 0; i < cfg.noise_levels.size(); ++i)
                    v << (i ? "," : "") << cfg.noise_levels[i];
                set_flags.push_back(v.str());
            }
            if (f_scales->count() > 0) {
                v.str("");
                v << "scales=";
                for (std::size_t i = 0; i < cfg.scales.size(); ++i)
                    v << (i ? "," : "") << cfg.scales[i].radius_fraction;
                set_flags.push_back(v.str());
            }
            return run_train(t_data, t_out, t_config, cfg, set_flags, t_resume);
        }
        return kExitUsage;
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitData;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitData;
    }
}

}  // namespace lbf::cli
