// Command-line front end for the gradient-inversion lab.
//
// Exit codes: 0 success, 1 configuration error, 2 runtime failure.

#include <torch/torch.h>

#include <CLI11.hpp>

#include <cstdint>
#include <iostream>
#include <optional>
#include <string>

#include "gifd/harness.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 1;
constexpr int kExitRuntime = 2;

struct CommonFlags {
    std::string config;
    std::optional<uint64_t> seed;
    std::optional<std::string> out;
    std::optional<int64_t> k;
    std::optional<std::string> defense;
    std::optional<int64_t> batch_size;
    std::optional<std::string> variant;
    std::optional<std::string> style;
};

void add_common(CLI::App* cmd, CommonFlags& f) {
    cmd->add_option("--config", f.config, "experiment config file (YAML)")->required()->check(CLI::ExistingFile);
    cmd->add_option("--seed", f.seed, "override the experiment seed");
    cmd->add_option("--out", f.out, "override the output root directory");
    cmd->add_option("--k", f.k, "override the last optimized generator layer K");
    cmd->add_option("--defense", f.defense, "override the defense variant");
    cmd->add_option("--batch-size", f.batch_size, "override the client batch size");
    cmd->add_option("--variant", f.variant, "override the attack variant");
    cmd->add_option("--style", f.style, "override the style transform of the targets");
}

gifd::ExperimentConfig effective_config(const CommonFlags& f) {
    auto cfg = gifd::load_config(f.config);
    gifd::ConfigOverrides o{f.seed, f.out, f.k, f.defense, f.batch_size, f.variant, f.style};
    gifd::apply_overrides(cfg, o);
    cfg.validate();
    return cfg;
}

void log_line(const std::string& s) { std::cerr << s << std::endl; }

}  // namespace

int main(int argc, char** argv) {
    torch::set_num_threads(1);
    CLI::App app{"Gradient inversion lab: GAN-prior attacks on shared FL gradients"};
    app.require_subcommand(1);
    app.set_version_flag("--version", GIFD_VERSION);

    CommonFlags flags;
    std::string grad_file;
    auto* train = app.add_subcommand("train-gan", "train the toy GAN and the perceptual feature extractor");
    auto* attack = app.add_subcommand("attack", "attack seeded fl-eval targets and write a run directory");
    auto* ablate = app.add_subcommand("ablate-k", "sweep the last optimized layer K");
    auto* bench = app.add_subcommand("defense-bench", "mean PSNR per attack variant and defense");
    auto* sweep = app.add_subcommand("batch-sweep", "mean PSNR per attack variant and batch size");
    auto* invert = app.add_subcommand("invert", "attack one public exchange.grad file");
    for (auto* cmd : {train, attack, ablate, bench, sweep, invert}) add_common(cmd, flags);
    invert->add_option("--grad", grad_file, "public gradient exchange file")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitConfig;
    }

    try {
        const auto cfg = effective_config(flags);
        if (train->parsed()) {
            std::cout << gifd::cmd_train_gan(cfg, log_line).string() << '\n';
        } else if (attack->parsed()) {
            const auto run = gifd::cmd_attack(cfg, log_line);
            std::cout << run.run_dir.string() << '\n';
            std::cerr << "mean psnr " << gifd::fmt_fixed(run.summary.mean.psnr, 3) << " dB, ssim "
                      << gifd::fmt_fixed(run.summary.mean.ssim, 4) << ", label accuracy "
                      << gifd::fmt_fixed(run.summary.label_accuracy, 2) << '\n';
        } else if (ablate->parsed()) {
            const auto rep = gifd::cmd_ablate_k(cfg, log_line);
            std::cout << rep.run_dir.string() << '\n';
            std::cerr << "best K " << rep.best_k() << '\n';
        } else if (bench->parsed()) {
            std::cout << gifd::cmd_defense_bench(cfg, log_line).run_dir.string() << '\n';
        } else if (sweep->parsed()) {
            std::cout << gifd::cmd_batch_sweep(cfg, log_line).run_dir.string() << '\n';
        } else if (invert->parsed()) {
            std::cout << gifd::cmd_invert(cfg, grad_file, log_line).string() << '\n';
        }
    } catch (const gifd::ConfigError& e) {
        std::cerr << e.what() << '\n';
        return kExitConfig;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitRuntime;
    }
    return kExitOk;
}
