#ifndef GIFD_HARNESS_HPP_
#define GIFD_HARNESS_HPP_

#include <torch/torch.h>

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "gifd/attack.hpp"
#include "gifd/checkpoint.hpp"
#include "gifd/config.hpp"
#include "gifd/dataset.hpp"
#include "gifd/defense.hpp"
#include "gifd/error.hpp"
#include "gifd/fl_sim.hpp"
#include "gifd/gan_training.hpp"
#include "gifd/image_io.hpp"
#include "gifd/labels.hpp"
#include "gifd/metrics.hpp"
#include "gifd/models.hpp"
#include "gifd/plot.hpp"
#include "gifd/style.hpp"

#ifndef GIFD_VERSION
#define GIFD_VERSION "0.1.0"
#endif

namespace gifd {

using Logger = std::function<void(const std::string&)>;

inline std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline std::string fmt_fixed(double v, int digits = 4) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.*f", digits, v);
    return buf;
}

/// Loaded models and evaluation data shared by every target of a command.
struct Lab {
    ExperimentConfig cfg;
    Classifier classifier{nullptr};
    std::optional<LayeredGenerator> generator;
    std::optional<Classifier> extractor;
    ImageStore eval;
    Logger log;

    LayeredGenerator* generator_ptr() { return generator ? &*generator : nullptr; }
    const Classifier* extractor_ptr() const { return extractor ? &*extractor : nullptr; }
};

inline fs::path perceptual_dir(const fs::path& checkpoint) { return checkpoint / "perceptual"; }

/// Builds the FL classifier, loads the generator (when a variant needs it)
/// and the fl-eval split.
inline Lab open_lab(const ExperimentConfig& cfg, bool need_generator, Logger log = {}) {
    cfg.validate();
    Lab lab;
    lab.cfg = cfg;
    lab.log = log ? std::move(log) : Logger([](const std::string&) {});
    lab.classifier = make_classifier(cfg.classifier, cfg.classifier_seed);
    if (cfg.classifier_train_steps > 0) {
        lab.log("training the FL classifier for " + std::to_string(cfg.classifier_train_steps) + " steps");
        auto train = load_dataset(cfg.dataset, Split::GanTrain);
        train_classifier(lab.classifier, train, {cfg.classifier_train_steps, 64, 1e-3, cfg.classifier_seed});
    }
    if (need_generator) {
        if (!fs::exists(cfg.checkpoint / "manifest.json")) {
            throw ConfigError("generator checkpoint not found at " + cfg.checkpoint.string() + " (run train-gan first)");
        }
        auto g = load_generator(cfg.checkpoint);
        const auto& gc = g->config();
        if (gc.channels != cfg.dataset.channels || gc.image_size() != cfg.dataset.resolution) {
            throw ConfigError("generator output shape does not match the dataset");
        }
        if (gc.num_classes != 0 && gc.num_classes != cfg.dataset.num_classes) {
            throw ConfigError("conditional generator class count does not match the dataset");
        }
        freeze(g);
        lab.generator = g;
    }
    if (fs::exists(perceptual_dir(cfg.checkpoint) / "manifest.json")) {
        lab.extractor = load_classifier(perceptual_dir(cfg.checkpoint));
    }
    lab.eval = load_dataset(cfg.dataset, Split::FlEval);
    return lab;
}

/// Seeded uniform sample of `count` batches of `batch` images with distinct
/// labels. Images are never reused across batches.
inline std::vector<std::vector<int64_t>> sample_batches(const ImageStore& store, int64_t count, int64_t batch,
                                                        uint64_t seed, int64_t num_classes) {
    if (batch < 1 || batch > num_classes) {
        throw ConfigError("batch size " + std::to_string(batch) + " must lie in [1, " + std::to_string(num_classes) + "]");
    }
    std::mt19937_64 rng(seed ^ 0x5DEECE66DULL);
    std::vector<std::vector<int64_t>> by_class(static_cast<std::size_t>(num_classes));
    for (int64_t i = 0; i < store.size(); ++i) by_class[static_cast<std::size_t>(store.labels[i].item<int64_t>())].push_back(i);
    auto shuffle = [&](auto& v) {
        for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[rng() % i]);
    };
    for (auto& c : by_class) shuffle(c);
    std::vector<std::size_t> next(by_class.size(), 0);
    std::vector<int64_t> classes(static_cast<std::size_t>(num_classes));
    for (int64_t c = 0; c < num_classes; ++c) classes[static_cast<std::size_t>(c)] = c;
    std::vector<std::vector<int64_t>> out;
    for (int64_t t = 0; t < count; ++t) {
        shuffle(classes);
        std::vector<int64_t> picked;
        for (int64_t c : classes) {
            if (static_cast<int64_t>(picked.size()) == batch) break;
            auto& pool = by_class[static_cast<std::size_t>(c)];
            if (next[static_cast<std::size_t>(c)] < pool.size()) picked.push_back(pool[next[static_cast<std::size_t>(c)]++]);
        }
        if (static_cast<int64_t>(picked.size()) < batch) throw ConfigError("fl-eval split too small for the requested targets");
        out.push_back(std::move(picked));
    }
    return out;
}

/// Everything recorded for one attacked exchange.
struct TargetOutcome {
    int64_t target = 0;
    std::vector<int64_t> indices;
    std::vector<std::string> image_ids;
    std::vector<int64_t> true_labels;
    std::vector<int64_t> labels;
    AttackResult result;
    torch::Tensor truth;
    std::vector<MetricsRecord> metrics;

    bool labels_correct() const {
        auto a = true_labels, b = labels;
        std::sort(a.begin(), a.end());
        std::sort(b.begin(), b.end());
        return a == b;
    }
    MetricsRecord mean() const { return mean_record(metrics); }
};

inline uint64_t target_seed(uint64_t seed, int64_t target) { return trial_seed(seed ^ 0xA5A5A5A5ULL, target); }

/// Client side for one target: styled private batch and its exchange.
inline ExchangeRecord make_target_exchange(Lab& lab, const std::vector<int64_t>& indices, const DefenseConfig& defense,
                                           int64_t target) {
    auto idx = torch::tensor(indices, torch::kInt64);
    ClientBatch batch{apply_style(lab.eval.images.index_select(0, idx), lab.cfg.style), lab.eval.labels.index_select(0, idx)};
    return produce_exchange(lab.classifier, batch, defense, target_seed(lab.cfg.seed, target) + 17);
}

/// Attacker side for one public report: label extraction, then the attack.
inline AttackResult attack_report(Lab& lab, const GradientReport& report, AttackConfig attack, int64_t target,
                                  DefenseVariant declared) {
    const auto labels = extract_labels(report, report.batch_size);
    attack.seed = target_seed(lab.cfg.seed, target);
    attack.declared_defense = declared;
    return run_attack(lab.generator_ptr(), lab.classifier, report, labels, attack);
}

/// Runs one target end to end. With `exchange_dir`, the exchange goes
/// through `exchange.grad` / `exchange.truth` and the attacker reads the
/// public file back from disk.
inline TargetOutcome attack_target(Lab& lab, const std::vector<int64_t>& indices, const DefenseConfig& defense,
                                   const AttackConfig& attack, int64_t target,
                                   const std::optional<fs::path>& exchange_dir = std::nullopt) {
    TargetOutcome out;
    out.target = target;
    out.indices = indices;
    for (auto i : indices) out.image_ids.push_back(lab.eval.ids[static_cast<std::size_t>(i)]);
    auto rec = make_target_exchange(lab, indices, defense, target);
    GradientReport report = rec.report;
    if (exchange_dir) {
        save_exchange(rec, *exchange_dir);
        report = load_report(*exchange_dir / "exchange.grad");
    }
    out.result = attack_report(lab, report, attack, target, defense.variant);
    out.labels = out.result.labels;
    // Evaluation only from here on.
    out.truth = rec.truth.images;
    for (int64_t i = 0; i < rec.truth.labels.size(0); ++i) out.true_labels.push_back(rec.truth.labels[i].item<int64_t>());
    out.metrics = batch_metrics(out.result.images, out.truth, lab.extractor_ptr());
    return out;
}

/// Re-scores an outcome after truncating its attack to last layer `k`.
inline TargetOutcome truncate_outcome(const Lab& lab, const TargetOutcome& full, int64_t k) {
    TargetOutcome out = full;
    out.result = truncate_to_k(full.result, k);
    out.metrics = batch_metrics(out.result.images, out.truth, lab.extractor_ptr());
    return out;
}

struct Summary {
    MetricsRecord mean;
    double label_accuracy = 0.0;
    double loss_mean = 0.0;
};

inline Summary summarize(const std::vector<TargetOutcome>& outcomes) {
    Summary s;
    std::vector<MetricsRecord> all;
    for (const auto& o : outcomes) {
        all.insert(all.end(), o.metrics.begin(), o.metrics.end());
        s.label_accuracy += o.labels_correct() ? 1.0 : 0.0;
        s.loss_mean += o.result.loss();
    }
    s.mean = mean_record(all);
    s.label_accuracy /= static_cast<double>(outcomes.size());
    s.loss_mean /= static_cast<double>(outcomes.size());
    return s;
}

// ---------------------------------------------------------------------------
// Run directory writers.

namespace detail {

inline std::ofstream open_out(const fs::path& path) {
    fs::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw RuntimeFailure("cannot write " + path.string());
    return out;
}

inline fs::path prepare_run_dir(const ExperimentConfig& cfg) {
    const auto dir = cfg.out_dir / cfg.name;
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec || !fs::is_directory(dir)) throw RuntimeFailure("cannot create run directory " + dir.string());
    auto out = open_out(dir / "config.yaml");
    out << config_to_yaml(cfg);
    return dir;
}

inline std::string target_tag(int64_t target) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "t%03lld", static_cast<long long>(target));
    return buf;
}

inline json outcome_json(const TargetOutcome& o) {
    json metrics = json::array();
    for (std::size_t i = 0; i < o.metrics.size(); ++i) {
        metrics.push_back({{"image_id", o.image_ids[i]},
                           {"psnr", o.metrics[i].psnr},
                           {"ssim", o.metrics[i].ssim},
                           {"mse", o.metrics[i].mse},
                           {"perceptual", o.metrics[i].perceptual}});
    }
    const auto& r = o.result;
    json trials = json::array();
    for (const auto& t : r.trials) {
        trials.push_back({{"trial", t.trial}, {"seed", t.seed}, {"failed", t.failed}, {"failure", t.failure},
                          {"stage_losses", t.stage_losses()}, {"chosen_stage", t.chosen_stage}});
    }
    return {{"target", o.target},
            {"image_ids", o.image_ids},
            {"labels", o.labels},
            {"true_labels", o.true_labels},
            {"labels_correct", o.labels_correct()},
            {"variant", to_string(r.variant)},
            {"k", r.k},
            {"chosen_stage", r.chosen_stage},
            {"best_trial", r.best_trial},
            {"loss", r.loss()},
            {"stage_losses", r.stage_losses},
            {"trial_losses", r.trial_losses},
            {"trials", trials},
            {"seconds", r.seconds},
            {"metrics", metrics}};
}

inline json summary_json(const Summary& s) {
    return {{"psnr_mean", s.mean.psnr},
            {"ssim_mean", s.mean.ssim},
            {"mse_mean", s.mean.mse},
            {"perceptual_mean", s.mean.perceptual},
            {"label_accuracy", s.label_accuracy},
            {"loss_mean", s.loss_mean}};
}

inline json run_header(const ExperimentConfig& cfg, const std::string& command) {
    return {{"run_id", cfg.name}, {"command", command}, {"version", GIFD_VERSION}, {"seed", cfg.seed},
            {"config", config_to_yaml(cfg)}};
}

inline void write_json(const fs::path& path, const json& j) {
    auto out = open_out(path);
    out << j.dump(2) << '\n';
}

}  // namespace detail

inline void write_metrics_csv(const fs::path& path, const std::string& run_id, const std::vector<TargetOutcome>& outcomes) {
    auto out = detail::open_out(path);
    out << "run_id,image_id,psnr,ssim,mse,perceptual\n";
    for (const auto& o : outcomes) {
        for (std::size_t i = 0; i < o.metrics.size(); ++i) {
            const auto& m = o.metrics[i];
            out << run_id << ',' << detail::target_tag(o.target) << '_' << o.image_ids[i] << ',' << fmt_double(m.psnr) << ','
                << fmt_double(m.ssim) << ',' << fmt_double(m.mse) << ',' << fmt_double(m.perceptual) << '\n';
        }
    }
}

/// Per (target, trial, stage) end-of-stage matching losses.
inline void write_losses_csv(const fs::path& path, const std::string& run_id, const std::vector<TargetOutcome>& outcomes) {
    auto out = detail::open_out(path);
    out << "run_id,target,trial,stage,loss,failed,selected\n";
    for (const auto& o : outcomes) {
        for (const auto& t : o.result.trials) {
            if (t.failed) {
                out << run_id << ',' << o.target << ',' << t.trial << ",-1,nan,1,0\n";
                continue;
            }
            for (const auto& s : t.stages) {
                const bool selected = t.trial == o.result.best_trial && s.stage == o.result.chosen_stage;
                out << run_id << ',' << o.target << ',' << t.trial << ',' << s.stage << ',' << fmt_double(s.loss) << ",0,"
                    << (selected ? 1 : 0) << '\n';
            }
        }
    }
}

/// Best-so-far total loss per step for the winning trial of every target.
inline void write_traces_csv(const fs::path& path, const std::vector<TargetOutcome>& outcomes) {
    auto out = detail::open_out(path);
    out << "target,stage,step,best_total_loss\n";
    for (const auto& o : outcomes) {
        const auto& t = o.result.trials[static_cast<std::size_t>(o.result.best_trial)];
        for (const auto& s : t.stages) {
            for (std::size_t i = 0; i < s.trace.size(); ++i) {
                out << o.target << ',' << s.stage << ',' << i << ',' << fmt_double(s.trace[i]) << '\n';
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Commands.

/// Trains the toy GAN and the perceptual feature extractor; writes the
/// generator checkpoint, a sample grid and `perceptual/`.
inline fs::path cmd_train_gan(const ExperimentConfig& cfg, const Logger& log = {}) {
    auto data = load_dataset(cfg.dataset, Split::GanTrain);
    auto gan = cfg.gan;
    gan.generator.channels = cfg.dataset.channels;
    if (gan.generator.image_size() != cfg.dataset.resolution) {
        throw ConfigError("generator produces " + std::to_string(gan.generator.image_size()) + " px images but the dataset has " +
                          std::to_string(cfg.dataset.resolution) + " px");
    }
    auto say = [&](const std::string& s) {
        if (log) log(s);
    };
    say("training toy GAN on " + std::to_string(data.size()) + " gan-train images for " + std::to_string(gan.steps) + " steps");
    auto generator = train_toy_gan(
        data, gan, [&](int64_t step, double d, double g) { say("  step " + std::to_string(step) + "  d_loss " + fmt_fixed(d) + "  g_loss " + fmt_fixed(g)); });
    std::error_code ec;
    fs::create_directories(cfg.checkpoint, ec);
    if (ec) throw RuntimeFailure("cannot create checkpoint directory " + cfg.checkpoint.string());
    save_generator(generator, gan.seed, cfg.checkpoint);

    {
        torch::NoGradGuard no_grad;
        auto rng = make_rng(gan.seed + 99);
        auto z = torch::randn({32, gan.generator.latent_dim}, rng);
        std::optional<torch::Tensor> labels;
        if (gan.generator.num_classes > 0) labels = torch::arange(32, torch::kInt64) % gan.generator.num_classes;
        save_png(cfg.checkpoint / "samples.png", image_grid(to_unit_range(generator->forward(z, labels)).clamp(0.0, 1.0)));
    }

    say("training perceptual feature extractor for " + std::to_string(cfg.perceptual_train_steps) + " steps");
    auto extractor = make_classifier(cfg.classifier, gan.seed + 7);
    train_classifier(extractor, data, {cfg.perceptual_train_steps, 64, 1e-3, gan.seed + 7});
    save_classifier(extractor, gan.seed + 7, perceptual_dir(cfg.checkpoint));
    return cfg.checkpoint;
}

struct AttackRun {
    fs::path run_dir;
    std::vector<TargetOutcome> outcomes;
    Summary summary;
};

/// Attacks `targets` seeded fl-eval batches and writes the run directory.
inline AttackRun cmd_attack(const ExperimentConfig& cfg, const Logger& log = {}) {
    auto lab = open_lab(cfg, cfg.attack.variant != AttackVariant::DirectPixel, log);
    AttackRun run;
    run.run_dir = detail::prepare_run_dir(cfg);
    const auto batches = sample_batches(lab.eval, cfg.targets, cfg.batch_size, cfg.seed, cfg.dataset.num_classes);
    for (int64_t t = 0; t < cfg.targets; ++t) {
        const auto tag = detail::target_tag(t);
        auto o = attack_target(lab, batches[static_cast<std::size_t>(t)], cfg.defense, cfg.attack, t,
                               run.run_dir / "exchanges" / tag);
        save_images(o.result.images.clamp(0.0, 1.0), run.run_dir / "images", "recon_" + tag);
        save_png(run.run_dir / "images" / ("compare_" + tag + ".png"),
                 image_grid(torch::cat({o.truth, o.result.images.clamp(0.0, 1.0)}), o.truth.size(0)));
        lab.log(tag + ": psnr " + fmt_fixed(o.mean().psnr, 2) + " dB, chosen stage " + std::to_string(o.result.chosen_stage) +
                ", loss " + fmt_fixed(o.result.loss(), 6));
        run.outcomes.push_back(std::move(o));
    }
    run.summary = summarize(run.outcomes);
    write_metrics_csv(run.run_dir / "metrics.csv", cfg.name, run.outcomes);
    write_losses_csv(run.run_dir / "losses.csv", cfg.name, run.outcomes);
    write_traces_csv(run.run_dir / "traces.csv", run.outcomes);
    auto result = detail::run_header(cfg, "attack");
    result["variant"] = to_string(cfg.attack.variant);
    result["defense"] = cfg.defense.to_json();
    result["style"] = cfg.style.name();
    result["targets"] = json::array();
    for (const auto& o : run.outcomes) result["targets"].push_back(detail::outcome_json(o));
    result["summary"] = detail::summary_json(run.summary);
    detail::write_json(run.run_dir / "result.json", result);
    return run;
}

/// Attacks a single public report file; never touches ground truth.
inline fs::path cmd_invert(const ExperimentConfig& cfg, const fs::path& grad_file, const Logger& log = {}) {
    auto report = load_report(grad_file);
    auto lab = open_lab(cfg, cfg.attack.variant != AttackVariant::DirectPixel, log);
    const auto dir = detail::prepare_run_dir(cfg);
    auto result = attack_report(lab, report, cfg.attack, 0, cfg.defense.variant);
    save_images(result.images.clamp(0.0, 1.0), dir / "images");
    auto j = detail::run_header(cfg, "invert");
    j["input"] = fs::absolute(grad_file).string();
    j["labels"] = result.labels;
    j["chosen_stage"] = result.chosen_stage;
    j["loss"] = result.loss();
    j["stage_losses"] = result.stage_losses;
    j["trial_losses"] = result.trial_losses;
    j["seconds"] = result.seconds;
    detail::write_json(dir / "result.json", j);
    return dir;
}

struct AblationReport {
    fs::path run_dir;
    std::vector<int64_t> k_values;
    std::vector<std::vector<double>> psnr;  // [target][k index]
    std::vector<Summary> per_k;

    int64_t best_k() const {
        std::size_t best = 0;
        for (std::size_t i = 1; i < per_k.size(); ++i) {
            if (per_k[i].mean.psnr > per_k[best].mean.psnr) best = i;
        }
        return k_values.at(best);
    }
};

/// PSNR per last-layer K. One run searches up to max(K); smaller K are its
/// prefixes, which is exactly what separate runs with the same seed return.
inline AblationReport cmd_ablate_k(const ExperimentConfig& cfg, const Logger& log = {}) {
    auto lab = open_lab(cfg, true, log);
    AblationReport rep;
    rep.k_values = cfg.k_values;
    if (rep.k_values.empty()) {
        for (int64_t k = 0; k <= lab.generator->get()->last_block(); ++k) rep.k_values.push_back(k);
    }
    if (rep.k_values.size() < 2) throw ConfigError("ablate-k needs at least two K values");
    for (auto k : rep.k_values) {
        if (k < 0) throw ConfigError("K values must be >= 0");
    }
    auto attack = cfg.attack;
    attack.variant = AttackVariant::Gifd;
    attack.k = *std::max_element(rep.k_values.begin(), rep.k_values.end());
    resolve_k(attack, *lab.generator);
    rep.run_dir = detail::prepare_run_dir(cfg);
    const auto batches = sample_batches(lab.eval, cfg.targets, cfg.batch_size, cfg.seed, cfg.dataset.num_classes);
    std::vector<std::vector<TargetOutcome>> by_k(rep.k_values.size());
    for (int64_t t = 0; t < cfg.targets; ++t) {
        auto full = attack_target(lab, batches[static_cast<std::size_t>(t)], cfg.defense, attack, t);
        std::vector<double> row;
        for (std::size_t i = 0; i < rep.k_values.size(); ++i) {
            by_k[i].push_back(truncate_outcome(lab, full, rep.k_values[i]));
            row.push_back(by_k[i].back().mean().psnr);
        }
        std::string line = detail::target_tag(t) + ": psnr by K";
        for (double v : row) line += " " + fmt_fixed(v, 2);
        lab.log(line);
        rep.psnr.push_back(std::move(row));
    }
    for (const auto& outcomes : by_k) rep.per_k.push_back(summarize(outcomes));

    auto table = detail::open_out(rep.run_dir / "ablate_k.csv");
    table << "k,psnr_mean,ssim_mean,mse_mean,perceptual_mean,loss_mean\n";
    for (std::size_t i = 0; i < rep.k_values.size(); ++i) {
        const auto& s = rep.per_k[i];
        table << rep.k_values[i] << ',' << fmt_double(s.mean.psnr) << ',' << fmt_double(s.mean.ssim) << ','
              << fmt_double(s.mean.mse) << ',' << fmt_double(s.mean.perceptual) << ',' << fmt_double(s.loss_mean) << '\n';
    }
    auto per_target = detail::open_out(rep.run_dir / "ablate_k_targets.csv");
    per_target << "target,k,psnr,loss,chosen_stage\n";
    for (std::size_t i = 0; i < rep.k_values.size(); ++i) {
        for (const auto& o : by_k[i]) {
            per_target << o.target << ',' << rep.k_values[i] << ',' << fmt_double(o.mean().psnr) << ','
                       << fmt_double(o.result.loss()) << ',' << o.result.chosen_stage << '\n';
        }
    }
    ChartSpec chart{"PSNR vs last optimized layer K", "K", "mean PSNR (dB)", {}, {{"GIFD", {}}}};
    for (std::size_t i = 0; i < rep.k_values.size(); ++i) {
        chart.x_ticks.push_back(std::to_string(rep.k_values[i]));
        chart.series[0].values.push_back(rep.per_k[i].mean.psnr);
    }
    write_line_chart(rep.run_dir / "ablate_k.svg", chart);
    auto j = detail::run_header(cfg, "ablate-k");
    j["k_values"] = rep.k_values;
    j["best_k"] = rep.best_k();
    j["per_k"] = json::array();
    for (const auto& s : rep.per_k) j["per_k"].push_back(detail::summary_json(s));
    detail::write_json(rep.run_dir / "result.json", j);
    return rep;
}

/// The four standard defended settings.
inline std::vector<DefenseConfig> standard_defenses() {
    DefenseConfig noise, clip, sparse, soteria;
    noise.variant = DefenseVariant::GaussianNoise;
    noise.sigma = 0.1;
    clip.variant = DefenseVariant::Clipping;
    clip.bound = 4.0;
    sparse.variant = DefenseVariant::Sparsification;
    sparse.p = 0.9;
    soteria.variant = DefenseVariant::Soteria;
    soteria.p = 0.8;
    return {noise, clip, sparse, soteria};
}

struct TableCell {
    std::string row;
    std::string column;
    Summary summary;
};

struct TableReport {
    fs::path run_dir;
    std::vector<std::string> rows;     // attack variants
    std::vector<std::string> columns;  // defenses or batch sizes
    std::vector<TableCell> cells;

    const Summary& at(const std::string& row, const std::string& column) const {
        for (const auto& c : cells) {
            if (c.row == row && c.column == column) return c.summary;
        }
        throw InputError("no table cell " + row + " / " + column);
    }
};

namespace detail {

inline void write_table(const TableReport& rep, const fs::path& csv, const std::string& column_name) {
    auto out = open_out(csv);
    out << "variant," << column_name << ",psnr_mean,ssim_mean,mse_mean,perceptual_mean,label_accuracy\n";
    for (const auto& c : rep.cells) {
        out << c.row << ',' << c.column << ',' << fmt_double(c.summary.mean.psnr) << ',' << fmt_double(c.summary.mean.ssim)
            << ',' << fmt_double(c.summary.mean.mse) << ',' << fmt_double(c.summary.mean.perceptual) << ','
            << fmt_double(c.summary.label_accuracy) << '\n';
    }
}

inline void write_markdown(const TableReport& rep, const ExperimentConfig& cfg, const fs::path& path,
                           const std::string& title) {
    auto out = open_out(path);
    out << "# " << title << "\n\n## Configuration\n\n```yaml\n" << config_to_yaml(cfg) << "```\n\n";
    out << "Code version " << GIFD_VERSION << ", seed " << cfg.seed << ".\n\n## Mean PSNR (dB)\n\n| variant |";
    for (const auto& c : rep.columns) out << ' ' << c << " |";
    out << "\n|---|";
    for (std::size_t i = 0; i < rep.columns.size(); ++i) out << "---|";
    out << '\n';
    for (const auto& r : rep.rows) {
        out << "| " << r << " |";
        for (const auto& c : rep.columns) out << ' ' << fmt_fixed(rep.at(r, c).mean.psnr, 2) << " |";
        out << '\n';
    }
}

inline ChartSpec table_chart(const TableReport& rep, const std::string& title, const std::string& x_label) {
    ChartSpec chart{title, x_label, "mean PSNR (dB)", rep.columns, {}};
    for (const auto& r : rep.rows) {
        Series s{r, {}};
        for (const auto& c : rep.columns) s.values.push_back(rep.at(r, c).mean.psnr);
        chart.series.push_back(std::move(s));
    }
    return chart;
}

inline AttackConfig with_variant(const AttackConfig& base, AttackVariant v) {
    auto a = base;
    a.variant = v;
    return a;
}

inline bool needs_generator(const std::vector<AttackVariant>& variants) {
    for (auto v : variants) {
        if (v != AttackVariant::DirectPixel) return true;
    }
    return false;
}

}  // namespace detail

/// Mean PSNR per (attack variant x defense), the undefended setting first.
inline TableReport cmd_defense_bench(const ExperimentConfig& cfg, const Logger& log = {}) {
    auto lab = open_lab(cfg, detail::needs_generator(cfg.variants), log);
    std::vector<DefenseConfig> defenses{DefenseConfig{}};
    for (const auto& d : cfg.defenses.empty() ? standard_defenses() : cfg.defenses) {
        d.validate();
        if (d.variant != DefenseVariant::None) defenses.push_back(d);
    }
    TableReport rep;
    rep.run_dir = detail::prepare_run_dir(cfg);
    for (auto v : cfg.variants) rep.rows.push_back(to_string(v));
    for (const auto& d : defenses) rep.columns.push_back(d.label());
    const auto batches = sample_batches(lab.eval, cfg.targets, cfg.batch_size, cfg.seed, cfg.dataset.num_classes);
    auto per_target = detail::open_out(rep.run_dir / "defense_bench_targets.csv");
    per_target << "variant,defense,target,psnr,loss,chosen_stage,labels_correct\n";
    for (auto v : cfg.variants) {
        for (const auto& d : defenses) {
            std::vector<TargetOutcome> outcomes;
            for (int64_t t = 0; t < cfg.targets; ++t) {
                outcomes.push_back(attack_target(lab, batches[static_cast<std::size_t>(t)], d,
                                                 detail::with_variant(cfg.attack, v), t));
                const auto& o = outcomes.back();
                per_target << to_string(v) << ',' << d.label() << ',' << t << ',' << fmt_double(o.mean().psnr) << ','
                           << fmt_double(o.result.loss()) << ',' << o.result.chosen_stage << ',' << o.labels_correct() << '\n';
            }
            rep.cells.push_back({to_string(v), d.label(), summarize(outcomes)});
            lab.log(to_string(v) + " / " + d.label() + ": psnr " + fmt_fixed(rep.cells.back().summary.mean.psnr, 2) + " dB");
        }
    }
    per_target.close();
    detail::write_table(rep, rep.run_dir / "defense_bench.csv", "defense");
    detail::write_markdown(rep, cfg, rep.run_dir / "report.md", "Defense benchmark");
    write_bar_chart(rep.run_dir / "defense_bench.svg", detail::table_chart(rep, "Mean PSNR under defenses", "defense"));
    auto j = detail::run_header(cfg, "defense-bench");
    j["cells"] = json::array();
    for (const auto& c : rep.cells) {
        auto s = detail::summary_json(c.summary);
        s["variant"] = c.row;
        s["defense"] = c.column;
        j["cells"].push_back(s);
    }
    detail::write_json(rep.run_dir / "result.json", j);
    return rep;
}

/// Mean PSNR per (attack variant x batch size); batches never repeat labels.
inline TableReport cmd_batch_sweep(const ExperimentConfig& cfg, const Logger& log = {}) {
    for (auto b : cfg.batch_sizes) {
        if (b < 1 || b > cfg.dataset.num_classes) {
            throw ConfigError("batch size " + std::to_string(b) + " exceeds the class count " +
                              std::to_string(cfg.dataset.num_classes));
        }
    }
    if (cfg.batch_sizes.empty()) throw ConfigError("batch-sweep needs at least one batch size");
    auto lab = open_lab(cfg, detail::needs_generator(cfg.variants), log);
    TableReport rep;
    rep.run_dir = detail::prepare_run_dir(cfg);
    for (auto v : cfg.variants) rep.rows.push_back(to_string(v));
    for (auto b : cfg.batch_sizes) rep.columns.push_back(std::to_string(b));
    auto per_target = detail::open_out(rep.run_dir / "batch_sweep_targets.csv");
    per_target << "variant,batch_size,target,psnr,loss,chosen_stage,labels,labels_correct\n";
    for (auto v : cfg.variants) {
        for (auto b : cfg.batch_sizes) {
            const auto batches = sample_batches(lab.eval, cfg.targets, b, cfg.seed, cfg.dataset.num_classes);
            std::vector<TargetOutcome> outcomes;
            for (int64_t t = 0; t < cfg.targets; ++t) {
                outcomes.push_back(attack_target(lab, batches[static_cast<std::size_t>(t)], cfg.defense,
                                                 detail::with_variant(cfg.attack, v), t));
                const auto& o = outcomes.back();
                std::string labels;
                for (auto l : o.labels) labels += (labels.empty() ? "" : " ") + std::to_string(l);
                per_target << to_string(v) << ',' << b << ',' << t << ',' << fmt_double(o.mean().psnr) << ','
                           << fmt_double(o.result.loss()) << ',' << o.result.chosen_stage << ',' << labels << ','
                           << o.labels_correct() << '\n';
            }
            rep.cells.push_back({to_string(v), std::to_string(b), summarize(outcomes)});
            lab.log(to_string(v) + " / B=" + std::to_string(b) + ": psnr " + fmt_fixed(rep.cells.back().summary.mean.psnr, 2) +
                    " dB");
        }
    }
    per_target.close();
    detail::write_table(rep, rep.run_dir / "batch_sweep.csv", "batch_size");
    detail::write_markdown(rep, cfg, rep.run_dir / "report.md", "Batch-size sweep");
    write_line_chart(rep.run_dir / "batch_sweep.svg", detail::table_chart(rep, "Mean PSNR vs batch size", "B"));
    auto j = detail::run_header(cfg, "batch-sweep");
    j["cells"] = json::array();
    for (const auto& c : rep.cells) {
        auto s = detail::summary_json(c.summary);
        s["variant"] = c.row;
        s["batch_size"] = std::stoll(c.column);
        j["cells"].push_back(s);
    }
    detail::write_json(rep.run_dir / "result.json", j);
    return rep;
}

}  // namespace gifd

#endif  // GIFD_HARNESS_HPP_
