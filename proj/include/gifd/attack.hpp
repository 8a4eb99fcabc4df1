#ifndef GIFD_ATTACK_HPP_
#define GIFD_ATTACK_HPP_

#include <torch/torch.h>

#include <chrono>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "gifd/defense.hpp"
#include "gifd/error.hpp"
#include "gifd/gan_training.hpp"
#include "gifd/gradient_report.hpp"
#include "gifd/l1_projection.hpp"
#include "gifd/models.hpp"
#include "gifd/objective.hpp"
#include "gifd/schedule.hpp"
#include "gifd/spherical.hpp"

namespace gifd {

enum class AttackVariant {
    Gifd,         // latent search + l1-constrained feature search, min-loss stage
    GifdZ,        // latent search only
    GifdF,        // unconstrained feature search, output of layer K
    GifdE,        // unconstrained feature search, min-loss stage
    DirectPixel,  // optimize pixels directly (IG / GI style baselines)
    LatentL2,     // latent search with squared-l2 matching
};

inline std::string to_string(AttackVariant v) {
    switch (v) {
        case AttackVariant::Gifd: return "gifd";
        case AttackVariant::GifdZ: return "gifd-z";
        case AttackVariant::GifdF: return "gifd-f";
        case AttackVariant::GifdE: return "gifd-e";
        case AttackVariant::DirectPixel: return "direct-pixel";
        case AttackVariant::LatentL2: return "latent-l2";
    }
    return "gifd";
}

inline AttackVariant attack_variant_from_string(const std::string& s) {
    if (s == "gifd") return AttackVariant::Gifd;
    if (s == "gifd-z") return AttackVariant::GifdZ;
    if (s == "gifd-f") return AttackVariant::GifdF;
    if (s == "gifd-e") return AttackVariant::GifdE;
    if (s == "direct-pixel") return AttackVariant::DirectPixel;
    if (s == "latent-l2") return AttackVariant::LatentL2;
    throw ConfigError("unknown attack variant '" + s + "'");
}

inline bool searches_features(AttackVariant v) {
    return v == AttackVariant::Gifd || v == AttackVariant::GifdF || v == AttackVariant::GifdE;
}

struct AttackConfig {
    AttackVariant variant = AttackVariant::Gifd;
    int64_t k = -1;              // last intermediate layer; -1 selects N-1
    std::vector<double> radii;   // r[1..K]; empty selects rho * dim(h_i)
    double rho = 0.05;
    double noise_rho = 0.05;     // l1 radius per noise entry, noisy generators only
    int64_t steps = 1000;        // per stage
    double lr = 0.1;
    double feature_lr = -1.0;    // peak lr of the feature stages; < 0 reuses `lr`
    int64_t trials = 4;
    LossConfig loss;
    uint64_t seed = 0;
    DefenseVariant declared_defense = DefenseVariant::None;
};

/// End-of-stage bookkeeping for one trial.
struct StageOutcome {
    int64_t stage = 0;           // 0 = latent stage, i = feature domain h_i
    double loss = 0.0;           // gradient-matching term only
    torch::Tensor images;        // B x C x H x W in [0, 1]
    double max_l1_deviation = 0.0;  // worst per-row ||h_i - h_i^0||_1 seen after any step
    std::vector<double> trace;   // best-so-far total loss per step
};

struct TrialOutcome {
    int64_t trial = 0;
    uint64_t seed = 0;
    bool failed = false;
    std::string failure;
    std::vector<StageOutcome> stages;
    int64_t chosen_stage = -1;
    double final_loss = std::numeric_limits<double>::infinity();

    std::vector<double> stage_losses() const {
        std::vector<double> out;
        for (const auto& s : stages) out.push_back(s.loss);
        return out;
    }
};

struct AttackResult {
    AttackVariant variant = AttackVariant::Gifd;
    int64_t k = 0;
    torch::Tensor images;            // best reconstruction in [0, 1]
    int64_t chosen_stage = 0;
    int64_t best_trial = 0;
    std::vector<double> stage_losses;  // winning trial
    std::vector<double> trial_losses;  // final loss per trial (inf for failed trials)
    std::vector<int64_t> labels;
    double seconds = 0.0;
    std::vector<TrialOutcome> trials;

    double loss() const { return stage_losses.at(static_cast<std::size_t>(chosen_stage)); }
};

/// Index of the stage a variant outputs, considering stages 0..upto.
/// Min-loss selection keeps the earliest stage on ties (strict improvement).
inline int64_t choose_stage(const std::vector<double>& losses, AttackVariant variant, int64_t upto) {
    if (losses.empty()) throw InputError("no stage losses");
    upto = std::min<int64_t>(upto, static_cast<int64_t>(losses.size()) - 1);
    switch (variant) {
        case AttackVariant::Gifd:
        case AttackVariant::GifdE: {
            int64_t best = 0;
            for (int64_t i = 1; i <= upto; ++i) {
                if (losses[static_cast<std::size_t>(i)] < losses[static_cast<std::size_t>(best)]) best = i;
            }
            return best;
        }
        case AttackVariant::GifdF: return upto;
        default: return 0;
    }
}

/// Index of the successful trial with the smallest final loss; ties go to
/// the lowest index.
inline std::size_t select_best_trial(const std::vector<TrialOutcome>& trials) {
    if (trials.empty()) throw InputError("no trials to select from");
    std::optional<std::size_t> best;
    for (std::size_t i = 0; i < trials.size(); ++i) {
        if (trials[i].failed) continue;
        if (!best || trials[i].final_loss < trials[*best].final_loss) best = i;
    }
    if (!best) throw RuntimeFailure("all attack trials failed");
    return *best;
}

/// Plain-loss overload: index of the minimum, ties to the lowest index.
inline std::size_t select_best_trial(const std::vector<double>& final_losses) {
    std::vector<TrialOutcome> trials(final_losses.size());
    for (std::size_t i = 0; i < trials.size(); ++i) {
        trials[i].final_loss = final_losses[i];
        trials[i].failed = !std::isfinite(final_losses[i]);
    }
    return select_best_trial(trials);
}

inline uint64_t trial_seed(uint64_t seed, int64_t trial) {
    // splitmix64 of (seed, trial): independent streams per trial.
    uint64_t x = seed + 0x9E3779B97F4A7C15ULL * static_cast<uint64_t>(trial + 1);
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

namespace detail {

struct TrialFailed : Error {
    using Error::Error;
};

inline void check_finite(const torch::Tensor& loss, int64_t stage, int64_t step) {
    if (!std::isfinite(loss.item<double>())) {
        throw TrialFailed("non-finite loss at stage " + std::to_string(stage) + ", step " + std::to_string(step));
    }
}

inline void set_lr(torch::optim::Adam& opt, double lr) {
    for (auto& group : opt.param_groups()) static_cast<torch::optim::AdamOptions&>(group.options()).lr(lr);
}

/// Shared stage driver: Adam with the warmup/cosine schedule over `params`,
/// calling `constrain` after every step. On return `params` hold the best
/// iterate seen (every iterate is feasible, since losses are evaluated after
/// the constraint has been applied).
template <typename Loss, typename Constrain>
std::vector<double> run_stage(std::vector<torch::Tensor> params, const AttackConfig& cfg, int64_t stage, Loss&& loss_fn,
                              Constrain&& constrain) {
    const double peak = stage > 0 && cfg.feature_lr > 0.0 ? cfg.feature_lr : cfg.lr;
    torch::optim::Adam opt(params, torch::optim::AdamOptions(peak));
    const LRSchedule schedule{peak, cfg.steps};
    std::vector<double> trace;
    trace.reserve(static_cast<std::size_t>(cfg.steps));
    double best = std::numeric_limits<double>::infinity();
    std::vector<torch::Tensor> best_params;
    auto snapshot = [&](double value) {
        if (value < best) {
            best = value;
            best_params.clear();
            for (const auto& p : params) best_params.push_back(p.detach().clone());
        }
    };
    for (int64_t step = 0; step < cfg.steps; ++step) {
        set_lr(opt, schedule.at(static_cast<double>(step)));
        torch::Tensor loss = loss_fn();
        check_finite(loss, stage, step);
        snapshot(loss.item<double>());
        auto grads = torch::autograd::grad({loss}, params);
        for (std::size_t i = 0; i < params.size(); ++i) params[i].mutable_grad() = grads[i].detach();
        opt.step();
        constrain();
        trace.push_back(best);
    }
    {
        torch::Tensor last = loss_fn();
        check_finite(last, stage, cfg.steps);
        snapshot(last.item<double>());
    }
    torch::NoGradGuard no_grad;
    for (std::size_t i = 0; i < params.size(); ++i) params[i].copy_(best_params[i]);
    return trace;
}

}  // namespace detail

/// Resolved K for a generator (-1 means N-1).
inline int64_t resolve_k(const AttackConfig& cfg, const LayeredGenerator& generator) {
    const int64_t n = generator->last_block();
    const int64_t k = cfg.k < 0 ? n - 1 : cfg.k;
    if (k > n) throw ConfigError("K = " + std::to_string(k) + " exceeds the generator's cut count N = " + std::to_string(n));
    return k;
}

/// Per-layer l1 radii: explicit values or rho * dim(h_i).
inline RadiusSchedule resolve_radii(const AttackConfig& cfg, const LayeredGenerator& generator, int64_t k) {
    RadiusSchedule r;
    if (!cfg.radii.empty()) {
        r.radii = cfg.radii;
        if (static_cast<int64_t>(r.radii.size()) > k) r.radii.resize(static_cast<std::size_t>(k));
    } else {
        for (int64_t i = 1; i <= k; ++i) r.radii.push_back(cfg.rho * static_cast<double>(generator->cut_numel(i)));
    }
    r.validate(k);
    return r;
}

/// One seeded trial of a generator-based variant: latent stage, then (for
/// feature-searching variants) stages 1..K.
inline TrialOutcome run_generator_trial(LayeredGenerator& generator, const AttackObjective& objective,
                                        const AttackConfig& cfg, int64_t k, const RadiusSchedule& radii,
                                        int64_t trial_index) {
    TrialOutcome out;
    out.trial = trial_index;
    out.seed = trial_seed(cfg.seed, trial_index);
    auto rng = make_rng(out.seed);
    const int64_t batch = objective.labels().size(0);
    std::optional<torch::Tensor> condition;
    if (generator->config().num_classes > 0) condition = objective.labels();
    const bool constrained = cfg.variant == AttackVariant::Gifd;

    std::vector<torch::Tensor> noises;
    for (const auto& shape : generator->noise_shapes()) {
        std::vector<int64_t> full{batch};
        full.insert(full.end(), shape.begin(), shape.end());
        noises.push_back(torch::zeros(full));
    }

    auto finish_stage = [&](int64_t stage, const GeneratorInputs& in, std::vector<double> trace, double deviation) {
        torch::NoGradGuard no_grad;
        StageOutcome s;
        s.stage = stage;
        s.images = generate_unit_images(generator, in, condition).detach();
        s.trace = std::move(trace);
        s.max_l1_deviation = deviation;
        return s;
    };
    auto record_loss = [&](StageOutcome& s) {
        s.loss = objective.distance(s.images);
        if (!std::isfinite(s.loss)) throw detail::TrialFailed("non-finite loss at the end of stage " + std::to_string(s.stage));
    };

    try {
        // Latent space search on the sphere.
        auto z = radialize(torch::randn({batch, generator->config().latent_dim}, rng), rng).requires_grad_(true);
        auto trace = detail::run_stage(
            {z}, cfg, 0,
            [&] { return objective.evaluate(to_unit_range(generator->forward(z, condition, noises))).total; },
            [&] {
                torch::NoGradGuard g;
                z.copy_(radialize(z, rng));
            });
        out.stages.push_back(finish_stage(0, {0, z.detach(), noises}, std::move(trace), 0.0));
        record_loss(out.stages.back());

        if (searches_features(cfg.variant) && k > 0) {
            torch::Tensor h;
            {
                torch::NoGradGuard g;
                h = generator->apply_block(0, z.detach(), condition);
            }
            for (int64_t i = 1; i <= k; ++i) {
                const auto center = h.detach().clone();
                auto param = center.clone().requires_grad_(true);
                // Noise inputs of blocks downstream of the cut are optimized alongside h_i.
                std::vector<torch::Tensor> stage_noises = noises;
                std::vector<torch::Tensor> noise_params, noise_centers;
                std::vector<std::size_t> noise_slots;
                for (std::size_t j = 0; j < noises.size(); ++j) {
                    if (static_cast<int64_t>(j) + 1 >= i) {
                        noise_centers.push_back(noises[j].clone());
                        noise_params.push_back(noises[j].clone().requires_grad_(true));
                        noise_slots.push_back(j);
                        stage_noises[j] = noise_params.back();
                    }
                }
                std::vector<torch::Tensor> params{param};
                params.insert(params.end(), noise_params.begin(), noise_params.end());
                const double radius = radii.radii[static_cast<std::size_t>(i - 1)];
                double deviation = 0.0;
                auto stage_trace = detail::run_stage(
                    params, cfg, i,
                    [&] {
                        return objective.evaluate(to_unit_range(generator->forward_from(i, param, condition, stage_noises))).total;
                    },
                    [&] {
                        if (!constrained) return;
                        torch::NoGradGuard g;
                        param.copy_(project_l1_ball_rows(param, center, radius));
                        deviation = std::max(deviation, max_row_l1_distance(param, center));
                        for (std::size_t n = 0; n < noise_params.size(); ++n) {
                            const double nr = cfg.noise_rho * static_cast<double>(noise_params[n][0].numel());
                            noise_params[n].copy_(project_l1_ball_rows(noise_params[n], noise_centers[n], nr));
                        }
                    });
                std::vector<torch::Tensor> frozen_noises = noises;
                for (std::size_t n = 0; n < noise_slots.size(); ++n) frozen_noises[noise_slots[n]] = noise_params[n].detach();
                out.stages.push_back(finish_stage(i, {i, param.detach(), frozen_noises}, std::move(stage_trace), deviation));
                record_loss(out.stages.back());
                noises = frozen_noises;
                if (i < k) {
                    torch::NoGradGuard g;
                    h = generator->apply_block(i, param.detach(), condition, noises);
                }
            }
        }
    } catch (const detail::TrialFailed& e) {
        out.failed = true;
        out.failure = e.what();
        return out;
    }
    out.chosen_stage = choose_stage(out.stage_losses(), cfg.variant, k);
    out.final_loss = out.stages[static_cast<std::size_t>(out.chosen_stage)].loss;
    return out;
}

/// One seeded trial of pixel-space optimization, clamped to [0, 1].
inline TrialOutcome run_pixel_trial(const AttackObjective& objective, const GradientReport& report, const AttackConfig& cfg,
                                    int64_t trial_index) {
    TrialOutcome out;
    out.trial = trial_index;
    out.seed = trial_seed(cfg.seed, trial_index);
    auto rng = make_rng(out.seed);
    const auto& shape = report.image_shape;
    auto x = torch::rand({objective.labels().size(0), shape[0], shape[1], shape[2]}, rng).requires_grad_(true);
    try {
        auto trace = detail::run_stage(
            {x}, cfg, 0, [&] { return objective.evaluate(x).total; },
            [&] {
                torch::NoGradGuard g;
                x.clamp_(0.0, 1.0);
            });
        StageOutcome s;
        s.images = x.detach().clone();
        s.trace = std::move(trace);
        s.loss = objective.distance(s.images);
        if (!std::isfinite(s.loss)) throw detail::TrialFailed("non-finite final loss");
        out.stages.push_back(std::move(s));
    } catch (const detail::TrialFailed& e) {
        out.failed = true;
        out.failure = e.what();
        return out;
    }
    out.chosen_stage = 0;
    out.final_loss = out.stages[0].loss;
    return out;
}

namespace detail {

inline AttackResult assemble(std::vector<TrialOutcome> trials, AttackVariant variant, int64_t k,
                             std::vector<int64_t> labels, double seconds) {
    AttackResult r;
    r.variant = variant;
    r.k = k;
    r.labels = std::move(labels);
    r.seconds = seconds;
    for (const auto& t : trials) r.trial_losses.push_back(t.failed ? std::numeric_limits<double>::infinity() : t.final_loss);
    const auto best = select_best_trial(trials);
    r.best_trial = static_cast<int64_t>(best);
    r.chosen_stage = trials[best].chosen_stage;
    r.stage_losses = trials[best].stage_losses();
    r.images = trials[best].stages[static_cast<std::size_t>(r.chosen_stage)].images;
    r.trials = std::move(trials);
    return r;
}

inline void validate(const AttackConfig& cfg, const std::vector<int64_t>& labels) {
    if (cfg.trials < 1) throw ConfigError("need at least one trial");
    if (cfg.steps < 1) throw ConfigError("need at least one step per stage");
    if (!(cfg.lr > 0.0)) throw ConfigError("learning rate must be positive");
    if (labels.empty()) throw InputError("no labels for the attack");
    cfg.loss.validate();
}

}  // namespace detail

/// Builds the attacker's objective from the public report alone.
inline AttackObjective make_objective(const Classifier& classifier, const GradientReport& report,
                                      const std::vector<int64_t>& labels, const AttackConfig& cfg) {
    // A single clip bound keeps unclipped layers unscaled in the dummy gradients.
    InferOptions infer;
    infer.global_clip_bound = true;
    auto transform = infer_transform(report, cfg.declared_defense, infer);
    LossConfig loss = cfg.loss;
    if (cfg.variant == AttackVariant::LatentL2) loss.metric = DistanceMetric::SquaredL2;
    return AttackObjective(classifier, report.detached(), std::move(transform), torch::tensor(labels, torch::kInt64), loss);
}

/// Generator-based attack for any generator variant (GIFD and its ablations,
/// latent-l2). Labels are extracted beforehand and held fixed.
inline AttackResult run_variant(LayeredGenerator& generator, const Classifier& classifier, const GradientReport& report,
                                const std::vector<int64_t>& labels, const AttackConfig& cfg) {
    if (cfg.variant == AttackVariant::DirectPixel) throw ConfigError("direct-pixel does not use a generator");
    detail::validate(cfg, labels);
    const auto start = std::chrono::steady_clock::now();
    const int64_t k = resolve_k(cfg, generator);
    const auto radii = cfg.variant == AttackVariant::Gifd ? resolve_radii(cfg, generator, k) : RadiusSchedule{std::vector<double>(
                                                                                                     static_cast<std::size_t>(k), 1.0)};
    const auto objective = make_objective(classifier, report, labels, cfg);
    std::vector<TrialOutcome> trials;
    for (int64_t t = 0; t < cfg.trials; ++t) trials.push_back(run_generator_trial(generator, objective, cfg, k, radii, t));
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return detail::assemble(std::move(trials), cfg.variant, searches_features(cfg.variant) ? k : 0, labels, seconds);
}

/// Latent search followed by l1-constrained intermediate feature search,
/// returning the stage with the least gradient-matching loss.
inline AttackResult run_gifd(LayeredGenerator& generator, const Classifier& classifier, const GradientReport& report,
                             const std::vector<int64_t>& labels, AttackConfig cfg) {
    cfg.variant = AttackVariant::Gifd;
    return run_variant(generator, classifier, report, labels, cfg);
}

/// Pixel-space baseline: cosine (IG-style) or squared-l2 (GI-style) matching
/// plus the fidelity regularizer, pixels clamped to [0, 1] every step.
inline AttackResult run_direct_pixel(const Classifier& classifier, const GradientReport& report,
                                     const std::vector<int64_t>& labels, AttackConfig cfg) {
    cfg.variant = AttackVariant::DirectPixel;
    detail::validate(cfg, labels);
    const auto start = std::chrono::steady_clock::now();
    const auto objective = make_objective(classifier, report, labels, cfg);
    std::vector<TrialOutcome> trials;
    for (int64_t t = 0; t < cfg.trials; ++t) trials.push_back(run_pixel_trial(objective, report, cfg, t));
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return detail::assemble(std::move(trials), cfg.variant, 0, labels, seconds);
}

/// Dispatches on the configured variant.
inline AttackResult run_attack(LayeredGenerator* generator, const Classifier& classifier, const GradientReport& report,
                               const std::vector<int64_t>& labels, const AttackConfig& cfg) {
    if (cfg.variant == AttackVariant::DirectPixel) return run_direct_pixel(classifier, report, labels, cfg);
    if (generator == nullptr) throw ConfigError("variant " + to_string(cfg.variant) + " needs a generator");
    return run_variant(*generator, classifier, report, labels, cfg);
}

/// Re-derives the result a run with last layer `k` would return, from a run
/// that searched at least k layers with the same seed. Stages never depend on
/// K, so this equals running with K = k.
inline AttackResult truncate_to_k(const AttackResult& full, int64_t k) {
    if (k > full.k) throw InputError("cannot truncate to a larger K than was searched");
    std::vector<TrialOutcome> trials = full.trials;
    for (auto& t : trials) {
        if (t.failed) {
            // A failure after stage k does not affect the shorter run.
            if (static_cast<int64_t>(t.stages.size()) <= k || t.stages.empty()) continue;
            t.failed = false;
            t.failure.clear();
        }
        t.stages.resize(static_cast<std::size_t>(std::min<int64_t>(k + 1, static_cast<int64_t>(t.stages.size()))));
        t.chosen_stage = choose_stage(t.stage_losses(), full.variant, k);
        t.final_loss = t.stages[static_cast<std::size_t>(t.chosen_stage)].loss;
    }
    auto r = detail::assemble(std::move(trials), full.variant, k, full.labels, full.seconds);
    return r;
}

}  // namespace gifd

#endif  // GIFD_ATTACK_HPP_
