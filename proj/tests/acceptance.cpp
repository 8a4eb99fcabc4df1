// Acceptance suite. Every criterion prints one PASS/FAIL line and exits
// nonzero on failure.
//
//   gifd_acceptance --setup --work DIR         train the GAN and the perceptual extractor
//   gifd_acceptance --criterion N --work DIR   run criterion N (1..11)

#include <torch/torch.h>

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "gifd/harness.hpp"
#include "oracles.hpp"

namespace {

using namespace gifd;
using nlohmann::json;

struct Verdict {
    bool pass = false;
    std::string detail;
};

void note(const std::string& s) { std::cerr << s << std::endl; }

std::string fmt(double v, int digits = 3) { return fmt_fixed(v, digits); }

std::string join(const std::vector<double>& v, int digits = 2) {
    std::string out;
    for (double x : v) out += (out.empty() ? "" : " ") + fmt(x, digits);
    return out;
}

double mean_of(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
}

/// Default experiment rooted in the work directory.
ExperimentConfig base_config(const fs::path& work) {
    auto cfg = load_config(fs::path(GIFD_SOURCE_DIR) / "configs" / "default.yaml");
    cfg.checkpoint = work / "gan";
    cfg.out_dir = work / "runs";
    return cfg;
}

/// Attack settings shared by the experiment criteria: the matching term
/// alone, with a step budget sized for a single CPU core.
ExperimentConfig experiment_config(const fs::path& work, int64_t steps, int64_t trials) {
    auto cfg = base_config(work);
    cfg.attack.steps = steps;
    cfg.attack.trials = trials;
    cfg.attack.loss.alpha_tv = 0.0;
    return cfg;
}

// ---------------------------------------------------------------------------

Verdict criterion_1() {
    std::mt19937_64 rng(1);
    std::uniform_int_distribution<int> dim(1, 16);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::uniform_real_distribution<double> radius(0.01, 3.0);
    double worst_err = 0.0, worst_excess = 0.0, worst_idem = 0.0;
    for (int c = 0; c < 1000; ++c) {
        const int n = dim(rng);
        std::vector<double> v(n), center(n);
        const double scale = c % 3 == 0 ? 10.0 : 1.0;
        for (int i = 0; i < n; ++i) {
            v[i] = scale * normal(rng);
            center[i] = 0.5 * normal(rng);
        }
        const double r = radius(rng);
        std::vector<double> p(n), pp(n);
        project_l1_ball<double>(v, center, r, p);
        project_l1_ball<double>(p, center, r, pp);
        const auto q = oracle::project_l1_qp(v, center, r);
        double l1 = 0.0;
        for (int i = 0; i < n; ++i) {
            worst_err = std::max(worst_err, std::abs(p[i] - q[i]));
            worst_idem = std::max(worst_idem, std::abs(pp[i] - p[i]));
            l1 += std::abs(p[i] - center[i]);
        }
        worst_excess = std::max(worst_excess, l1 - r);
    }
    const bool pass = worst_err <= 1e-6 && worst_excess <= 1e-9 && worst_idem <= 1e-12;
    std::ostringstream d;
    d << "1000 cases: max |proj - qp| " << worst_err << ", max l1 excess " << worst_excess << ", max idempotence gap "
      << worst_idem;
    return {pass, d.str()};
}

Verdict criterion_2(const fs::path& work) {
    auto cfg = base_config(work);
    auto eval = load_dataset(cfg.dataset, Split::FlEval);
    int single_ok = 0;
    for (int64_t i = 0; i < 200; ++i) {
        auto clf = make_classifier(cfg.classifier, static_cast<uint64_t>(100 + i));
        auto x = eval.images.slice(0, i, i + 1);
        auto y = eval.labels.slice(0, i, i + 1);
        auto report = compute_batch_gradients(clf, x, y);
        single_ok += extract_labels(report, 1) == std::vector<int64_t>{y[0].item<int64_t>()} ? 1 : 0;
    }
    const auto batches = sample_batches(eval, 50, 4, 11, cfg.dataset.num_classes);
    int batch_ok = 0;
    for (std::size_t b = 0; b < batches.size(); ++b) {
        auto clf = make_classifier(cfg.classifier, 500 + b);
        auto idx = torch::tensor(batches[b], torch::kInt64);
        auto y = eval.labels.index_select(0, idx);
        auto report = compute_batch_gradients(clf, eval.images.index_select(0, idx), y);
        std::vector<int64_t> truth(y.data_ptr<int64_t>(), y.data_ptr<int64_t>() + 4);
        std::sort(truth.begin(), truth.end());
        batch_ok += extract_labels(report, 4) == truth ? 1 : 0;
    }
    const bool pass = single_ok == 200 && batch_ok >= 45;
    return {pass, "B=1 " + std::to_string(single_ok) + "/200, B=4 exact label sets " + std::to_string(batch_ok) + "/50"};
}

Verdict criterion_3(const fs::path& work) {
    auto cfg = base_config(work);
    torch::manual_seed(3);
    auto gen = clone_generator(LayeredGenerator(cfg.gan.generator), torch::kFloat64);
    gen->eval();
    freeze(gen);
    auto clf = clone_classifier(make_classifier(cfg.classifier, 1), torch::kFloat64);

    struct Case {
        int64_t cut;
        DistanceMetric metric;
        bool per_layer;
        DefenseVariant defense;
        double alpha_tv;
    };
    const std::vector<Case> cases{
        {0, DistanceMetric::NegativeCosine, false, DefenseVariant::None, 0.0},
        {1, DistanceMetric::NegativeCosine, false, DefenseVariant::None, 0.0},
        {2, DistanceMetric::NegativeCosine, false, DefenseVariant::None, 1e-4},
        {3, DistanceMetric::NegativeCosine, false, DefenseVariant::None, 0.0},
        {0, DistanceMetric::SquaredL2, false, DefenseVariant::None, 0.0},
        {2, DistanceMetric::SquaredL2, false, DefenseVariant::None, 0.0},
        {1, DistanceMetric::NegativeCosine, true, DefenseVariant::None, 0.0},
        {2, DistanceMetric::NegativeCosine, false, DefenseVariant::Clipping, 0.0},
        {3, DistanceMetric::NegativeCosine, false, DefenseVariant::Sparsification, 0.0},
        {1, DistanceMetric::NegativeCosine, false, DefenseVariant::Soteria, 1e-4},
    };
    double worst = 0.0;
    int checked = 0;
    for (std::size_t c = 0; c < cases.size(); ++c) {
        const auto& cs = cases[c];
        torch::Tensor x_true;
        {
            torch::NoGradGuard no_grad;
            x_true = to_unit_range(gen->forward(torch::randn({1, cfg.gan.generator.latent_dim}, torch::kFloat64)));
        }
        DefenseConfig d;
        d.variant = cs.defense;
        d.bound = 0.05;
        d.p = cs.defense == DefenseVariant::Soteria ? 0.8 : 0.9;
        ClientBatch batch{x_true, torch::tensor({static_cast<int64_t>(c)}, torch::kInt64)};
        auto rec = produce_exchange(clf, batch, d, 40 + c);
        AttackConfig ac;
        ac.declared_defense = cs.defense;
        ac.loss.metric = cs.metric;
        ac.loss.per_layer = cs.per_layer;
        ac.loss.alpha_tv = cs.alpha_tv;
        auto obj = make_objective(clf, rec.report, {static_cast<int64_t>(c)}, ac);

        std::vector<int64_t> shape{1};
        for (auto s : gen->cut_shape(cs.cut)) shape.push_back(s);
        auto base = torch::randn(shape, torch::kFloat64);
        auto param = base.clone().requires_grad_(true);
        auto loss = total_attack_loss(gen, {cs.cut, param, {}}, obj);
        auto grad = torch::autograd::grad({loss}, {param})[0].flatten();
        auto flat = base.flatten();
        std::mt19937_64 pick(c);
        for (int j = 0; j < 5; ++j) {
            const int64_t i = static_cast<int64_t>(pick() % static_cast<uint64_t>(flat.size(0)));
            const double h = 1e-6;
            auto plus = flat.clone(), minus = flat.clone();
            plus[i] += h;
            minus[i] -= h;
            const double fp = total_attack_loss(gen, {cs.cut, plus.view(shape), {}}, obj, false).item<double>();
            const double fm = total_attack_loss(gen, {cs.cut, minus.view(shape), {}}, obj, false).item<double>();
            const double fd = (fp - fm) / (2.0 * h);
            const double ad = grad[i].item<double>();
            const double rel = std::abs(ad - fd) / std::max({std::abs(ad), std::abs(fd), 1e-300});
            worst = std::max(worst, rel);
            ++checked;
        }
    }
    std::ostringstream d;
    d << checked << " coordinates over " << cases.size() << " configs: max relative error " << worst;
    return {worst < 1e-3, d.str()};
}

Verdict criterion_4(const fs::path& work) {
    auto cfg = base_config(work);
    auto eval = load_dataset(cfg.dataset, Split::FlEval);
    double worst_clip = 0.0;
    int mask_mismatch = 0, cases = 0;
    for (int64_t i = 0; i < 20; ++i) {
        auto clf = make_classifier(cfg.classifier, static_cast<uint64_t>(200 + i));
        const int64_t b = 1 + i % 3;
        auto raw = compute_batch_gradients(clf, eval.images.slice(0, 5 * i, 5 * i + b), eval.labels.slice(0, 5 * i, 5 * i + b));
        std::vector<double> norms;
        for (const auto& e : raw.entries) norms.push_back(e.grad.norm().item<double>());
        std::sort(norms.begin(), norms.end());
        // A bound between the smallest and largest layer norm clips some layers only.
        const double bound = norms[norms.size() / 2];
        auto clipped = clip_defense(raw, bound);
        for (bool global : {false, true}) {
            InferOptions opts;
            opts.global_clip_bound = global;
            auto back = apply_transform(infer_transform(clipped, DefenseVariant::Clipping, opts), raw);
            for (std::size_t l = 0; l < raw.size(); ++l) {
                const double rel = (back.entries[l].grad - clipped.entries[l].grad).norm().item<double>() /
                                   std::max(clipped.entries[l].grad.norm().item<double>(), 1e-30);
                worst_clip = std::max(worst_clip, rel);
            }
        }
        auto sparse = sparsify_defense(raw, 0.9);
        auto sback = apply_transform(infer_transform(sparse, DefenseVariant::Sparsification), raw);
        auto sot = soteria_defense(raw, 0.8, ClassifierImpl::kFcWeight);
        auto oback = apply_transform(infer_transform(sot, DefenseVariant::Soteria), raw);
        for (std::size_t l = 0; l < raw.size(); ++l) {
            mask_mismatch += torch::equal(sback.entries[l].grad, sparse.entries[l].grad) ? 0 : 1;
            mask_mismatch += torch::equal(oback.entries[l].grad, sot.entries[l].grad) ? 0 : 1;
        }
        ++cases;
    }
    std::ostringstream d;
    d << cases << " cases per defense: mask layers differing " << mask_mismatch << ", max clipping relative error "
      << worst_clip;
    return {mask_mismatch == 0 && worst_clip <= 1e-6, d.str()};
}

Verdict criterion_5(const fs::path& work) {
    auto cfg = experiment_config(work, 400, 4);
    auto generator = load_generator(cfg.checkpoint);
    freeze(generator);
    auto clf = make_classifier(cfg.classifier, cfg.classifier_seed);
    std::vector<double> psnrs;
    int hits = 0;
    for (int rep = 0; rep < 10; ++rep) {
        auto rng = make_rng(1000 + static_cast<uint64_t>(rep));
        torch::Tensor x;
        {
            torch::NoGradGuard no_grad;
            x = to_unit_range(generator->forward(torch::randn({1, cfg.gan.generator.latent_dim}, rng)));
        }
        auto report = compute_batch_gradients(clf, x, torch::tensor({static_cast<int64_t>(rep % 10)}, torch::kInt64));
        auto attack = cfg.attack;
        attack.seed = static_cast<uint64_t>(rep);
        attack.k = 3;
        auto r = run_gifd(generator, clf, report, extract_labels(report, 1), attack);
        psnrs.push_back(psnr(r.images, x));
        hits += psnrs.back() >= 30.0 ? 1 : 0;
        note("  rep " + std::to_string(rep) + ": psnr " + fmt(psnrs.back(), 2) + " dB, stage " + std::to_string(r.chosen_stage));
    }
    return {hits >= 8, std::to_string(hits) + "/10 reps >= 30 dB (psnr " + join(psnrs) + ")"};
}

/// One GIFD run with K = N per target; every smaller K is its truncation.
/// Cached in the work directory so criteria 6 and 9 share it.
struct KSweep {
    std::vector<int64_t> k_values;
    std::vector<std::vector<double>> psnr;  // [target][k]
};

KSweep k_sweep(const fs::path& work) {
    auto cfg = experiment_config(work, 200, 4);
    const fs::path cache = work / "k_sweep.json";
    const std::string key = config_to_yaml(cfg);
    if (fs::exists(cache)) {
        std::ifstream in(cache);
        const auto j = json::parse(in);
        if (j.value("config", "") == key) {
            note("reusing " + cache.string());
            return {j["k_values"].get<std::vector<int64_t>>(), j["psnr"].get<std::vector<std::vector<double>>>()};
        }
    }
    auto lab = open_lab(cfg, true, note);
    const int64_t n = lab.generator->get()->last_block();
    auto attack = cfg.attack;
    attack.k = n;
    KSweep s;
    for (int64_t k = 0; k <= n; ++k) s.k_values.push_back(k);
    const auto batches = sample_batches(lab.eval, 10, 1, cfg.seed, cfg.dataset.num_classes);
    for (int64_t t = 0; t < 10; ++t) {
        auto full = attack_target(lab, batches[static_cast<std::size_t>(t)], cfg.defense, attack, t);
        std::vector<double> row;
        for (auto k : s.k_values) row.push_back(truncate_outcome(lab, full, k).mean().psnr);
        note("  target " + std::to_string(t) + ": psnr by K " + join(row));
        s.psnr.push_back(std::move(row));
    }
    std::ofstream out(cache);
    out << json{{"config", key}, {"k_values", s.k_values}, {"psnr", s.psnr}}.dump(2) << '\n';
    return s;
}

Verdict criterion_6(const fs::path& work) {
    const auto sweep = k_sweep(work);
    auto cfg = experiment_config(work, 200, 4);
    auto lab = open_lab(cfg, true, note);
    const int64_t k = resolve_k(cfg.attack, *lab.generator);
    std::vector<double> gifd, gifd_z;
    for (const auto& row : sweep.psnr) {
        gifd.push_back(row.at(static_cast<std::size_t>(k)));
        gifd_z.push_back(row.at(0));
    }
    const double gap = mean_of(gifd) - mean_of(gifd_z);

    // GIFD-e and GIFD-f on the same targets with the same seeds.
    const auto batches = sample_batches(lab.eval, 10, 1, cfg.seed, cfg.dataset.num_classes);
    int ordered = 0;
    std::vector<double> loss_e, loss_f;
    for (int64_t t = 0; t < 10; ++t) {
        const auto& idx = batches[static_cast<std::size_t>(t)];
        auto e = attack_target(lab, idx, cfg.defense, gifd::detail::with_variant(cfg.attack, AttackVariant::GifdE), t);
        auto f = attack_target(lab, idx, cfg.defense, gifd::detail::with_variant(cfg.attack, AttackVariant::GifdF), t);
        loss_e.push_back(e.result.loss());
        loss_f.push_back(f.result.loss());
        ordered += loss_e.back() <= loss_f.back() ? 1 : 0;
        note("  target " + std::to_string(t) + ": gifd-e loss " + fmt(loss_e.back(), 6) + ", gifd-f loss " +
             fmt(loss_f.back(), 6));
    }
    const bool pass = gap >= 1.0 && ordered == 10;
    return {pass, "mean psnr gifd " + fmt(mean_of(gifd), 2) + " vs gifd-z " + fmt(mean_of(gifd_z), 2) + " (gap " +
                      fmt(gap, 2) + " dB); gifd-e loss <= gifd-f on " + std::to_string(ordered) + "/10 targets"};
}

Verdict criterion_7(const fs::path& work) {
    auto cfg = experiment_config(work, 150, 2);
    auto lab = open_lab(cfg, true, note);
    const auto batches = sample_batches(lab.eval, 10, 1, cfg.seed, cfg.dataset.num_classes);
    std::vector<DefenseConfig> defenses{DefenseConfig{}};
    for (const auto& d : standard_defenses()) defenses.push_back(d);
    std::vector<double> means;
    for (const auto& d : defenses) {
        std::vector<double> p;
        for (int64_t t = 0; t < 10; ++t) {
            p.push_back(attack_target(lab, batches[static_cast<std::size_t>(t)], d, cfg.attack, t).mean().psnr);
        }
        means.push_back(mean_of(p));
        note("  " + d.label() + ": psnr " + join(p) + " (mean " + fmt(means.back(), 2) + ")");
    }
    bool pass = true;
    std::string detail = "none " + fmt(means[0], 2);
    for (std::size_t i = 1; i < defenses.size(); ++i) {
        pass = pass && means[i] <= means[0];
        detail += ", " + defenses[i].label() + " " + fmt(means[i], 2);
    }
    return {pass, "mean psnr " + detail};
}

Verdict criterion_8(const fs::path& work) {
    auto cfg = experiment_config(work, 150, 2);
    auto lab = open_lab(cfg, true, note);
    std::vector<double> means;
    for (int64_t b : {1, 2, 4}) {
        const auto batches = sample_batches(lab.eval, 10, b, cfg.seed, cfg.dataset.num_classes);
        std::vector<double> p;
        for (int64_t t = 0; t < 10; ++t) {
            p.push_back(attack_target(lab, batches[static_cast<std::size_t>(t)], cfg.defense, cfg.attack, t).mean().psnr);
        }
        means.push_back(mean_of(p));
        note("  B=" + std::to_string(b) + ": psnr " + join(p) + " (mean " + fmt(means.back(), 2) + ")");
    }
    const bool pass = means[0] >= means[1] && means[1] >= means[2];
    return {pass, "mean psnr B=1 " + fmt(means[0], 2) + ", B=2 " + fmt(means[1], 2) + ", B=4 " + fmt(means[2], 2)};
}

Verdict criterion_9(const fs::path& work) {
    const auto sweep = k_sweep(work);
    int positive = 0;
    std::string argmax;
    for (const auto& row : sweep.psnr) {
        const auto best = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
        positive += sweep.k_values[best] > 0 ? 1 : 0;
        argmax += (argmax.empty() ? "" : " ") + std::to_string(sweep.k_values[best]);
    }
    return {positive >= 7, "best K > 0 for " + std::to_string(positive) + "/10 targets (best K: " + argmax + ")"};
}

Verdict criterion_10() {
    bool pass = psnr_from_mse(0.01) == 20.0;
    std::string detail = "psnr(0.01) = " + fmt_double(psnr_from_mse(0.01));
    torch::manual_seed(10);
    double worst_ssim = 0.0;
    for (int i = 0; i < 5; ++i) {
        auto x = torch::rand({3, 32, 32});
        worst_ssim = std::max(worst_ssim, std::abs(ssim(x, x) - 1.0));
    }
    pass = pass && worst_ssim <= 1e-12;
    const double constant = ssim(torch::zeros({3, 32, 32}), torch::ones({3, 32, 32}));
    const double expected = kSsimC1 / (1.0 + kSsimC1);
    pass = pass && std::abs(constant - expected) <= 1e-6;
    auto clf = make_classifier(base_config(".").classifier, 1);
    double worst_cos = 0.0;
    for (int i = 0; i < 10; ++i) {
        auto a = compute_batch_gradients(clf, torch::rand({1, 3, 32, 32}), torch::tensor({i}, torch::kInt64));
        auto b = compute_batch_gradients(clf, torch::rand({1, 3, 32, 32}), torch::tensor({(i + 3) % 10}, torch::kInt64));
        // Double precision, so scaling the inputs does not itself round them.
        std::vector<GradientEntry> da, db, scaled;
        const double c = std::pow(10.0, i - 5);
        for (const auto& e : a.entries) da.push_back({e.name, e.grad.detach().to(torch::kFloat64)});
        for (const auto& e : b.entries) {
            db.push_back({e.name, e.grad.detach().to(torch::kFloat64)});
            scaled.push_back({e.name, db.back().grad * c});
        }
        auto ad = a.with_entries(da), bd = b.with_entries(db);
        for (bool per_layer : {false, true}) {
            const double d0 = gradient_match_distance(ad, bd, DistanceMetric::NegativeCosine, per_layer).item<double>();
            const double d1 =
                gradient_match_distance(ad, bd.with_entries(scaled), DistanceMetric::NegativeCosine, per_layer).item<double>();
            worst_cos = std::max(worst_cos, std::abs(d0 - d1));
        }
    }
    pass = pass && worst_cos <= 1e-9;
    std::ostringstream d;
    d << detail << ", max |ssim(x,x) - 1| " << worst_ssim << ", constant pair " << constant << " vs " << expected
      << ", max cosine change under scaling " << worst_cos;
    return {pass, d.str()};
}

Verdict criterion_11(const fs::path& work) {
    auto cfg = base_config(work);
    cfg.name = "repro";
    cfg.targets = 2;
    cfg.attack.steps = 30;
    cfg.attack.trials = 2;
    cfg.out_dir = work / "repro_a";
    const auto a = cmd_attack(cfg, note).run_dir / "metrics.csv";
    cfg.out_dir = work / "repro_b";
    const auto b = cmd_attack(cfg, note).run_dir / "metrics.csv";
    auto slurp = [](const fs::path& p) {
        std::ifstream in(p, std::ios::binary);
        return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
    };
    const auto sa = slurp(a), sb = slurp(b);
    const bool pass = !sa.empty() && sa == sb;
    return {pass, "metrics.csv " + std::string(pass ? "identical" : "differs") + " across reruns (" +
                      std::to_string(sa.size()) + " bytes)"};
}

int setup(const fs::path& work) {
    auto cfg = base_config(work);
    if (fs::exists(cfg.checkpoint / "manifest.json") && fs::exists(perceptual_dir(cfg.checkpoint) / "manifest.json")) {
        note("reusing generator checkpoint " + cfg.checkpoint.string());
        return 0;
    }
    fs::create_directories(work);
    cmd_train_gan(cfg, note);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    torch::set_num_threads(1);
    CLI::App app{"gifd acceptance criteria"};
    bool do_setup = false;
    int criterion = 0;
    std::string work;
    app.add_flag("--setup", do_setup, "train the generator used by the attack criteria");
    app.add_option("--criterion", criterion, "criterion to run")->check(CLI::Range(1, 11));
    app.add_option("--work", work, "work directory")->required();
    CLI11_PARSE(app, argc, argv);

    try {
        if (do_setup) return setup(work);
        const std::map<int, std::function<Verdict()>> criteria{
            {1, [] { return criterion_1(); }},
            {2, [&] { return criterion_2(work); }},
            {3, [&] { return criterion_3(work); }},
            {4, [&] { return criterion_4(work); }},
            {5, [&] { return criterion_5(work); }},
            {6, [&] { return criterion_6(work); }},
            {7, [&] { return criterion_7(work); }},
            {8, [&] { return criterion_8(work); }},
            {9, [&] { return criterion_9(work); }},
            {10, [] { return criterion_10(); }},
            {11, [&] { return criterion_11(work); }},
        };
        if (criterion == 0) {
            std::cerr << "pass --setup or --criterion N\n";
            return 2;
        }
        const auto v = criteria.at(criterion)();
        std::cout << "criterion " << criterion << ": " << (v.pass ? "PASS" : "FAIL") << " " << v.detail << std::endl;
        return v.pass ? 0 : 1;
    } catch (const std::exception& e) {
        std::cout << "criterion " << criterion << ": FAIL error: " << e.what() << std::endl;
        return 1;
    }
}
