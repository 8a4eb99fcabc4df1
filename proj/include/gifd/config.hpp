#ifndef GIFD_CONFIG_HPP_
#define GIFD_CONFIG_HPP_

#include <yaml-cpp/yaml.h>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "gifd/attack.hpp"
#include "gifd/dataset.hpp"
#include "gifd/defense.hpp"
#include "gifd/error.hpp"
#include "gifd/gan_training.hpp"
#include "gifd/models.hpp"
#include "gifd/style.hpp"

namespace gifd {

namespace fs = std::filesystem;

/// Everything one harness command needs. Paths are resolved against the
/// directory of the config file.
struct ExperimentConfig {
    std::string name = "run";
    uint64_t seed = 0;
    fs::path out_dir = "runs";

    DatasetSpec dataset;

    ClassifierConfig classifier;
    uint64_t classifier_seed = 0;
    int64_t classifier_train_steps = 0;  // 0 attacks an untrained model

    fs::path checkpoint = "checkpoints/toy_gan";
    GanTrainConfig gan;
    int64_t perceptual_train_steps = 300;

    AttackConfig attack;
    DefenseConfig defense;
    StyleTransform style;

    int64_t targets = 10;
    int64_t batch_size = 1;

    std::vector<int64_t> k_values;            // ablate-k; empty = 0..N
    std::vector<int64_t> batch_sizes{1, 2, 4};
    std::vector<AttackVariant> variants{AttackVariant::Gifd};
    std::vector<DefenseConfig> defenses;      // defense-bench; empty = the four standard settings

    /// Checks cross-field constraints that do not need any files.
    void validate() const {
        if (targets < 1) throw ConfigError("targets must be >= 1");
        if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
        if (batch_size > dataset.num_classes) {
            throw ConfigError("batch size " + std::to_string(batch_size) + " exceeds the class count " +
                              std::to_string(dataset.num_classes) + " (labels must not repeat)");
        }
        for (auto b : batch_sizes) {
            if (b < 1 || b > dataset.num_classes) {
                throw ConfigError("batch size " + std::to_string(b) + " must lie in [1, " +
                                  std::to_string(dataset.num_classes) + "]");
            }
        }
        if (classifier.num_classes != dataset.num_classes) throw ConfigError("classifier and dataset class counts differ");
        if (classifier.channels != dataset.channels || classifier.image_size != dataset.resolution) {
            throw ConfigError("classifier input shape does not match the dataset");
        }
        defense.validate();
        attack.loss.validate();
        if (attack.trials < 1) throw ConfigError("trials must be >= 1");
        if (attack.steps < 1) throw ConfigError("steps must be >= 1");
    }
};

namespace detail {

template <typename T>
void read_if(const YAML::Node& node, const char* key, T& out) {
    if (!node || !node[key]) return;
    try {
        out = node[key].as<T>();
    } catch (const YAML::Exception& e) {
        throw ConfigError(std::string("bad value for '") + key + "': " + e.what());
    }
}

inline void check_keys(const YAML::Node& node, const std::string& section, std::initializer_list<const char*> allowed) {
    if (!node) return;
    if (!node.IsMap()) throw ConfigError("section '" + section + "' must be a mapping");
    for (const auto& kv : node) {
        const auto key = kv.first.as<std::string>();
        bool ok = false;
        for (const char* a : allowed) ok = ok || key == a;
        if (!ok) throw ConfigError("unknown key '" + key + "' in section '" + section + "'");
    }
}

inline DefenseConfig parse_defense(const YAML::Node& node) {
    DefenseConfig d;
    if (!node) return d;
    if (node.IsScalar()) {
        d.variant = defense_variant_from_string(node.as<std::string>());
        return d;
    }
    check_keys(node, "defense", {"variant", "params", "sigma", "bound", "p", "layer"});
    if (node["variant"]) d.variant = defense_variant_from_string(node["variant"].as<std::string>());
    // Parameters may sit inline or under `params`.
    auto read_params = [&](const YAML::Node& src) {
        read_if(src, "sigma", d.sigma);
        read_if(src, "bound", d.bound);
        read_if(src, "p", d.p);
        read_if(src, "layer", d.layer);
    };
    read_params(node);
    if (const auto params = node["params"]) {
        check_keys(params, "defense.params", {"sigma", "bound", "p", "layer"});
        read_params(params);
    }
    return d;
}

}  // namespace detail

inline ExperimentConfig parse_config(const YAML::Node& root, const fs::path& base_dir = ".") {
    using detail::check_keys;
    using detail::read_if;
    if (!root || root.IsNull()) return {};
    if (!root.IsMap()) throw ConfigError("config root must be a mapping");
    check_keys(root, "root",
               {"name", "seed", "out", "dataset", "classifier", "generator", "attack", "defense", "style", "targets",
                "batch_size", "sweep"});
    ExperimentConfig c;
    read_if(root, "name", c.name);
    read_if(root, "seed", c.seed);
    std::string out = c.out_dir.string();
    read_if(root, "out", out);
    c.out_dir = out;
    read_if(root, "targets", c.targets);
    read_if(root, "batch_size", c.batch_size);

    if (auto d = root["dataset"]) {
        check_keys(d, "dataset", {"source", "resolution", "channels", "num_classes", "gan_train_size", "fl_eval_size"});
        read_if(d, "source", c.dataset.source);
        read_if(d, "resolution", c.dataset.resolution);
        read_if(d, "channels", c.dataset.channels);
        read_if(d, "num_classes", c.dataset.num_classes);
        read_if(d, "gan_train_size", c.dataset.gan_train_size);
        read_if(d, "fl_eval_size", c.dataset.fl_eval_size);
        if (c.dataset.source.rfind("builtin:", 0) != 0 && fs::path(c.dataset.source).is_relative()) {
            c.dataset.source = (base_dir / c.dataset.source).lexically_normal().string();
        }
    }
    c.classifier.channels = c.dataset.channels;
    c.classifier.image_size = c.dataset.resolution;
    c.classifier.num_classes = c.dataset.num_classes;
    if (auto n = root["classifier"]) {
        check_keys(n, "classifier", {"seed", "widths", "global_pool", "train_steps", "perceptual_train_steps"});
        read_if(n, "seed", c.classifier_seed);
        read_if(n, "widths", c.classifier.widths);
        read_if(n, "global_pool", c.classifier.global_pool);
        read_if(n, "train_steps", c.classifier_train_steps);
        read_if(n, "perceptual_train_steps", c.perceptual_train_steps);
    }

    auto& g = c.gan.generator;
    g.channels = c.dataset.channels;
    if (auto n = root["generator"]) {
        check_keys(n, "generator",
                   {"checkpoint", "latent_dim", "base_size", "widths", "conditional", "noise", "train_steps",
                    "train_batch_size", "lr", "seed"});
        std::string ckpt = c.checkpoint.string();
        read_if(n, "checkpoint", ckpt);
        c.checkpoint = ckpt;
        read_if(n, "latent_dim", g.latent_dim);
        read_if(n, "base_size", g.base_size);
        read_if(n, "widths", g.widths);
        bool conditional = false;
        read_if(n, "conditional", conditional);
        g.num_classes = conditional ? c.dataset.num_classes : 0;
        read_if(n, "noise", g.noise);
        read_if(n, "train_steps", c.gan.steps);
        read_if(n, "train_batch_size", c.gan.batch_size);
        read_if(n, "lr", c.gan.lr);
        read_if(n, "seed", c.gan.seed);
    }
    if (c.checkpoint.is_relative()) c.checkpoint = (base_dir / c.checkpoint).lexically_normal();
    if (c.out_dir.is_relative()) c.out_dir = (base_dir / c.out_dir).lexically_normal();

    if (auto a = root["attack"]) {
        check_keys(a, "attack",
                   {"variant", "k", "radii", "rho", "noise_rho", "steps", "lr", "feature_lr", "trials", "metric",
                    "per_layer", "alpha_tv", "alpha_l2"});
        std::string variant;
        read_if(a, "variant", variant);
        if (!variant.empty()) c.attack.variant = attack_variant_from_string(variant);
        read_if(a, "k", c.attack.k);
        read_if(a, "radii", c.attack.radii);
        read_if(a, "rho", c.attack.rho);
        read_if(a, "noise_rho", c.attack.noise_rho);
        read_if(a, "steps", c.attack.steps);
        read_if(a, "lr", c.attack.lr);
        read_if(a, "feature_lr", c.attack.feature_lr);
        read_if(a, "trials", c.attack.trials);
        std::string metric;
        read_if(a, "metric", metric);
        if (!metric.empty()) c.attack.loss.metric = distance_metric_from_string(metric);
        read_if(a, "per_layer", c.attack.loss.per_layer);
        read_if(a, "alpha_tv", c.attack.loss.alpha_tv);
        read_if(a, "alpha_l2", c.attack.loss.alpha_l2);
    }
    c.defense = detail::parse_defense(root["defense"]);
    if (auto s = root["style"]) {
        if (s.IsScalar()) {
            c.style.variant = style_variant_from_string(s.as<std::string>());
        } else {
            check_keys(s, "style", {"variant", "levels", "degrees"});
            std::string v;
            read_if(s, "variant", v);
            if (!v.empty()) c.style.variant = style_variant_from_string(v);
            read_if(s, "levels", c.style.levels);
            read_if(s, "degrees", c.style.degrees);
        }
    }
    if (auto s = root["sweep"]) {
        check_keys(s, "sweep", {"k_values", "batch_sizes", "variants", "defenses"});
        read_if(s, "k_values", c.k_values);
        read_if(s, "batch_sizes", c.batch_sizes);
        if (s["variants"]) {
            c.variants.clear();
            for (const auto& v : s["variants"]) c.variants.push_back(attack_variant_from_string(v.as<std::string>()));
        }
        if (s["defenses"]) {
            for (const auto& d : s["defenses"]) c.defenses.push_back(detail::parse_defense(d));
        }
    }
    c.attack.seed = c.seed;
    c.attack.declared_defense = c.defense.variant;
    return c;
}

inline ExperimentConfig parse_config_text(const std::string& text, const fs::path& base_dir = ".") {
    try {
        return parse_config(YAML::Load(text), base_dir);
    } catch (const YAML::Exception& e) {
        throw ConfigError(std::string("cannot parse config: ") + e.what());
    }
}

inline ExperimentConfig load_config(const fs::path& path) {
    if (!fs::exists(path)) throw ConfigError("config file not found: " + path.string());
    try {
        return parse_config(YAML::LoadFile(path.string()), path.parent_path().empty() ? fs::path(".") : path.parent_path());
    } catch (const YAML::Exception& e) {
        throw ConfigError("cannot parse " + path.string() + ": " + e.what());
    }
}

/// Command-line overrides; unset fields keep the file's values.
struct ConfigOverrides {
    std::optional<uint64_t> seed;
    std::optional<std::string> out;
    std::optional<int64_t> k;
    std::optional<std::string> defense;
    std::optional<int64_t> batch_size;
    std::optional<std::string> variant;
    std::optional<std::string> style;
};

inline void apply_overrides(ExperimentConfig& c, const ConfigOverrides& o) {
    if (o.seed) {
        c.seed = *o.seed;
        c.attack.seed = *o.seed;
    }
    if (o.out) c.out_dir = *o.out;
    if (o.k) c.attack.k = *o.k;
    if (o.defense) {
        c.defense.variant = defense_variant_from_string(*o.defense);
        c.attack.declared_defense = c.defense.variant;
    }
    if (o.batch_size) c.batch_size = *o.batch_size;
    if (o.variant) {
        c.attack.variant = attack_variant_from_string(*o.variant);
        c.variants = {c.attack.variant};
    }
    if (o.style) c.style.variant = style_variant_from_string(*o.style);
}

/// Canonical YAML echo of the effective configuration, written into every
/// run directory so the run can be repeated from it alone.
inline std::string config_to_yaml(const ExperimentConfig& c) {
    YAML::Emitter e;
    e << YAML::BeginMap;
    e << YAML::Key << "name" << YAML::Value << c.name;
    e << YAML::Key << "seed" << YAML::Value << c.seed;
    e << YAML::Key << "out" << YAML::Value << c.out_dir.string();
    e << YAML::Key << "targets" << YAML::Value << c.targets;
    e << YAML::Key << "batch_size" << YAML::Value << c.batch_size;
    e << YAML::Key << "dataset" << YAML::Value << YAML::BeginMap;
    e << YAML::Key << "source" << YAML::Value << c.dataset.source;
    e << YAML::Key << "resolution" << YAML::Value << c.dataset.resolution;
    e << YAML::Key << "channels" << YAML::Value << c.dataset.channels;
    e << YAML::Key << "num_classes" << YAML::Value << c.dataset.num_classes;
    e << YAML::Key << "gan_train_size" << YAML::Value << c.dataset.gan_train_size;
    e << YAML::Key << "fl_eval_size" << YAML::Value << c.dataset.fl_eval_size;
    e << YAML::EndMap;
    e << YAML::Key << "classifier" << YAML::Value << YAML::BeginMap;
    e << YAML::Key << "seed" << YAML::Value << c.classifier_seed;
    e << YAML::Key << "widths" << YAML::Value << YAML::Flow << c.classifier.widths;
    e << YAML::Key << "global_pool" << YAML::Value << c.classifier.global_pool;
    e << YAML::Key << "train_steps" << YAML::Value << c.classifier_train_steps;
    e << YAML::Key << "perceptual_train_steps" << YAML::Value << c.perceptual_train_steps;
    e << YAML::EndMap;
    e << YAML::Key << "generator" << YAML::Value << YAML::BeginMap;
    e << YAML::Key << "checkpoint" << YAML::Value << c.checkpoint.string();
    e << YAML::Key << "latent_dim" << YAML::Value << c.gan.generator.latent_dim;
    e << YAML::Key << "base_size" << YAML::Value << c.gan.generator.base_size;
    e << YAML::Key << "widths" << YAML::Value << YAML::Flow << c.gan.generator.widths;
    e << YAML::Key << "conditional" << YAML::Value << (c.gan.generator.num_classes > 0);
    e << YAML::Key << "noise" << YAML::Value << c.gan.generator.noise;
    e << YAML::Key << "train_steps" << YAML::Value << c.gan.steps;
    e << YAML::Key << "train_batch_size" << YAML::Value << c.gan.batch_size;
    e << YAML::Key << "lr" << YAML::Value << c.gan.lr;
    e << YAML::Key << "seed" << YAML::Value << c.gan.seed;
    e << YAML::EndMap;
    e << YAML::Key << "attack" << YAML::Value << YAML::BeginMap;
    e << YAML::Key << "variant" << YAML::Value << to_string(c.attack.variant);
    e << YAML::Key << "k" << YAML::Value << c.attack.k;
    e << YAML::Key << "radii" << YAML::Value << YAML::Flow << c.attack.radii;
    e << YAML::Key << "rho" << YAML::Value << c.attack.rho;
    e << YAML::Key << "noise_rho" << YAML::Value << c.attack.noise_rho;
    e << YAML::Key << "steps" << YAML::Value << c.attack.steps;
    e << YAML::Key << "lr" << YAML::Value << c.attack.lr;
    e << YAML::Key << "feature_lr" << YAML::Value << c.attack.feature_lr;
    e << YAML::Key << "trials" << YAML::Value << c.attack.trials;
    e << YAML::Key << "metric" << YAML::Value << to_string(c.attack.loss.metric);
    e << YAML::Key << "per_layer" << YAML::Value << c.attack.loss.per_layer;
    e << YAML::Key << "alpha_tv" << YAML::Value << c.attack.loss.alpha_tv;
    e << YAML::Key << "alpha_l2" << YAML::Value << c.attack.loss.alpha_l2;
    e << YAML::EndMap;
    auto emit_defense = [&](const DefenseConfig& d) {
        e << YAML::BeginMap;
        e << YAML::Key << "variant" << YAML::Value << to_string(d.variant);
        e << YAML::Key << "params" << YAML::Value << YAML::BeginMap;
        e << YAML::Key << "sigma" << YAML::Value << d.sigma;
        e << YAML::Key << "bound" << YAML::Value << d.bound;
        e << YAML::Key << "p" << YAML::Value << d.p;
        e << YAML::Key << "layer" << YAML::Value << d.layer;
        e << YAML::EndMap << YAML::EndMap;
    };
    e << YAML::Key << "defense" << YAML::Value;
    emit_defense(c.defense);
    e << YAML::Key << "style" << YAML::Value << YAML::BeginMap;
    e << YAML::Key << "variant" << YAML::Value << c.style.name();
    e << YAML::Key << "levels" << YAML::Value << c.style.levels;
    e << YAML::Key << "degrees" << YAML::Value << c.style.degrees;
    e << YAML::EndMap;
    e << YAML::Key << "sweep" << YAML::Value << YAML::BeginMap;
    e << YAML::Key << "k_values" << YAML::Value << YAML::Flow << c.k_values;
    e << YAML::Key << "batch_sizes" << YAML::Value << YAML::Flow << c.batch_sizes;
    std::vector<std::string> variants;
    for (auto v : c.variants) variants.push_back(to_string(v));
    e << YAML::Key << "variants" << YAML::Value << YAML::Flow << variants;
    e << YAML::Key << "defenses" << YAML::Value << YAML::BeginSeq;
    for (const auto& d : c.defenses) emit_defense(d);
    e << YAML::EndSeq;
    e << YAML::EndMap;
    e << YAML::EndMap;
    return std::string(e.c_str()) + "\n";
}

}  // namespace gifd

#endif  // GIFD_CONFIG_HPP_
