#ifndef GIFD_OBJECTIVE_HPP_
#define GIFD_OBJECTIVE_HPP_

#include <torch/torch.h>

#include <optional>
#include <string>
#include <vector>

#include "gifd/defense.hpp"
#include "gifd/error.hpp"
#include "gifd/gradient_report.hpp"
#include "gifd/models.hpp"

namespace gifd {

enum class DistanceMetric { NegativeCosine, SquaredL2 };

inline std::string to_string(DistanceMetric m) {
    return m == DistanceMetric::NegativeCosine ? "negative-cosine" : "squared-l2";
}

inline DistanceMetric distance_metric_from_string(const std::string& s) {
    if (s == "negative-cosine" || s == "cosine") return DistanceMetric::NegativeCosine;
    if (s == "squared-l2" || s == "l2") return DistanceMetric::SquaredL2;
    throw ConfigError("unknown distance metric '" + s + "'");
}

struct LossConfig {
    DistanceMetric metric = DistanceMetric::NegativeCosine;
    bool per_layer = false;  // average per-layer cosine instead of one global angle
    double alpha_tv = 1e-4;
    double alpha_l2 = 1e-6;

    void validate() const {
        if (alpha_tv < 0.0 || alpha_l2 < 0.0) throw ConfigError("regularizer weights must be >= 0");
    }
};

namespace detail {

// 1 - <a, b> / (|a| |b|) over the concatenation of the given layer pairs,
// accumulated in double. A zero-norm side counts as maximal mismatch (2).
inline torch::Tensor cosine_distance(const std::vector<torch::Tensor>& a, const std::vector<torch::Tensor>& b) {
    auto dot = torch::zeros({}, torch::kFloat64);
    auto na = torch::zeros({}, torch::kFloat64);
    auto nb = torch::zeros({}, torch::kFloat64);
    for (std::size_t i = 0; i < a.size(); ++i) {
        auto x = a[i].to(torch::kFloat64), y = b[i].to(torch::kFloat64);
        dot = dot + (x * y).sum();
        na = na + x.pow(2).sum();
        nb = nb + y.pow(2).sum();
    }
    if (na.item<double>() == 0.0 || nb.item<double>() == 0.0) return na * 0.0 + 2.0;
    return 1.0 - dot / (na.sqrt() * nb.sqrt());
}

}  // namespace detail

/// Distance between two gradient reports with identical layouts.
///
/// Negative cosine is 1 - cos over the flattened concatenation of all layers
/// (in [0, 2]); with `per_layer` it is the mean of the per-layer values.
inline torch::Tensor gradient_match_distance(const GradientReport& a, const GradientReport& b, DistanceMetric metric,
                                             bool per_layer = false) {
    require_same_layout(a, b);
    if (a.entries.empty()) throw InputError("empty gradient reports");
    if (metric == DistanceMetric::SquaredL2) {
        auto total = torch::zeros({}, torch::kFloat64);
        for (std::size_t i = 0; i < a.entries.size(); ++i) {
            total = total + (a.entries[i].grad.to(torch::kFloat64) - b.entries[i].grad.to(torch::kFloat64)).pow(2).sum();
        }
        return total;
    }
    if (!per_layer) {
        std::vector<torch::Tensor> xs, ys;
        for (std::size_t i = 0; i < a.entries.size(); ++i) {
            xs.push_back(a.entries[i].grad);
            ys.push_back(b.entries[i].grad);
        }
        return detail::cosine_distance(xs, ys);
    }
    auto total = torch::zeros({}, torch::kFloat64);
    for (std::size_t i = 0; i < a.entries.size(); ++i) {
        total = total + detail::cosine_distance({a.entries[i].grad}, {b.entries[i].grad});
    }
    return total / static_cast<double>(a.entries.size());
}

/// Anisotropic total variation: sum of absolute vertical and horizontal differences.
inline torch::Tensor total_variation(const torch::Tensor& images) {
    if (images.dim() != 4) throw InputError("total variation expects B x C x H x W");
    auto dv = (images.slice(2, 1) - images.slice(2, 0, images.size(2) - 1)).abs().sum();
    auto dh = (images.slice(3, 1) - images.slice(3, 0, images.size(3) - 1)).abs().sum();
    return dv + dh;
}

/// alpha_l2 * ||x||_2 + alpha_tv * TV(x).
inline torch::Tensor fidelity_regularizer(const torch::Tensor& images, double alpha_l2, double alpha_tv) {
    auto x = images.to(torch::kFloat64);
    return alpha_l2 * x.norm() + alpha_tv * total_variation(x);
}

/// Gradient-matching objective for one exchange: D(T(F(x)), g) + R(x).
///
/// Holds the attacker's view only: the public report, the estimated
/// transformation and the extracted labels.
class AttackObjective {
public:
    struct Terms {
        torch::Tensor distance;     // D(T(F(x)), g)
        torch::Tensor regularizer;  // R_fidelity(x)
        torch::Tensor total;
    };

    AttackObjective(Classifier classifier, GradientReport target, TransformEstimate transform, torch::Tensor labels,
                    LossConfig cfg)
        : classifier_(std::move(classifier)),
          target_(std::move(target)),
          transform_(std::move(transform)),
          labels_(std::move(labels)),
          cfg_(cfg) {
        cfg_.validate();
        if (labels_.dim() != 1 || labels_.size(0) < 1) throw InputError("objective needs one label per reconstructed image");
    }

    /// Evaluates the objective on images in [0, 1]. With `create_graph` the
    /// result is differentiable with respect to `images`.
    Terms evaluate(const torch::Tensor& images, bool create_graph = true) const {
        if (images.size(0) != labels_.size(0)) throw InputError("image count does not match label count");
        auto dummy = compute_batch_gradients(classifier_, images, labels_, create_graph);
        auto transformed = apply_transform(transform_, dummy);
        Terms t;
        t.distance = gradient_match_distance(transformed, target_, cfg_.metric, cfg_.per_layer);
        t.regularizer = fidelity_regularizer(images, cfg_.alpha_l2, cfg_.alpha_tv);
        t.total = t.distance + t.regularizer;
        return t;
    }

    /// Pure gradient-matching loss (no regularizer), as a double.
    double distance(const torch::Tensor& images) const {
        return gradient_match_distance(apply_transform(transform_, compute_batch_gradients(classifier_, images, labels_, false)),
                                       target_, cfg_.metric, cfg_.per_layer)
            .item<double>();
    }

    const torch::Tensor& labels() const { return labels_; }
    const LossConfig& config() const { return cfg_; }
    const GradientReport& target() const { return target_; }

private:
    mutable Classifier classifier_;
    GradientReport target_;
    TransformEstimate transform_;
    torch::Tensor labels_;
    LossConfig cfg_;
};

/// Which tensor of the generator is being optimized.
struct GeneratorInputs {
    int64_t cut = 0;                  // 0 = latent, i = input of block i
    torch::Tensor features;           // latent code or h_i
    std::vector<torch::Tensor> noises;
};

/// Images in [0, 1] generated from a stage's inputs.
inline torch::Tensor generate_unit_images(LayeredGenerator& generator, const GeneratorInputs& in,
                                          const std::optional<torch::Tensor>& condition) {
    return to_unit_range(generator->forward_from(in.cut, in.features, condition, in.noises));
}

/// Total attack loss for the given generator inputs.
inline torch::Tensor total_attack_loss(LayeredGenerator& generator, const GeneratorInputs& in,
                                       const AttackObjective& objective, bool create_graph = true) {
    std::optional<torch::Tensor> condition;
    if (generator->config().num_classes > 0) condition = objective.labels();
    return objective.evaluate(generate_unit_images(generator, in, condition), create_graph).total;
}

}  // namespace gifd

#endif  // GIFD_OBJECTIVE_HPP_
