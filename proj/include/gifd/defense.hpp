#ifndef GIFD_DEFENSE_HPP_
#define GIFD_DEFENSE_HPP_

#include <torch/torch.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "gifd/error.hpp"
#include "gifd/gan_training.hpp"
#include "gifd/gradient_report.hpp"
#include "json.hpp"

namespace gifd {

enum class DefenseVariant { None, GaussianNoise, Clipping, Sparsification, Soteria };

inline std::string to_string(DefenseVariant v) {
    switch (v) {
        case DefenseVariant::None: return "none";
        case DefenseVariant::GaussianNoise: return "gaussian_noise";
        case DefenseVariant::Clipping: return "clipping";
        case DefenseVariant::Sparsification: return "sparsification";
        case DefenseVariant::Soteria: return "soteria";
    }
    return "none";
}

inline DefenseVariant defense_variant_from_string(const std::string& s) {
    if (s == "none") return DefenseVariant::None;
    if (s == "gaussian_noise" || s == "noise") return DefenseVariant::GaussianNoise;
    if (s == "clipping" || s == "clip") return DefenseVariant::Clipping;
    if (s == "sparsification" || s == "sparsify") return DefenseVariant::Sparsification;
    if (s == "soteria") return DefenseVariant::Soteria;
    throw ConfigError("unknown defense variant '" + s + "'");
}

/// Client-side defense and its parameters. Only the field matching `variant`
/// is meaningful.
struct DefenseConfig {
    DefenseVariant variant = DefenseVariant::None;
    double sigma = 0.1;                   // gaussian_noise: std-dev
    double bound = 4.0;                   // clipping: per-layer l2 bound
    double p = 0.9;                       // sparsification / soteria: pruned fraction
    std::string layer = "fc.weight";      // soteria: defended layer

    void validate() const {
        switch (variant) {
            case DefenseVariant::None: break;
            case DefenseVariant::GaussianNoise:
                if (!(sigma >= 0.0) || !std::isfinite(sigma)) throw ConfigError("noise sigma must be >= 0");
                break;
            case DefenseVariant::Clipping:
                if (!(bound > 0.0) || !std::isfinite(bound)) throw ConfigError("clipping bound must be > 0");
                break;
            case DefenseVariant::Sparsification:
            case DefenseVariant::Soteria:
                if (!(p > 0.0 && p < 1.0)) throw ConfigError("pruned fraction p must lie in (0, 1)");
                break;
        }
    }

    nlohmann::json to_json() const {
        nlohmann::json j = {{"variant", to_string(variant)}};
        switch (variant) {
            case DefenseVariant::None: break;
            case DefenseVariant::GaussianNoise: j["sigma"] = sigma; break;
            case DefenseVariant::Clipping: j["bound"] = bound; break;
            case DefenseVariant::Sparsification: j["p"] = p; break;
            case DefenseVariant::Soteria: j["p"] = p; j["layer"] = layer; break;
        }
        return j;
    }

    static DefenseConfig from_json(const nlohmann::json& j) {
        DefenseConfig d;
        d.variant = defense_variant_from_string(j.at("variant").get<std::string>());
        d.sigma = j.value("sigma", d.sigma);
        d.bound = j.value("bound", d.bound);
        d.p = j.value("p", d.p);
        d.layer = j.value("layer", d.layer);
        return d;
    }

    std::string label() const {
        switch (variant) {
            case DefenseVariant::None: return "none";
            case DefenseVariant::GaussianNoise: return "noise(sigma=" + trim(sigma) + ")";
            case DefenseVariant::Clipping: return "clipping(c=" + trim(bound) + ")";
            case DefenseVariant::Sparsification: return "sparsification(p=" + trim(p) + ")";
            case DefenseVariant::Soteria: return "soteria(p=" + trim(p) + ")";
        }
        return "none";
    }

private:
    static std::string trim(double v) {
        auto s = std::to_string(v);
        s.erase(s.find_last_not_of('0') + 1);
        if (!s.empty() && s.back() == '.') s.pop_back();
        return s;
    }
};

namespace detail {

// Guards ceil/floor of p*n against representation error (0.1*10 = 0.99999...).
constexpr double kCountSlack = 1e-9;

// Clipping leaves layers within this relative slack of the bound untouched,
// which makes clip(clip(g)) == clip(g) bit-exact.
constexpr double kClipSlack = 1e-6;

inline double l2_norm(const torch::Tensor& t) { return t.detach().to(torch::kFloat64).norm().item<double>(); }

inline torch::Tensor scaled(const torch::Tensor& t, double factor) {
    return factor == 1.0 ? t.clone() : t * factor;
}

}  // namespace detail

/// g' = g + e with e ~ N(0, sigma^2) i.i.d. per entry, from a seeded stream.
inline GradientReport gaussian_noise_defense(const GradientReport& report, double sigma, uint64_t seed) {
    if (!(sigma >= 0.0)) throw ConfigError("noise sigma must be >= 0");
    auto rng = make_rng(seed);
    std::vector<GradientEntry> out;
    for (const auto& e : report.entries) {
        auto g = e.grad.detach();
        out.push_back({e.name, sigma == 0.0 ? g.clone() : g + sigma * torch::randn(g.sizes(), rng, g.options())});
    }
    return report.with_entries(std::move(out));
}

/// Layer-wise g * min(c / ||g||_2, 1); zero-norm layers are left as they are.
inline GradientReport clip_defense(const GradientReport& report, double bound) {
    if (!(bound > 0.0)) throw ConfigError("clipping bound must be > 0");
    std::vector<GradientEntry> out;
    for (const auto& e : report.entries) {
        const double norm = detail::l2_norm(e.grad);
        const double factor = norm > bound * (1.0 + detail::kClipSlack) ? bound / norm : 1.0;
        out.push_back({e.name, detail::scaled(e.grad.detach(), factor)});
    }
    return report.with_entries(std::move(out));
}

/// Boolean mask keeping the ceil((1-p) n) largest-magnitude entries.
/// Ties are resolved towards the lower flat index.
inline torch::Tensor top_magnitude_mask(const torch::Tensor& g, double p) {
    const int64_t n = g.numel();
    const auto keep = static_cast<int64_t>(std::ceil((1.0 - p) * static_cast<double>(n) - detail::kCountSlack));
    auto flat = g.detach().abs().flatten();
    auto order = std::get<1>(torch::sort(flat, /*stable=*/true, /*dim=*/0, /*descending=*/true));
    auto mask = torch::zeros({n}, torch::kBool);
    if (keep > 0) mask.index_fill_(0, order.slice(0, 0, keep), true);
    return mask.view(g.sizes());
}

/// Keeps the (1-p) fraction of largest-magnitude entries per layer.
inline GradientReport sparsify_defense(const GradientReport& report, double p) {
    if (!(p > 0.0 && p < 1.0)) throw ConfigError("sparsification p must lie in (0, 1)");
    std::vector<GradientEntry> out;
    for (const auto& e : report.entries) {
        auto g = e.grad.detach();
        out.push_back({e.name, torch::where(top_magnitude_mask(g, p), g, torch::zeros_like(g))});
    }
    return report.with_entries(std::move(out));
}

/// Row mask for the defended layer: the floor(p * rows) rows with the
/// smallest l2 norm are dropped (ties: lower row index dropped first).
inline torch::Tensor soteria_row_mask(const torch::Tensor& g, double p) {
    const int64_t rows = g.dim() == 0 ? 1 : g.size(0);
    const auto drop = static_cast<int64_t>(std::floor(p * static_cast<double>(rows) + detail::kCountSlack));
    auto norms = g.detach().to(torch::kFloat64).reshape({rows, -1}).norm(2, 1);
    auto order = std::get<1>(torch::sort(norms, /*stable=*/true, /*dim=*/0, /*descending=*/false));
    auto keep_rows = torch::ones({rows}, torch::kBool);
    if (drop > 0) keep_rows.index_fill_(0, order.slice(0, 0, drop), false);
    std::vector<int64_t> view(static_cast<std::size_t>(std::max<int64_t>(g.dim(), 1)), 1);
    view[0] = rows;
    return keep_rows.view(view).expand(g.sizes()).contiguous();
}

/// Masks a fraction p of the defended layer's gradient rows; other layers are
/// returned untouched.
inline GradientReport soteria_defense(const GradientReport& report, double p, const std::string& layer) {
    if (!(p > 0.0 && p < 1.0)) throw ConfigError("soteria p must lie in (0, 1)");
    bool found = false;
    std::vector<GradientEntry> out;
    for (const auto& e : report.entries) {
        auto g = e.grad.detach();
        if (e.name == layer) {
            found = true;
            out.push_back({e.name, torch::where(soteria_row_mask(g, p), g, torch::zeros_like(g))});
        } else {
            out.push_back({e.name, g.clone()});
        }
    }
    if (!found) throw ConfigError("soteria defended layer '" + layer + "' does not exist in the model");
    return report.with_entries(std::move(out));
}

/// Applies the configured defense. `seed` only matters for noise.
inline GradientReport apply_defense(const GradientReport& report, const DefenseConfig& cfg, uint64_t seed) {
    cfg.validate();
    switch (cfg.variant) {
        case DefenseVariant::None: return report.detached();
        case DefenseVariant::GaussianNoise: return gaussian_noise_defense(report, cfg.sigma, seed);
        case DefenseVariant::Clipping: return clip_defense(report, cfg.bound);
        case DefenseVariant::Sparsification: return sparsify_defense(report, cfg.p);
        case DefenseVariant::Soteria: return soteria_defense(report, cfg.p, cfg.layer);
    }
    throw ConfigError("unknown defense");
}

// ---------------------------------------------------------------------------
// Attacker side.

/// The attacker's estimate of the client's transformation. The defense type
/// is declared; only its parameters are inferred from the received report.
struct TransformEstimate {
    DefenseVariant variant = DefenseVariant::None;
    std::vector<double> clip_bounds;        // clipping, one per layer
    std::vector<torch::Tensor> masks;       // sparsification, one bool mask per layer
    double sparsity = 0.0;                  // sparsification, overall zero fraction
    std::string soteria_layer;              // soteria
    torch::Tensor soteria_mask;             // soteria, bool mask of that layer
};

struct InferOptions {
    bool global_clip_bound = false;   // one bound (the max layer norm) for all layers
    double soteria_threshold = 0.5;   // zero-row fraction marking the defended layer
};

inline double zero_fraction(const torch::Tensor& g) {
    return g.numel() == 0 ? 0.0 : (g == 0).sum().item<double>() / static_cast<double>(g.numel());
}

namespace detail {

/// Bool mask (same shape as `g`) that is true on rows with any nonzero entry.
inline torch::Tensor nonzero_rows(const torch::Tensor& g) {
    auto rows = g.detach().reshape({g.size(0), -1}).ne(0).any(1);
    std::vector<int64_t> shape(static_cast<std::size_t>(g.dim()), 1);
    shape[0] = g.size(0);
    return rows.view(shape).expand(g.sizes()).clone();
}

}  // namespace detail

/// Fraction of rows (first dimension) that are entirely zero.
inline double zero_row_fraction(const torch::Tensor& g) {
    if (g.dim() == 0 || g.size(0) == 0) return 0.0;
    auto rows = g.detach().reshape({g.size(0), -1}).ne(0).any(1);
    return 1.0 - rows.sum().item<double>() / static_cast<double>(g.size(0));
}

/// Estimates the transformation T from the received report alone.
inline TransformEstimate infer_transform(const GradientReport& report, DefenseVariant declared,
                                         const InferOptions& opts = {}) {
    if (!report.all_finite()) throw InferenceError("received report contains non-finite entries");
    TransformEstimate est;
    est.variant = declared;
    switch (declared) {
        case DefenseVariant::None:
        case DefenseVariant::GaussianNoise:
            est.variant = declared;  // no inverse transform for noise
            break;
        case DefenseVariant::Clipping: {
            for (const auto& e : report.entries) est.clip_bounds.push_back(detail::l2_norm(e.grad));
            if (opts.global_clip_bound && !est.clip_bounds.empty()) {
                const double m = *std::max_element(est.clip_bounds.begin(), est.clip_bounds.end());
                std::fill(est.clip_bounds.begin(), est.clip_bounds.end(), m);
            }
            break;
        }
        case DefenseVariant::Sparsification: {
            double zeros = 0.0;
            for (const auto& e : report.entries) {
                est.masks.push_back(e.grad.detach() != 0);
                zeros += (e.grad == 0).sum().item<double>();
            }
            est.sparsity = zeros / static_cast<double>(std::max<int64_t>(report.numel(), 1));
            break;
        }
        case DefenseVariant::Soteria: {
            // The defended layer is the one with the most all-zero rows. ReLU
            // networks also produce zero rows (inactive units), so the count
            // must stand out rather than merely pass the threshold.
            std::vector<std::pair<double, std::size_t>> candidates;
            for (std::size_t i = 0; i < report.entries.size(); ++i) {
                const auto& g = report.entries[i].grad;
                if (g.dim() < 2) continue;
                const double f = zero_row_fraction(g);
                if (f > opts.soteria_threshold) candidates.push_back({f, i});
            }
            std::sort(candidates.begin(), candidates.end(), std::greater<>());
            if (candidates.empty() || (candidates.size() > 1 && candidates[0].first == candidates[1].first)) {
                throw InferenceError("soteria declared but " + std::to_string(candidates.size()) +
                                     " layers share the largest zero-row fraction above the threshold (need exactly one)");
            }
            const auto& e = report.entries[candidates.front().second];
            est.soteria_layer = e.name;
            est.soteria_mask = detail::nonzero_rows(e.grad);
            break;
        }
    }
    return est;
}

/// Applies the estimated transformation to (possibly graph-attached) dummy
/// gradients. Differentiable: clipping rescales by min(c / ||g||, 1), masks
/// multiply elementwise.
inline GradientReport apply_transform(const TransformEstimate& est, const GradientReport& dummy) {
    std::vector<GradientEntry> out;
    out.reserve(dummy.entries.size());
    switch (est.variant) {
        case DefenseVariant::None:
        case DefenseVariant::GaussianNoise:
            return dummy;
        case DefenseVariant::Clipping: {
            if (est.clip_bounds.size() != dummy.entries.size()) throw InputError("clip bound count does not match report");
            for (std::size_t i = 0; i < dummy.entries.size(); ++i) {
                const auto& g = dummy.entries[i].grad;
                auto norm = g.pow(2).sum().sqrt();
                if (norm.item<double>() == 0.0) {
                    out.push_back(dummy.entries[i]);
                    continue;
                }
                auto factor = torch::clamp_max(est.clip_bounds[i] / norm, 1.0);
                out.push_back({dummy.entries[i].name, g * factor});
            }
            break;
        }
        case DefenseVariant::Sparsification: {
            if (est.masks.size() != dummy.entries.size()) throw InputError("mask count does not match report");
            for (std::size_t i = 0; i < dummy.entries.size(); ++i) {
                const auto& g = dummy.entries[i].grad;
                if (est.masks[i].sizes() != g.sizes()) throw InputError("mask shape mismatch for '" + dummy.entries[i].name + "'");
                out.push_back({dummy.entries[i].name, g * est.masks[i].to(g.scalar_type())});
            }
            break;
        }
        case DefenseVariant::Soteria: {
            bool found = false;
            for (const auto& e : dummy.entries) {
                if (e.name == est.soteria_layer) {
                    if (est.soteria_mask.sizes() != e.grad.sizes()) throw InputError("soteria mask shape mismatch");
                    out.push_back({e.name, e.grad * est.soteria_mask.to(e.grad.scalar_type())});
                    found = true;
                } else {
                    out.push_back(e);
                }
            }
            if (!found) throw InputError("dummy report lacks the defended layer '" + est.soteria_layer + "'");
            break;
        }
    }
    return dummy.with_entries(std::move(out));
}

}  // namespace gifd

#endif  // GIFD_DEFENSE_HPP_
