#ifndef GIFD_MODELS_HPP_
#define GIFD_MODELS_HPP_

#include <torch/torch.h>

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "gifd/error.hpp"
#include "gifd/gradient_report.hpp"

namespace gifd {

// ---------------------------------------------------------------------------
// Classifier: the FL global model.

struct ClassifierConfig {
    int64_t channels = 3;
    int64_t image_size = 32;
    int64_t num_classes = 10;
    std::vector<int64_t> widths{16, 32, 64, 128};  // four conv layers
    bool global_pool = false;                     // average-pool before fc instead of flattening

    /// Side of the last feature map (three stride-2 convolutions).
    int64_t feature_side() const {
        int64_t side = image_size;
        for (int i = 0; i < 3; ++i) side = (side + 1) / 2;
        return side;
    }
    int64_t feature_dim() const { return widths.back() * (global_pool ? 1 : feature_side() * feature_side()); }
};

/// Four 3x3 convolutions with ReLU and one fully-connected layer on the
/// flattened (or average-pooled) last feature map. The features feeding `fc`
/// are post-ReLU and therefore elementwise non-negative.
class ClassifierImpl : public torch::nn::Module {
public:
    static constexpr const char* kFcWeight = "fc.weight";
    static constexpr const char* kFcBias = "fc.bias";

    explicit ClassifierImpl(ClassifierConfig cfg) : cfg_(std::move(cfg)) {
        if (cfg_.widths.size() != 4) throw ConfigError("classifier needs exactly four conv widths");
        if (cfg_.num_classes < 2) throw ConfigError("classifier needs at least two classes");
        int64_t in = cfg_.channels;
        for (std::size_t i = 0; i < cfg_.widths.size(); ++i) {
            const int64_t stride = i == 0 ? 1 : 2;
            convs_.push_back(register_module(
                "conv" + std::to_string(i + 1),
                torch::nn::Conv2d(torch::nn::Conv2dOptions(in, cfg_.widths[i], 3).padding(1).stride(stride))));
            in = cfg_.widths[i];
        }
        fc_ = register_module("fc", torch::nn::Linear(cfg_.feature_dim(), cfg_.num_classes));
    }

    torch::Tensor forward(const torch::Tensor& images) { return fc_->forward(features(images)); }

    /// Activations feeding the final fully-connected layer (B x feature_dim).
    torch::Tensor features(const torch::Tensor& images) {
        check_input(images);
        auto h = images;
        for (auto& conv : convs_) h = torch::relu(conv->forward(h));
        return cfg_.global_pool ? h.mean({2, 3}) : h.flatten(1);
    }

    /// Post-ReLU feature maps of the first `count` conv layers.
    std::vector<torch::Tensor> conv_features(const torch::Tensor& images, std::size_t count) {
        check_input(images);
        std::vector<torch::Tensor> out;
        auto h = images;
        for (std::size_t i = 0; i < count && i < convs_.size(); ++i) {
            h = torch::relu(convs_[i]->forward(h));
            out.push_back(h);
        }
        return out;
    }

    const ClassifierConfig& config() const { return cfg_; }

private:
    void check_input(const torch::Tensor& images) const {
        if (images.dim() != 4 || images.size(1) != cfg_.channels || images.size(2) != cfg_.image_size ||
            images.size(3) != cfg_.image_size) {
            throw InputError("classifier expects B x " + std::to_string(cfg_.channels) + " x " +
                             std::to_string(cfg_.image_size) + " x " + std::to_string(cfg_.image_size) +
                             " images, got " + shape_string(images));
        }
    }

    static std::string shape_string(const torch::Tensor& t) {
        std::string s;
        for (int64_t i = 0; i < t.dim(); ++i) s += (i ? "x" : "") + std::to_string(t.size(i));
        return s.empty() ? "scalar" : s;
    }

    ClassifierConfig cfg_;
    std::vector<torch::nn::Conv2d> convs_;
    torch::nn::Linear fc_{nullptr};
};
TORCH_MODULE(Classifier);

/// Randomly initialized classifier; identical seeds give identical weights.
inline Classifier make_classifier(const ClassifierConfig& cfg, uint64_t seed) {
    torch::manual_seed(seed);
    Classifier model(cfg);
    model->eval();
    return model;
}

/// Mean cross-entropy over the batch.
inline torch::Tensor classification_loss(Classifier& classifier, const torch::Tensor& images,
                                         const torch::Tensor& labels) {
    if (labels.dim() != 1 || labels.size(0) != images.size(0)) {
        throw InputError("labels must be a vector with one entry per image");
    }
    if (labels.numel() > 0) {
        const auto lo = labels.min().item<int64_t>();
        const auto hi = labels.max().item<int64_t>();
        if (lo < 0 || hi >= classifier->config().num_classes) throw InputError("label out of range");
    }
    return torch::nn::functional::cross_entropy(classifier->forward(images), labels);
}

/// Batch-averaged parameter gradients of the classification loss.
///
/// With `create_graph` the returned tensors stay differentiable with respect
/// to `images`, which is what the attack objective needs.
inline GradientReport compute_batch_gradients(Classifier& classifier, const torch::Tensor& images,
                                              const torch::Tensor& labels, bool create_graph = false) {
    if (images.dim() != 4 || images.size(0) == 0) throw InputError("empty batch");
    const auto named = classifier->named_parameters(/*recurse=*/true);
    std::vector<torch::Tensor> params;
    params.reserve(named.size());
    for (const auto& p : named) params.push_back(p.value());

    auto loss = classification_loss(classifier, images, labels);
    auto grads = torch::autograd::grad({loss}, params, /*grad_outputs=*/{}, /*retain_graph=*/create_graph,
                                       /*create_graph=*/create_graph);

    GradientReport report;
    report.batch_size = images.size(0);
    report.image_shape = {images.size(1), images.size(2), images.size(3)};
    report.num_classes = classifier->config().num_classes;
    report.entries.reserve(grads.size());
    for (std::size_t i = 0; i < grads.size(); ++i) {
        report.entries.push_back({named[i].key(), create_graph ? grads[i] : grads[i].detach()});
    }
    return report;
}

// ---------------------------------------------------------------------------
// LayeredGenerator: G_0 o G_1 o ... o G_N with a legal cut before every block.

struct GeneratorConfig {
    int64_t latent_dim = 32;
    int64_t channels = 3;
    int64_t base_size = 4;
    std::vector<int64_t> widths{64, 32, 16, 8};
    int64_t num_classes = 0;  // > 0 enables class conditioning
    bool noise = false;       // per-block additive noise inputs

    int64_t image_size() const { return base_size << (static_cast<int64_t>(widths.size()) - 1); }
};

/// Generator split into ordered blocks.
///
/// Block 0 maps the latent code to a `widths[0] x base x base` feature map;
/// blocks 1..N-1 upsample by two and convolve; block N maps to image channels
/// through tanh. Cut `i` (1 <= i <= N) is the input of block `i`; cut 0 is the
/// latent code and cut N+1 the output image.
class LayeredGeneratorImpl : public torch::nn::Module {
public:
    explicit LayeredGeneratorImpl(GeneratorConfig cfg) : cfg_(std::move(cfg)) {
        if (cfg_.widths.size() < 3) throw ConfigError("generator needs at least three feature widths (N >= 3)");
        if (cfg_.latent_dim < 1) throw ConfigError("latent dimension must be positive");
        const int64_t stem_in = cfg_.num_classes > 0 ? 2 * cfg_.latent_dim : cfg_.latent_dim;
        if (cfg_.num_classes > 0) {
            embed_ = register_module("embed", torch::nn::Embedding(cfg_.num_classes, cfg_.latent_dim));
        }
        stem_ = register_module("stem", torch::nn::Linear(stem_in, cfg_.widths[0] * cfg_.base_size * cfg_.base_size));
        stem_bn_ = register_module("stem_bn", torch::nn::BatchNorm2d(cfg_.widths[0]));
        for (std::size_t j = 1; j < cfg_.widths.size(); ++j) {
            const auto tag = "block" + std::to_string(j);
            convs_.push_back(register_module(
                tag + "_conv",
                torch::nn::Conv2d(torch::nn::Conv2dOptions(cfg_.widths[j - 1], cfg_.widths[j], 3).padding(1))));
            bns_.push_back(register_module(tag + "_bn", torch::nn::BatchNorm2d(cfg_.widths[j])));
            if (cfg_.noise) {
                noise_scales_.push_back(register_parameter(tag + "_noise_scale", torch::zeros({1, cfg_.widths[j], 1, 1})));
            }
        }
        to_image_ = register_module(
            "to_image", torch::nn::Conv2d(torch::nn::Conv2dOptions(cfg_.widths.back(), cfg_.channels, 3).padding(1)));
    }

    /// Index of the last block (N). Blocks are G_0..G_N.
    int64_t last_block() const { return static_cast<int64_t>(cfg_.widths.size()); }

    /// Shape of the tensor entering cut `i` for one sample (no batch dim).
    std::vector<int64_t> cut_shape(int64_t cut) const {
        const int64_t n = last_block();
        if (cut < 0 || cut > n + 1) throw InputError("cut index " + std::to_string(cut) + " outside [0, N+1]");
        if (cut == 0) return {cfg_.latent_dim};
        if (cut == n + 1) return {cfg_.channels, cfg_.image_size(), cfg_.image_size()};
        const int64_t side = cfg_.base_size << (cut - 1);
        return {cfg_.widths[cut - 1], side, side};
    }

    int64_t cut_numel(int64_t cut) const {
        int64_t n = 1;
        for (auto d : cut_shape(cut)) n *= d;
        return n;
    }

    /// Per-sample shapes of the noise inputs, one per noisy block (blocks 1..N-1).
    std::vector<std::vector<int64_t>> noise_shapes() const {
        std::vector<std::vector<int64_t>> out;
        if (!cfg_.noise) return out;
        for (int64_t j = 1; j < last_block(); ++j) {
            const int64_t side = cfg_.base_size << j;
            out.push_back({1, side, side});
        }
        return out;
    }

    torch::Tensor forward(const torch::Tensor& z, const std::optional<torch::Tensor>& labels = std::nullopt,
                          const std::vector<torch::Tensor>& noises = {}) {
        return forward_from(0, z, labels, noises);
    }

    /// Runs blocks `cut..N` on `h`. Noise tensors, when given, are indexed by
    /// block (entry j-1 for block j); missing noises mean zero noise.
    torch::Tensor forward_from(int64_t cut, const torch::Tensor& h,
                               const std::optional<torch::Tensor>& labels = std::nullopt,
                               const std::vector<torch::Tensor>& noises = {}) {
        check_cut_input(cut, h);
        auto x = h;
        for (int64_t block = cut; block <= last_block(); ++block) x = apply_block(block, x, labels, noises);
        return x;
    }

    /// Single block G_block.
    torch::Tensor apply_block(int64_t block, const torch::Tensor& h,
                              const std::optional<torch::Tensor>& labels = std::nullopt,
                              const std::vector<torch::Tensor>& noises = {}) {
        const int64_t n = last_block();
        if (block == 0) {
            auto in = h;
            if (cfg_.num_classes > 0) {
                if (!labels) throw InputError("class-conditional generator needs labels");
                in = torch::cat({h, embed_->forward(*labels)}, 1);
            }
            auto x = stem_->forward(in).view({h.size(0), cfg_.widths[0], cfg_.base_size, cfg_.base_size});
            return torch::leaky_relu(stem_bn_->forward(x), 0.2);
        }
        if (block == n) return torch::tanh(to_image_->forward(h));
        const auto j = static_cast<std::size_t>(block - 1);
        auto x = torch::upsample_nearest2d(h, {h.size(2) * 2, h.size(3) * 2});
        x = bns_[j]->forward(convs_[j]->forward(x));
        if (cfg_.noise) {
            if (j < noises.size() && noises[j].defined()) {
                x = x + noise_scales_[j] * noises[j];
            } else if (is_training()) {
                x = x + noise_scales_[j] * torch::randn({x.size(0), 1, x.size(2), x.size(3)});
            }
        }
        return torch::leaky_relu(x, 0.2);
    }

    const GeneratorConfig& config() const { return cfg_; }

private:
    void check_cut_input(int64_t cut, const torch::Tensor& h) const {
        const auto expect = cut_shape(cut);
        bool ok = h.dim() == static_cast<int64_t>(expect.size()) + 1 && h.size(0) > 0;
        for (std::size_t d = 0; ok && d < expect.size(); ++d) ok = h.size(static_cast<int64_t>(d) + 1) == expect[d];
        if (!ok) throw InputError("tensor does not match the declared shape of cut " + std::to_string(cut));
    }

    GeneratorConfig cfg_;
    torch::nn::Embedding embed_{nullptr};
    torch::nn::Linear stem_{nullptr};
    torch::nn::BatchNorm2d stem_bn_{nullptr};
    std::vector<torch::nn::Conv2d> convs_;
    std::vector<torch::nn::BatchNorm2d> bns_;
    std::vector<torch::Tensor> noise_scales_;
    torch::nn::Conv2d to_image_{nullptr};
};
TORCH_MODULE(LayeredGenerator);

/// Maps generator output in [-1, 1] to classifier input in [0, 1].
inline torch::Tensor to_unit_range(const torch::Tensor& generated) { return (generated + 1.0) * 0.5; }

/// Copies parameters and buffers of `src` into `dst` (same architecture),
/// converting to `dst`'s dtype.
inline void copy_state(const torch::nn::Module& src, torch::nn::Module& dst) {
    torch::NoGradGuard guard;
    auto sp = src.named_parameters();
    auto dp = dst.named_parameters();
    for (const auto& p : sp) dp[p.key()].copy_(p.value());
    auto sb = src.named_buffers();
    auto db = dst.named_buffers();
    for (const auto& b : sb) db[b.key()].copy_(b.value());
}

/// Independent copy of a classifier in the requested dtype.
inline Classifier clone_classifier(const Classifier& model, torch::Dtype dtype = torch::kFloat32) {
    Classifier out(model->config());
    out->to(dtype);
    copy_state(*model, *out);
    out->eval();
    return out;
}

inline LayeredGenerator clone_generator(const LayeredGenerator& model, torch::Dtype dtype = torch::kFloat32) {
    LayeredGenerator out(model->config());
    out->to(dtype);
    copy_state(*model, *out);
    out->eval();
    return out;
}

/// Freezes a trained generator for inversion: eval mode, no parameter grads.
inline void freeze(LayeredGenerator& generator) {
    generator->eval();
    for (auto& p : generator->parameters()) p.set_requires_grad(false);
}

}  // namespace gifd

#endif  // GIFD_MODELS_HPP_
