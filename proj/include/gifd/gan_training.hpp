#ifndef GIFD_GAN_TRAINING_HPP_
#define GIFD_GAN_TRAINING_HPP_

#include <ATen/CPUGeneratorImpl.h>
#include <torch/torch.h>

#include <cstdint>
#include <functional>
#include <string>

#include "gifd/dataset.hpp"
#include "gifd/error.hpp"
#include "gifd/models.hpp"

namespace gifd {

/// Seeded CPU random stream, independent of torch's global generator.
inline at::Generator make_rng(uint64_t seed) { return at::detail::createCPUGenerator(seed); }

struct GanTrainConfig {
    GeneratorConfig generator;
    int64_t steps = 2000;
    int64_t batch_size = 64;
    double lr = 2e-4;
    uint64_t seed = 0;
    int64_t min_dataset_size = 1000;
};

class DiscriminatorImpl : public torch::nn::Module {
public:
    DiscriminatorImpl(int64_t channels, int64_t image_size, int64_t num_classes) {
        int64_t in = channels, side = image_size;
        for (int64_t width : {32, 64, 128}) {
            convs_.push_back(register_module("conv" + std::to_string(convs_.size() + 1),
                                             torch::nn::Conv2d(torch::nn::Conv2dOptions(in, width, 4).stride(2).padding(1))));
            in = width;
            side /= 2;
        }
        head_ = register_module("head", torch::nn::Linear(in * side * side, 1));
        if (num_classes > 0) embed_ = register_module("embed", torch::nn::Embedding(num_classes, in));
    }

    torch::Tensor forward(const torch::Tensor& images, const std::optional<torch::Tensor>& labels = std::nullopt) {
        auto h = images;
        for (auto& conv : convs_) h = torch::leaky_relu(conv->forward(h), 0.2);
        auto out = head_->forward(h.flatten(1)).squeeze(1);
        if (embed_ && labels) out = out + (embed_->forward(*labels) * h.mean({2, 3})).sum(1);
        return out;
    }

private:
    std::vector<torch::nn::Conv2d> convs_;
    torch::nn::Linear head_{nullptr};
    torch::nn::Embedding embed_{nullptr};
};
TORCH_MODULE(Discriminator);

/// Called every `progress_every` steps with (step, d_loss, g_loss).
using GanProgress = std::function<void(int64_t, double, double)>;

/// Trains the toy GAN with the non-saturating logistic loss. Deterministic
/// for a fixed seed on a single thread.
inline LayeredGenerator train_toy_gan(const ImageStore& data, const GanTrainConfig& cfg,
                                      const GanProgress& progress = {}, int64_t progress_every = 200) {
    const auto& gc = cfg.generator;
    if (data.size() < cfg.min_dataset_size) {
        throw ConfigError("GAN training needs at least " + std::to_string(cfg.min_dataset_size) + " images, got " +
                          std::to_string(data.size()));
    }
    if (data.images.size(1) != gc.channels || data.images.size(2) != gc.image_size() ||
        data.images.size(3) != gc.image_size()) {
        throw ConfigError("dataset resolution/channels do not match the generator output (" +
                          std::to_string(gc.image_size()) + " px)");
    }
    if (cfg.steps < 1 || cfg.batch_size < 1) throw ConfigError("GAN training needs positive steps and batch size");

    torch::manual_seed(cfg.seed);
    LayeredGenerator generator(gc);
    Discriminator discriminator(gc.channels, gc.image_size(), gc.num_classes);
    auto rng = make_rng(cfg.seed + 1);
    torch::optim::Adam opt_g(generator->parameters(), torch::optim::AdamOptions(cfg.lr).betas({0.5, 0.999}));
    torch::optim::Adam opt_d(discriminator->parameters(), torch::optim::AdamOptions(cfg.lr).betas({0.5, 0.999}));
    const bool conditional = gc.num_classes > 0;
    generator->train();

    for (int64_t step = 1; step <= cfg.steps; ++step) {
        auto idx = torch::randint(data.size(), {cfg.batch_size}, rng, torch::kInt64);
        auto real = data.images.index_select(0, idx) * 2.0 - 1.0;
        std::optional<torch::Tensor> labels;
        if (conditional) labels = data.labels.index_select(0, idx);
        auto z = torch::randn({cfg.batch_size, gc.latent_dim}, rng);

        auto fake = generator->forward(z, labels);
        opt_d.zero_grad();
        auto d_loss = torch::softplus(-discriminator->forward(real, labels)).mean() +
                      torch::softplus(discriminator->forward(fake.detach(), labels)).mean();
        d_loss.backward();
        opt_d.step();

        opt_g.zero_grad();
        auto g_loss = torch::softplus(-discriminator->forward(fake, labels)).mean();
        g_loss.backward();
        opt_g.step();

        if (progress && (step % progress_every == 0 || step == cfg.steps)) {
            progress(step, d_loss.item<double>(), g_loss.item<double>());
        }
    }
    generator->eval();
    return generator;
}

struct ClassifierTrainConfig {
    int64_t steps = 300;
    int64_t batch_size = 64;
    double lr = 1e-3;
    uint64_t seed = 0;
};

/// Supervised training of the classifier on a labelled store. Used both for
/// the perceptual feature extractor and for attacking a partially trained model.
inline void train_classifier(Classifier& model, const ImageStore& data, const ClassifierTrainConfig& cfg) {
    if (data.size() == 0) throw ConfigError("classifier training needs data");
    auto rng = make_rng(cfg.seed);
    torch::optim::Adam opt(model->parameters(), torch::optim::AdamOptions(cfg.lr));
    model->train();
    for (int64_t step = 0; step < cfg.steps; ++step) {
        auto idx = torch::randint(data.size(), {cfg.batch_size}, rng, torch::kInt64);
        opt.zero_grad();
        auto loss = classification_loss(model, data.images.index_select(0, idx), data.labels.index_select(0, idx));
        loss.backward();
        opt.step();
    }
    opt.zero_grad();
    for (auto& p : model->parameters()) p.mutable_grad() = torch::Tensor();
    model->eval();
}

}  // namespace gifd

#endif  // GIFD_GAN_TRAINING_HPP_
