#include <gtest/gtest.h>
#include <torch/torch.h>

#include <cmath>

#include "gifd/defense.hpp"
#include "test_util.hpp"

namespace gifd {
namespace {

GradientReport synthetic_report(uint64_t seed, double scale = 1.0) {
    torch::manual_seed(seed);
    GradientReport r;
    r.entries = {{"conv.weight", scale * torch::randn({4, 3, 3, 3})},
                 {"conv.bias", scale * torch::randn({4})},
                 {"fc.weight", scale * torch::randn({10, 16})},
                 {"fc.bias", scale * torch::randn({10})}};
    r.batch_size = 1;
    r.num_classes = 10;
    r.image_shape = {3, 8, 8};
    return r;
}

GradientReport single(const torch::Tensor& t, const std::string& name = "fc.weight") {
    GradientReport r;
    r.entries = {{name, t}};
    return r;
}

TEST(Noise, ZeroSigmaIsIdentity) {
    auto r = synthetic_report(1);
    auto out = gaussian_noise_defense(r, 0.0, 3);
    for (std::size_t i = 0; i < r.size(); ++i) EXPECT_TRUE(torch::equal(out.entries[i].grad, r.entries[i].grad));
}

// The residual of a large layer is N(0, sigma^2): its sample mean and
// standard deviation lie within a few standard errors of 0 and sigma.
TEST(Noise, ResidualHasRequestedMoments) {
    const int64_t n = 200000;
    const double sigma = 0.1;
    auto r = single(torch::ones({n}));
    auto out = gaussian_noise_defense(r, sigma, 42);
    auto e = (out.entries[0].grad - 1.0).to(torch::kFloat64);
    const double mean = e.mean().item<double>();
    const double sd = e.std().item<double>();
    EXPECT_LT(std::abs(mean), 5.0 * sigma / std::sqrt(static_cast<double>(n)));
    // Standard error of the sample sd is about sigma / sqrt(2n).
    EXPECT_LT(std::abs(sd - sigma), 5.0 * sigma / std::sqrt(2.0 * static_cast<double>(n)));
    // Fraction beyond 2 sigma is close to 4.55%.
    const double tail = (e.abs() > 2.0 * sigma).to(torch::kFloat64).mean().item<double>();
    EXPECT_NEAR(tail, 0.0455, 0.003);
}

TEST(Noise, NegativeSigmaRejected) { EXPECT_THROW(gaussian_noise_defense(synthetic_report(1), -1.0, 0), ConfigError); }

TEST(Clipping, ScalesDownOnlyLayersAboveTheBound) {
    auto r = single(torch::tensor({6.0F, 8.0F}));  // norm 10
    auto out = clip_defense(r, 4.0);
    EXPECT_TRUE(torch::allclose(out.entries[0].grad, torch::tensor({2.4F, 3.2F})));
    auto small = single(torch::tensor({0.3F, 0.4F}));
    EXPECT_TRUE(torch::equal(clip_defense(small, 4.0).entries[0].grad, small.entries[0].grad));
    auto zero = single(torch::zeros({5}));
    EXPECT_TRUE(torch::equal(clip_defense(zero, 1.0).entries[0].grad, torch::zeros({5})));
    EXPECT_THROW(clip_defense(r, 0.0), ConfigError);
}

TEST(Clipping, EveryLayerWithinBoundAndIdempotent) {
    for (uint64_t seed = 0; seed < 10; ++seed) {
        auto r = synthetic_report(seed, 3.0);
        auto once = clip_defense(r, 2.0);
        for (const auto& e : once.entries) EXPECT_LE(e.grad.to(torch::kFloat64).norm().item<double>(), 2.0 * (1 + 1e-6));
        auto twice = clip_defense(once, 2.0);
        for (std::size_t i = 0; i < r.size(); ++i) EXPECT_TRUE(torch::equal(once.entries[i].grad, twice.entries[i].grad));
    }
}

TEST(Sparsification, KeepsLargestMagnitudes) {
    auto r = single(torch::tensor({1.0F, -5.0F, 3.0F, 0.5F}));
    auto out = sparsify_defense(r, 0.5);
    EXPECT_TRUE(torch::equal(out.entries[0].grad, torch::tensor({0.0F, -5.0F, 3.0F, 0.0F})));
}

TEST(Sparsification, KeepCountAndTies) {
    // ceil(0.1 * 10) = 1 entry kept: ties go to the lowest index.
    auto r = single(torch::ones({10}));
    auto out = sparsify_defense(r, 0.9);
    EXPECT_EQ(out.entries[0].grad.nonzero().size(0), 1);
    EXPECT_EQ(out.entries[0].grad[0].item<float>(), 1.0F);
    for (uint64_t seed = 0; seed < 5; ++seed) {
        auto rep = synthetic_report(seed);
        auto sp = sparsify_defense(rep, 0.9);
        for (std::size_t i = 0; i < rep.size(); ++i) {
            const auto n = rep.entries[i].grad.numel();
            const auto keep = static_cast<int64_t>(std::ceil(0.1 * static_cast<double>(n) - 1e-9));
            EXPECT_EQ((sp.entries[i].grad != 0).sum().item<int64_t>(), keep);
            // Kept entries are untouched, and none is smaller than a dropped one.
            auto kept = sp.entries[i].grad != 0;
            EXPECT_TRUE(torch::equal(sp.entries[i].grad.masked_select(kept), rep.entries[i].grad.masked_select(kept)));
            if (keep < n) {
                EXPECT_GE(rep.entries[i].grad.abs().masked_select(kept).min().item<float>(),
                          rep.entries[i].grad.abs().masked_select(~kept).max().item<float>());
            }
        }
    }
    EXPECT_THROW(sparsify_defense(r, 1.0), ConfigError);
}

TEST(Soteria, DropsSmallestRowsOfDefendedLayerOnly) {
    auto r = synthetic_report(3);
    auto out = soteria_defense(r, 0.8, "fc.weight");
    const auto& g = out.at("fc.weight");
    auto row_zero = (g == 0).all(1);
    EXPECT_EQ(row_zero.sum().item<int64_t>(), 8);  // floor(0.8 * 10)
    auto norms = r.at("fc.weight").norm(2, 1);
    const double kept_min = norms.masked_select(~row_zero).min().item<double>();
    const double dropped_max = norms.masked_select(row_zero).max().item<double>();
    EXPECT_GE(kept_min, dropped_max);
    for (const auto& name : {"conv.weight", "conv.bias", "fc.bias"}) EXPECT_TRUE(torch::equal(out.at(name), r.at(name)));
    EXPECT_THROW(soteria_defense(r, 0.8, "nope"), ConfigError);
}

TEST(Inference, RoundTripsReproduceDefendedReport) {
    for (uint64_t seed = 0; seed < 20; ++seed) {
        auto truth = synthetic_report(seed, 1.0 + static_cast<double>(seed % 4));
        auto clipped = clip_defense(truth, 4.0);
        for (bool global : {false, true}) {
            InferOptions opts;
            opts.global_clip_bound = global;
            auto back = apply_transform(infer_transform(clipped, DefenseVariant::Clipping, opts), truth);
            for (std::size_t i = 0; i < truth.size(); ++i) {
                const double rel = (back.entries[i].grad - clipped.entries[i].grad).norm().item<double>() /
                                   std::max(clipped.entries[i].grad.norm().item<double>(), 1e-30);
                EXPECT_LE(rel, 1e-6);
            }
        }
        auto sparse = sparsify_defense(truth, 0.9);
        auto sback = apply_transform(infer_transform(sparse, DefenseVariant::Sparsification), truth);
        for (std::size_t i = 0; i < truth.size(); ++i) EXPECT_TRUE(torch::equal(sback.entries[i].grad, sparse.entries[i].grad));
        auto sot = soteria_defense(truth, 0.8, "fc.weight");
        auto est = infer_transform(sot, DefenseVariant::Soteria);
        EXPECT_EQ(est.soteria_layer, "fc.weight");
        auto oback = apply_transform(est, truth);
        for (std::size_t i = 0; i < truth.size(); ++i) EXPECT_TRUE(torch::equal(oback.entries[i].grad, sot.entries[i].grad));
    }
}

TEST(Inference, SparsityEstimateMatchesZeroFraction) {
    auto sparse = sparsify_defense(synthetic_report(1), 0.9);
    auto est = infer_transform(sparse, DefenseVariant::Sparsification);
    double zeros = 0.0;
    for (const auto& e : sparse.entries) zeros += (e.grad == 0).sum().item<double>();
    EXPECT_DOUBLE_EQ(est.sparsity, zeros / static_cast<double>(sparse.numel()));
    EXPECT_GT(est.sparsity, 0.85);
}

TEST(Inference, SoteriaNeedsOneStandoutMaskedLayer) {
    EXPECT_THROW(infer_transform(synthetic_report(1), DefenseVariant::Soteria), InferenceError);
    // Two layers with the same share of zero rows are ambiguous.
    auto r = synthetic_report(1);
    r.entries[0].grad.zero_();
    r.entries[2].grad.zero_();
    EXPECT_THROW(infer_transform(r, DefenseVariant::Soteria), InferenceError);
}

TEST(Inference, SoteriaLayerStandsOutFromInactiveUnits) {
    // Inactive units zero out 3 of 4 conv rows; the defense drops 8 of 10 fc rows.
    auto r = synthetic_report(2);
    r.entries[0].grad.slice(0, 1, 4).zero_();
    auto sot = soteria_defense(r, 0.8, "fc.weight");
    auto est = infer_transform(sot, DefenseVariant::Soteria);
    EXPECT_EQ(est.soteria_layer, "fc.weight");
    EXPECT_DOUBLE_EQ(zero_row_fraction(sot.at("fc.weight")), 0.8);
    // Zero entries inside kept rows stay unmasked.
    auto back = apply_transform(est, r);
    EXPECT_TRUE(torch::equal(back.at("fc.weight"), sot.at("fc.weight")));
    EXPECT_EQ(est.soteria_mask.sum().item<int64_t>(), 2 * 16);
}

TEST(Inference, NonFiniteReportRejected) {
    auto r = synthetic_report(1);
    r.entries[0].grad[0][0][0][0] = std::numeric_limits<float>::quiet_NaN();
    EXPECT_THROW(infer_transform(r, DefenseVariant::None), InferenceError);
}

TEST(Inference, NoiseAndNoneAreIdentity) {
    auto r = synthetic_report(2);
    for (auto v : {DefenseVariant::None, DefenseVariant::GaussianNoise}) {
        auto out = apply_transform(infer_transform(r, v), r);
        for (std::size_t i = 0; i < r.size(); ++i) EXPECT_TRUE(torch::equal(out.entries[i].grad, r.entries[i].grad));
    }
}

TEST(Transform, ClippingIsDifferentiable) {
    auto x = torch::tensor({6.0, 8.0}, torch::kFloat64).requires_grad_(true);
    TransformEstimate est;
    est.variant = DefenseVariant::Clipping;
    est.clip_bounds = {5.0};
    auto out = apply_transform(est, single(x * 1.0));
    auto y = out.entries[0].grad.sum();
    auto g = torch::autograd::grad({y}, {x})[0];
    // d/dx of 5 * sum(x) / ||x|| at x = (6, 8).
    const double n = 10.0;
    const double expect0 = 5.0 * (1.0 / n - 14.0 * 6.0 / (n * n * n));
    const double expect1 = 5.0 * (1.0 / n - 14.0 * 8.0 / (n * n * n));
    EXPECT_NEAR(g[0].item<double>(), expect0, 1e-12);
    EXPECT_NEAR(g[1].item<double>(), expect1, 1e-12);
}

TEST(DefenseConfig, ParsesNamesAndValidates) {
    EXPECT_EQ(defense_variant_from_string("noise"), DefenseVariant::GaussianNoise);
    EXPECT_EQ(defense_variant_from_string("clipping"), DefenseVariant::Clipping);
    EXPECT_THROW(defense_variant_from_string("magic"), ConfigError);
    DefenseConfig d;
    d.variant = DefenseVariant::Soteria;
    d.p = 0.0;
    EXPECT_THROW(d.validate(), ConfigError);
    d.p = 0.8;
    auto back = DefenseConfig::from_json(d.to_json());
    EXPECT_EQ(back.variant, d.variant);
    EXPECT_EQ(back.p, d.p);
    EXPECT_EQ(back.layer, d.layer);
}

}  // namespace
}  // namespace gifd
