#ifndef GIFD_METRICS_HPP_
#define GIFD_METRICS_HPP_

#include <torch/torch.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <vector>

#include "gifd/error.hpp"
#include "gifd/models.hpp"

namespace gifd {

inline constexpr double kPsnrCap = 100.0;
inline constexpr double kSsimC1 = 0.01 * 0.01;
inline constexpr double kSsimC2 = 0.03 * 0.03;

namespace detail {

inline void require_same_shape(const torch::Tensor& x, const torch::Tensor& y) {
    if (x.sizes() != y.sizes()) throw InputError("metric inputs have different shapes");
    if (x.numel() == 0) throw InputError("metric inputs are empty");
}

// Normalized 1-D Gaussian of width 11, sigma 1.5, in double.
inline torch::Tensor gaussian_window(int64_t size = 11, double sigma = 1.5) {
    auto coords = torch::arange(size, torch::kFloat64) - static_cast<double>(size - 1) / 2.0;
    auto g = torch::exp(-coords.pow(2) / (2.0 * sigma * sigma));
    return g / g.sum();
}

}  // namespace detail

inline double mse(const torch::Tensor& x, const torch::Tensor& y) {
    detail::require_same_shape(x, y);
    return (x.detach().to(torch::kFloat64) - y.detach().to(torch::kFloat64)).pow(2).mean().item<double>();
}

/// Peak signal-to-noise ratio for [0, 1] images, capped for identical inputs.
inline double psnr_from_mse(double m) {
    if (m < 1e-10) return kPsnrCap;
    return std::min(kPsnrCap, 10.0 * std::log10(1.0 / m));
}

inline double psnr(const torch::Tensor& x, const torch::Tensor& y) { return psnr_from_mse(mse(x, y)); }

/// Mean local SSIM with an 11x11 Gaussian window (sigma 1.5) over valid
/// positions, averaged over channels and images. Accepts C x H x W or
/// B x C x H x W.
inline double ssim(const torch::Tensor& x, const torch::Tensor& y) {
    detail::require_same_shape(x, y);
    auto a = x.detach().to(torch::kFloat64);
    auto b = y.detach().to(torch::kFloat64);
    if (a.dim() == 3) {
        a = a.unsqueeze(0);
        b = b.unsqueeze(0);
    }
    if (a.dim() != 4) throw InputError("ssim expects C x H x W or B x C x H x W");
    constexpr int64_t win = 11;
    if (a.size(2) < win || a.size(3) < win) throw InputError("image is smaller than the 11x11 SSIM window");
    const int64_t c = a.size(1);
    auto g = detail::gaussian_window(win);
    auto kernel = g.unsqueeze(1).matmul(g.unsqueeze(0)).expand({c, 1, win, win}).contiguous();
    auto filter = [&](const torch::Tensor& t) {
        return torch::nn::functional::conv2d(t, kernel, torch::nn::functional::Conv2dFuncOptions().groups(c));
    };
    auto mu_a = filter(a), mu_b = filter(b);
    auto var_a = filter(a * a) - mu_a * mu_a;
    auto var_b = filter(b * b) - mu_b * mu_b;
    auto cov = filter(a * b) - mu_a * mu_b;
    auto map = ((2.0 * mu_a * mu_b + kSsimC1) * (2.0 * cov + kSsimC2)) /
               ((mu_a * mu_a + mu_b * mu_b + kSsimC1) * (var_a + var_b + kSsimC2));
    return map.mean().item<double>();
}

/// Perceptual distance from a frozen classifier's first two conv layers:
/// per layer, channel vectors are unit-normalized at every position and the
/// squared difference is averaged over positions; layers are averaged.
inline double perceptual_distance(const torch::Tensor& x, const torch::Tensor& y, const Classifier& extractor,
                                  std::size_t layers = 2) {
    detail::require_same_shape(x, y);
    auto a = x.dim() == 3 ? x.unsqueeze(0) : x;
    auto b = y.dim() == 3 ? y.unsqueeze(0) : y;
    const auto& cfg = extractor->config();
    if (a.dim() != 4 || a.size(1) != cfg.channels || a.size(2) != cfg.image_size || a.size(3) != cfg.image_size) {
        throw InputError("perceptual extractor does not accept images of this shape");
    }
    torch::NoGradGuard no_grad;
    auto model = extractor;
    const auto fa = model->conv_features(a.detach().to(torch::kFloat32), layers);
    const auto fb = model->conv_features(b.detach().to(torch::kFloat32), layers);
    double total = 0.0;
    for (std::size_t l = 0; l < fa.size(); ++l) {
        auto unit = [](const torch::Tensor& f) {
            auto d = f.to(torch::kFloat64);
            return d / (d.pow(2).sum(1, true).sqrt() + 1e-10);
        };
        total += (unit(fa[l]) - unit(fb[l])).pow(2).sum(1).mean().item<double>();
    }
    return total / static_cast<double>(fa.size());
}

struct MetricsRecord {
    double psnr = 0.0;
    double ssim = 0.0;
    double mse = 0.0;
    double perceptual = 0.0;
};

/// All four metrics for a single C x H x W pair.
inline MetricsRecord compute_metrics(const torch::Tensor& x, const torch::Tensor& y, const Classifier* extractor) {
    MetricsRecord r;
    r.mse = mse(x, y);
    r.psnr = psnr_from_mse(r.mse);
    r.ssim = ssim(x, y);
    r.perceptual = extractor ? perceptual_distance(x, y, *extractor) : std::numeric_limits<double>::quiet_NaN();
    return r;
}

inline MetricsRecord mean_record(const std::vector<MetricsRecord>& records) {
    if (records.empty()) throw InputError("no metric records to average");
    MetricsRecord m;
    for (const auto& r : records) {
        m.psnr += r.psnr;
        m.ssim += r.ssim;
        m.mse += r.mse;
        m.perceptual += r.perceptual;
    }
    const auto n = static_cast<double>(records.size());
    m.psnr /= n;
    m.ssim /= n;
    m.mse /= n;
    m.perceptual /= n;
    return m;
}

/// Permutation of reconstructions (result[i] = reconstruction matched to
/// private image i) minimizing total MSE. Exhaustive up to 8 images, greedy
/// beyond.
inline std::vector<int64_t> align_batch(const torch::Tensor& recon, const torch::Tensor& truth) {
    detail::require_same_shape(recon, truth);
    const int64_t b = truth.size(0);
    std::vector<std::vector<double>> cost(static_cast<std::size_t>(b), std::vector<double>(static_cast<std::size_t>(b)));
    for (int64_t i = 0; i < b; ++i) {
        for (int64_t j = 0; j < b; ++j) cost[i][j] = mse(truth[i], recon[j]);
    }
    std::vector<int64_t> perm(static_cast<std::size_t>(b));
    std::iota(perm.begin(), perm.end(), 0);
    if (b <= 8) {
        auto best = perm;
        double best_cost = std::numeric_limits<double>::infinity();
        do {
            double c = 0.0;
            for (int64_t i = 0; i < b; ++i) c += cost[i][perm[i]];
            if (c < best_cost) {
                best_cost = c;
                best = perm;
            }
        } while (std::next_permutation(perm.begin(), perm.end()));
        return best;
    }
    std::vector<bool> used(static_cast<std::size_t>(b), false);
    for (int64_t i = 0; i < b; ++i) {
        int64_t pick = -1;
        for (int64_t j = 0; j < b; ++j) {
            if (!used[j] && (pick < 0 || cost[i][j] < cost[i][pick])) pick = j;
        }
        used[pick] = true;
        perm[i] = pick;
    }
    return perm;
}

/// Per-image metrics of a reconstructed batch against the private batch,
/// after alignment.
inline std::vector<MetricsRecord> batch_metrics(const torch::Tensor& recon, const torch::Tensor& truth,
                                                const Classifier* extractor) {
    const auto perm = align_batch(recon, truth);
    std::vector<MetricsRecord> out;
    for (int64_t i = 0; i < truth.size(0); ++i) out.push_back(compute_metrics(recon[perm[i]], truth[i], extractor));
    return out;
}

}  // namespace gifd

#endif  // GIFD_METRICS_HPP_
