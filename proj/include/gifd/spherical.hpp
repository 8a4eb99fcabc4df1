#ifndef GIFD_SPHERICAL_HPP_
#define GIFD_SPHERICAL_HPP_

#include <torch/torch.h>

#include <cmath>

#include "gifd/error.hpp"

namespace gifd {

/// Rescales each row of `z` (B x k) to l2 norm sqrt(k). Rows that are exactly
/// zero are replaced by a fresh random direction drawn from `rng`.
inline torch::Tensor radialize(const torch::Tensor& z, at::Generator& rng) {
    if (z.dim() != 2) throw InputError("latent codes must be B x k");
    const double radius = std::sqrt(static_cast<double>(z.size(1)));
    auto out = z.detach().clone();
    auto norms = out.to(torch::kFloat64).norm(2, 1);
    for (int64_t b = 0; b < out.size(0); ++b) {
        if (norms[b].item<double>() == 0.0) {
            auto fresh = torch::randn({z.size(1)}, rng, out.options());
            out[b].copy_(fresh);
        }
    }
    norms = out.to(torch::kFloat64).norm(2, 1, /*keepdim=*/true);
    return (out.to(torch::kFloat64) * (radius / norms)).to(z.scalar_type());
}

/// One projected step on the sphere: radialize(z - lr * gradient).
inline torch::Tensor spherical_step(const torch::Tensor& z, const torch::Tensor& gradient, double lr, at::Generator& rng) {
    if (z.sizes() != gradient.sizes()) throw InputError("latent and gradient shapes differ");
    return radialize(z.detach() - lr * gradient.detach(), rng);
}

}  // namespace gifd

#endif  // GIFD_SPHERICAL_HPP_
