#ifndef GIFD_L1_PROJECTION_HPP_
#define GIFD_L1_PROJECTION_HPP_

#include <torch/torch.h>

#include <algorithm>
#include <cmath>
#include <concepts>
#include <functional>
#include <span>
#include <vector>

#include "gifd/error.hpp"

namespace gifd {

/// l1 distance accumulated in double.
template <std::floating_point T>
double l1_distance(std::span<const T> a, std::span<const T> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i]));
    return s;
}

/// Euclidean projection of `v` onto {u : ||u - center||_1 <= radius}.
///
/// Sort-based: the magnitudes |v - center| are projected onto the simplex of
/// size `radius` and the signs restored. Points already inside the ball are
/// copied unchanged. O(n log n).
template <std::floating_point T>
void project_l1_ball(std::span<const T> v, std::span<const T> center, T radius, std::span<T> out) {
    if (v.size() != center.size() || v.size() != out.size()) throw InputError("l1 projection: size mismatch");
    if (!(radius > T(0))) throw InputError("l1 projection: radius must be positive");
    const std::size_t n = v.size();
    if (l1_distance(v, center) <= static_cast<double>(radius)) {
        std::copy(v.begin(), v.end(), out.begin());
        return;
    }
    std::vector<double> mag(n);
    for (std::size_t i = 0; i < n; ++i) mag[i] = std::abs(static_cast<double>(v[i]) - static_cast<double>(center[i]));
    std::vector<double> sorted = mag;
    std::sort(sorted.begin(), sorted.end(), std::greater<>());

    // Largest rho with sorted[rho] > (prefix_sum(rho) - radius) / (rho + 1).
    double prefix = 0.0, theta = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
        prefix += sorted[j];
        const double candidate = (prefix - static_cast<double>(radius)) / static_cast<double>(j + 1);
        if (sorted[j] > candidate) theta = candidate;
    }
    for (std::size_t i = 0; i < n; ++i) {
        const double d = static_cast<double>(v[i]) - static_cast<double>(center[i]);
        const double shrunk = std::max(mag[i] - theta, 0.0);
        out[i] = static_cast<T>(static_cast<double>(center[i]) + std::copysign(shrunk, d));
    }
}

template <std::floating_point T>
std::vector<T> project_l1_ball(std::span<const T> v, std::span<const T> center, T radius) {
    std::vector<T> out(v.size());
    project_l1_ball(v, center, radius, std::span<T>(out));
    return out;
}

namespace detail {

/// Sequential l1 distance; the feasibility check and the reported distance
/// share it so both round identically.
inline double row_l1_distance(const double* a, const double* b, int64_t n) {
    double s = 0.0;
    for (int64_t i = 0; i < n; ++i) s += std::abs(a[i] - b[i]);
    return s;
}

}  // namespace detail

/// Projects every batch row of `v` (B x ...) onto its own l1 ball of
/// `radius` around the matching row of `center`. The result has `v`'s dtype;
/// when rounding to that dtype would leave a row outside the ball, the row is
/// re-projected onto a slightly smaller ball so feasibility holds exactly.
inline torch::Tensor project_l1_ball_rows(const torch::Tensor& v, const torch::Tensor& center, double radius) {
    if (v.sizes() != center.sizes()) throw InputError("l1 projection: tensor shapes differ");
    if (v.dim() < 1 || v.size(0) == 0) throw InputError("l1 projection: need a batch dimension");
    auto vd = v.detach().to(torch::kFloat64).reshape({v.size(0), -1}).contiguous();
    auto cd = center.detach().to(torch::kFloat64).reshape({v.size(0), -1}).contiguous();
    auto out = torch::empty_like(vd);
    const auto rows = vd.size(0), cols = vd.size(1);
    const auto dtype = v.scalar_type();
    for (int64_t r = 0; r < rows; ++r) {
        const double* c = cd.data_ptr<double>() + r * cols;
        std::span<const double> vr(vd.data_ptr<double>() + r * cols, static_cast<std::size_t>(cols));
        std::span<const double> cr(c, static_cast<std::size_t>(cols));
        std::span<double> orow(out.data_ptr<double>() + r * cols, static_cast<std::size_t>(cols));
        double target = radius;
        for (int attempt = 0; attempt < 64; ++attempt) {
            project_l1_ball(vr, cr, target, orow);
            // Measure the distance the stored values will actually have.
            if (dtype != torch::kFloat64) out[r].copy_(out[r].to(dtype).to(torch::kFloat64));
            const double dist = detail::row_l1_distance(orow.data(), c, cols);
            if (dist <= radius) break;
            if (attempt == 63) throw InputError("l1 projection: cannot round into the ball");
            // Rounding error is bounded, so a geometrically growing margin ends the loop.
            target = radius - std::ldexp(dist - radius + radius * 1e-9, attempt);
            if (target <= 0.0) target = radius * 1e-3;
        }
    }
    return out.view(v.sizes()).to(dtype);
}

/// Largest per-row l1 distance between two batches, in double.
inline double max_row_l1_distance(const torch::Tensor& a, const torch::Tensor& b) {
    if (a.sizes() != b.sizes()) throw InputError("l1 distance: tensor shapes differ");
    auto ad = a.detach().to(torch::kFloat64).reshape({a.size(0), -1}).contiguous();
    auto bd = b.detach().to(torch::kFloat64).reshape({a.size(0), -1}).contiguous();
    const auto cols = ad.size(1);
    double worst = 0.0;
    for (int64_t r = 0; r < ad.size(0); ++r) {
        worst = std::max(worst, detail::row_l1_distance(ad.data_ptr<double>() + r * cols, bd.data_ptr<double>() + r * cols, cols));
    }
    return worst;
}

}  // namespace gifd

#endif  // GIFD_L1_PROJECTION_HPP_
