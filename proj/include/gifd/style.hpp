#ifndef GIFD_STYLE_HPP_
#define GIFD_STYLE_HPP_

#include <torch/torch.h>

#include <cmath>
#include <numbers>
#include <string>

#include "gifd/error.hpp"

namespace gifd {

/// Label-preserving appearance shifts used to build out-of-distribution targets.
struct StyleTransform {
    enum class Variant { Identity, Invert, Posterize, HueRotate, EdgeSketch };
    Variant variant = Variant::Identity;
    int levels = 4;         // posterize
    double degrees = 90.0;  // hue-rotate

    std::string name() const {
        switch (variant) {
            case Variant::Identity: return "identity";
            case Variant::Invert: return "invert";
            case Variant::Posterize: return "posterize";
            case Variant::HueRotate: return "hue-rotate";
            case Variant::EdgeSketch: return "edge-sketch";
        }
        return "identity";
    }
};

inline StyleTransform::Variant style_variant_from_string(const std::string& s) {
    using V = StyleTransform::Variant;
    if (s == "identity" || s.empty()) return V::Identity;
    if (s == "invert") return V::Invert;
    if (s == "posterize") return V::Posterize;
    if (s == "hue-rotate") return V::HueRotate;
    if (s == "edge-sketch") return V::EdgeSketch;
    throw ConfigError("unknown style variant '" + s + "'");
}

namespace detail {

inline torch::Tensor luminance(const torch::Tensor& images) {
    if (images.size(1) == 1) return images;
    return 0.299 * images.select(1, 0).unsqueeze(1) + 0.587 * images.select(1, 1).unsqueeze(1) +
           0.114 * images.select(1, 2).unsqueeze(1);
}

}  // namespace detail

/// Applies `style` to a B x C x H x W batch in [0, 1]; output stays in [0, 1].
inline torch::Tensor apply_style(const torch::Tensor& images, const StyleTransform& style) {
    if (images.dim() != 4) throw InputError("apply_style expects a B x C x H x W batch");
    using V = StyleTransform::Variant;
    switch (style.variant) {
        case V::Identity: return images.clone();
        case V::Invert: return 1.0 - images;
        case V::Posterize: {
            if (style.levels < 2) throw ConfigError("posterize needs at least 2 levels");
            const double steps = style.levels - 1;
            return torch::round(images * steps) / steps;
        }
        case V::HueRotate: {
            if (images.size(1) != 3) return images.clone();
            // Rotation about the gray axis in RGB space.
            const double a = style.degrees * std::numbers::pi / 180.0;
            const double c = std::cos(a), s = std::sin(a);
            const double k = (1.0 - c) / 3.0, r = std::sqrt(1.0 / 3.0) * s;
            auto m = torch::tensor({c + k, k - r, k + r, k + r, c + k, k - r, k - r, k + r, c + k}, torch::kFloat32)
                         .view({3, 3})
                         .to(images.scalar_type());
            return torch::einsum("ij,bjhw->bihw", {m, images}).clamp(0.0, 1.0);
        }
        case V::EdgeSketch: {
            auto gray = torch::replication_pad2d(detail::luminance(images), {1, 1, 1, 1});
            auto kx = torch::tensor({-1.0, 0.0, 1.0, -2.0, 0.0, 2.0, -1.0, 0.0, 1.0}, images.scalar_type()).view({1, 1, 3, 3});
            auto ky = kx.transpose(2, 3).contiguous();
            auto gx = torch::conv2d(gray, kx), gy = torch::conv2d(gray, ky);
            auto sketch = 1.0 - torch::sqrt(gx * gx + gy * gy).clamp(0.0, 1.0);
            return sketch.expand({images.size(0), images.size(1), images.size(2), images.size(3)}).contiguous();
        }
    }
    throw ConfigError("unknown style variant");
}

}  // namespace gifd

#endif  // GIFD_STYLE_HPP_
