#ifndef GIFD_GRADIENT_REPORT_HPP_
#define GIFD_GRADIENT_REPORT_HPP_

#include <torch/torch.h>

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "gifd/error.hpp"

namespace gifd {

struct GradientEntry {
    std::string name;
    torch::Tensor grad;
};

/// The per-parameter gradients a client shares in one exchange.
///
/// Entries mirror the classifier's parameter list in order. A report built
/// from dummy data during an attack may still be attached to an autograd
/// graph; reports that are published or serialized are always detached.
struct GradientReport {
    std::vector<GradientEntry> entries;
    int64_t batch_size = 0;
    std::array<int64_t, 3> image_shape{0, 0, 0};  // C, H, W
    int64_t num_classes = 0;

    std::size_t size() const { return entries.size(); }

    std::size_t index_of(const std::string& name) const {
        for (std::size_t i = 0; i < entries.size(); ++i) {
            if (entries[i].name == name) return i;
        }
        throw InputError("gradient report has no layer named '" + name + "'");
    }

    const torch::Tensor& at(const std::string& name) const { return entries[index_of(name)].grad; }

    int64_t numel() const {
        int64_t n = 0;
        for (const auto& e : entries) n += e.grad.numel();
        return n;
    }

    /// Copy that shares metadata but holds detached, contiguous gradient storage.
    GradientReport detached() const {
        GradientReport out = with_entries({});
        out.entries.reserve(entries.size());
        for (const auto& e : entries) out.entries.push_back({e.name, e.grad.detach().clone().contiguous()});
        return out;
    }

    GradientReport with_entries(std::vector<GradientEntry> replacement) const {
        GradientReport out;
        out.entries = std::move(replacement);
        out.batch_size = batch_size;
        out.image_shape = image_shape;
        out.num_classes = num_classes;
        return out;
    }

    bool all_finite() const {
        for (const auto& e : entries) {
            if (!torch::isfinite(e.grad).all().item<bool>()) return false;
        }
        return true;
    }
};

/// Throws unless both reports have identical layer names and shapes.
inline void require_same_layout(const GradientReport& a, const GradientReport& b) {
    if (a.entries.size() != b.entries.size()) {
        throw InputError("gradient reports have different layer counts (" + std::to_string(a.entries.size()) +
                         " vs " + std::to_string(b.entries.size()) + ")");
    }
    for (std::size_t i = 0; i < a.entries.size(); ++i) {
        if (a.entries[i].name != b.entries[i].name) {
            throw InputError("layer name mismatch: '" + a.entries[i].name + "' vs '" + b.entries[i].name + "'");
        }
        if (a.entries[i].grad.sizes() != b.entries[i].grad.sizes()) {
            throw InputError("shape mismatch for layer '" + a.entries[i].name + "'");
        }
    }
}

}  // namespace gifd

#endif  // GIFD_GRADIENT_REPORT_HPP_
