#ifndef GIFD_LABELS_HPP_
#define GIFD_LABELS_HPP_

#include <torch/torch.h>

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "gifd/error.hpp"
#include "gifd/gradient_report.hpp"
#include "gifd/models.hpp"

namespace gifd {

namespace detail {

inline torch::Tensor fc_gradient(const GradientReport& report, const std::string& fc_layer) {
    auto w = report.at(fc_layer).detach().to(torch::kFloat64);
    if (w.dim() != 2) throw InputError("classification layer gradient must be a matrix");
    return w;
}

}  // namespace detail

/// Label of a single-image exchange from the sign structure of the
/// classification-layer gradient: the row whose inner product with every
/// other row is non-positive. Falls back to the row with the smallest sum
/// when no unique row qualifies.
inline int64_t extract_label_single(const GradientReport& report,
                                    const std::string& fc_layer = ClassifierImpl::kFcWeight) {
    auto w = detail::fc_gradient(report, fc_layer);
    if (w.abs().max().item<double>() == 0.0) throw ExtractionError("classification-layer gradient is all zero");
    auto gram = w.matmul(w.t());
    const int64_t classes = w.size(0);
    std::vector<int64_t> qualifying;
    for (int64_t i = 0; i < classes; ++i) {
        bool ok = true;
        for (int64_t j = 0; j < classes && ok; ++j) {
            if (j != i && gram[i][j].item<double>() > 0.0) ok = false;
        }
        if (ok) qualifying.push_back(i);
    }
    if (qualifying.size() == 1) return qualifying.front();
    return w.sum(1).argmin().item<int64_t>();
}

inline int64_t extract_label_single(const GradientReport& report, const Classifier& classifier) {
    (void)classifier;
    return extract_label_single(report, ClassifierImpl::kFcWeight);
}

/// Labels of a batch with no repeated labels: the `batch_size` classes whose
/// gradient rows reach the most negative minimum, returned in ascending order.
inline std::vector<int64_t> extract_labels_batch(const GradientReport& report, int64_t batch_size,
                                                 const std::string& fc_layer = ClassifierImpl::kFcWeight) {
    auto w = detail::fc_gradient(report, fc_layer);
    const int64_t classes = w.size(0);
    if (batch_size < 1) throw InputError("batch size must be >= 1");
    if (batch_size > classes) {
        throw InputError("batch size " + std::to_string(batch_size) + " exceeds the class count " + std::to_string(classes));
    }
    if (w.abs().max().item<double>() == 0.0) throw ExtractionError("classification-layer gradient is all zero");
    auto minima = std::get<0>(w.min(1));
    std::vector<double> m(static_cast<std::size_t>(classes));
    for (int64_t i = 0; i < classes; ++i) m[static_cast<std::size_t>(i)] = minima[i].item<double>();
    std::vector<int64_t> order(static_cast<std::size_t>(classes));
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int64_t a, int64_t b) { return m[a] < m[b]; });
    std::vector<int64_t> out(order.begin(), order.begin() + batch_size);
    std::sort(out.begin(), out.end());
    return out;
}

inline std::vector<int64_t> extract_labels_batch(const GradientReport& report, const Classifier& classifier,
                                                 int64_t batch_size) {
    (void)classifier;
    return extract_labels_batch(report, batch_size, ClassifierImpl::kFcWeight);
}

/// Single-image rule for B = 1, batch rule otherwise.
inline std::vector<int64_t> extract_labels(const GradientReport& report, int64_t batch_size) {
    if (batch_size == 1) return {extract_label_single(report)};
    return extract_labels_batch(report, batch_size);
}

}  // namespace gifd

#endif  // GIFD_LABELS_HPP_
