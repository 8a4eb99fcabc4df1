#ifndef GIFD_DATASET_HPP_
#define GIFD_DATASET_HPP_

#include <torch/torch.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "gifd/checkpoint.hpp"
#include "gifd/error.hpp"
#include "gifd/image_io.hpp"

namespace gifd {

enum class Split { GanTrain, FlEval };

inline std::string to_string(Split s) { return s == Split::GanTrain ? "gan-train" : "fl-eval"; }

inline Split split_from_string(const std::string& s) {
    if (s == "gan-train") return Split::GanTrain;
    if (s == "fl-eval") return Split::FlEval;
    throw ConfigError("unknown split '" + s + "'");
}

inline constexpr const char* kBuiltinShapes = "builtin:shapes10";

struct DatasetSpec {
    std::string source = kBuiltinShapes;  // built-in name or <root>/<class>/<image> directory
    int64_t resolution = 32;
    int64_t channels = 3;
    int64_t num_classes = 10;
    int64_t gan_train_size = 2000;  // built-in source only
    int64_t fl_eval_size = 500;     // built-in source only
};

/// Images in [0, 1] with labels and stable ids, in deterministic order.
struct ImageStore {
    torch::Tensor images;  // N x C x H x W, float32
    torch::Tensor labels;  // N, int64
    std::vector<std::string> ids;
    std::vector<std::string> class_names;

    int64_t size() const { return images.defined() ? images.size(0) : 0; }

    std::string digest() const {
        Sha256 h;
        h.update(images);
        h.update(labels);
        for (const auto& id : ids) h.update(id);
        return h.hex();
    }

    ImageStore subset(const std::vector<int64_t>& index) const {
        ImageStore out;
        auto idx = torch::tensor(index, torch::kInt64);
        out.images = images.index_select(0, idx);
        out.labels = labels.index_select(0, idx);
        for (auto i : index) out.ids.push_back(ids[static_cast<std::size_t>(i)]);
        out.class_names = class_names;
        return out;
    }
};

namespace detail {

inline double unit(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

inline double uniform(std::mt19937_64& rng, double lo, double hi) { return lo + (hi - lo) * unit(rng); }

// Shape membership in the shape's local frame, roughly [-1, 1]^2.
inline bool inside_shape(int64_t cls, double x, double y) {
    const double ax = std::abs(x), ay = std::abs(y);
    switch (cls) {
        case 0: return x * x + y * y <= 1.0;                                              // disk
        case 1: return ax <= 0.8 && ay <= 0.8;                                            // square
        case 2: return y <= 0.7 && y >= -0.9 && ax <= 0.85 * (y + 0.9) / 1.6;             // triangle
        case 3: return (ax <= 0.25 && ay <= 0.9) || (ay <= 0.25 && ax <= 0.9);            // plus
        case 4: { const double r = std::sqrt(x * x + y * y); return r >= 0.55 && r <= 0.95; }  // ring
        case 5: return ax <= 0.9 && ay <= 0.9 && static_cast<int>(std::floor((y + 0.9) / 0.36)) % 2 == 0;
        case 6: return ax <= 0.9 && ay <= 0.9 && static_cast<int>(std::floor((x + 0.9) / 0.36)) % 2 == 0;
        case 7: return ax <= 0.9 && ay <= 0.9 && (std::abs(x - y) <= 0.3 || std::abs(x + y) <= 0.3);  // X
        case 8: return ax + ay <= 1.0;                                                    // diamond
        default: return ax <= 0.9 && ay <= 0.9 && ((x > 0) != (y > 0));                 // checker
    }
}

/// Renders one procedural shape image; everything is derived from `id`.
inline torch::Tensor render_shape(uint64_t id, int64_t cls, int64_t res, int64_t channels) {
    std::mt19937_64 rng(0x9E3779B97F4A7C15ULL ^ (id * 0xBF58476D1CE4E5B9ULL));
    const double cx = uniform(rng, -0.25, 0.25), cy = uniform(rng, -0.25, 0.25);
    const double scale = uniform(rng, 0.45, 0.75);
    const double angle = uniform(rng, -0.35, 0.35);
    std::array<double, 3> fg{}, bg{};
    do {
        for (auto& c : fg) c = uniform(rng, 0.0, 1.0);
        for (auto& c : bg) c = uniform(rng, 0.0, 1.0);
    } while (std::abs((fg[0] + fg[1] + fg[2]) - (bg[0] + bg[1] + bg[2])) < 0.6);

    const double ca = std::cos(angle), sa = std::sin(angle);
    constexpr int kSuper = 4;
    auto img = torch::empty({channels, res, res});
    auto acc = img.accessor<float, 3>();
    for (int64_t py = 0; py < res; ++py) {
        for (int64_t px = 0; px < res; ++px) {
            int hits = 0;
            for (int sy = 0; sy < kSuper; ++sy) {
                for (int sx = 0; sx < kSuper; ++sx) {
                    const double u = 2.0 * (px + (sx + 0.5) / kSuper) / res - 1.0 - cx;
                    const double v = 2.0 * (py + (sy + 0.5) / kSuper) / res - 1.0 - cy;
                    const double x = (ca * u + sa * v) / scale, y = (-sa * u + ca * v) / scale;
                    hits += inside_shape(cls, x, y) ? 1 : 0;
                }
            }
            const double cover = static_cast<double>(hits) / (kSuper * kSuper);
            std::array<double, 3> rgb{};
            for (int c = 0; c < 3; ++c) rgb[c] = cover * fg[c] + (1.0 - cover) * bg[c];
            if (channels == 1) {
                acc[0][py][px] = static_cast<float>(0.299 * rgb[0] + 0.587 * rgb[1] + 0.114 * rgb[2]);
            } else {
                for (int c = 0; c < 3; ++c) acc[c][py][px] = static_cast<float>(rgb[c]);
            }
        }
    }
    return img;
}

inline ImageStore load_builtin_shapes(const DatasetSpec& spec, Split split) {
    if (spec.num_classes != 10) throw ConfigError("builtin:shapes10 has exactly 10 classes");
    if (spec.channels != 1 && spec.channels != 3) throw ConfigError("channels must be 1 or 3");
    if (spec.resolution < 8) throw ConfigError("resolution must be at least 8");
    const int64_t begin = split == Split::GanTrain ? 0 : spec.gan_train_size;
    const int64_t count = split == Split::GanTrain ? spec.gan_train_size : spec.fl_eval_size;
    if (count < 1) throw ConfigError("empty " + to_string(split) + " split");
    ImageStore store;
    store.images = torch::empty({count, spec.channels, spec.resolution, spec.resolution});
    store.labels = torch::empty({count}, torch::kInt64);
    for (int64_t i = 0; i < count; ++i) {
        const int64_t id = begin + i;
        const int64_t cls = id % 10;
        store.images[i].copy_(render_shape(static_cast<uint64_t>(id), cls, spec.resolution, spec.channels));
        store.labels[i] = cls;
        store.ids.push_back("shapes10/" + std::to_string(id));
    }
    store.class_names = {"disk", "square", "triangle", "plus", "ring", "hbars", "vbars", "cross", "diamond", "checker"};
    return store;
}

// Folder source: every fifth image of each class (sorted by name) goes to fl-eval.
inline ImageStore load_folder(const DatasetSpec& spec, Split split) {
    const fs::path root(spec.source);
    if (!fs::is_directory(root)) throw RuntimeFailure("dataset source " + root.string() + " does not exist");
    std::vector<fs::path> classes;
    for (const auto& e : fs::directory_iterator(root)) {
        if (e.is_directory()) classes.push_back(e.path());
    }
    std::sort(classes.begin(), classes.end());
    if (static_cast<int64_t>(classes.size()) != spec.num_classes) {
        throw ConfigError("dataset has " + std::to_string(classes.size()) + " class folders, expected " +
                          std::to_string(spec.num_classes));
    }
    ImageStore store;
    std::vector<torch::Tensor> images;
    std::vector<int64_t> labels;
    for (std::size_t c = 0; c < classes.size(); ++c) {
        store.class_names.push_back(classes[c].filename().string());
        std::vector<fs::path> files;
        for (const auto& e : fs::directory_iterator(classes[c])) {
            if (e.is_regular_file() && e.path().extension() == ".png") files.push_back(e.path());
        }
        std::sort(files.begin(), files.end());
        for (std::size_t i = 0; i < files.size(); ++i) {
            const bool eval = i % 5 == 4;
            if (eval != (split == Split::FlEval)) continue;
            auto img = load_png(files[i], spec.channels);
            if (img.size(1) != spec.resolution || img.size(2) != spec.resolution) {
                throw ConfigError("image " + files[i].string() + " does not match resolution " +
                                  std::to_string(spec.resolution));
            }
            images.push_back(img);
            labels.push_back(static_cast<int64_t>(c));
            store.ids.push_back(classes[c].filename().string() + "/" + files[i].filename().string());
        }
    }
    if (images.empty()) throw RuntimeFailure("no images found for split " + to_string(split));
    store.images = torch::stack(images);
    store.labels = torch::tensor(labels, torch::kInt64);
    return store;
}

}  // namespace detail

/// Loads one split of a dataset. Built-in ids are disjoint index ranges; the
/// folder source splits each class deterministically by sorted file name.
inline ImageStore load_dataset(const DatasetSpec& spec, Split split) {
    if (spec.source == kBuiltinShapes) return detail::load_builtin_shapes(spec, split);
    if (spec.source.rfind("builtin:", 0) == 0) throw ConfigError("unknown built-in dataset '" + spec.source + "'");
    return detail::load_folder(spec, split);
}

}  // namespace gifd

#endif  // GIFD_DATASET_HPP_
