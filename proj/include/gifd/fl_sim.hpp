#ifndef GIFD_FL_SIM_HPP_
#define GIFD_FL_SIM_HPP_

#include <torch/torch.h>

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "gifd/checkpoint.hpp"
#include "gifd/defense.hpp"
#include "gifd/error.hpp"
#include "gifd/gradient_report.hpp"
#include "gifd/models.hpp"

namespace gifd {

/// A client's private batch: images in [0, 1] and labels.
struct ClientBatch {
    torch::Tensor images;  // B x C x H x W
    torch::Tensor labels;  // B, int64

    int64_t size() const { return images.defined() ? images.size(0) : 0; }

    void validate(int64_t num_classes) const {
        if (!images.defined() || images.dim() != 4 || images.size(0) < 1) throw InputError("client batch must hold B >= 1 images");
        if (labels.dim() != 1 || labels.size(0) != images.size(0)) throw InputError("one label per image required");
        if (labels.min().item<int64_t>() < 0 || labels.max().item<int64_t>() >= num_classes) {
            throw InputError("client batch label outside [0, L)");
        }
    }
};

/// One simulated gradient exchange. `report` is the public view; `truth` and
/// `defense` are evaluation-only and are stored in a separate file.
struct ExchangeRecord {
    GradientReport report;
    ClientBatch truth;
    DefenseConfig defense;
};

/// Client side of one FL step: full-batch gradient, then the defense.
inline ExchangeRecord produce_exchange(Classifier& classifier, const ClientBatch& batch, const DefenseConfig& defense,
                                       uint64_t seed) {
    defense.validate();
    batch.validate(classifier->config().num_classes);
    auto raw = compute_batch_gradients(classifier, batch.images, batch.labels);
    ExchangeRecord rec;
    rec.report = apply_defense(raw, defense, seed);
    rec.truth = {batch.images.detach().clone(), batch.labels.clone()};
    rec.defense = defense;
    return rec;
}

// ---------------------------------------------------------------------------
// Serialization: 8-byte magic, little-endian u64 header length, JSON header,
// then raw float32 payloads in header order.

inline constexpr char kGradMagic[8] = {'G', 'I', 'F', 'D', 'G', 'R', 'D', '1'};
inline constexpr char kTruthMagic[8] = {'G', 'I', 'F', 'D', 'T', 'R', 'U', '1'};

namespace detail {

inline void write_container(const fs::path& path, const char (&magic)[8], const json& header,
                            const std::vector<torch::Tensor>& payload) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw RuntimeFailure("cannot write " + path.string());
    const auto text = header.dump();
    const uint64_t len = text.size();
    out.write(magic, 8);
    out.write(reinterpret_cast<const char*>(&len), sizeof len);
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& t : payload) {
        auto c = t.detach().to(torch::kFloat32).contiguous();
        out.write(static_cast<const char*>(c.data_ptr()), static_cast<std::streamsize>(c.numel() * sizeof(float)));
    }
}

inline json read_container_header(std::ifstream& in, const fs::path& path, const char (&magic)[8]) {
    char got[8];
    uint64_t len = 0;
    in.read(got, 8);
    in.read(reinterpret_cast<char*>(&len), sizeof len);
    if (!in || std::memcmp(got, magic, 8) != 0) throw RuntimeFailure(path.string() + " has an unexpected file type");
    if (len > (1u << 26)) throw RuntimeFailure(path.string() + " has an implausible header");
    std::string text(len, '\0');
    in.read(text.data(), static_cast<std::streamsize>(len));
    if (!in) throw RuntimeFailure(path.string() + " is truncated");
    try {
        return json::parse(text);
    } catch (const json::exception& e) {
        throw RuntimeFailure(path.string() + " has a corrupt header: " + e.what());
    }
}

inline torch::Tensor read_payload(std::ifstream& in, const fs::path& path, const std::vector<int64_t>& shape) {
    auto t = torch::empty(shape, torch::kFloat32);
    in.read(static_cast<char*>(t.data_ptr()), static_cast<std::streamsize>(t.numel() * sizeof(float)));
    if (!in) throw RuntimeFailure(path.string() + " is truncated");
    return t;
}

}  // namespace detail

/// Writes the public report (`exchange.grad`).
inline void save_report(const GradientReport& report, const fs::path& path) {
    json layers = json::array();
    std::vector<torch::Tensor> payload;
    for (const auto& e : report.entries) {
        layers.push_back({{"name", e.name}, {"shape", e.grad.sizes().vec()}});
        payload.push_back(e.grad);
    }
    json header = {{"batch_size", report.batch_size},
                   {"image_shape", std::vector<int64_t>(report.image_shape.begin(), report.image_shape.end())},
                   {"num_classes", report.num_classes},
                   {"layers", layers}};
    detail::write_container(path, kGradMagic, header, payload);
}

/// Reads a public report. Ground-truth files are refused by extension and by
/// content, so attack code cannot be pointed at them by mistake.
inline GradientReport load_report(const fs::path& path) {
    if (path.extension() == ".truth") throw ConfigError("refusing to open ground-truth file " + path.string());
    std::ifstream in(path, std::ios::binary);
    if (!in) throw RuntimeFailure("cannot open " + path.string());
    char peek[8];
    in.read(peek, 8);
    if (in && std::memcmp(peek, kTruthMagic, 8) == 0) throw ConfigError("refusing to open ground-truth file " + path.string());
    in.seekg(0);
    const auto header = detail::read_container_header(in, path, kGradMagic);
    GradientReport report;
    report.batch_size = header.at("batch_size").get<int64_t>();
    const auto shape = header.at("image_shape").get<std::vector<int64_t>>();
    if (shape.size() != 3) throw RuntimeFailure(path.string() + " has a bad image shape");
    report.image_shape = {shape[0], shape[1], shape[2]};
    report.num_classes = header.at("num_classes").get<int64_t>();
    for (const auto& layer : header.at("layers")) {
        report.entries.push_back(
            {layer.at("name").get<std::string>(), detail::read_payload(in, path, layer.at("shape").get<std::vector<int64_t>>())});
    }
    if (!report.all_finite()) throw RuntimeFailure(path.string() + " contains non-finite gradients");
    return report;
}

/// Writes the evaluation-only ground truth (`exchange.truth`).
inline void save_truth(const ExchangeRecord& rec, const fs::path& path) {
    json header = {{"images_shape", rec.truth.images.sizes().vec()},
                   {"labels", std::vector<int64_t>(rec.truth.labels.data_ptr<int64_t>(),
                                                   rec.truth.labels.data_ptr<int64_t>() + rec.truth.labels.numel())},
                   {"defense", rec.defense.to_json()}};
    detail::write_container(path, kTruthMagic, header, {rec.truth.images});
}

inline ExchangeRecord load_truth(const fs::path& path, ExchangeRecord rec = {}) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw RuntimeFailure("cannot open " + path.string());
    const auto header = detail::read_container_header(in, path, kTruthMagic);
    rec.truth.images = detail::read_payload(in, path, header.at("images_shape").get<std::vector<int64_t>>());
    rec.truth.labels = torch::tensor(header.at("labels").get<std::vector<int64_t>>(), torch::kInt64);
    rec.defense = DefenseConfig::from_json(header.at("defense"));
    return rec;
}

/// Writes `exchange.grad` and `exchange.truth` into `dir`.
inline void save_exchange(const ExchangeRecord& rec, const fs::path& dir) {
    fs::create_directories(dir);
    save_report(rec.report, dir / "exchange.grad");
    save_truth(rec, dir / "exchange.truth");
}

/// Digest of a report's names, shapes and values.
inline std::string report_digest(const GradientReport& report) {
    Sha256 h;
    for (const auto& e : report.entries) {
        h.update(e.name);
        for (auto d : e.grad.sizes()) h.update(&d, sizeof d);
        h.update(e.grad.to(torch::kFloat32));
    }
    return h.hex();
}

}  // namespace gifd

#endif  // GIFD_FL_SIM_HPP_
