#ifndef GIFD_CHECKPOINT_HPP_
#define GIFD_CHECKPOINT_HPP_

#include <openssl/evp.h>
#include <torch/torch.h>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "gifd/error.hpp"
#include "gifd/models.hpp"
#include "json.hpp"

namespace gifd {

namespace fs = std::filesystem;
using json = nlohmann::json;

/// Incremental SHA-256 used for checkpoint and report digests.
class Sha256 {
public:
    Sha256() : ctx_(EVP_MD_CTX_new(), &EVP_MD_CTX_free) {
        if (!ctx_ || EVP_DigestInit_ex(ctx_.get(), EVP_sha256(), nullptr) != 1) {
            throw RuntimeFailure("cannot initialise SHA-256");
        }
    }

    Sha256& update(const void* data, std::size_t size) {
        EVP_DigestUpdate(ctx_.get(), data, size);
        return *this;
    }
    Sha256& update(const std::string& s) { return update(s.data(), s.size()); }
    Sha256& update(const torch::Tensor& t) {
        auto c = t.detach().contiguous();
        return update(c.data_ptr(), c.numel() * c.element_size());
    }

    std::string hex() {
        unsigned char out[EVP_MAX_MD_SIZE];
        unsigned int len = 0;
        EVP_DigestFinal_ex(ctx_.get(), out, &len);
        std::ostringstream os;
        for (unsigned int i = 0; i < len; ++i) os << std::hex << std::setw(2) << std::setfill('0') << int(out[i]);
        return os.str();
    }

private:
    std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx_;
};

inline std::string dtype_name(torch::Dtype d) {
    switch (d) {
        case torch::kFloat32: return "float32";
        case torch::kFloat64: return "float64";
        case torch::kInt64: return "int64";
        case torch::kUInt8: return "uint8";
        case torch::kBool: return "bool";
        default: throw InputError("unsupported tensor dtype for serialization");
    }
}

inline torch::Dtype dtype_from_name(const std::string& s) {
    if (s == "float32") return torch::kFloat32;
    if (s == "float64") return torch::kFloat64;
    if (s == "int64") return torch::kInt64;
    if (s == "uint8") return torch::kUInt8;
    if (s == "bool") return torch::kBool;
    throw InputError("unknown dtype '" + s + "'");
}

inline void write_raw_tensor(const fs::path& path, const torch::Tensor& t) {
    auto c = t.detach().contiguous();
    std::ofstream out(path, std::ios::binary);
    if (!out) throw RuntimeFailure("cannot write " + path.string());
    out.write(static_cast<const char*>(c.data_ptr()), static_cast<std::streamsize>(c.numel() * c.element_size()));
}

inline torch::Tensor read_raw_tensor(const fs::path& path, const std::vector<int64_t>& shape, torch::Dtype dtype) {
    auto t = torch::empty(shape, torch::TensorOptions().dtype(dtype));
    const auto bytes = static_cast<std::streamsize>(t.numel() * t.element_size());
    std::ifstream in(path, std::ios::binary | std::ios::ate);
    if (!in) throw RuntimeFailure("cannot read " + path.string());
    if (in.tellg() != bytes) throw RuntimeFailure("tensor file " + path.string() + " has the wrong size");
    in.seekg(0);
    in.read(static_cast<char*>(t.data_ptr()), bytes);
    return t;
}

inline std::vector<std::pair<std::string, torch::Tensor>> module_state(const torch::nn::Module& m) {
    std::vector<std::pair<std::string, torch::Tensor>> out;
    for (const auto& p : m.named_parameters()) out.emplace_back(p.key(), p.value());
    for (const auto& b : m.named_buffers()) out.emplace_back(b.key(), b.value());
    return out;
}

/// Digest of a module's parameters and buffers (names, shapes and bytes).
inline std::string state_digest(const torch::nn::Module& m) {
    Sha256 h;
    for (const auto& [name, t] : module_state(m)) {
        h.update(name);
        for (auto d : t.sizes()) h.update(&d, sizeof d);
        h.update(t);
    }
    return h.hex();
}

inline json to_json(const GeneratorConfig& c) {
    return {{"latent_dim", c.latent_dim}, {"channels", c.channels},       {"base_size", c.base_size},
            {"widths", c.widths},         {"num_classes", c.num_classes}, {"noise", c.noise}};
}

inline GeneratorConfig generator_config_from_json(const json& j) {
    GeneratorConfig c;
    c.latent_dim = j.at("latent_dim").get<int64_t>();
    c.channels = j.at("channels").get<int64_t>();
    c.base_size = j.at("base_size").get<int64_t>();
    c.widths = j.at("widths").get<std::vector<int64_t>>();
    c.num_classes = j.value("num_classes", int64_t{0});
    c.noise = j.value("noise", false);
    return c;
}

inline json to_json(const ClassifierConfig& c) {
    return {{"channels", c.channels}, {"image_size", c.image_size}, {"num_classes", c.num_classes}, {"widths", c.widths},
            {"global_pool", c.global_pool}};
}

inline ClassifierConfig classifier_config_from_json(const json& j) {
    ClassifierConfig c;
    c.channels = j.at("channels").get<int64_t>();
    c.image_size = j.at("image_size").get<int64_t>();
    c.num_classes = j.at("num_classes").get<int64_t>();
    c.widths = j.at("widths").get<std::vector<int64_t>>();
    c.global_pool = j.value("global_pool", false);
    return c;
}

/// Writes `<dir>/manifest.json` plus one raw tensor file per parameter/buffer.
/// The manifest carries no timestamps, so identical states give identical files.
inline void save_module_checkpoint(const torch::nn::Module& module, const std::string& kind, const json& architecture,
                                   uint64_t seed, const fs::path& dir) {
    fs::create_directories(dir / "tensors");
    json tensors = json::array();
    for (const auto& [name, t] : module_state(module)) {
        const auto file = "tensors/" + name + ".bin";
        write_raw_tensor(dir / file, t);
        tensors.push_back({{"name", name}, {"file", file}, {"dtype", dtype_name(t.scalar_type())}, {"shape", t.sizes().vec()}});
    }
    json manifest = {{"kind", kind},       {"architecture", architecture}, {"seed", seed},
                     {"tensors", tensors}, {"digest", state_digest(module)}, {"format_version", 1}};
    std::ofstream out(dir / "manifest.json");
    if (!out) throw RuntimeFailure("cannot write manifest in " + dir.string());
    out << manifest.dump(2) << '\n';
}

inline json read_manifest(const fs::path& dir) {
    std::ifstream in(dir / "manifest.json");
    if (!in) throw RuntimeFailure("no checkpoint manifest in " + dir.string());
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw RuntimeFailure("corrupt manifest in " + dir.string() + ": " + e.what());
    }
}

/// Loads tensors listed in the manifest into `module`, validating every name,
/// dtype and shape against both the manifest and the module.
inline void load_module_checkpoint(torch::nn::Module& module, const json& manifest, const fs::path& dir) {
    auto state = module_state(module);
    const auto& tensors = manifest.at("tensors");
    if (tensors.size() != state.size()) throw RuntimeFailure("checkpoint tensor count does not match the architecture");
    torch::NoGradGuard guard;
    for (std::size_t i = 0; i < state.size(); ++i) {
        const auto& entry = tensors[i];
        auto& [name, target] = state[i];
        if (entry.at("name").get<std::string>() != name) {
            throw RuntimeFailure("checkpoint tensor '" + entry.at("name").get<std::string>() + "' does not match '" + name + "'");
        }
        const auto shape = entry.at("shape").get<std::vector<int64_t>>();
        if (shape != target.sizes().vec()) throw RuntimeFailure("shape mismatch for checkpoint tensor '" + name + "'");
        const auto dtype = dtype_from_name(entry.at("dtype").get<std::string>());
        if (dtype != target.scalar_type()) throw RuntimeFailure("dtype mismatch for checkpoint tensor '" + name + "'");
        target.copy_(read_raw_tensor(dir / entry.at("file").get<std::string>(), shape, dtype));
    }
    if (manifest.contains("digest") && manifest.at("digest").get<std::string>() != state_digest(module)) {
        throw RuntimeFailure("checkpoint digest mismatch in " + dir.string());
    }
}

inline void save_generator(const LayeredGenerator& g, uint64_t seed, const fs::path& dir) {
    save_module_checkpoint(*g, "layered_generator", to_json(g->config()), seed, dir);
}

inline LayeredGenerator load_generator(const fs::path& dir) {
    const auto manifest = read_manifest(dir);
    if (manifest.value("kind", "") != "layered_generator") throw RuntimeFailure(dir.string() + " is not a generator checkpoint");
    LayeredGenerator g(generator_config_from_json(manifest.at("architecture")));
    load_module_checkpoint(*g, manifest, dir);
    g->eval();
    return g;
}

inline void save_classifier(const Classifier& c, uint64_t seed, const fs::path& dir) {
    save_module_checkpoint(*c, "classifier", to_json(c->config()), seed, dir);
}

inline Classifier load_classifier(const fs::path& dir) {
    const auto manifest = read_manifest(dir);
    if (manifest.value("kind", "") != "classifier") throw RuntimeFailure(dir.string() + " is not a classifier checkpoint");
    Classifier c(classifier_config_from_json(manifest.at("architecture")));
    load_module_checkpoint(*c, manifest, dir);
    c->eval();
    return c;
}

/// SHA-256 of a file's bytes.
inline std::string file_digest(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw RuntimeFailure("cannot read " + path.string());
    Sha256 h;
    std::vector<char> buf(1 << 16);
    while (in) {
        in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
        h.update(buf.data(), static_cast<std::size_t>(in.gcount()));
    }
    return h.hex();
}

}  // namespace gifd

#endif  // GIFD_CHECKPOINT_HPP_
