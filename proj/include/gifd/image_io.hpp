#ifndef GIFD_IMAGE_IO_HPP_
#define GIFD_IMAGE_IO_HPP_

#include <png.h>
#include <torch/torch.h>

#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include "gifd/error.hpp"

namespace gifd {

namespace fs = std::filesystem;

/// Writes a C x H x W image in [0, 1] as an 8-bit PNG (C = 1 or 3).
inline void save_png(const fs::path& path, const torch::Tensor& image) {
    if (image.dim() != 3 || (image.size(0) != 1 && image.size(0) != 3)) {
        throw InputError("save_png expects a 1- or 3-channel C x H x W image");
    }
    const auto channels = image.size(0);
    auto bytes = image.detach()
                     .to(torch::kFloat64)
                     .clamp(0.0, 1.0)
                     .mul(255.0)
                     .round()
                     .to(torch::kUInt8)
                     .permute({1, 2, 0})
                     .contiguous();
    png_image img{};
    img.version = PNG_IMAGE_VERSION;
    img.width = static_cast<png_uint_32>(image.size(2));
    img.height = static_cast<png_uint_32>(image.size(1));
    img.format = channels == 1 ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
    if (!png_image_write_to_file(&img, path.c_str(), 0, bytes.data_ptr<uint8_t>(), 0, nullptr)) {
        throw RuntimeFailure("cannot write PNG " + path.string() + ": " + img.message);
    }
}

/// Reads a PNG into a C x H x W float tensor in [0, 1]. `channels` selects
/// gray (1) or RGB (3) conversion.
inline torch::Tensor load_png(const fs::path& path, int64_t channels = 3) {
    png_image img{};
    img.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&img, path.c_str())) {
        throw RuntimeFailure("cannot read PNG " + path.string() + ": " + img.message);
    }
    img.format = channels == 1 ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
    auto buffer = torch::empty({static_cast<int64_t>(img.height), static_cast<int64_t>(img.width), channels},
                               torch::kUInt8);
    if (!png_image_finish_read(&img, nullptr, buffer.data_ptr<uint8_t>(), 0, nullptr)) {
        png_image_free(&img);
        throw RuntimeFailure("corrupt PNG " + path.string() + ": " + img.message);
    }
    return buffer.permute({2, 0, 1}).to(torch::kFloat32).div(255.0).contiguous();
}

/// Saves a B x C x H x W batch as `<prefix>_000.png`, `<prefix>_001.png`, ...
inline std::vector<fs::path> save_images(const torch::Tensor& images, const fs::path& dir,
                                         const std::string& prefix = "recon") {
    if (images.dim() != 4) throw InputError("save_images expects a B x C x H x W batch");
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec || !fs::is_directory(dir)) throw RuntimeFailure("cannot create directory " + dir.string());
    std::vector<fs::path> paths;
    for (int64_t b = 0; b < images.size(0); ++b) {
        char name[64];
        std::snprintf(name, sizeof name, "%s_%03lld.png", prefix.c_str(), static_cast<long long>(b));
        paths.push_back(dir / name);
        save_png(paths.back(), images[b]);
    }
    return paths;
}

/// Tiles a batch into one grid image (rows of `per_row`).
inline torch::Tensor image_grid(const torch::Tensor& images, int64_t per_row = 8) {
    const auto n = images.size(0);
    const auto c = images.size(1), h = images.size(2), w = images.size(3);
    const auto rows = (n + per_row - 1) / per_row;
    auto grid = torch::ones({c, rows * (h + 2), per_row * (w + 2)});
    for (int64_t i = 0; i < n; ++i) {
        const auto r = i / per_row, col = i % per_row;
        grid.slice(1, r * (h + 2) + 1, r * (h + 2) + 1 + h).slice(2, col * (w + 2) + 1, col * (w + 2) + 1 + w).copy_(images[i]);
    }
    return grid;
}

}  // namespace gifd

#endif  // GIFD_IMAGE_IO_HPP_
