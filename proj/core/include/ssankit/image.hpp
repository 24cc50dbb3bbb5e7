#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "ssankit/tensor.hpp"

namespace ssankit {

// 8-bit interleaved RGB image, row-major.
struct Image {
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<std::uint8_t> rgb;

    Image() = default;
    Image(std::size_t h, std::size_t w) : height(h), width(w), rgb(h * w * 3, 0) {}

    std::uint8_t& at(std::size_t y, std::size_t x, std::size_t c) { return rgb[(y * width + x) * 3 + c]; }
    std::uint8_t at(std::size_t y, std::size_t x, std::size_t c) const { return rgb[(y * width + x) * 3 + c]; }

    bool operator==(const Image&) const = default;
};

Image read_png(const std::filesystem::path& path);
void write_png(const std::filesystem::path& path, const Image& image);

Image resize_bilinear(const Image& image, std::size_t height, std::size_t width);
Image flip_horizontal(const Image& image);

// Channel-first float tensor {3, H, W} normalized with ImageNet statistics.
Tensor image_to_tensor(const Image& image);

} // namespace ssankit
