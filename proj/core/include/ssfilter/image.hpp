#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace ssf {

/// Interleaved (HWC) float image with values nominally in [0, 1].
struct Image {
    int width = 0;
    int height = 0;
    int channels = 0;
    std::vector<float> pixels;

    Image() = default;
    Image(int w, int h, int c, float fill = 0.0f)
        : width(w), height(h), channels(c), pixels(static_cast<size_t>(w) * h * c, fill) {}

    bool empty() const noexcept { return pixels.empty(); }
    size_t index(int x, int y, int c = 0) const noexcept {
        return (static_cast<size_t>(y) * width + x) * channels + c;
    }
    float& at(int x, int y, int c = 0) noexcept { return pixels[index(x, y, c)]; }
    float at(int x, int y, int c = 0) const noexcept { return pixels[index(x, y, c)]; }

    bool operator==(const Image&) const = default;
};

/// Row-major boolean grid; used for masks at feature or image resolution.
struct BinaryGrid {
    int width = 0;
    int height = 0;
    std::vector<uint8_t> cells;

    BinaryGrid() = default;
    BinaryGrid(int w, int h, bool fill = false)
        : width(w), height(h), cells(static_cast<size_t>(w) * h, fill ? 1 : 0) {}

    bool at(int x, int y) const noexcept { return cells[static_cast<size_t>(y) * width + x] != 0; }
    void set(int x, int y, bool v) noexcept { cells[static_cast<size_t>(y) * width + x] = v ? 1 : 0; }
    size_t count() const noexcept;
    bool operator==(const BinaryGrid&) const = default;
};

/// Reads 8/16-bit gray, gray+alpha, RGB or RGBA PNG files. Alpha is dropped.
Image read_png(const std::filesystem::path& path);
void write_png(const std::filesystem::path& path, const Image& image);

/// Nonzero pixels of a grayscale PNG become true cells.
BinaryGrid read_mask_png(const std::filesystem::path& path);
void write_mask_png(const std::filesystem::path& path, const BinaryGrid& mask);

Image resize_bilinear(const Image& src, int width, int height);
Image center_crop(const Image& src, int width, int height);

/// Resize to a `resize`-sided square, then center-crop to `crop`.
Image preprocess(const Image& src, int resize, int crop);

BinaryGrid upsample_nearest(const BinaryGrid& grid, int width, int height);

/// Bilinear upsampling of a single-channel map stored row-major.
std::vector<float> upsample_map_bilinear(std::span<const float> map, int width, int height,
                                         int out_width, int out_height);

/// Separable Gaussian blur with reflect padding; sigma <= 0 returns the input.
std::vector<float> gaussian_blur(std::span<const float> map, int width, int height, float sigma);

}  // namespace ssf
