#include "ssfilter/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>
#include <numeric>

#include "ssfilter/errors.hpp"

namespace ssf {

size_t BinaryGrid::count() const noexcept {
    return static_cast<size_t>(std::count(cells.begin(), cells.end(), uint8_t{1}));
}

namespace {

struct FileCloser {
    void operator()(std::FILE* f) const noexcept {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

}  // namespace

Image read_png(const std::filesystem::path& path) {
    FilePtr fp(std::fopen(path.c_str(), "rb"));
    if (!fp) throw IoError(path.string(), "cannot open image");

    unsigned char sig[8];
    if (std::fread(sig, 1, 8, fp.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0)
        throw IoError(path.string(), "not a PNG file");

    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw IoError(path.string(), "libpng initialisation failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw IoError(path.string(), "corrupt PNG data");
    }
    png_init_io(png, fp.get());
    png_set_sig_bytes(png, 8);
    png_read_info(png, info);

    png_set_strip_16(png);
    png_set_strip_alpha(png);
    png_set_packing(png);
    png_set_palette_to_rgb(png);
    png_set_expand_gray_1_2_4_to_8(png);
    png_read_update_info(png, info);

    const int w = static_cast<int>(png_get_image_width(png, info));
    const int h = static_cast<int>(png_get_image_height(png, info));
    const int c = static_cast<int>(png_get_channels(png, info));
    std::vector<png_byte> raw(static_cast<size_t>(w) * h * c);
    std::vector<png_bytep> rows(h);
    for (int y = 0; y < h; ++y) rows[y] = raw.data() + static_cast<size_t>(y) * w * c;
    png_read_image(png, rows.data());
    png_destroy_read_struct(&png, &info, nullptr);

    Image img(w, h, c);
    std::transform(raw.begin(), raw.end(), img.pixels.begin(),
                   [](png_byte b) { return static_cast<float>(b) / 255.0f; });
    return img;
}

void write_png(const std::filesystem::path& path, const Image& image) {
    if (image.channels != 1 && image.channels != 3)
        throw InputError("write_png supports 1 or 3 channels");
    FilePtr fp(std::fopen(path.c_str(), "wb"));
    if (!fp) throw IoError(path.string(), "cannot write image");

    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_write_struct(&png, &info);
        throw IoError(path.string(), "libpng initialisation failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw IoError(path.string(), "PNG encoding failed");
    }
    png_init_io(png, fp.get());
    png_set_IHDR(png, info, image.width, image.height, 8,
                 image.channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);

    std::vector<png_byte> row(static_cast<size_t>(image.width) * image.channels);
    for (int y = 0; y < image.height; ++y) {
        for (size_t i = 0; i < row.size(); ++i) {
            const float v = image.pixels[static_cast<size_t>(y) * row.size() + i];
            row[i] = static_cast<png_byte>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
        }
        png_write_row(png, row.data());
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

BinaryGrid read_mask_png(const std::filesystem::path& path) {
    const Image img = read_png(path);
    BinaryGrid mask(img.width, img.height);
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x) mask.set(x, y, img.at(x, y, 0) > 0.0f);
    return mask;
}

void write_mask_png(const std::filesystem::path& path, const BinaryGrid& mask) {
    Image img(mask.width, mask.height, 1);
    for (size_t i = 0; i < mask.cells.size(); ++i) img.pixels[i] = mask.cells[i] ? 1.0f : 0.0f;
    write_png(path, img);
}

Image resize_bilinear(const Image& src, int width, int height) {
    if (src.width == width && src.height == height) return src;
    if (src.empty() || width <= 0 || height <= 0) throw InputError("resize of empty image");
    Image dst(width, height, src.channels);
    const float sx = static_cast<float>(src.width) / width;
    const float sy = static_cast<float>(src.height) / height;
    for (int y = 0; y < height; ++y) {
        // half-pixel centres, matching align_corners=False
        const float fy = std::max(0.0f, (y + 0.5f) * sy - 0.5f);
        const int y0 = std::min(static_cast<int>(fy), src.height - 1);
        const int y1 = std::min(y0 + 1, src.height - 1);
        const float wy = fy - y0;
        for (int x = 0; x < width; ++x) {
            const float fx = std::max(0.0f, (x + 0.5f) * sx - 0.5f);
            const int x0 = std::min(static_cast<int>(fx), src.width - 1);
            const int x1 = std::min(x0 + 1, src.width - 1);
            const float wx = fx - x0;
            for (int c = 0; c < src.channels; ++c) {
                const float top = src.at(x0, y0, c) * (1 - wx) + src.at(x1, y0, c) * wx;
                const float bot = src.at(x0, y1, c) * (1 - wx) + src.at(x1, y1, c) * wx;
                dst.at(x, y, c) = top * (1 - wy) + bot * wy;
            }
        }
    }
    return dst;
}

Image center_crop(const Image& src, int width, int height) {
    if (width > src.width || height > src.height)
        throw InputError("crop larger than image");
    const int ox = (src.width - width) / 2;
    const int oy = (src.height - height) / 2;
    Image dst(width, height, src.channels);
    for (int y = 0; y < height; ++y)
        for (int x = 0; x < width; ++x)
            for (int c = 0; c < src.channels; ++c) dst.at(x, y, c) = src.at(x + ox, y + oy, c);
    return dst;
}

Image preprocess(const Image& src, int resize, int crop) {
    Image out = resize_bilinear(src, resize, resize);
    if (crop != resize) out = center_crop(out, crop, crop);
    if (out.channels == 1) {
        Image rgb(out.width, out.height, 3);
        for (size_t i = 0; i < out.pixels.size(); ++i)
            for (int c = 0; c < 3; ++c) rgb.pixels[i * 3 + c] = out.pixels[i];
        return rgb;
    }
    return out;
}

BinaryGrid upsample_nearest(const BinaryGrid& grid, int width, int height) {
    BinaryGrid out(width, height);
    for (int y = 0; y < height; ++y) {
        const int sy = std::min(grid.height - 1, y * grid.height / height);
        for (int x = 0; x < width; ++x) {
            const int sx = std::min(grid.width - 1, x * grid.width / width);
            out.set(x, y, grid.at(sx, sy));
        }
    }
    return out;
}

std::vector<float> upsample_map_bilinear(std::span<const float> map, int width, int height,
                                         int out_width, int out_height) {
    Image src(width, height, 1);
    std::copy(map.begin(), map.end(), src.pixels.begin());
    return resize_bilinear(src, out_width, out_height).pixels;
}

std::vector<float> gaussian_blur(std::span<const float> map, int width, int height, float sigma) {
    std::vector<float> out(map.begin(), map.end());
    if (sigma <= 0.0f) return out;
    const int radius = std::max(1, static_cast<int>(std::ceil(4.0f * sigma)));
    std::vector<float> kernel(2 * radius + 1);
    for (int i = -radius; i <= radius; ++i)
        kernel[i + radius] = std::exp(-0.5f * (i * i) / (sigma * sigma));
    const float norm = std::accumulate(kernel.begin(), kernel.end(), 0.0f);
    for (auto& k : kernel) k /= norm;

    auto reflect = [](int i, int n) {
        if (n == 1) return 0;
        while (i < 0 || i >= n) i = i < 0 ? -i - 1 : 2 * n - i - 1;
        return i;
    };
    std::vector<float> tmp(out.size());
    for (int y = 0; y < height; ++y)
        for (int x = 0; x < width; ++x) {
            float acc = 0;
            for (int k = -radius; k <= radius; ++k)
                acc += kernel[k + radius] * out[static_cast<size_t>(y) * width + reflect(x + k, width)];
            tmp[static_cast<size_t>(y) * width + x] = acc;
        }
    for (int y = 0; y < height; ++y)
        for (int x = 0; x < width; ++x) {
            float acc = 0;
            for (int k = -radius; k <= radius; ++k)
                acc += kernel[k + radius] * tmp[static_cast<size_t>(reflect(y + k, height)) * width + x];
            out[static_cast<size_t>(y) * width + x] = acc;
        }
    return out;
}

}  // namespace ssf
