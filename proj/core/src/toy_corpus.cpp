#include "ssfilter/toy_corpus.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <numbers>

#include "ssfilter/errors.hpp"

namespace fs = std::filesystem;

namespace ssf {

namespace {

using Rgb = std::array<float, 3>;

struct Scene {
    float cx, cy, radius, inner;  // inner > 0 for rings
    Rgb color;
    Rgb background;
    float phase;
};

float uni(std::mt19937_64& rng, float a, float b) { return std::uniform_real_distribution<float>(a, b)(rng); }

Scene make_scene(const std::string& category, int size, std::mt19937_64& rng) {
    Scene s{};
    const float c = size / 2.0f;
    s.cx = c + uni(rng, -2.0f, 2.0f);
    s.cy = c + uni(rng, -2.0f, 2.0f);
    s.radius = size * uni(rng, 0.28f, 0.31f);
    s.inner = category == "ring" ? s.radius * 0.5f : 0.0f;
    s.color = {0.82f + uni(rng, -0.03f, 0.03f), 0.62f + uni(rng, -0.03f, 0.03f), 0.30f + uni(rng, -0.03f, 0.03f)};
    s.background = {0.22f, 0.24f, 0.27f};
    s.phase = uni(rng, 0.0f, 2.0f * std::numbers::pi_v<float>);
    return s;
}

bool inside_object(const Scene& s, float x, float y) {
    const float d = std::hypot(x - s.cx, y - s.cy);
    return d <= s.radius && d >= s.inner;
}

Image render_scene(const std::string& category, const Scene& s, int size, std::mt19937_64& rng) {
    Image img(size, size, 3);
    std::normal_distribution<float> noise(0.0f, 0.015f);
    for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) {
            Rgb px;
            if (category == "tile") {
                const float t = 0.5f + 0.5f * std::sin(2.0f * std::numbers::pi_v<float> * (x * 0.866f + y * 0.5f) / 8.0f +
                                                       s.phase);
                for (int c = 0; c < 3; ++c) px[c] = s.background[c] + t * (s.color[c] - s.background[c]) * 0.7f;
            } else if (inside_object(s, x + 0.5f, y + 0.5f)) {
                const float shade = 0.92f + 0.08f * std::cos((x - s.cx) * 0.35f) * std::cos((y - s.cy) * 0.35f);
                for (int c = 0; c < 3; ++c) px[c] = s.color[c] * shade;
            } else {
                const float grad = 0.03f * static_cast<float>(y) / size;
                for (int c = 0; c < 3; ++c) px[c] = s.background[c] + grad;
            }
            for (int c = 0; c < 3; ++c) img.at(x, y, c) = std::clamp(px[c] + noise(rng), 0.0f, 1.0f);
        }
    return img;
}

/// Random point where a defect can live (on the object, or anywhere for textures).
std::pair<float, float> defect_site(const std::string& category, const Scene& s, int size, float margin,
                                    std::mt19937_64& rng) {
    for (int tries = 0; tries < 1000; ++tries) {
        const float x = uni(rng, margin, size - margin), y = uni(rng, margin, size - margin);
        if (category == "tile") return {x, y};
        const float d = std::hypot(x - s.cx, y - s.cy);
        if (d <= s.radius - margin * 0.5f && d >= s.inner + margin * 0.5f) return {x, y};
    }
    return {s.cx, s.cy + (s.radius + s.inner) / 2};
}

void paint(Image& img, BinaryGrid& mask, int x, int y, const Rgb& c) {
    if (x < 0 || y < 0 || x >= img.width || y >= img.height) return;
    for (int k = 0; k < 3; ++k) img.at(x, y, k) = c[k];
    mask.set(x, y, true);
}

}  // namespace

std::vector<std::string> toy_defect_types(const std::string& category) {
    if (category == "disc" || category == "ring") return {"spot", "scratch", "cut"};
    if (category == "tile") return {"spot", "scratch", "smudge"};
    throw InputError("unknown toy category '" + category + "'");
}

Image render_toy_normal(const std::string& category, int size, std::mt19937_64& rng) {
    toy_defect_types(category);
    const auto scene = make_scene(category, size, rng);
    return render_scene(category, scene, size, rng);
}

ToyDefect render_toy_defect(const std::string& category, const std::string& defect, int size, std::mt19937_64& rng) {
    const auto types = toy_defect_types(category);
    if (std::find(types.begin(), types.end(), defect) == types.end())
        throw InputError("unknown toy defect '" + defect + "' for category " + category);
    const auto scene = make_scene(category, size, rng);
    ToyDefect out{render_scene(category, scene, size, rng), BinaryGrid(size, size)};
    const float unit = size / 64.0f;

    if (defect == "spot") {
        const float r = uni(rng, 3.5f, 5.5f) * unit;
        const auto [x0, y0] = defect_site(category, scene, size, r + 2, rng);
        const Rgb c = {0.12f, 0.15f, 0.45f};
        for (int y = 0; y < size; ++y)
            for (int x = 0; x < size; ++x)
                if (std::hypot(x + 0.5f - x0, y + 0.5f - y0) <= r) paint(out.image, out.mask, x, y, c);
    } else if (defect == "scratch") {
        const float len = uni(rng, 14.0f, 22.0f) * unit;
        const float ang = uni(rng, 0.0f, std::numbers::pi_v<float>);
        const float half_w = uni(rng, 0.8f, 1.4f) * unit;
        const auto [x0, y0] = defect_site(category, scene, size, len / 2 * 0.6f, rng);
        const float dx = std::cos(ang), dy = std::sin(ang);
        const Rgb c = {0.97f, 0.97f, 0.95f};
        for (int y = 0; y < size; ++y)
            for (int x = 0; x < size; ++x) {
                const float px = x + 0.5f - x0, py = y + 0.5f - y0;
                const float along = px * dx + py * dy, across = -px * dy + py * dx;
                if (std::abs(along) <= len / 2 && std::abs(across) <= half_w) paint(out.image, out.mask, x, y, c);
            }
    } else if (defect == "cut") {
        // a bite taken out of the rim, filled with background
        const float ang = uni(rng, 0.0f, 2.0f * std::numbers::pi_v<float>);
        const float r = uni(rng, 6.0f, 8.0f) * unit;
        const float bx = scene.cx + std::cos(ang) * scene.radius, by = scene.cy + std::sin(ang) * scene.radius;
        for (int y = 0; y < size; ++y)
            for (int x = 0; x < size; ++x)
                if (std::hypot(x + 0.5f - bx, y + 0.5f - by) <= r && inside_object(scene, x + 0.5f, y + 0.5f)) {
                    const Rgb c = {scene.background[0] + 0.03f * y / size, scene.background[1] + 0.03f * y / size,
                                   scene.background[2] + 0.03f * y / size};
                    paint(out.image, out.mask, x, y, c);
                }
    } else {  // smudge: stripes rotated inside a square
        const float half = uni(rng, 5.0f, 7.0f) * unit;
        const auto [x0, y0] = defect_site(category, scene, size, half + 1, rng);
        for (int y = 0; y < size; ++y)
            for (int x = 0; x < size; ++x) {
                if (std::abs(x + 0.5f - x0) > half || std::abs(y + 0.5f - y0) > half) continue;
                const float t =
                    0.5f + 0.5f * std::sin(2.0f * std::numbers::pi_v<float> * (x * 0.5f - y * 0.866f) / 5.0f + scene.phase);
                Rgb c;
                for (int k = 0; k < 3; ++k)
                    c[k] = scene.background[k] + t * (scene.color[k] - scene.background[k]) * 0.7f;
                paint(out.image, out.mask, x, y, c);
            }
    }
    return out;
}

void generate_toy_corpus(const fs::path& root, const ToyCorpusOptions& opts) {
    if (opts.image_size < 16) throw InputError("toy corpus images must be at least 16 pixels");
    char name[32];
    for (size_t ci = 0; ci < opts.categories.size(); ++ci) {
        const auto& cat = opts.categories[ci];
        const auto types = toy_defect_types(cat);
        std::mt19937_64 rng(opts.seed * 1000003ULL + ci);
        const auto base = root / cat;
        fs::create_directories(base / "train" / "good");
        fs::create_directories(base / "test" / "good");
        for (int i = 0; i < opts.train_good; ++i) {
            std::snprintf(name, sizeof name, "%04d.png", i);
            write_png(base / "train" / "good" / name, render_toy_normal(cat, opts.image_size, rng));
        }
        for (int i = 0; i < opts.test_good; ++i) {
            std::snprintf(name, sizeof name, "%04d.png", i);
            write_png(base / "test" / "good" / name, render_toy_normal(cat, opts.image_size, rng));
        }
        for (const auto& type : types) {
            fs::create_directories(base / "test" / type);
            fs::create_directories(base / "ground_truth" / type);
            for (int i = 0; i < opts.test_defect_per_type; ++i) {
                const auto d = render_toy_defect(cat, type, opts.image_size, rng);
                std::snprintf(name, sizeof name, "%04d.png", i);
                write_png(base / "test" / type / name, d.image);
                std::snprintf(name, sizeof name, "%04d_mask.png", i);
                write_mask_png(base / "ground_truth" / type / name, d.mask);
            }
        }
    }
}

}  // namespace ssf
