#include "ssfilter/anomaly_forge.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>

#include "ssfilter/errors.hpp"

namespace ssf {

MaterialBank::MaterialBank(size_t capacity) : capacity_(capacity) {
    if (capacity == 0) throw ConfigError("material bank capacity must be positive");
}

void MaterialBank::add(MaterialPatch patch) {
    if (patch.mask.count() == 0) throw InputError("material patch has an empty mask");
    if (entries_.size() == capacity_) entries_.pop_front();
    entries_.push_back(std::move(patch));
    ++total_added_;
}

const MaterialPatch& MaterialBank::sample(std::mt19937_64& rng) const {
    if (entries_.empty()) throw DegenerateError("synthesis unavailable: material bank is empty");
    std::uniform_int_distribution<size_t> pick(0, entries_.size() - 1);
    return entries_[pick(rng)];
}

void MaterialBank::restore(std::deque<MaterialPatch> entries, uint64_t total_added) {
    while (entries.size() > capacity_) entries.pop_front();
    entries_ = std::move(entries);
    total_added_ = total_added;
}

void MaterialBank::dump(const std::filesystem::path& dir) const {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError(dir.string(), "cannot create bank dump directory");
    std::ofstream manifest(dir / "manifest.tsv");
    if (!manifest) throw IoError((dir / "manifest.tsv").string(), "cannot write bank manifest");
    manifest << "index\tsource_id\tarea\twidth\theight\tfragment\tmask\n";
    for (size_t i = 0; i < entries_.size(); ++i) {
        const auto& e = entries_[i];
        const std::string frag = "fragment_" + std::to_string(i) + ".png";
        const std::string mask = "mask_" + std::to_string(i) + ".png";
        write_png(dir / frag, e.pixels);
        write_mask_png(dir / mask, e.mask);
        manifest << i << '\t' << e.source_id << '\t' << e.area << '\t' << e.pixels.width << '\t' << e.pixels.height
                 << '\t' << frag << '\t' << mask << '\n';
    }
}

double percentile(std::span<const float> values, double pct) {
    if (values.empty()) throw InputError("percentile of empty data");
    std::vector<float> v(values.begin(), values.end());
    std::sort(v.begin(), v.end());
    const double pos = std::clamp(pct, 0.0, 100.0) / 100.0 * (v.size() - 1);
    const size_t lo = static_cast<size_t>(std::floor(pos));
    const size_t hi = std::min(lo + 1, v.size() - 1);
    const double frac = pos - lo;
    return v[lo] + (static_cast<double>(v[hi]) - v[lo]) * frac;
}

float compute_tp(std::span<const float> accumulated, double max_fraction) {
    if (accumulated.empty()) throw InputError("T_p of an empty map");
    const float mx = *std::max_element(accumulated.begin(), accumulated.end());
    return static_cast<float>(std::min(max_fraction * mx, percentile(accumulated, 99.0)));
}

std::vector<MaterialPatch> extract_material(const Image& image, std::span<const float> acc, int grid_h, int grid_w,
                                            float tp, const std::string& source_id, const ExtractionOptions& opts) {
    if (acc.size() != static_cast<size_t>(grid_h) * grid_w) throw InputError("accumulated map does not match grid");
    BinaryGrid hot(grid_w, grid_h);
    for (size_t i = 0; i < acc.size(); ++i) hot.cells[i] = acc[i] >= tp ? 1 : 0;
    std::vector<MaterialPatch> out;
    if (hot.count() == 0) {
        spdlog::debug("extract_material: nothing above T_p for {}", source_id);
        return out;
    }
    const BinaryGrid mask = upsample_nearest(hot, image.width, image.height);

    std::vector<int> label(mask.cells.size(), -1);
    std::vector<std::pair<int, int>> stack, members;
    for (int sy = 0; sy < mask.height; ++sy)
        for (int sx = 0; sx < mask.width; ++sx) {
            const size_t si = static_cast<size_t>(sy) * mask.width + sx;
            if (!mask.cells[si] || label[si] >= 0) continue;
            members.clear();
            stack.assign(1, {sx, sy});
            label[si] = 1;
            int x0 = sx, x1 = sx, y0 = sy, y1 = sy;
            while (!stack.empty()) {
                auto [x, y] = stack.back();
                stack.pop_back();
                members.emplace_back(x, y);
                x0 = std::min(x0, x), x1 = std::max(x1, x), y0 = std::min(y0, y), y1 = std::max(y1, y);
                for (int dy = -1; dy <= 1; ++dy)
                    for (int dx = -1; dx <= 1; ++dx) {
                        const int nx = x + dx, ny = y + dy;
                        if (nx < 0 || ny < 0 || nx >= mask.width || ny >= mask.height) continue;
                        const size_t ni = static_cast<size_t>(ny) * mask.width + nx;
                        if (mask.cells[ni] && label[ni] < 0) {
                            label[ni] = 1;
                            stack.emplace_back(nx, ny);
                        }
                    }
            }
            if (static_cast<int>(members.size()) < opts.min_area) continue;
            MaterialPatch p;
            p.source_id = source_id;
            p.area = static_cast<int>(members.size());
            p.pixels = Image(x1 - x0 + 1, y1 - y0 + 1, image.channels);
            p.mask = BinaryGrid(x1 - x0 + 1, y1 - y0 + 1);
            for (auto [x, y] : members) {
                p.mask.set(x - x0, y - y0, true);
                for (int c = 0; c < image.channels; ++c) p.pixels.at(x - x0, y - y0, c) = image.at(x, y, c);
            }
            out.push_back(std::move(p));
        }
    return out;
}

int material_count(int64_t iteration, int64_t total_iterations) {
    if (total_iterations <= 0) throw ConfigError("total_iterations must be positive");
    const int64_t it = std::clamp<int64_t>(iteration, 0, total_iterations);
    return static_cast<int>(std::clamp<int64_t>(1 + (4 * it) / total_iterations, 1, 5));
}

MaterialPatch rotate_material(const MaterialPatch& patch, double degrees) {
    const double th = degrees * std::numbers::pi / 180.0;
    auto snap = [](double v) { return std::abs(v) < 1e-12 ? 0.0 : std::abs(std::abs(v) - 1.0) < 1e-12 ? std::copysign(1.0, v) : v; };
    const double c = snap(std::cos(th)), s = snap(std::sin(th));
    const int w = patch.pixels.width, h = patch.pixels.height;
    const int ow = static_cast<int>(std::ceil(std::abs(w * c) + std::abs(h * s) - 1e-9));
    const int oh = static_cast<int>(std::ceil(std::abs(w * s) + std::abs(h * c) - 1e-9));
    const double icx = (w - 1) / 2.0, icy = (h - 1) / 2.0;
    const double ocx = (ow - 1) / 2.0, ocy = (oh - 1) / 2.0;

    MaterialPatch full;
    full.source_id = patch.source_id;
    full.pixels = Image(ow, oh, patch.pixels.channels);
    full.mask = BinaryGrid(ow, oh);
    int x0 = ow, y0 = oh, x1 = -1, y1 = -1;
    for (int y = 0; y < oh; ++y)
        for (int x = 0; x < ow; ++x) {
            const double dx = x - ocx, dy = y - ocy;
            const int sx = static_cast<int>(std::lround(c * dx + s * dy + icx));
            const int sy = static_cast<int>(std::lround(-s * dx + c * dy + icy));
            if (sx < 0 || sy < 0 || sx >= w || sy >= h || !patch.mask.at(sx, sy)) continue;
            full.mask.set(x, y, true);
            for (int ch = 0; ch < patch.pixels.channels; ++ch) full.pixels.at(x, y, ch) = patch.pixels.at(sx, sy, ch);
            x0 = std::min(x0, x), y0 = std::min(y0, y), x1 = std::max(x1, x), y1 = std::max(y1, y);
        }
    if (x1 < 0) return patch;  // numerically empty rotation; keep the original

    MaterialPatch out;
    out.source_id = patch.source_id;
    out.pixels = Image(x1 - x0 + 1, y1 - y0 + 1, patch.pixels.channels);
    out.mask = BinaryGrid(x1 - x0 + 1, y1 - y0 + 1);
    for (int y = y0; y <= y1; ++y)
        for (int x = x0; x <= x1; ++x) {
            out.mask.set(x - x0, y - y0, full.mask.at(x, y));
            for (int ch = 0; ch < out.pixels.channels; ++ch) out.pixels.at(x - x0, y - y0, ch) = full.pixels.at(x, y, ch);
        }
    out.area = static_cast<int>(out.mask.count());
    return out;
}

SyntheticPair synthesize(const Image& clean, const MaterialBank& bank, const ForegroundMask& fg, int count,
                         std::mt19937_64& rng, const SynthesisOptions& opts) {
    SyntheticPair pair;
    pair.clean = clean;
    pair.corrupted = clean;
    pair.paste_mask = BinaryGrid(clean.width, clean.height);
    if (count <= 0) return pair;
    if (bank.empty()) throw DegenerateError("synthesis unavailable: material bank is empty");
    if (fg.degenerate || fg.mask.count() == 0) throw DegenerateError("synthesis unavailable: degenerate foreground");

    const BinaryGrid fg_img = upsample_nearest(fg.mask, clean.width, clean.height);
    std::vector<std::pair<int, int>> fg_pixels;
    for (int y = 0; y < clean.height; ++y)
        for (int x = 0; x < clean.width; ++x)
            if (fg_img.at(x, y)) fg_pixels.emplace_back(x, y);
    std::uniform_int_distribution<size_t> pick_center(0, fg_pixels.size() - 1);
    std::uniform_real_distribution<double> angle(0.0, 360.0);

    for (int m = 0; m < count; ++m) {
        const MaterialPatch rotated = rotate_material(bank.sample(rng), angle(rng));
        const int w = rotated.pixels.width, h = rotated.pixels.height;
        bool placed = false;
        for (int attempt = 0; attempt < opts.max_placement_tries && !placed; ++attempt) {
            const auto [cx, cy] = fg_pixels[pick_center(rng)];
            const int left = cx - w / 2, top = cy - h / 2;
            if (left < 0 || top < 0 || left + w > clean.width || top + h > clean.height) continue;
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < w; ++x) {
                    if (!rotated.mask.at(x, y)) continue;
                    pair.paste_mask.set(left + x, top + y, true);
                    for (int c = 0; c < clean.channels; ++c)
                        pair.corrupted.at(left + x, top + y, c) =
                            rotated.pixels.at(x, y, std::min(c, rotated.pixels.channels - 1));
                }
            pair.centers.emplace_back(cx, cy);
            ++pair.material_count;
            placed = true;
        }
        if (!placed) spdlog::debug("synthesize: no valid placement for material {} after {} tries", m,
                                   opts.max_placement_tries);
    }
    return pair;
}

}  // namespace ssf
