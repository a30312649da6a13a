#pragma once

#include <cstdint>
#include <deque>
#include <filesystem>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "ssfilter/descriptor.hpp"
#include "ssfilter/image.hpp"

namespace ssf {

/// Cropped anomalous fragment; the bounding box is tight around the mask.
struct MaterialPatch {
    Image pixels;
    BinaryGrid mask;
    std::string source_id;
    int area = 0;
};

/// Bounded FIFO of extracted materials.
class MaterialBank {
public:
    explicit MaterialBank(size_t capacity = 256);

    void add(MaterialPatch patch);
    const MaterialPatch& sample(std::mt19937_64& rng) const;

    bool empty() const noexcept { return entries_.empty(); }
    size_t size() const noexcept { return entries_.size(); }
    size_t capacity() const noexcept { return capacity_; }
    uint64_t total_added() const noexcept { return total_added_; }
    const std::deque<MaterialPatch>& entries() const noexcept { return entries_; }

    void restore(std::deque<MaterialPatch> entries, uint64_t total_added);

    /// Writes fragment/mask PNGs plus a provenance manifest (manifest.tsv).
    void dump(const std::filesystem::path& dir) const;

private:
    size_t capacity_;
    uint64_t total_added_ = 0;
    std::deque<MaterialPatch> entries_;
};

/// Linear-interpolated percentile (0..100) of the values.
double percentile(std::span<const float> values, double pct);

/// min(max_fraction * max(map), 99th percentile of map).
float compute_tp(std::span<const float> accumulated, double max_fraction = 0.8);

struct ExtractionOptions {
    int min_area = 16;  // image pixels
};

/// Thresholds the accumulated map at T_p, upsamples the mask to image resolution and crops
/// every 8-connected component of at least `min_area` pixels.
std::vector<MaterialPatch> extract_material(const Image& image, std::span<const float> accumulated, int grid_h,
                                            int grid_w, float tp, const std::string& source_id,
                                            const ExtractionOptions& opts = {});

/// Number of materials per synthetic image: 1 + floor(4 * iteration / total), clamped to [1, 5].
int material_count(int64_t iteration, int64_t total_iterations);

struct SyntheticPair {
    Image corrupted;
    Image clean;
    BinaryGrid paste_mask;  // image resolution
    int material_count = 0;                      // materials actually pasted
    std::vector<std::pair<int, int>> centers;    // (x, y) of each paste
};

struct SynthesisOptions {
    int max_placement_tries = 10;
};

/// Nearest-neighbour rotation of a material (pixels and mask) by `degrees`; result is re-cropped tight.
MaterialPatch rotate_material(const MaterialPatch& patch, double degrees);

/// Pastes `count` bank materials (uniform with replacement, random rotation) at centres drawn
/// uniformly from the foreground. Pixels outside the returned paste mask are untouched.
/// Throws DegenerateError when synthesis is unavailable (empty bank or degenerate foreground).
SyntheticPair synthesize(const Image& clean, const MaterialBank& bank, const ForegroundMask& fg, int count,
                         std::mt19937_64& rng, const SynthesisOptions& opts = {});

}  // namespace ssf
