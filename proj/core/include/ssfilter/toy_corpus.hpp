#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "ssfilter/image.hpp"

namespace ssf {

/// Procedural shapes dataset laid out like MVTec AD. Categories: "disc" (an object on a
/// plain background), "tile" (a periodic texture) and "ring".
struct ToyCorpusOptions {
    std::vector<std::string> categories = {"disc"};
    int image_size = 64;
    int train_good = 500;
    int test_good = 60;
    int test_defect_per_type = 60;
    uint64_t seed = 0;
};

std::vector<std::string> toy_defect_types(const std::string& category);

Image render_toy_normal(const std::string& category, int size, std::mt19937_64& rng);

struct ToyDefect {
    Image image;
    BinaryGrid mask;
};
ToyDefect render_toy_defect(const std::string& category, const std::string& defect, int size, std::mt19937_64& rng);

/// Writes <root>/<category>/{train/good, test/<type>, ground_truth/<type>/<stem>_mask.png}.
void generate_toy_corpus(const std::filesystem::path& root, const ToyCorpusOptions& opts);

}  // namespace ssf
