#include "test_support.hpp"

#include <algorithm>
#include <cmath>

namespace ssf::testing {

TempDir::TempDir(const std::string& tag) {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() / ("ssf_" + tag + "_" + std::to_string(rd()));
    std::filesystem::create_directories(path_);
}

TempDir::~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
}

PatchTransformerConfig small_backbone_config() {
    PatchTransformerConfig c;
    c.image_size = 32;
    c.patch_size = 8;
    c.embed_dim = 16;
    c.depth = 10;
    c.heads = 2;
    c.mlp_ratio = 2.0f;
    c.init_seed = 3;
    return c;
}

std::unique_ptr<PatchTransformer> small_backbone() { return PatchTransformer::random(small_backbone_config()); }

PipelineConfig small_pipeline_config() {
    PipelineConfig c;
    c.resize = 32;
    c.crop = 32;
    c.tiny_patch = 8;
    c.tiny_dim = 16;
    c.tiny_depth = 10;
    c.tiny_heads = 2;
    c.tiny_seed = 3;
    c.decoder_heads = 2;
    c.decoder_blocks = 2;
    c.batch_size = 8;
    c.total_iterations = 20;
    c.cold_start_iterations = 5;
    c.warmup_iterations = 2;
    c.passes = 3;
    c.checkpoint_every = 0;
    return c;
}

Image random_image(int w, int h, int c, std::mt19937_64& rng) {
    Image img(w, h, c);
    std::uniform_real_distribution<float> u(0.0f, 1.0f);
    for (auto& p : img.pixels) p = u(rng);
    return img;
}

std::vector<float> random_vector(size_t n, std::mt19937_64& rng, float lo, float hi) {
    std::uniform_real_distribution<float> u(lo, hi);
    std::vector<float> v(n);
    for (auto& x : v) x = u(rng);
    return v;
}

double rel_diff(double a, double b, double floor) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

}  // namespace ssf::testing
