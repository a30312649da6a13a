#pragma once

#include <filesystem>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "ssfilter/backbone.hpp"
#include "ssfilter/config.hpp"
#include "ssfilter/image.hpp"

namespace ssf::testing {

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag);
    ~TempDir();
    const std::filesystem::path& path() const noexcept { return path_; }
    std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

private:
    std::filesystem::path path_;
};

/// 32x32 input, patch 8 (4x4 grid), width 16, 10 blocks.
PatchTransformerConfig small_backbone_config();
std::unique_ptr<PatchTransformer> small_backbone();

/// Config matching small_backbone() with a short schedule.
PipelineConfig small_pipeline_config();

Image random_image(int w, int h, int c, std::mt19937_64& rng);
std::vector<float> random_vector(size_t n, std::mt19937_64& rng, float lo = -1.0f, float hi = 1.0f);

/// Relative difference |a - b| / max(|a|, |b|, floor).
double rel_diff(double a, double b, double floor = 1e-12);

}  // namespace ssf::testing
