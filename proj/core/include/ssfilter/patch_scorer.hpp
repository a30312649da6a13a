#pragma once

#include <filesystem>
#include <vector>

#include "ssfilter/descriptor.hpp"

namespace ssf {

struct MutualScoreResult {
    int batch = 0;
    int patches = 0;                  // H_f * W_f per image
    std::vector<float> patch_scores;  // batch x patches, each in [0, 2]
    std::vector<float> image_scores;  // batch
    int k_sim = 0;
    int k_top = 0;

    float patch_score(int image, int patch) const {
        return patch_scores[static_cast<size_t>(image) * patches + patch];
    }
};

struct MutualScoreOptions {
    double sim_fraction = 0.001;    // share of all N batch patches averaged as neighbours
    double region_fraction = 0.01;  // share of one image's patches averaged into its score
};

/// k = max(1, floor(count * fraction)).
int clamped_top_k(int count, double fraction);

/// Zero-shot batch scoring: each patch is rated by its distance to its most similar patches
/// in the batch. Same-image similarity blocks are overwritten with 0 before the top-k.
/// Throws CannotScoreError for batches of fewer than two images and InputError for
/// non-finite or zero-norm descriptors.
MutualScoreResult mutual_score(const PatchDescriptorBatch& desc, const MutualScoreOptions& opts = {});

/// Same contract as mutual_score, computed pair by pair in double precision.
MutualScoreResult brute_force_score(const PatchDescriptorBatch& desc, const MutualScoreOptions& opts = {});

/// Appends "image_id<TAB>image_score" rows.
void append_score_log(const std::filesystem::path& path, const PatchDescriptorBatch& desc,
                      const MutualScoreResult& result);

}  // namespace ssf
