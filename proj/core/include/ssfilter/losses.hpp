#pragma once

#include <span>

#include "ssfilter/autograd.hpp"
#include "ssfilter/recon.hpp"

namespace ssf {

/// Per-sample global cosine distance between flattened target and predicted maps, averaged over
/// groups (an n x 1 tensor). Within each group the easiest `mine_fraction` of all spatial
/// positions in the call (smallest point-wise cosine distance) pass no gradient; the value is
/// unaffected by mining.
nn::Var hard_mined_cosine_distances(const AlignedFeatures& targets, std::span<const nn::Var> predictions,
                                    double mine_fraction = 0.9);

/// Mean of hard_mined_cosine_distances over samples.
nn::Var hard_mined_cosine_loss(const AlignedFeatures& targets, std::span<const nn::Var> predictions,
                               double mine_fraction = 0.9);

}  // namespace ssf
