#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "ssfilter/backbone.hpp"
#include "ssfilter/config.hpp"
#include "ssfilter/dataset.hpp"
#include "ssfilter/recon.hpp"

namespace ssf {

class EncodedDataset;

struct FilterRecord {
    std::string path;
    int votes = 0;
    bool keep = false;
    int label = -1;  // carried through when known

    bool operator==(const FilterRecord&) const = default;
};

struct FilterManifest {
    int kappa1 = 20;
    int kappa2 = 5;
    uint64_t seed = 0;
    std::vector<FilterRecord> records;

    std::vector<std::string> kept_paths() const;
    bool operator==(const FilterManifest&) const = default;
};

/// A sample is kept iff it was selected more than kappa2 times.
inline bool keep_verdict(int votes, int kappa2) { return votes > kappa2; }

/// Shuffled batches of `batch_size`; a trailing residue smaller than 2 joins the previous batch.
std::vector<std::vector<int>> epoch_batches(int count, int batch_size, std::mt19937_64& rng);

/// Votes over kappa1 shuffled epochs of regular-phase selection without weight updates.
FilterManifest filter_encoded(const PipelineConfig& cfg, const ReconModel& model, const EncodedDataset& data,
                              int kappa1, int kappa2, uint64_t seed);

/// Loads the checkpoint read-only and filters the train split of `manifest`.
FilterManifest filter_dataset(const std::filesystem::path& checkpoint, const DatasetManifest& manifest, int kappa1,
                              int kappa2, uint64_t seed);

/// Writes filter_manifest.tsv (header echoes kappa1, kappa2, seed) and kept.txt (one path per line).
void export_manifest(const std::filesystem::path& dir, const FilterManifest& manifest);
FilterManifest read_filter_manifest(const std::filesystem::path& path);

struct FilterReport {
    int total = 0;
    int kept = 0;
    double input_noise_rate = 0.0;
    double kept_noise_rate = 0.0;
    double utilization = 0.0;  // kept normals / all normals
};

/// Needs labels on every record; throws UndefinedMetricError otherwise.
FilterReport summarize_filter(const FilterManifest& manifest);

}  // namespace ssf
