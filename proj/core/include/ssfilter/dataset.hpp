#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "ssfilter/image.hpp"

namespace ssf {

struct SampleRecord {
    std::string path;
    std::string split;      // "train" or "test"
    int label = -1;         // 0 normal, 1 anomalous, -1 unknown
    std::string category;
    std::string mask_path;  // ground-truth mask for anomalous test images, may be empty
    std::string defect;     // defect type directory, "good" for normals

    bool operator==(const SampleRecord&) const = default;
};

struct DatasetManifest {
    std::vector<SampleRecord> samples;
    double alpha = 0.0;
    uint64_t seed = 0;

    std::vector<SampleRecord> split(const std::string& name) const;
    std::vector<std::string> categories() const;
    /// anomalous / total over the labelled train split; 0 when the split is empty.
    double realized_noise_rate() const;
    /// Throws InputError on duplicate paths or unknown splits.
    void validate() const;
};

/// One header line (provenance) followed by tab-separated records.
void write_manifest(const std::filesystem::path& path, const DatasetManifest& manifest);
/// Relative paths are resolved against the manifest's directory.
DatasetManifest read_manifest(const std::filesystem::path& path);

/// Reads <root>/<category>/{train,test,ground_truth}. Empty `categories` takes every
/// subdirectory holding train/good.
DatasetManifest ingest_mvtec(const std::filesystem::path& root, std::span<const std::string> categories = {});

/// Loads a manifest file or ingests an MVTec-style directory.
DatasetManifest load_dataset(const std::filesystem::path& path);

/// Anomalous test samples, the usual source of injected noise.
std::vector<SampleRecord> anomaly_pool(const DatasetManifest& manifest);

/// Number of anomalies added to `clean` normals for noise setting alpha: round(alpha * clean / (1 - alpha)).
int injection_count(int clean, double alpha);

/// Per category, moves injection_count(train normals, alpha) randomly chosen pool samples into
/// the train split (labels kept, removed from test). Throws InputError naming required vs
/// available counts when the pool is too small.
DatasetManifest inject_noise(const DatasetManifest& clean, std::span<const SampleRecord> pool, double alpha,
                             uint64_t seed);

/// Reads and preprocesses one sample image.
Image load_sample(const SampleRecord& sample, int resize, int crop);

}  // namespace ssf
