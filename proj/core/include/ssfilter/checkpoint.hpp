#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "ssfilter/anomaly_forge.hpp"
#include "ssfilter/decoder_blocks.hpp"
#include "ssfilter/optimizer.hpp"

namespace ssf {

inline constexpr uint32_t kCheckpointVersion = 1;

struct ParamBlob {
    std::string name;
    int rows = 0;
    int cols = 0;
    std::vector<float> data;
};

/// Full training state. `config_text` is the flat key=value echo of the run configuration.
struct Checkpoint {
    uint32_t version = kCheckpointVersion;
    std::string config_text;
    std::string backbone_identity;
    uint64_t backbone_hash = 0;
    int64_t iteration = 0;  // number of completed iterations
    std::string rng_state;
    std::vector<ParamBlob> params;
    OptimizerState optimizer;
    uint64_t bank_capacity = 0;
    uint64_t bank_total_added = 0;
    std::vector<MaterialPatch> bank;
};

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint read_checkpoint(const std::filesystem::path& path);
/// Reads only the header fields (version through rng_state).
Checkpoint read_checkpoint_header(const std::filesystem::path& path);

std::vector<ParamBlob> snapshot_params(const std::vector<NamedParam>& params);
/// Copies blob values into matching parameters; names and shapes must agree exactly.
void restore_params(const std::vector<ParamBlob>& blobs, const std::vector<NamedParam>& params);

}  // namespace ssf
