#include "ssfilter/filtering.hpp"

#include <spdlog/spdlog.h>

#include <fstream>
#include <numeric>
#include <sstream>

#include "ssfilter/binary_io.hpp"
#include "ssfilter/checkpoint.hpp"
#include "ssfilter/errors.hpp"
#include "ssfilter/synergy_filter.hpp"
#include "ssfilter/trainer.hpp"

namespace fs = std::filesystem;

namespace ssf {

std::vector<std::string> FilterManifest::kept_paths() const {
    std::vector<std::string> out;
    for (const auto& r : records)
        if (r.keep) out.push_back(r.path);
    return out;
}

std::vector<std::vector<int>> epoch_batches(int count, int batch_size, std::mt19937_64& rng) {
    if (count < 2) throw CannotScoreError("filtering needs at least two samples");
    if (batch_size < 2) throw ConfigError("filter batch size must be at least 2");
    std::vector<int> order(count);
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<std::vector<int>> batches;
    for (int start = 0; start < count; start += batch_size) {
        const int end = std::min(count, start + batch_size);
        std::vector<int> b(order.begin() + start, order.begin() + end);
        if (b.size() < 2 && !batches.empty())
            batches.back().insert(batches.back().end(), b.begin(), b.end());
        else
            batches.push_back(std::move(b));
    }
    return batches;
}

FilterManifest filter_encoded(const PipelineConfig& cfg, const ReconModel& model, const EncodedDataset& data,
                              int kappa1, int kappa2, uint64_t seed) {
    if (kappa1 < 1) throw ConfigError("kappa1 must be positive");
    if (kappa2 >= kappa1) spdlog::warn("kappa2 ({}) >= kappa1 ({}): every sample will be dropped", kappa2, kappa1);
    const int n = static_cast<int>(data.size());
    std::vector<int> votes(n, 0);
    std::mt19937_64 rng(seed);
    nn::NoGradGuard no_grad;
    for (int epoch = 0; epoch < kappa1; ++epoch) {
        for (const auto& batch : epoch_batches(n, cfg.batch_size, rng)) {
            const auto ev = gather_evidence(cfg, model, data.gather(batch), rng);
            const auto d = regular_select(ev.scores, ev.uncertainty, cfg.selection());
            for (size_t i = 0; i < batch.size(); ++i) votes[batch[i]] += d.g[i];
        }
        spdlog::debug("filter epoch {}/{} done", epoch + 1, kappa1);
    }
    FilterManifest out{kappa1, kappa2, seed, {}};
    for (int i = 0; i < n; ++i)
        out.records.push_back({data.item(i).id, votes[i], keep_verdict(votes[i], kappa2), data.item(i).label});
    return out;
}

FilterManifest filter_dataset(const fs::path& checkpoint, const DatasetManifest& manifest, int kappa1, int kappa2,
                              uint64_t seed) {
    const auto ckpt = read_checkpoint(checkpoint);
    auto cfg = PipelineConfig::from_kv(KeyValueConfig::parse(ckpt.config_text, checkpoint.string()));
    const auto backbone = make_backbone(cfg.backbone());
    if (backbone->identity() != ckpt.backbone_identity || backbone->weights_hash() != ckpt.backbone_hash)
        throw InputError("backbone does not match the one recorded in " + checkpoint.string());
    auto loaded = load_model(ckpt, backbone->embed_dim());
    const auto train = manifest.split("train");
    if (train.empty()) throw InputError("manifest has no train samples to filter");
    EncodedDataset data(*backbone, pipeline_layers(cfg));
    add_samples(data, train, cfg);
    data.encode_pending();
    return filter_encoded(cfg, *loaded.model, data, kappa1, kappa2, seed);
}

void export_manifest(const fs::path& dir, const FilterManifest& m) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError(dir.string(), "cannot create directory: " + ec.message());
    const auto path = dir / "filter_manifest.tsv";
    {
        std::ofstream out(path, std::ios::trunc);
        if (!out) throw IoError(path.string(), "cannot write filter manifest");
        out << "#ssfilter-filter\tkappa1=" << m.kappa1 << "\tkappa2=" << m.kappa2 << "\tseed=" << m.seed
            << "\tcolumns=path,votes,verdict,label\n";
        for (const auto& r : m.records)
            out << r.path << '\t' << r.votes << '\t' << (r.keep ? "keep" : "drop") << '\t' << r.label << '\n';
        if (!out) throw IoError(path.string(), "write failed");
    }
    const auto kept = dir / "kept.txt";
    std::ofstream out(kept, std::ios::trunc);
    if (!out) throw IoError(kept.string(), "cannot write kept list");
    for (const auto& p : m.kept_paths()) out << p << '\n';
    if (!out) throw IoError(kept.string(), "write failed");
}

FilterManifest read_filter_manifest(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError(path.string(), "cannot open filter manifest");
    std::string line;
    if (!std::getline(in, line) || line.rfind("#ssfilter-filter", 0) != 0)
        throw IoError(path.string(), "missing filter manifest header");
    FilterManifest m;
    std::istringstream header(line);
    std::string cell;
    while (std::getline(header, cell, '\t')) {
        const auto eq = cell.find('=');
        if (eq == std::string::npos) continue;
        const auto key = cell.substr(0, eq), value = cell.substr(eq + 1);
        if (key == "kappa1") m.kappa1 = std::stoi(value);
        if (key == "kappa2") m.kappa2 = std::stoi(value);
        if (key == "seed") m.seed = std::stoull(value);
    }
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream row(line);
        FilterRecord r;
        std::string votes, verdict, label;
        if (!std::getline(row, r.path, '\t') || !std::getline(row, votes, '\t') || !std::getline(row, verdict, '\t') ||
            !std::getline(row, label, '\t'))
            throw IoError(path.string(), "malformed filter manifest row");
        r.votes = std::stoi(votes);
        r.keep = verdict == "keep";
        r.label = std::stoi(label);
        m.records.push_back(std::move(r));
    }
    return m;
}

FilterReport summarize_filter(const FilterManifest& m) {
    FilterReport r;
    int anomalous = 0, kept_anomalous = 0, normals = 0, kept_normals = 0;
    for (const auto& rec : m.records) {
        if (rec.label < 0) throw UndefinedMetricError("filter report needs known labels (" + rec.path + ")");
        ++r.total;
        r.kept += rec.keep;
        if (rec.label == 1) {
            ++anomalous;
            kept_anomalous += rec.keep;
        } else {
            ++normals;
            kept_normals += rec.keep;
        }
    }
    if (r.total == 0) throw UndefinedMetricError("empty filter manifest");
    r.input_noise_rate = static_cast<double>(anomalous) / r.total;
    r.kept_noise_rate = r.kept == 0 ? 0.0 : static_cast<double>(kept_anomalous) / r.kept;
    r.utilization = normals == 0 ? 0.0 : static_cast<double>(kept_normals) / normals;
    return r;
}

}  // namespace ssf
