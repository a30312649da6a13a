#include "ssfilter/trainer.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "ssfilter/errors.hpp"
#include "ssfilter/losses.hpp"

namespace fs = std::filesystem;

namespace ssf {

namespace {

FeatureStack concat_stacks(const FeatureStack& a, const FeatureStack& b) {
    if (a.batch == 0) return b;
    if (b.batch == 0) return a;
    if (a.grid_h != b.grid_h || a.grid_w != b.grid_w || a.channels != b.channels)
        throw InputError("cannot stack features with different grids");
    FeatureStack out = a;
    out.batch += b.batch;
    out.data.insert(out.data.end(), b.data.begin(), b.data.end());
    return out;
}

LayerFeatureMap concat_maps(const LayerFeatureMap& a, const LayerFeatureMap& b, std::span<const int> layers) {
    LayerFeatureMap out;
    for (int l : layers) {
        const auto ia = a.find(l), ib = b.find(l);
        out[l] = concat_stacks(ia == a.end() ? FeatureStack{} : ia->second, ib == b.end() ? FeatureStack{} : ib->second);
    }
    return out;
}

std::string rng_to_string(const std::mt19937_64& rng) {
    std::ostringstream os;
    os << rng;
    return os.str();
}

void rng_from_string(std::mt19937_64& rng, const std::string& s) {
    std::istringstream is(s);
    is >> rng;
    if (!is) throw InputError("corrupt RNG state in checkpoint");
}

/// Keeps the header and the rows whose leading iteration is below `limit`.
void truncate_log(const fs::path& path, int64_t limit) {
    if (!fs::exists(path)) return;
    std::ifstream in(path);
    std::string header, line, kept;
    std::getline(in, header);
    while (std::getline(in, line)) {
        const auto tab = line.find('\t');
        if (tab == std::string::npos) continue;
        if (std::stoll(line.substr(0, tab)) < limit) kept += line + "\n";
    }
    in.close();
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError(path.string(), "cannot rewrite log");
    out << header << "\n" << kept;
}

}  // namespace

EncodedDataset::EncodedDataset(const BackbonePort& backbone, std::vector<int> layers)
    : backbone_(backbone), layers_(std::move(layers)) {
    std::sort(layers_.begin(), layers_.end());
    layers_.erase(std::unique(layers_.begin(), layers_.end()), layers_.end());
    for (int l : layers_)
        if (l < 0 || l >= backbone.layer_count())
            throw ConfigError("layer " + std::to_string(l) + " outside backbone depth " +
                              std::to_string(backbone.layer_count()));
}

void EncodedDataset::add(std::string id, Image image, int label) {
    items_.push_back({std::move(id), label, std::move(image), {}});
}

void EncodedDataset::encode_pending(int chunk) {
    while (encoded_ < items_.size()) {
        const size_t end = std::min(items_.size(), encoded_ + static_cast<size_t>(chunk));
        std::vector<Image> imgs;
        for (size_t i = encoded_; i < end; ++i) imgs.push_back(items_[i].image);
        const auto feats = backbone_.forward(imgs, layers_);
        for (size_t i = encoded_; i < end; ++i) {
            const int b = static_cast<int>(i - encoded_);
            for (const auto& [l, fs] : feats) {
                FeatureStack one{1, fs.grid_h, fs.grid_w, fs.channels, {}};
                const auto view = fs.image(b);
                one.data.assign(view.begin(), view.end());
                items_[i].features[l] = std::move(one);
            }
        }
        encoded_ = end;
    }
}

LayerFeatureMap EncodedDataset::gather(std::span<const int> indices) const {
    if (encoded_ < items_.size()) throw InputError("EncodedDataset::gather before encode_pending");
    LayerFeatureMap out;
    if (indices.empty()) return out;
    for (int l : layers_) {
        const auto& ref = items_.at(indices[0]).features.at(l);
        FeatureStack fs{static_cast<int>(indices.size()), ref.grid_h, ref.grid_w, ref.channels, {}};
        fs.data.reserve(ref.data.size() * indices.size());
        for (int i : indices) {
            const auto& d = items_.at(i).features.at(l).data;
            fs.data.insert(fs.data.end(), d.begin(), d.end());
        }
        out[l] = std::move(fs);
    }
    return out;
}

std::vector<int> pipeline_layers(const PipelineConfig& cfg) {
    std::set<int> layers;
    for (int l : cfg.recon().encoder_layers()) layers.insert(l);
    for (int l : cfg.layer_spec().required_layers()) layers.insert(l);
    layers.insert(cfg.resolved_foreground_layer());
    return {layers.begin(), layers.end()};
}

BatchEvidence gather_evidence(const PipelineConfig& cfg, const ReconModel& model, const LayerFeatureMap& features,
                              std::mt19937_64& rng) {
    BatchEvidence ev;
    const auto desc = build_descriptor(features, cfg.layer_spec());
    const auto ms = mutual_score(desc, cfg.scoring());
    ev.scores.assign(ms.image_scores.begin(), ms.image_scores.end());
    ev.maps = estimate_uncertainty(model, features, rng, cfg.uncertainty());
    for (const auto& m : ev.maps) ev.uncertainty.push_back(m.uncertainty);
    return ev;
}

Trainer::Trainer(PipelineConfig cfg, const BackbonePort& backbone, const EncodedDataset& data)
    : cfg_(std::move(cfg)),
      backbone_(backbone),
      data_(data),
      bank_(static_cast<size_t>(cfg_.bank_capacity)),
      rng_(cfg_.seed) {
    cfg_.validate();
    if (data_.size() < 2) throw InputError("training needs at least two samples");
    model_ = std::make_unique<ReconModel>(cfg_.recon(), backbone.embed_dim());
    AdamOptions opts;
    opts.weight_decay = static_cast<float>(cfg_.weight_decay);
    optimizer_ = make_optimizer(cfg_.optimizer, model_->parameters(), opts);
}

Phase Trainer::phase_for(int64_t iteration) const noexcept {
    return iteration < cfg_.cold_start_iterations ? Phase::cold_start : Phase::regular;
}

std::vector<int> Trainer::batch_indices(int64_t iteration) const {
    const int n = static_cast<int>(data_.size());
    const int b = std::min(cfg_.batch_size, n);
    const int64_t per_epoch = n / b;
    const int64_t epoch = iteration / per_epoch, slot = iteration % per_epoch;
    std::vector<int> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    std::mt19937_64 shuffle_rng(cfg_.seed ^ (0x9E3779B97F4A7C15ULL * static_cast<uint64_t>(epoch + 1)));
    std::shuffle(perm.begin(), perm.end(), shuffle_rng);
    return {perm.begin() + slot * b, perm.begin() + (slot + 1) * b};
}

LossReport Trainer::train_step(std::span<const int> batch) {
    if (batch.size() < 4) throw InputError("train_step needs a batch of at least 4 samples");
    LossReport report;
    report.iteration = iteration_;
    report.phase = phase_for(iteration_);

    const LayerFeatureMap features = data_.gather(batch);
    const BatchEvidence ev = gather_evidence(cfg_, *model_, features, rng_);

    const auto sel = cfg_.selection();
    const SelectionDecision decision = report.phase == Phase::cold_start
                                           ? cold_start_select(ev.scores, ev.uncertainty, sel)
                                           : regular_select(ev.scores, ev.uncertainty, sel);
    std::vector<std::string> ids;
    for (int i : batch) ids.push_back(data_.item(i).id);
    if (selection_log_) selection_log_->append(iteration_, ids, ev.scores, ev.uncertainty, decision);

    report.flagged = decision.flagged();
    const int gh = ev.maps.front().grid_h, gw = ev.maps.front().grid_w;
    for (size_t i = 0; i < batch.size(); ++i) {
        if (!decision.h[i]) continue;
        const auto& acc = ev.maps[i].accumulated;
        const float tp = compute_tp(acc, cfg_.tp_max_fraction);
        for (auto& m : extract_material(data_.item(batch[i]).image, acc, gh, gw, tp, ids[i],
                                        {cfg_.min_material_area})) {
            bank_.add(std::move(m));
            ++report.materials_added;
        }
    }

    std::vector<int> xg;
    for (size_t i = 0; i < batch.size(); ++i)
        if (decision.g[i]) xg.push_back(batch[i]);
    report.n1 = static_cast<int>(xg.size());
    if (xg.empty()) {
        spdlog::warn("iteration {}: selection kept no samples, step skipped", iteration_);
        report.skipped = true;
        report.bank_size = bank_.size();
        ++iteration_;
        return report;
    }

    // restoration pairs from the kept samples
    std::vector<int> sources;
    std::vector<Image> corrupted;
    if (!bank_.empty()) {
        const int want = static_cast<int>(std::floor(xg.size() * cfg_.synth_fraction));
        std::vector<int> pool = xg;
        std::shuffle(pool.begin(), pool.end(), rng_);
        const int count = material_count(iteration_, cfg_.total_iterations);
        const int fg_layer = cfg_.resolved_foreground_layer();
        for (int j = 0; j < want; ++j) {
            const auto& item = data_.item(pool[j]);
            const auto& fs = item.features.at(fg_layer);
            try {
                const auto fg = estimate_foreground(fs.image(0), fs.channels, fs.grid_h, fs.grid_w);
                auto pair = synthesize(item.image, bank_, fg, count, rng_);
                corrupted.push_back(std::move(pair.corrupted));
                sources.push_back(pool[j]);
            } catch (const DegenerateError& e) {
                spdlog::debug("synthesis skipped for {}: {}", item.id, e.what());
            }
        }
    }
    report.n2 = static_cast<int>(corrupted.size());

    const auto recon_layers = model_->config().encoder_layers();
    LayerFeatureMap inputs = data_.gather(xg);
    std::vector<int> clean_idx = xg;
    if (!corrupted.empty()) {
        inputs = concat_maps(inputs, backbone_.forward(corrupted, recon_layers), recon_layers);
        clean_idx.insert(clean_idx.end(), sources.begin(), sources.end());
    }
    const AlignedFeatures targets = aligned_targets(model_->config(), data_.gather(clean_idx));

    const ReconOutput out = model_->forward(inputs, true, rng_);
    const nn::Var dist = hard_mined_cosine_distances(targets, out.predictions, cfg_.mine_fraction);
    const double denom = report.n1 + report.n2;
    const nn::Var loss = nn::scale(nn::sum(dist), static_cast<float>(1.0 / denom));
    for (int i = 0; i < dist.rows(); ++i)
        (i < report.n1 ? report.l_rec : report.l_res) += dist.value()[i] / denom;
    report.l_total = report.l_rec + report.l_res;

    optimizer_->zero_grad();
    nn::backward(loss);
    report.lr = warm_cosine_lr(iteration_, cfg_.total_iterations, cfg_.warmup_iterations,
                               static_cast<float>(cfg_.lr), static_cast<float>(cfg_.final_lr));
    optimizer_->step(report.lr);
    ++iteration_;
    report.bank_size = bank_.size();
    return report;
}

Checkpoint Trainer::checkpoint() const {
    Checkpoint c;
    c.config_text = cfg_.echo();
    c.backbone_identity = backbone_.identity();
    c.backbone_hash = backbone_.weights_hash();
    c.iteration = iteration_;
    c.rng_state = rng_to_string(rng_);
    c.params = snapshot_params(model_->parameters());
    c.optimizer = optimizer_->state();
    c.bank_capacity = bank_.capacity();
    c.bank_total_added = bank_.total_added();
    c.bank.assign(bank_.entries().begin(), bank_.entries().end());
    return c;
}

void Trainer::restore(const Checkpoint& c) {
    if (c.backbone_identity != backbone_.identity() || c.backbone_hash != backbone_.weights_hash())
        throw InputError("checkpoint was trained with a different backbone (" + c.backbone_identity + ")");
    restore_params(c.params, model_->parameters());
    optimizer_->load_state(c.optimizer);
    rng_from_string(rng_, c.rng_state);
    iteration_ = c.iteration;
    bank_.restore(std::deque<MaterialPatch>(c.bank.begin(), c.bank.end()), c.bank_total_added);
}

LoadedModel load_model(const Checkpoint& ckpt, int embed_dim) {
    LoadedModel out;
    out.config = PipelineConfig::from_kv(KeyValueConfig::parse(ckpt.config_text, "checkpoint config"));
    out.model = std::make_unique<ReconModel>(out.config.recon(), embed_dim);
    restore_params(ckpt.params, out.model->parameters());
    return out;
}

void add_samples(EncodedDataset& data, std::span<const SampleRecord> samples, const PipelineConfig& cfg) {
    for (const auto& s : samples) data.add(s.path, load_sample(s, cfg.resize, cfg.crop), s.label);
}

void write_loss_header(std::ostream& out) {
    out << "iteration\tphase\tl_rec\tl_res\tl_total\tn1\tn2\tflagged\tmaterials_added\tbank_size\tlr\tskipped\n";
}

void write_loss_row(std::ostream& out, const LossReport& r) {
    out << r.iteration << '\t' << to_string(r.phase) << '\t' << r.l_rec << '\t' << r.l_res << '\t' << r.l_total
        << '\t' << r.n1 << '\t' << r.n2 << '\t' << r.flagged << '\t' << r.materials_added << '\t' << r.bank_size
        << '\t' << r.lr << '\t' << int(r.skipped) << '\n';
}

TrainingResult run_training(const PipelineConfig& cfg, const DatasetManifest& manifest,
                            const std::optional<fs::path>& resume,
                            const std::function<void(const LossReport&)>& progress) {
    cfg.validate();
    const auto train = manifest.split("train");
    if (train.empty()) throw InputError("dataset has no train samples");
    const auto backbone = make_backbone(cfg.backbone());
    EncodedDataset data(*backbone, pipeline_layers(cfg));
    add_samples(data, train, cfg);
    spdlog::info("encoding {} train images", data.size());
    data.encode_pending();

    Trainer trainer(cfg, *backbone, data);
    const fs::path out_dir = cfg.output_dir;
    std::error_code ec;
    fs::create_directories(out_dir / "checkpoints", ec);
    if (ec) throw IoError((out_dir / "checkpoints").string(), "cannot create directory: " + ec.message());

    {
        std::ofstream echo(out_dir / "config.txt", std::ios::trunc);
        if (!echo) throw IoError((out_dir / "config.txt").string(), "cannot write config echo");
        echo << cfg.echo();
    }

    TrainingResult result;
    result.loss_log = out_dir / "loss_log.tsv";
    const auto sel_path = out_dir / "selection_log.tsv";
    if (resume) {
        trainer.restore(read_checkpoint(*resume));
        spdlog::info("resumed from {} at iteration {}", resume->string(), trainer.iteration());
        truncate_log(result.loss_log, trainer.iteration());
        truncate_log(sel_path, trainer.iteration());
    } else {
        fs::remove(result.loss_log, ec);
        fs::remove(sel_path, ec);
    }
    if (!fs::exists(result.loss_log)) {
        std::ofstream log(result.loss_log);
        if (!log) throw IoError(result.loss_log.string(), "cannot create loss log");
        write_loss_header(log);
    }
    trainer.set_selection_log(SelectionLog(sel_path));

    std::ofstream log(result.loss_log, std::ios::app);
    if (!log) throw IoError(result.loss_log.string(), "cannot open loss log");
    log.precision(9);
    while (trainer.iteration() < cfg.total_iterations) {
        const auto report = trainer.step();
        write_loss_row(log, report);
        result.reports.push_back(report);
        if (progress) progress(report);
        const int64_t it = trainer.iteration();
        if (cfg.checkpoint_every > 0 && it % cfg.checkpoint_every == 0 && it < cfg.total_iterations)
            write_checkpoint(out_dir / "checkpoints" / ("iter_" + std::to_string(it) + ".ckpt"), trainer.checkpoint());
    }
    log.flush();
    if (!log) throw IoError(result.loss_log.string(), "write failed");
    result.checkpoint = out_dir / "final.ckpt";
    write_checkpoint(result.checkpoint, trainer.checkpoint());
    return result;
}

}  // namespace ssf
