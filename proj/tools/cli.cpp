#include "cli.hpp"

#include <spdlog/spdlog.h>

#include <CLI11.hpp>
#include <algorithm>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>

#include "ssfilter/anomaly_forge.hpp"
#include "ssfilter/checkpoint.hpp"
#include "ssfilter/config.hpp"
#include "ssfilter/dataset.hpp"
#include "ssfilter/descriptor.hpp"
#include "ssfilter/errors.hpp"
#include "ssfilter/filtering.hpp"
#include "ssfilter/metrics.hpp"
#include "ssfilter/patch_scorer.hpp"
#include "ssfilter/toy_corpus.hpp"
#include "ssfilter/trainer.hpp"

namespace fs = std::filesystem;

namespace ssf::cli {

namespace {

struct ConfigArgs {
    std::string config_path;
    std::vector<std::string> overrides;
    std::optional<uint64_t> seed;
    std::string dataset;
    std::string output;
};

void add_config_options(CLI::App* cmd, ConfigArgs& a) {
    cmd->add_option("-c,--config", a.config_path, "Flat key=value config file");
    cmd->add_option("--set", a.overrides, "Override a config key (key=value), repeatable");
    cmd->add_option("--seed", a.seed, "Random seed override");
    cmd->add_option("--dataset", a.dataset, "Dataset manifest or MVTec-style directory");
    cmd->add_option("-o,--output", a.output, "Output directory");
}

PipelineConfig resolve_config(const ConfigArgs& a) {
    PipelineConfig cfg;
    if (!a.config_path.empty()) cfg = PipelineConfig::from_kv(KeyValueConfig::load(a.config_path));
    for (const auto& kv : a.overrides) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
        cfg.apply(kv.substr(0, eq), kv.substr(eq + 1));
    }
    if (a.seed) cfg.seed = *a.seed;
    if (!a.dataset.empty()) cfg.dataset = a.dataset;
    if (!a.output.empty()) cfg.output_dir = a.output;
    return cfg;
}

void require_key(const std::string& value, const std::string& key) {
    if (value.empty()) throw ConfigError("config key '" + key + "' is required");
}

void write_echo(const fs::path& dir, const std::string& name, const std::string& text) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError(dir.string(), "cannot create directory: " + ec.message());
    std::ofstream out(dir / name, std::ios::trunc);
    if (!out) throw IoError((dir / name).string(), "cannot write");
    out << text;
}

int cmd_train(const ConfigArgs& a, const std::string& resume, std::ostream& out) {
    auto cfg = resolve_config(a);
    require_key(cfg.dataset, "dataset");
    cfg.validate();
    const auto manifest = load_dataset(cfg.dataset);
    std::optional<fs::path> resume_path;
    if (!resume.empty()) resume_path = resume;
    const int64_t every = std::max<int64_t>(1, cfg.total_iterations / 20);
    const auto result = run_training(cfg, manifest, resume_path, [&](const LossReport& r) {
        if ((r.iteration + 1) % every == 0)
            spdlog::info("iter {} [{}] l_rec={:.5f} l_res={:.5f} n1={} n2={} bank={}", r.iteration + 1,
                         to_string(r.phase), r.l_rec, r.l_res, r.n1, r.n2, r.bank_size);
    });
    out << "checkpoint\t" << result.checkpoint.string() << "\n";
    out << "loss_log\t" << result.loss_log.string() << "\n";
    return kSuccess;
}

int cmd_filter(const std::string& checkpoint, const std::string& dataset, int kappa1, int kappa2,
               std::optional<uint64_t> seed, const std::string& output, std::ostream& out, std::ostream& err) {
    require_key(checkpoint, "checkpoint");
    require_key(dataset, "dataset");
    require_key(output, "output");
    if (kappa1 < 1) throw ConfigError("config key 'kappa1': must be positive");
    if (kappa2 < 0) throw ConfigError("config key 'kappa2': must be non-negative");
    if (kappa2 >= kappa1) {
        err << "WARNING: kappa2 (" << kappa2 << ") >= kappa1 (" << kappa1
            << "): no sample can be selected more than kappa2 times, EVERY SAMPLE WILL BE DROPPED\n";
    }
    const auto header = read_checkpoint_header(checkpoint);
    const auto ckpt_cfg = PipelineConfig::from_kv(KeyValueConfig::parse(header.config_text, checkpoint));
    const uint64_t s = seed.value_or(ckpt_cfg.seed);
    const auto manifest = load_dataset(dataset);
    const auto result = filter_dataset(checkpoint, manifest, kappa1, kappa2, s);
    export_manifest(output, result);
    std::ostringstream echo;
    echo << "checkpoint=" << checkpoint << "\ndataset=" << dataset << "\nkappa1=" << kappa1 << "\nkappa2=" << kappa2
         << "\nseed=" << s << "\n";
    write_echo(output, "command.txt", echo.str());
    const bool labelled = std::all_of(result.records.begin(), result.records.end(),
                                      [](const FilterRecord& r) { return r.label >= 0; });
    if (labelled) {
        const auto report = summarize_filter(result);
        write_filter_report(output, report);
        out << "input_noise_rate\t" << report.input_noise_rate << "\nkept_noise_rate\t" << report.kept_noise_rate
            << "\nutilization\t" << report.utilization << "\n";
    }
    out << "kept\t" << result.kept_paths().size() << "/" << result.records.size() << "\n";
    return kSuccess;
}

int cmd_score(const ConfigArgs& a, const std::string& split, std::ostream& out) {
    auto cfg = resolve_config(a);
    require_key(cfg.dataset, "dataset");
    cfg.validate();
    const auto manifest = load_dataset(cfg.dataset);
    const auto samples = manifest.split(split);
    if (samples.size() < 2) throw InputError("split '" + split + "' needs at least two samples to score");
    const auto backbone = make_backbone(cfg.backbone());
    const auto spec = cfg.layer_spec();
    const auto layers = spec.required_layers();
    const auto cache = DescriptorCache::from_environment();

    std::vector<PatchDescriptorBatch> singles;
    for (const auto& s : samples) {
        if (cache) {
            if (auto hit = cache->load(s.path, spec, backbone->identity())) {
                singles.push_back(std::move(*hit));
                continue;
            }
        }
        const std::vector<Image> img{load_sample(s, cfg.resize, cfg.crop)};
        auto d = build_descriptor(backbone->forward(img, layers), spec, {s.path});
        if (cache) cache->store(s.path, backbone->identity(), d);
        singles.push_back(std::move(d));
    }

    const fs::path dir = cfg.output_dir;
    write_echo(dir, "config.txt", cfg.echo());
    const auto log_path = dir / "scores.tsv";
    fs::remove(log_path);
    for (size_t start = 0; start < singles.size(); start += cfg.batch_size) {
        size_t end = std::min(singles.size(), start + cfg.batch_size);
        if (singles.size() - end < 2) end = singles.size();
        const auto batch = concat_descriptors(std::span(singles).subspan(start, end - start));
        append_score_log(log_path, batch, mutual_score(batch, cfg.scoring()));
        if (end == singles.size()) break;
    }
    out << "scores\t" << log_path.string() << "\n";
    return kSuccess;
}

int cmd_eval(const std::string& checkpoint, const std::string& dataset, const std::string& scores,
             std::optional<double> fpr_limit, const std::string& output, std::ostream& out) {
    require_key(output, "output");
    EvalReport report;
    if (!scores.empty()) {
        report = evaluate_samples(read_scored_samples(scores), fpr_limit.value_or(0.3));
    } else {
        require_key(checkpoint, "checkpoint");
        require_key(dataset, "dataset");
        if (fpr_limit) throw ConfigError("--fpr-limit applies to --scores input; checkpoints use their fpr_limit key");
        report = evaluate_checkpoint(checkpoint, load_dataset(dataset));
    }
    write_eval_report(output, report);
    out << "fpr_limit\t" << report.fpr_limit << "\n";
    for (const auto& c : report.categories)
        out << c.category << "\t" << c.i_auroc << "\t" << c.p_aupro << "\n";
    out << "mean\t" << report.mean_i_auroc << "\t" << report.mean_p_aupro << "\n";
    return kSuccess;
}

int cmd_inject(const std::string& dataset, double alpha, uint64_t seed, const std::string& output,
               std::ostream& out) {
    require_key(dataset, "dataset");
    require_key(output, "output");
    const auto clean = load_dataset(dataset);
    const auto pool = anomaly_pool(clean);
    const auto noisy = inject_noise(clean, pool, alpha, seed);
    write_manifest(output, noisy);
    out << "realized_noise_rate\t" << noisy.realized_noise_rate() << "\n";
    return kSuccess;
}

int cmd_dump_bank(const std::string& checkpoint, const std::string& output, std::ostream& out) {
    require_key(checkpoint, "checkpoint");
    require_key(output, "output");
    const auto ckpt = read_checkpoint(checkpoint);
    MaterialBank bank(std::max<uint64_t>(1, ckpt.bank_capacity));
    bank.restore(std::deque<MaterialPatch>(ckpt.bank.begin(), ckpt.bank.end()), ckpt.bank_total_added);
    bank.dump(output);
    out << "materials\t" << bank.size() << "\n";
    return kSuccess;
}

int cmd_synth(const ToyCorpusOptions& opts, const std::string& output, std::ostream& out) {
    require_key(output, "output");
    generate_toy_corpus(output, opts);
    out << "corpus\t" << output << "\n";
    return kSuccess;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Sample-level noise filtering for fully unsupervised anomaly detection", "ssfilter"};
    app.require_subcommand(1);
    bool verbose = false, quiet = false;
    app.add_flag("-v,--verbose", verbose, "Debug logging");
    app.add_flag("-q,--quiet", quiet, "Warnings and errors only");

    ConfigArgs train_args, score_args;
    std::string resume;
    auto* train = app.add_subcommand("train", "Train the filter model");
    add_config_options(train, train_args);
    train->add_option("--resume", resume, "Checkpoint to resume from");

    std::string f_ckpt, f_dataset, f_output;
    int kappa1 = 20, kappa2 = 5;
    std::optional<uint64_t> f_seed;
    auto* filter = app.add_subcommand("filter", "Vote-based dataset filtering with a trained checkpoint");
    filter->add_option("--checkpoint", f_ckpt, "Trained checkpoint")->required();
    filter->add_option("--dataset", f_dataset, "Dataset manifest or MVTec-style directory")->required();
    filter->add_option("--kappa1", kappa1, "Number of shuffled epochs")->capture_default_str();
    filter->add_option("--kappa2", kappa2, "Keep samples selected more than this many times")->capture_default_str();
    filter->add_option("--seed", f_seed, "Shuffle seed (defaults to the training seed)");
    filter->add_option("-o,--output", f_output, "Output directory")->required();

    std::string split = "train";
    auto* score = app.add_subcommand("score", "Zero-shot mutual scoring of a dataset split");
    add_config_options(score, score_args);
    score->add_option("--split", split, "Split to score")->check(CLI::IsMember({"train", "test"}));

    std::string e_ckpt, e_dataset, e_scores, e_output;
    std::optional<double> fpr_limit;
    auto* eval = app.add_subcommand("eval", "Image AUROC and region-overlap AUPRO");
    eval->add_option("--checkpoint", e_ckpt, "Trained checkpoint");
    eval->add_option("--dataset", e_dataset, "Dataset with a test split");
    eval->add_option("--scores", e_scores, "Precomputed scores/maps table instead of a checkpoint");
    eval->add_option("--fpr-limit", fpr_limit, "FPR integration limit for --scores input");
    eval->add_option("-o,--output", e_output, "Output directory")->required();

    std::string i_dataset, i_output;
    double alpha = 0.0;
    uint64_t i_seed = 0;
    auto* inject = app.add_subcommand("inject-noise", "Build a noisy benchmark manifest");
    inject->add_option("--dataset", i_dataset, "Clean dataset manifest or MVTec-style directory")->required();
    inject->add_option("--alpha", alpha, "Noise setting in [0, 1)")->required();
    inject->add_option("--seed", i_seed, "Sampling seed")->capture_default_str();
    inject->add_option("-o,--output", i_output, "Output manifest path")->required();

    std::string b_ckpt, b_output;
    auto* dump = app.add_subcommand("dump-bank", "Write the material bank of a checkpoint as PNGs");
    dump->add_option("--checkpoint", b_ckpt, "Checkpoint")->required();
    dump->add_option("-o,--output", b_output, "Output directory")->required();

    ToyCorpusOptions toy;
    std::string t_output;
    auto* synth = app.add_subcommand("synth-corpus", "Generate the procedural shapes corpus");
    synth->add_option("--categories", toy.categories, "Categories (disc, tile, ring)")->delimiter(',');
    synth->add_option("--size", toy.image_size, "Image side in pixels")->capture_default_str();
    synth->add_option("--train-good", toy.train_good, "Normal train images per category")->capture_default_str();
    synth->add_option("--test-good", toy.test_good, "Normal test images per category")->capture_default_str();
    synth->add_option("--test-defect", toy.test_defect_per_type, "Test images per defect type")
        ->capture_default_str();
    synth->add_option("--seed", toy.seed, "Generator seed")->capture_default_str();
    synth->add_option("-o,--output", t_output, "Output root")->required();

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return kSuccess;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return kSuccess;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n";
        return kUsageError;
    }
    spdlog::set_level(verbose ? spdlog::level::debug : quiet ? spdlog::level::warn : spdlog::level::info);

    try {
        if (*train) return cmd_train(train_args, resume, out);
        if (*filter) return cmd_filter(f_ckpt, f_dataset, kappa1, kappa2, f_seed, f_output, out, err);
        if (*score) return cmd_score(score_args, split, out);
        if (*eval) return cmd_eval(e_ckpt, e_dataset, e_scores, fpr_limit, e_output, out);
        if (*inject) return cmd_inject(i_dataset, alpha, i_seed, i_output, out);
        if (*dump) return cmd_dump_bank(b_ckpt, b_output, out);
        if (*synth) return cmd_synth(toy, t_output, out);
    } catch (const ConfigError& e) {
        err << "config error: " << e.what() << "\n";
        return kUsageError;
    } catch (const IoError& e) {
        err << "i/o error: " << e.what() << "\n";
        return kRuntimeFailure;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kRuntimeFailure;
    }
    return kUsageError;
}

}  // namespace ssf::cli
