#include "ssfilter/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <set>
#include <sstream>

#include "ssfilter/checkpoint.hpp"
#include "ssfilter/errors.hpp"
#include "ssfilter/trainer.hpp"

namespace fs = std::filesystem;

namespace ssf {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

/// 8-connected component labels (-1 for background); returns the component count.
int label_components(const BinaryGrid& mask, std::vector<int>& labels) {
    labels.assign(mask.cells.size(), -1);
    int next = 0;
    std::vector<int> stack;
    for (int y = 0; y < mask.height; ++y)
        for (int x = 0; x < mask.width; ++x) {
            const int start = y * mask.width + x;
            if (!mask.cells[start] || labels[start] >= 0) continue;
            labels[start] = next;
            stack.push_back(start);
            while (!stack.empty()) {
                const int cur = stack.back();
                stack.pop_back();
                const int cx = cur % mask.width, cy = cur / mask.width;
                for (int dy = -1; dy <= 1; ++dy)
                    for (int dx = -1; dx <= 1; ++dx) {
                        const int nx = cx + dx, ny = cy + dy;
                        if (nx < 0 || ny < 0 || nx >= mask.width || ny >= mask.height) continue;
                        const int ni = ny * mask.width + nx;
                        if (mask.cells[ni] && labels[ni] < 0) {
                            labels[ni] = next;
                            stack.push_back(ni);
                        }
                    }
            }
            ++next;
        }
    return next;
}

std::string fmt(double v) {
    if (std::isnan(v)) return "nan";
    std::ostringstream os;
    os.precision(6);
    os << std::fixed << v;
    return os.str();
}

std::string xml_escape(const std::string& s) {
    std::string out;
    for (char c : s) {
        switch (c) {
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            case '&': out += "&amp;"; break;
            default: out += c;
        }
    }
    return out;
}

/// Grouped bar chart with values in [0, 1].
std::string svg_bars(const std::string& title, const std::vector<std::string>& groups,
                     const std::vector<std::string>& series, const std::vector<std::vector<double>>& values) {
    static const char* colors[] = {"#4e79a7", "#f28e2b", "#59a14f", "#e15759"};
    const int bar_w = 22, gap = 18, left = 50, top = 40, plot_h = 200;
    const int group_w = static_cast<int>(series.size()) * bar_w + gap;
    const int width = left + std::max<int>(1, static_cast<int>(groups.size())) * group_w + 150;
    const int height = top + plot_h + 70;
    std::ostringstream svg;
    svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height << "\">\n";
    svg << "<text x=\"" << left << "\" y=\"20\" font-family=\"sans-serif\" font-size=\"14\">" << xml_escape(title)
        << "</text>\n";
    for (int t = 0; t <= 4; ++t) {
        const double y = top + plot_h - plot_h * t / 4.0;
        svg << "<line x1=\"" << left << "\" x2=\"" << width - 150 << "\" y1=\"" << y << "\" y2=\"" << y
            << "\" stroke=\"#ddd\"/>\n<text x=\"" << left - 35 << "\" y=\"" << y + 4
            << "\" font-family=\"sans-serif\" font-size=\"10\">" << fmt(t / 4.0).substr(0, 4) << "</text>\n";
    }
    for (size_t g = 0; g < groups.size(); ++g) {
        const int x0 = left + static_cast<int>(g) * group_w + gap / 2;
        for (size_t s = 0; s < series.size(); ++s) {
            const double v = values[g][s];
            const double h = std::isnan(v) ? 0.0 : plot_h * std::clamp(v, 0.0, 1.0);
            svg << "<rect x=\"" << x0 + static_cast<int>(s) * bar_w << "\" y=\"" << top + plot_h - h << "\" width=\""
                << bar_w - 2 << "\" height=\"" << h << "\" fill=\"" << colors[s % 4] << "\"><title>"
                << xml_escape(series[s]) << ": " << fmt(v) << "</title></rect>\n";
        }
        svg << "<text x=\"" << x0 << "\" y=\"" << top + plot_h + 15 << "\" font-family=\"sans-serif\" font-size=\"10\">"
            << xml_escape(groups[g]) << "</text>\n";
    }
    for (size_t s = 0; s < series.size(); ++s) {
        const int y = top + 10 + static_cast<int>(s) * 16;
        svg << "<rect x=\"" << width - 140 << "\" y=\"" << y - 9 << "\" width=\"10\" height=\"10\" fill=\""
            << colors[s % 4] << "\"/><text x=\"" << width - 125 << "\" y=\"" << y
            << "\" font-family=\"sans-serif\" font-size=\"11\">" << xml_escape(series[s]) << "</text>\n";
    }
    svg << "</svg>\n";
    return svg.str();
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError(path.string(), "cannot write file");
    out << text;
    if (!out) throw IoError(path.string(), "write failed");
}

BinaryGrid preprocess_mask(const BinaryGrid& mask, int resize, int crop) {
    Image img(mask.width, mask.height, 1);
    for (size_t i = 0; i < mask.cells.size(); ++i) img.pixels[i] = mask.cells[i] ? 1.0f : 0.0f;
    const Image p = preprocess(img, resize, crop);
    BinaryGrid out(p.width, p.height);
    for (int y = 0; y < p.height; ++y)
        for (int x = 0; x < p.width; ++x) out.set(x, y, p.at(x, y, 0) > 0.5f);
    return out;
}

}  // namespace

double image_auroc(std::span<const double> scores, std::span<const int> labels) {
    if (scores.size() != labels.size()) throw InputError("auroc: score and label counts differ");
    const size_t n = scores.size();
    size_t pos = 0;
    for (size_t i = 0; i < n; ++i) {
        if (labels[i] != 0 && labels[i] != 1) throw InputError("auroc: labels must be 0 or 1");
        if (std::isnan(scores[i])) throw InputError("auroc: NaN score");
        pos += labels[i];
    }
    const size_t neg = n - pos;
    if (pos == 0 || neg == 0) throw UndefinedMetricError("auroc needs both normal and anomalous samples");
    std::vector<size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](size_t a, size_t b) { return scores[a] < scores[b]; });
    double rank_sum = 0.0;
    for (size_t i = 0; i < n;) {
        size_t j = i;
        while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
        const double mid = (static_cast<double>(i) + j) / 2.0 + 1.0;
        for (size_t k = i; k <= j; ++k)
            if (labels[order[k]] == 1) rank_sum += mid;
        i = j + 1;
    }
    const double p = static_cast<double>(pos), q = static_cast<double>(neg);
    return (rank_sum - p * (p + 1) / 2.0) / (p * q);
}

ProCurve pro_curve(std::span<const std::vector<float>> maps, std::span<const BinaryGrid> masks) {
    if (maps.size() != masks.size()) throw InputError("pro: map and mask counts differ");
    struct Pixel {
        float value;
        int region;
    };
    std::vector<Pixel> pixels;
    std::vector<double> region_size;
    size_t normal = 0;
    std::vector<int> labels;
    for (size_t i = 0; i < maps.size(); ++i) {
        const auto& m = masks[i];
        if (maps[i].size() != m.cells.size()) throw InputError("pro: map and mask sizes differ");
        const int base = static_cast<int>(region_size.size());
        const int count = label_components(m, labels);
        region_size.resize(base + count, 0.0);
        for (size_t p = 0; p < labels.size(); ++p) {
            const float v = maps[i][p];
            if (std::isnan(v)) throw InputError("pro: NaN in anomaly map");
            const int r = labels[p] >= 0 ? base + labels[p] : -1;
            if (r >= 0)
                region_size[r] += 1.0;
            else
                ++normal;
            pixels.push_back({v, r});
        }
    }
    if (region_size.empty()) throw UndefinedMetricError("pro: no anomalous pixels in any mask");
    if (normal == 0) throw UndefinedMetricError("pro: no normal pixels, FPR undefined");
    std::sort(pixels.begin(), pixels.end(), [](const Pixel& a, const Pixel& b) { return a.value > b.value; });

    const double regions = static_cast<double>(region_size.size());
    ProCurve c{{0.0}, {0.0}};
    double fp = 0.0, overlap = 0.0;
    for (size_t i = 0; i < pixels.size();) {
        const float v = pixels[i].value;
        for (; i < pixels.size() && pixels[i].value == v; ++i) {
            if (pixels[i].region < 0)
                fp += 1.0;
            else
                overlap += 1.0 / region_size[pixels[i].region];
        }
        c.fpr.push_back(fp / static_cast<double>(normal));
        c.pro.push_back(overlap / regions);
    }
    return c;
}

double normalized_area(const ProCurve& c, double limit) {
    if (limit <= 0) throw InputError("integration limit must be positive");
    double area = 0.0;
    for (size_t i = 1; i < c.fpr.size(); ++i) {
        const double x0 = c.fpr[i - 1], x1 = c.fpr[i];
        if (x0 >= limit) break;
        const double y0 = c.pro[i - 1], y1 = c.pro[i];
        if (x1 <= limit) {
            area += (x1 - x0) * (y0 + y1) / 2.0;
        } else {
            const double y_lim = y0 + (y1 - y0) * (limit - x0) / (x1 - x0);
            area += (limit - x0) * (y0 + y_lim) / 2.0;
            break;
        }
    }
    return area / limit;
}

double region_pro_auc(std::span<const std::vector<float>> maps, std::span<const BinaryGrid> masks, double fpr_limit) {
    return normalized_area(pro_curve(maps, masks), fpr_limit);
}

double abnormal_recall(std::span<const SelectionLog::Row> rows, const std::map<std::string, int>& labels) {
    int anomalous = 0, discarded = 0;
    for (const auto& r : rows) {
        const auto it = labels.find(r.image_id);
        if (it == labels.end() || it->second != 1) continue;
        ++anomalous;
        discarded += r.g == 0;
    }
    if (anomalous == 0) throw UndefinedMetricError("abnormal recall needs anomalous samples");
    return static_cast<double>(discarded) / anomalous;
}

std::vector<uint8_t> discard_by_score(std::span<const double> scores, double discard_fraction) {
    if (discard_fraction < 0 || discard_fraction > 1) throw InputError("discard fraction must lie in [0, 1]");
    const size_t n = scores.size();
    const size_t drop = static_cast<size_t>(std::floor(discard_fraction * n));
    std::vector<size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) { return scores[a] < scores[b]; });
    std::vector<uint8_t> keep(n, 1);
    for (size_t i = n - drop; i < n; ++i) keep[order[i]] = 0;
    return keep;
}

EvalReport evaluate_samples(std::span<const ScoredSample> samples, double fpr_limit) {
    EvalReport report;
    report.fpr_limit = fpr_limit;
    std::set<std::string> cats;
    for (const auto& s : samples) cats.insert(s.category);
    if (cats.empty()) throw UndefinedMetricError("no samples to evaluate");
    double sum_auroc = 0, sum_pro = 0;
    int pro_count = 0;
    for (const auto& cat : cats) {
        CategoryMetrics m;
        m.category = cat;
        std::vector<double> scores;
        std::vector<int> labels;
        std::vector<std::vector<float>> maps;
        std::vector<BinaryGrid> masks;
        for (const auto& s : samples) {
            if (s.category != cat) continue;
            scores.push_back(s.score);
            labels.push_back(s.label);
            (s.label == 1 ? m.n_anomalous : m.n_normal)++;
            if (!s.map.empty()) {
                maps.push_back(s.map);
                masks.push_back(s.mask);
            }
        }
        try {
            m.i_auroc = image_auroc(scores, labels);
        } catch (const UndefinedMetricError& e) {
            throw UndefinedMetricError("category " + cat + ": " + e.what());
        }
        m.p_aupro = kNaN;
        if (maps.size() == scores.size()) {
            try {
                m.p_aupro = region_pro_auc(maps, masks, fpr_limit);
            } catch (const UndefinedMetricError&) {
            }
        }
        sum_auroc += m.i_auroc;
        if (!std::isnan(m.p_aupro)) {
            sum_pro += m.p_aupro;
            ++pro_count;
        }
        report.categories.push_back(m);
    }
    report.mean_i_auroc = sum_auroc / static_cast<double>(report.categories.size());
    report.mean_p_aupro = pro_count ? sum_pro / pro_count : kNaN;
    return report;
}

std::vector<ScoredSample> score_samples(const PipelineConfig& cfg, const ReconModel& model,
                                        const BackbonePort& backbone, std::span<const SampleRecord> samples) {
    std::vector<ScoredSample> out;
    nn::NoGradGuard no_grad;
    std::mt19937_64 unused(0);
    constexpr size_t kChunk = 16;
    for (size_t start = 0; start < samples.size(); start += kChunk) {
        const size_t end = std::min(samples.size(), start + kChunk);
        std::vector<Image> imgs;
        for (size_t i = start; i < end; ++i) imgs.push_back(load_sample(samples[i], cfg.resize, cfg.crop));
        const auto rec = forward_reconstruct(backbone, model, imgs, false, unused);
        const auto pred = rec.prediction_values();
        for (size_t i = start; i < end; ++i) {
            const int b = static_cast<int>(i - start);
            const auto& s = samples[i];
            const int w = imgs[b].width, h = imgs[b].height;
            auto coarse = anomaly_map(rec.targets, pred, b);
            auto fine = gaussian_blur(upsample_map_bilinear(coarse, rec.targets.grid_w, rec.targets.grid_h, w, h), w,
                                      h, static_cast<float>(cfg.eval_sigma));
            ScoredSample ss;
            ss.path = s.path;
            ss.category = s.category;
            ss.label = s.label == 1 ? 1 : 0;
            ss.score = image_score_from_map(fine, 0.01);
            ss.map = std::move(fine);
            ss.mask = BinaryGrid(w, h);
            if (s.label == 1 && !s.mask_path.empty()) ss.mask = preprocess_mask(read_mask_png(s.mask_path), cfg.resize, cfg.crop);
            out.push_back(std::move(ss));
        }
    }
    return out;
}

EvalReport evaluate_checkpoint(const fs::path& checkpoint, const DatasetManifest& manifest) {
    const auto ckpt = read_checkpoint(checkpoint);
    const auto cfg = PipelineConfig::from_kv(KeyValueConfig::parse(ckpt.config_text, checkpoint.string()));
    const auto backbone = make_backbone(cfg.backbone());
    if (backbone->identity() != ckpt.backbone_identity || backbone->weights_hash() != ckpt.backbone_hash)
        throw InputError("backbone does not match the one recorded in " + checkpoint.string());
    const auto loaded = load_model(ckpt, backbone->embed_dim());
    const auto test = manifest.split("test");
    if (test.empty()) throw InputError("manifest has no test samples");
    const auto scored = score_samples(cfg, *loaded.model, *backbone, test);
    return evaluate_samples(scored, cfg.fpr_limit);
}

std::vector<ScoredSample> read_scored_samples(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError(path.string(), "cannot open scores file");
    std::string line;
    std::getline(in, line);
    std::vector<ScoredSample> out;
    int lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::vector<std::string> cells;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, '\t')) cells.push_back(cell);
        if (cells.size() < 4) throw IoError(path.string(), "line " + std::to_string(lineno) + ": expected >= 4 columns");
        ScoredSample s;
        s.path = cells[0];
        s.category = cells[1];
        try {
            s.label = std::stoi(cells[2]);
            s.score = std::stod(cells[3]);
        } catch (const std::exception&) {
            throw IoError(path.string(), "line " + std::to_string(lineno) + ": bad label or score");
        }
        const auto base = path.parent_path();
        auto resolve = [&](const std::string& p) { return fs::path(p).is_absolute() ? fs::path(p) : base / p; };
        if (cells.size() > 4 && !cells[4].empty()) {
            const Image m = read_png(resolve(cells[4]));
            s.map.resize(static_cast<size_t>(m.width) * m.height);
            for (int y = 0; y < m.height; ++y)
                for (int x = 0; x < m.width; ++x) s.map[y * m.width + x] = m.at(x, y, 0);
            s.mask = BinaryGrid(m.width, m.height);
            if (cells.size() > 5 && !cells[5].empty()) s.mask = read_mask_png(resolve(cells[5]));
        }
        out.push_back(std::move(s));
    }
    return out;
}

void write_eval_report(const fs::path& dir, const EvalReport& r) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError(dir.string(), "cannot create directory: " + ec.message());
    std::ostringstream tsv;
    tsv << "#ssfilter-eval\tfpr_limit=" << r.fpr_limit << "\tmean_i_auroc=" << fmt(r.mean_i_auroc)
        << "\tmean_p_aupro=" << fmt(r.mean_p_aupro) << "\n";
    tsv << "category\ti_auroc\tp_aupro\tn_normal\tn_anomalous\n";
    std::vector<std::string> groups;
    std::vector<std::vector<double>> values;
    for (const auto& c : r.categories) {
        tsv << c.category << '\t' << fmt(c.i_auroc) << '\t' << fmt(c.p_aupro) << '\t' << c.n_normal << '\t'
            << c.n_anomalous << '\n';
        groups.push_back(c.category);
        values.push_back({c.i_auroc, c.p_aupro});
    }
    write_text(dir / "eval_report.tsv", tsv.str());
    write_text(dir / "eval_bars.svg",
               svg_bars("Per-category I-AUROC / P-AUPRO (FPR limit " + fmt(r.fpr_limit).substr(0, 4) + ")", groups,
                        {"I-AUROC", "P-AUPRO"}, values));
}

EvalReport read_eval_report(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError(path.string(), "cannot open eval report");
    std::string line;
    if (!std::getline(in, line) || line.rfind("#ssfilter-eval", 0) != 0)
        throw IoError(path.string(), "missing eval report header");
    EvalReport r;
    std::stringstream header(line);
    std::string cell;
    while (std::getline(header, cell, '\t')) {
        const auto eq = cell.find('=');
        if (eq == std::string::npos) continue;
        const auto key = cell.substr(0, eq), value = cell.substr(eq + 1);
        const double v = value == "nan" ? kNaN : std::stod(value);
        if (key == "fpr_limit") r.fpr_limit = v;
        if (key == "mean_i_auroc") r.mean_i_auroc = v;
        if (key == "mean_p_aupro") r.mean_p_aupro = v;
    }
    std::getline(in, line);  // column names
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::stringstream row(line);
        CategoryMetrics c;
        std::string a, p, nn, na;
        std::getline(row, c.category, '\t');
        std::getline(row, a, '\t');
        std::getline(row, p, '\t');
        std::getline(row, nn, '\t');
        std::getline(row, na, '\t');
        c.i_auroc = a == "nan" ? kNaN : std::stod(a);
        c.p_aupro = p == "nan" ? kNaN : std::stod(p);
        c.n_normal = std::stoi(nn);
        c.n_anomalous = std::stoi(na);
        r.categories.push_back(c);
    }
    return r;
}

void write_filter_report(const fs::path& dir, const FilterReport& r) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError(dir.string(), "cannot create directory: " + ec.message());
    std::ostringstream tsv;
    tsv << "total\tkept\tinput_noise_rate\tkept_noise_rate\tutilization\n"
        << r.total << '\t' << r.kept << '\t' << fmt(r.input_noise_rate) << '\t' << fmt(r.kept_noise_rate) << '\t'
        << fmt(r.utilization) << '\n';
    write_text(dir / "filter_report.tsv", tsv.str());
    write_text(dir / "filter_report.svg",
               svg_bars("Noise rate before/after filtering and normal-sample utilisation",
                        {"noise rate", "utilisation"}, {"input", "kept"},
                        {{r.input_noise_rate, r.kept_noise_rate}, {1.0, r.utilization}}));
}

}  // namespace ssf
