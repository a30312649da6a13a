#include "ssfilter/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <random>
#include <set>
#include <sstream>

#include "ssfilter/errors.hpp"

namespace fs = std::filesystem;

namespace ssf {

namespace {

constexpr const char* kManifestTag = "#ssfilter-manifest";

std::vector<std::string> split_tabs(const std::string& line) {
    std::vector<std::string> out;
    std::string cell;
    std::stringstream ss(line);
    while (std::getline(ss, cell, '\t')) out.push_back(cell);
    if (!line.empty() && line.back() == '\t') out.emplace_back();
    return out;
}

std::vector<fs::path> sorted_pngs(const fs::path& dir) {
    std::vector<fs::path> out;
    if (!fs::is_directory(dir)) return out;
    for (const auto& e : fs::directory_iterator(dir)) {
        auto ext = e.path().extension().string();
        std::transform(ext.begin(), ext.end(), ext.begin(), ::tolower);
        if (e.is_regular_file() && ext == ".png") out.push_back(e.path());
    }
    std::sort(out.begin(), out.end());
    return out;
}

std::vector<fs::path> sorted_subdirs(const fs::path& dir) {
    std::vector<fs::path> out;
    if (!fs::is_directory(dir)) return out;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.is_directory()) out.push_back(e.path());
    std::sort(out.begin(), out.end());
    return out;
}

}  // namespace

std::vector<SampleRecord> DatasetManifest::split(const std::string& name) const {
    std::vector<SampleRecord> out;
    for (const auto& s : samples)
        if (s.split == name) out.push_back(s);
    return out;
}

std::vector<std::string> DatasetManifest::categories() const {
    std::set<std::string> cats;
    for (const auto& s : samples) cats.insert(s.category);
    return {cats.begin(), cats.end()};
}

double DatasetManifest::realized_noise_rate() const {
    int total = 0, anomalous = 0;
    for (const auto& s : samples) {
        if (s.split != "train" || s.label < 0) continue;
        ++total;
        anomalous += s.label == 1;
    }
    return total == 0 ? 0.0 : static_cast<double>(anomalous) / total;
}

void DatasetManifest::validate() const {
    std::set<std::string> seen;
    for (const auto& s : samples) {
        if (s.split != "train" && s.split != "test")
            throw InputError("manifest sample " + s.path + " has unknown split '" + s.split + "'");
        if (!seen.insert(s.path).second) throw InputError("manifest path listed twice: " + s.path);
    }
}

void write_manifest(const fs::path& path, const DatasetManifest& m) {
    m.validate();
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw IoError(path.string(), "cannot write manifest");
    out.precision(17);
    out << kManifestTag << "\talpha=" << m.alpha << "\tseed=" << m.seed
        << "\trealized_noise_rate=" << m.realized_noise_rate()
        << "\tcolumns=path,split,label,category,mask,defect\n";
    for (const auto& s : m.samples)
        out << s.path << '\t' << s.split << '\t' << s.label << '\t' << s.category << '\t' << s.mask_path << '\t'
            << s.defect << '\n';
    if (!out) throw IoError(path.string(), "write failed");
}

DatasetManifest read_manifest(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError(path.string(), "cannot open manifest");
    std::string line;
    if (!std::getline(in, line) || line.rfind(kManifestTag, 0) != 0)
        throw IoError(path.string(), "missing manifest header");
    DatasetManifest m;
    for (const auto& cell : split_tabs(line)) {
        const auto eq = cell.find('=');
        if (eq == std::string::npos) continue;
        const auto key = cell.substr(0, eq), value = cell.substr(eq + 1);
        try {
            if (key == "alpha") m.alpha = std::stod(value);
            if (key == "seed") m.seed = std::stoull(value);
        } catch (const std::exception&) {
            throw IoError(path.string(), "bad header field " + cell);
        }
    }
    const auto base = path.parent_path();
    auto resolve = [&](const std::string& p) {
        if (p.empty() || fs::path(p).is_absolute()) return p;
        return (base / p).lexically_normal().string();
    };
    int lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        const auto cells = split_tabs(line);
        if (cells.size() != 6)
            throw IoError(path.string(), "line " + std::to_string(lineno) + ": expected 6 columns");
        SampleRecord s;
        s.path = resolve(cells[0]);
        s.split = cells[1];
        try {
            s.label = std::stoi(cells[2]);
        } catch (const std::exception&) {
            throw IoError(path.string(), "line " + std::to_string(lineno) + ": bad label");
        }
        s.category = cells[3];
        s.mask_path = resolve(cells[4]);
        s.defect = cells[5];
        m.samples.push_back(std::move(s));
    }
    m.validate();
    return m;
}

DatasetManifest ingest_mvtec(const fs::path& root, std::span<const std::string> categories) {
    if (!fs::is_directory(root)) throw IoError(root.string(), "dataset directory not found");
    std::vector<fs::path> cat_dirs;
    if (categories.empty()) {
        for (const auto& d : sorted_subdirs(root))
            if (fs::is_directory(d / "train" / "good")) cat_dirs.push_back(d);
    } else {
        for (const auto& c : categories) {
            if (!fs::is_directory(root / c / "train" / "good"))
                throw IoError((root / c).string(), "category has no train/good directory");
            cat_dirs.push_back(root / c);
        }
    }
    if (cat_dirs.empty()) throw IoError(root.string(), "no MVTec-style categories found");

    DatasetManifest m;
    for (const auto& cat_dir : cat_dirs) {
        const auto cat = cat_dir.filename().string();
        for (const auto& p : sorted_pngs(cat_dir / "train" / "good"))
            m.samples.push_back({fs::absolute(p).lexically_normal().string(), "train", 0, cat, "", "good"});
        for (const auto& defect_dir : sorted_subdirs(cat_dir / "test")) {
            const auto defect = defect_dir.filename().string();
            const bool good = defect == "good";
            for (const auto& p : sorted_pngs(defect_dir)) {
                std::string mask;
                if (!good) {
                    const auto mp = cat_dir / "ground_truth" / defect / (p.stem().string() + "_mask.png");
                    if (fs::exists(mp)) mask = fs::absolute(mp).lexically_normal().string();
                }
                m.samples.push_back(
                    {fs::absolute(p).lexically_normal().string(), "test", good ? 0 : 1, cat, mask, defect});
            }
        }
    }
    m.validate();
    return m;
}

DatasetManifest load_dataset(const fs::path& path) {
    if (fs::is_directory(path)) return ingest_mvtec(path);
    return read_manifest(path);
}

std::vector<SampleRecord> anomaly_pool(const DatasetManifest& manifest) {
    std::vector<SampleRecord> pool;
    for (const auto& s : manifest.samples)
        if (s.split == "test" && s.label == 1) pool.push_back(s);
    return pool;
}

int injection_count(int clean, double alpha) {
    if (alpha < 0 || alpha >= 1) throw InputError("noise setting alpha must be in [0, 1)");
    return static_cast<int>(std::lround(alpha * clean / (1.0 - alpha)));
}

DatasetManifest inject_noise(const DatasetManifest& clean, std::span<const SampleRecord> pool, double alpha,
                             uint64_t seed) {
    clean.validate();
    DatasetManifest out = clean;
    out.alpha = alpha;
    out.seed = seed;
    if (alpha == 0.0) return out;

    std::set<std::string> train_paths;
    std::map<std::string, int> clean_counts;
    for (const auto& s : clean.samples) {
        if (s.split != "train") continue;
        train_paths.insert(s.path);
        clean_counts[s.category]++;
    }
    std::map<std::string, std::vector<SampleRecord>> pool_by_cat;
    for (const auto& p : pool) {
        if (train_paths.count(p.path)) throw InputError("anomaly pool overlaps the train split: " + p.path);
        pool_by_cat[p.category].push_back(p);
    }

    std::mt19937_64 rng(seed);
    std::set<std::string> moved;
    std::vector<SampleRecord> added;
    for (const auto& [cat, n_clean] : clean_counts) {
        const int need = injection_count(n_clean, alpha);
        auto& candidates = pool_by_cat[cat];
        if (static_cast<int>(candidates.size()) < need)
            throw InputError("category " + cat + ": noise setting " + std::to_string(alpha) + " requires " +
                             std::to_string(need) + " anomalous samples, pool has " +
                             std::to_string(candidates.size()));
        std::shuffle(candidates.begin(), candidates.end(), rng);
        for (int i = 0; i < need; ++i) {
            auto s = candidates[i];
            s.split = "train";
            s.label = 1;
            moved.insert(s.path);
            added.push_back(std::move(s));
        }
    }
    std::erase_if(out.samples, [&](const SampleRecord& s) { return s.split == "test" && moved.count(s.path); });
    out.samples.insert(out.samples.end(), added.begin(), added.end());
    out.validate();
    return out;
}

Image load_sample(const SampleRecord& sample, int resize, int crop) {
    return preprocess(read_png(sample.path), resize, crop);
}

}  // namespace ssf
