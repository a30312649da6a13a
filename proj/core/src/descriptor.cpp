#include "ssfilter/descriptor.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

#include "ssfilter/errors.hpp"

namespace ssf {

namespace {

std::vector<int> parse_int_list(const std::string& text) {
    std::vector<int> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (item.empty()) continue;
        try {
            size_t used = 0;
            out.push_back(std::stoi(item, &used));
            if (used != item.size()) throw std::invalid_argument(item);
        } catch (const std::exception&) {
            throw ConfigError("bad layer index '" + item + "'");
        }
    }
    return out;
}

std::string join(const std::vector<int>& v) {
    std::string s;
    for (size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
    return s;
}

}  // namespace

LayerSpec::LayerSpec(std::vector<int> concat, std::vector<int> mean)
    : concat_layers(std::move(concat)), mean_layers(std::move(mean)) {
    std::sort(concat_layers.begin(), concat_layers.end());
    concat_layers.erase(std::unique(concat_layers.begin(), concat_layers.end()), concat_layers.end());
    if (concat_layers.empty() && mean_layers.empty()) throw ConfigError("layer spec selects no layers");
}

LayerSpec LayerSpec::parse(const std::string& text) {
    const auto bar = text.find('|');
    if (bar == std::string::npos) return LayerSpec(parse_int_list(text), {});
    return LayerSpec(parse_int_list(text.substr(0, bar)), parse_int_list(text.substr(bar + 1)));
}

std::vector<int> LayerSpec::required_layers() const {
    std::set<int> all(concat_layers.begin(), concat_layers.end());
    all.insert(mean_layers.begin(), mean_layers.end());
    return {all.begin(), all.end()};
}

int LayerSpec::descriptor_dim(int channels) const {
    return static_cast<int>(concat_layers.size()) * channels + (mean_layers.empty() ? 0 : channels);
}

std::string LayerSpec::to_string() const { return join(concat_layers) + "|" + join(mean_layers); }

LayerFeatureMap extract_layer_features(const BackbonePort& backbone, std::span<const Image> images,
                                       std::span<const int> layers) {
    for (int l : layers)
        if (l < 0 || l >= backbone.layer_count())
            throw ConfigError("unknown layer index " + std::to_string(l));
    for (const auto& img : images)
        if (img.width % backbone.patch_size() != 0 || img.height % backbone.patch_size() != 0)
            throw InputError("image side not divisible by patch size");
    return backbone.forward(images, layers);
}

PatchDescriptorBatch build_descriptor(const LayerFeatureMap& per_layer, const LayerSpec& spec,
                                      std::vector<std::string> image_ids) {
    const auto required = spec.required_layers();
    for (int l : required)
        if (!per_layer.count(l)) throw ConfigError("descriptor layer " + std::to_string(l) + " not extracted");
    const FeatureStack& ref = per_layer.at(required.front());
    for (int l : required) {
        const auto& fs = per_layer.at(l);
        if (fs.batch != ref.batch || fs.grid_h != ref.grid_h || fs.grid_w != ref.grid_w ||
            fs.channels != ref.channels)
            throw InputError("inconsistent patch grids across descriptor layers");
    }
    const int C = ref.channels;
    const int N = ref.tokens();
    PatchDescriptorBatch out;
    out.batch = ref.batch;
    out.grid_h = ref.grid_h;
    out.grid_w = ref.grid_w;
    out.dim = spec.descriptor_dim(C);
    out.layer_spec = spec;
    if (image_ids.empty())
        for (int b = 0; b < ref.batch; ++b) image_ids.push_back(std::to_string(b));
    if (static_cast<int>(image_ids.size()) != ref.batch) throw InputError("image id count differs from batch");
    out.image_ids = std::move(image_ids);
    out.data.assign(static_cast<size_t>(out.batch) * N * out.dim, 0.0f);

    const float inv_mean = spec.mean_layers.empty() ? 0.0f : 1.0f / static_cast<float>(spec.mean_layers.size());
    for (int b = 0; b < out.batch; ++b)
        for (int p = 0; p < N; ++p) {
            float* dst = out.data.data() + (static_cast<size_t>(b) * N + p) * out.dim;
            const size_t src_off = (static_cast<size_t>(b) * N + p) * C;
            int block = 0;
            for (int l : spec.concat_layers) {
                const float* src = per_layer.at(l).data.data() + src_off;
                std::copy(src, src + C, dst + block * C);
                ++block;
            }
            if (!spec.mean_layers.empty()) {
                float* mean = dst + block * C;
                for (int l : spec.mean_layers) {
                    const float* src = per_layer.at(l).data.data() + src_off;
                    for (int c = 0; c < C; ++c) mean[c] += src[c];
                }
                for (int c = 0; c < C; ++c) mean[c] *= inv_mean;
            }
        }
    return out;
}

PatchDescriptorBatch concat_descriptors(std::span<const PatchDescriptorBatch> parts) {
    if (parts.empty()) throw InputError("no descriptor batches to concatenate");
    PatchDescriptorBatch out = parts[0];
    for (size_t i = 1; i < parts.size(); ++i) {
        const auto& p = parts[i];
        if (p.grid_h != out.grid_h || p.grid_w != out.grid_w || p.dim != out.dim || !(p.layer_spec == out.layer_spec))
            throw InputError("descriptor batches are not compatible");
        out.batch += p.batch;
        out.image_ids.insert(out.image_ids.end(), p.image_ids.begin(), p.image_ids.end());
        out.data.insert(out.data.end(), p.data.begin(), p.data.end());
    }
    return out;
}

ForegroundMask estimate_foreground(std::span<const float> features, int channels, int grid_h, int grid_w) {
    const int N = grid_h * grid_w;
    if (static_cast<size_t>(N) * channels != features.size())
        throw InputError("foreground: feature count does not match grid");
    using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    RowMat X = Eigen::Map<const Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
                   features.data(), N, channels)
                   .cast<double>();
    X.rowwise() -= X.colwise().mean();
    const Eigen::MatrixXd cov = X.transpose() * X / std::max(1, N - 1);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
    const double top = eig.eigenvalues()(channels - 1);
    if (!(top > 1e-12 * std::max(1.0, cov.trace()) && top > 1e-20))
        throw DegenerateError("foreground: features have no variance");
    const Eigen::VectorXd proj = X * eig.eigenvectors().col(channels - 1);

    // Orient: the side holding fewer border cells is foreground.
    int pos = 0, neg = 0;
    double border_sum = 0.0;
    int first_nonzero = -1;
    for (int y = 0; y < grid_h; ++y)
        for (int x = 0; x < grid_w; ++x) {
            if (y != 0 && y != grid_h - 1 && x != 0 && x != grid_w - 1) continue;
            const double v = proj(y * grid_w + x);
            pos += v > 0;
            neg += v < 0;
            border_sum += v;
            if (first_nonzero < 0 && v != 0.0) first_nonzero = y * grid_w + x;
        }
    double sign = 1.0;
    if (pos != neg) {
        sign = pos < neg ? 1.0 : -1.0;
    } else if (border_sum != 0.0) {
        sign = border_sum < 0 ? 1.0 : -1.0;
    } else if (first_nonzero >= 0) {
        sign = proj(first_nonzero) < 0 ? 1.0 : -1.0;
    }

    ForegroundMask fg;
    fg.mask = BinaryGrid(grid_w, grid_h);
    for (int i = 0; i < N; ++i) fg.mask.cells[i] = sign * proj(i) > 0 ? 1 : 0;
    fg.coverage = static_cast<double>(fg.mask.count()) / N;
    fg.degenerate = fg.coverage <= 0.0 || fg.coverage >= 1.0;
    return fg;
}

DescriptorCache::DescriptorCache(std::filesystem::path dir) : dir_(std::move(dir)) {
    std::error_code ec;
    std::filesystem::create_directories(dir_, ec);
    if (ec) throw IoError(dir_.string(), "cannot create descriptor cache");
}

std::optional<DescriptorCache> DescriptorCache::from_environment() {
    const char* env = std::getenv("SSF_CACHE_DIR");
    if (!env || !*env) return std::nullopt;
    return DescriptorCache(env);
}

std::filesystem::path DescriptorCache::file_for(const std::string& image_path, const LayerSpec& spec,
                                                const std::string& backbone_id) const {
    const size_t h = std::hash<std::string>{}(image_path + "\n" + spec.to_string() + "\n" + backbone_id);
    std::ostringstream name;
    name << std::hex << h << ".desc";
    return dir_ / name.str();
}

std::optional<PatchDescriptorBatch> DescriptorCache::load(const std::string& image_path, const LayerSpec& spec,
                                                          const std::string& backbone_id) const {
    const auto file = file_for(image_path, spec, backbone_id);
    std::ifstream in(file, std::ios::binary);
    if (!in) return std::nullopt;
    std::string key;
    std::getline(in, key);
    if (key != image_path + "\t" + spec.to_string() + "\t" + backbone_id) return std::nullopt;
    int32_t dims[3];
    in.read(reinterpret_cast<char*>(dims), sizeof dims);
    PatchDescriptorBatch d;
    d.batch = 1;
    d.grid_h = dims[0];
    d.grid_w = dims[1];
    d.dim = dims[2];
    d.layer_spec = spec;
    d.image_ids = {image_path};
    d.data.resize(static_cast<size_t>(d.grid_h) * d.grid_w * d.dim);
    in.read(reinterpret_cast<char*>(d.data.data()), static_cast<std::streamsize>(d.data.size() * sizeof(float)));
    if (!in) return std::nullopt;
    return d;
}

void DescriptorCache::store(const std::string& image_path, const std::string& backbone_id,
                            const PatchDescriptorBatch& single) const {
    if (single.batch != 1) throw InputError("descriptor cache stores one image at a time");
    const auto file = file_for(image_path, single.layer_spec, backbone_id);
    std::ofstream out(file, std::ios::binary);
    if (!out) throw IoError(file.string(), "cannot write descriptor cache entry");
    out << image_path << '\t' << single.layer_spec.to_string() << '\t' << backbone_id << '\n';
    const int32_t dims[3] = {single.grid_h, single.grid_w, single.dim};
    out.write(reinterpret_cast<const char*>(dims), sizeof dims);
    out.write(reinterpret_cast<const char*>(single.data.data()),
              static_cast<std::streamsize>(single.data.size() * sizeof(float)));
}

}  // namespace ssf
