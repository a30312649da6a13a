#include "ssfilter/checkpoint.hpp"

#include <array>
#include <cstring>
#include <fstream>

#include "ssfilter/binary_io.hpp"
#include "ssfilter/errors.hpp"

namespace ssf {

namespace {

constexpr std::array<char, 8> kMagic = {'S', 'S', 'F', 'C', 'K', 'P', 'T', '1'};

void write_image(BinaryWriter& w, const Image& img) {
    w.pod<int32_t>(img.width);
    w.pod<int32_t>(img.height);
    w.pod<int32_t>(img.channels);
    w.floats(img.pixels);
}

Image read_image(BinaryReader& r) {
    Image img;
    img.width = r.pod<int32_t>();
    img.height = r.pod<int32_t>();
    img.channels = r.pod<int32_t>();
    img.pixels = r.floats();
    return img;
}

void write_moments(BinaryWriter& w, const std::vector<std::vector<float>>& m) {
    w.pod<uint64_t>(m.size());
    for (const auto& v : m) w.floats(v);
}

std::vector<std::vector<float>> read_moments(BinaryReader& r) {
    const auto n = r.pod<uint64_t>();
    std::vector<std::vector<float>> m;
    for (uint64_t i = 0; i < n; ++i) m.push_back(r.floats());
    return m;
}

Checkpoint read_impl(const std::filesystem::path& path, bool header_only) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError(path.string(), "cannot open checkpoint");
    BinaryReader r(in, path.string());
    std::array<char, 8> magic{};
    in.read(magic.data(), magic.size());
    if (!in || magic != kMagic) throw IoError(path.string(), "not a checkpoint file");
    Checkpoint c;
    c.version = r.pod<uint32_t>();
    if (c.version != kCheckpointVersion)
        throw IoError(path.string(), "unsupported checkpoint version " + std::to_string(c.version));
    c.config_text = r.str();
    c.backbone_identity = r.str();
    c.backbone_hash = r.pod<uint64_t>();
    c.iteration = r.pod<int64_t>();
    c.rng_state = r.str();
    if (header_only) return c;

    const auto np = r.pod<uint64_t>();
    for (uint64_t i = 0; i < np; ++i) {
        ParamBlob b;
        b.name = r.str();
        b.rows = r.pod<int32_t>();
        b.cols = r.pod<int32_t>();
        b.data = r.floats();
        if (b.data.size() != static_cast<size_t>(b.rows) * b.cols)
            throw IoError(path.string(), "parameter size mismatch for " + b.name);
        c.params.push_back(std::move(b));
    }
    c.optimizer.kind = r.str();
    c.optimizer.step = r.pod<int64_t>();
    c.optimizer.first_moment = read_moments(r);
    c.optimizer.second_moment = read_moments(r);
    c.optimizer.max_second_moment = read_moments(r);

    c.bank_capacity = r.pod<uint64_t>();
    c.bank_total_added = r.pod<uint64_t>();
    const auto nb = r.pod<uint64_t>();
    for (uint64_t i = 0; i < nb; ++i) {
        MaterialPatch p;
        p.source_id = r.str();
        p.area = r.pod<int32_t>();
        p.pixels = read_image(r);
        p.mask.width = r.pod<int32_t>();
        p.mask.height = r.pod<int32_t>();
        p.mask.cells = r.bytes();
        c.bank.push_back(std::move(p));
    }
    return c;
}

}  // namespace

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& c) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    const auto tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError(tmp, "cannot open checkpoint for writing");
        BinaryWriter w(out);
        out.write(kMagic.data(), kMagic.size());
        w.pod<uint32_t>(c.version);
        w.str(c.config_text);
        w.str(c.backbone_identity);
        w.pod<uint64_t>(c.backbone_hash);
        w.pod<int64_t>(c.iteration);
        w.str(c.rng_state);

        w.pod<uint64_t>(c.params.size());
        for (const auto& b : c.params) {
            w.str(b.name);
            w.pod<int32_t>(b.rows);
            w.pod<int32_t>(b.cols);
            w.floats(b.data);
        }
        w.str(c.optimizer.kind);
        w.pod<int64_t>(c.optimizer.step);
        write_moments(w, c.optimizer.first_moment);
        write_moments(w, c.optimizer.second_moment);
        write_moments(w, c.optimizer.max_second_moment);

        w.pod<uint64_t>(c.bank_capacity);
        w.pod<uint64_t>(c.bank_total_added);
        w.pod<uint64_t>(c.bank.size());
        for (const auto& p : c.bank) {
            w.str(p.source_id);
            w.pod<int32_t>(p.area);
            write_image(w, p.pixels);
            w.pod<int32_t>(p.mask.width);
            w.pod<int32_t>(p.mask.height);
            w.bytes(p.mask.cells);
        }
        out.flush();
        if (!out) throw IoError(tmp, "write failed");
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw IoError(path.string(), "cannot move checkpoint into place: " + ec.message());
}

Checkpoint read_checkpoint(const std::filesystem::path& path) { return read_impl(path, false); }

Checkpoint read_checkpoint_header(const std::filesystem::path& path) { return read_impl(path, true); }

std::vector<ParamBlob> snapshot_params(const std::vector<NamedParam>& params) {
    std::vector<ParamBlob> out;
    out.reserve(params.size());
    for (const auto& p : params) out.push_back({p.name, p.var.rows(), p.var.cols(), {p.var.value().begin(), p.var.value().end()}});
    return out;
}

void restore_params(const std::vector<ParamBlob>& blobs, const std::vector<NamedParam>& params) {
    if (blobs.size() != params.size())
        throw InputError("checkpoint has " + std::to_string(blobs.size()) + " parameters, model expects " +
                         std::to_string(params.size()));
    for (size_t i = 0; i < params.size(); ++i) {
        const auto& b = blobs[i];
        auto var = params[i].var;
        if (b.name != params[i].name || b.rows != var.rows() || b.cols != var.cols())
            throw InputError("checkpoint parameter mismatch at " + params[i].name);
        var.mutable_value().assign(b.data.begin(), b.data.end());
    }
}

}  // namespace ssf
