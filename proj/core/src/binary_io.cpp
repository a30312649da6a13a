#include "ssfilter/binary_io.hpp"

#include <fstream>
#include <iterator>
#include <string_view>

#include "ssfilter/errors.hpp"

namespace ssf {

namespace {
constexpr uint64_t kMaxElements = uint64_t{1} << 34;
}

void BinaryWriter::str(const std::string& s) {
    pod<uint64_t>(s.size());
    out_.write(s.data(), static_cast<std::streamsize>(s.size()));
}

void BinaryWriter::floats(const std::vector<float>& v) {
    pod<uint64_t>(v.size());
    out_.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(float)));
}

void BinaryWriter::bytes(const std::vector<uint8_t>& v) {
    pod<uint64_t>(v.size());
    out_.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size()));
}

void BinaryReader::check() const {
    if (!in_) throw IoError(source_, "truncated or unreadable binary data");
}

std::string BinaryReader::str() {
    const auto n = pod<uint64_t>();
    if (n > kMaxElements) throw IoError(source_, "corrupt string length");
    std::string s(n, '\0');
    in_.read(s.data(), static_cast<std::streamsize>(n));
    check();
    return s;
}

std::vector<float> BinaryReader::floats() {
    const auto n = pod<uint64_t>();
    if (n > kMaxElements) throw IoError(source_, "corrupt array length");
    std::vector<float> v(n);
    in_.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(n * sizeof(float)));
    check();
    return v;
}

std::vector<uint8_t> BinaryReader::bytes() {
    const auto n = pod<uint64_t>();
    if (n > kMaxElements) throw IoError(source_, "corrupt array length");
    std::vector<uint8_t> v(n);
    in_.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(n));
    check();
    return v;
}

uint64_t file_hash(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError(path.string(), "cannot open file for hashing");
    const std::string content((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return std::hash<std::string_view>{}(content);
}

}  // namespace ssf
