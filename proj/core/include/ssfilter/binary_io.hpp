#pragma once

#include <cstdint>
#include <filesystem>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

namespace ssf {

/// Little-endian-as-host primitive writer used by checkpoint files.
class BinaryWriter {
public:
    explicit BinaryWriter(std::ostream& out) : out_(out) {}

    template <typename T>
    void pod(const T& v) {
        out_.write(reinterpret_cast<const char*>(&v), sizeof(T));
    }
    void str(const std::string& s);
    void floats(const std::vector<float>& v);
    void bytes(const std::vector<uint8_t>& v);

private:
    std::ostream& out_;
};

class BinaryReader {
public:
    BinaryReader(std::istream& in, std::string source) : in_(in), source_(std::move(source)) {}

    template <typename T>
    T pod() {
        T v{};
        in_.read(reinterpret_cast<char*>(&v), sizeof(T));
        check();
        return v;
    }
    std::string str();
    std::vector<float> floats();
    std::vector<uint8_t> bytes();

private:
    void check() const;
    std::istream& in_;
    std::string source_;
};

/// Hash of a file's bytes; used to prove read-only access to checkpoints and weights.
uint64_t file_hash(const std::filesystem::path& path);

}  // namespace ssf
