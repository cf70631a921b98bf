#pragma once

#include <bit>
#include <cstdint>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "actra/tensor.hpp"

namespace actra {

// Checkpoint file layout (all integers little-endian):
//   magic   8 bytes  "ACTRAPRM"
//   version u32      currently 1
//   count   u32      number of tensors
//   count entries of { name_len u32, name bytes, rank u32, dims u64 each }
//   concatenated f64 values, row-major, in entry order
namespace detail {

inline constexpr char kCheckpointMagic[8] = {'A', 'C', 'T', 'R', 'A', 'P', 'R', 'M'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

inline void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
inline void put_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
inline void put_f64(std::string& out, double d) { put_u64(out, std::bit_cast<std::uint64_t>(d)); }

class ByteReader {
public:
    ByteReader(const std::string& buf, const std::string& path) : buf_(buf), path_(path) {}
    std::uint32_t u32() { return static_cast<std::uint32_t>(uN(4)); }
    std::uint64_t u64() { return uN(8); }
    double f64() { return std::bit_cast<double>(uN(8)); }
    std::string bytes(std::size_t n) {
        need(n);
        std::string s = buf_.substr(pos_, n);
        pos_ += n;
        return s;
    }
    bool done() const { return pos_ == buf_.size(); }

private:
    std::uint64_t uN(int n) {
        need(n);
        std::uint64_t v = 0;
        for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf_[pos_ + i])) << (8 * i);
        pos_ += n;
        return v;
    }
    void need(std::size_t n) {
        if (pos_ + n > buf_.size()) throw std::runtime_error("checkpoint truncated: " + path_);
    }
    const std::string& buf_;
    std::string path_;
    std::size_t pos_ = 0;
};

}  // namespace detail

using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

inline void save_checkpoint(const std::string& path, const std::vector<std::pair<std::string, const Tensor*>>& tensors) {
    std::string out;
    out.append(detail::kCheckpointMagic, 8);
    detail::put_u32(out, detail::kCheckpointVersion);
    detail::put_u32(out, static_cast<std::uint32_t>(tensors.size()));
    for (const auto& [name, t] : tensors) {
        detail::put_u32(out, static_cast<std::uint32_t>(name.size()));
        out.append(name);
        detail::put_u32(out, static_cast<std::uint32_t>(t->rank()));
        for (int d : t->shape) detail::put_u64(out, static_cast<std::uint64_t>(d));
    }
    for (const auto& [name, t] : tensors)
        for (double v : t->data) detail::put_f64(out, v);
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("cannot open checkpoint for writing: " + path);
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw std::runtime_error("checkpoint write failed: " + path);
}

inline NamedTensors load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open checkpoint: " + path);
    std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    detail::ByteReader r(buf, path);
    if (r.bytes(8) != std::string(detail::kCheckpointMagic, 8))
        throw std::runtime_error("not a checkpoint file (bad magic): " + path);
    const std::uint32_t version = r.u32();
    if (version != detail::kCheckpointVersion)
        throw std::runtime_error("unsupported checkpoint version " + std::to_string(version) + ": " + path);
    const std::uint32_t count = r.u32();
    NamedTensors result;
    result.reserve(count);
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::uint32_t name_len = r.u32();
        std::string name = r.bytes(name_len);
        const std::uint32_t rank = r.u32();
        Shape shape(rank);
        for (std::uint32_t d = 0; d < rank; ++d) {
            const std::uint64_t dim = r.u64();
            if (dim == 0 || dim > (1u << 30)) throw std::runtime_error("checkpoint dim out of range: " + path);
            shape[d] = static_cast<int>(dim);
        }
        result.emplace_back(std::move(name), Tensor(shape));
    }
    for (auto& [name, t] : result)
        for (double& v : t.data) v = r.f64();
    if (!r.done()) throw std::runtime_error("checkpoint has trailing bytes: " + path);
    return result;
}

// Sidecar metadata: one "key=value" per line, keys sorted, trailing newline.
inline void save_meta(const std::string& path, const std::map<std::string, std::string>& meta) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("cannot open meta file for writing: " + path);
    for (const auto& [k, v] : meta) f << k << "=" << v << "\n";
    if (!f) throw std::runtime_error("meta write failed: " + path);
}

inline std::map<std::string, std::string> load_meta(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open meta file: " + path);
    std::map<std::string, std::string> meta;
    std::string line;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        const std::size_t eq = line.find('=');
        if (eq == std::string::npos) throw std::runtime_error("malformed meta line in " + path + ": " + line);
        meta[line.substr(0, eq)] = line.substr(eq + 1);
    }
    return meta;
}

}  // namespace actra
