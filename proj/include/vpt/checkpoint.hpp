#pragma once

#include <cstdint>
#include <cstring>
#include <string>
#include <vector>

#include "vpt/tensor.hpp"

namespace vpt {

struct io_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Named-tensor container. Layout (little-endian):
//   "VPTC" | u32 version | u64 entry count |
//   per entry: u32 name_len | name | u8 dtype | u32 ndim | u64 dims... |
//              u64 byte_len | raw values
// dtype: 0 = f32, 1 = f64, 2 = opaque bytes (config blobs).
struct ContainerEntry {
    std::string name;
    uint8_t dtype = 2;
    std::vector<uint64_t> shape;
    std::vector<char> raw;
};

inline constexpr uint32_t kContainerVersion = 1;
inline constexpr const char* kConfigEntryName = "__config__";

void write_container(const std::string& path, const std::vector<ContainerEntry>& entries);
std::vector<ContainerEntry> read_container(const std::string& path);

template <typename S>
constexpr uint8_t dtype_code() {
    if constexpr (std::is_same_v<S, float>) return 0;
    else return 1;
}

template <typename S>
ContainerEntry tensor_entry(const std::string& name, const Mat<S>& m) {
    ContainerEntry e;
    e.name = name;
    e.dtype = dtype_code<S>();
    e.shape = {static_cast<uint64_t>(m.rows()), static_cast<uint64_t>(m.cols())};
    e.raw.resize(sizeof(S) * m.size());
    std::memcpy(e.raw.data(), m.data(), e.raw.size());
    return e;
}

template <typename S>
Mat<S> entry_tensor(const ContainerEntry& e) {
    if (e.dtype != dtype_code<S>()) throw io_error("container entry " + e.name + ": dtype mismatch");
    if (e.shape.size() != 2) throw io_error("container entry " + e.name + ": expected 2-d shape");
    Mat<S> m(static_cast<int>(e.shape[0]), static_cast<int>(e.shape[1]));
    if (e.raw.size() != sizeof(S) * m.size())
        throw io_error("container entry " + e.name + ": payload size mismatch");
    std::memcpy(m.data(), e.raw.data(), e.raw.size());
    return m;
}

// Saves every parameter plus a config blob under kConfigEntryName.
template <typename S>
void save_checkpoint(const std::string& path, const ParamSet<S>& params,
                     const std::string& config_json) {
    std::vector<ContainerEntry> entries;
    ContainerEntry cfg;
    cfg.name = kConfigEntryName;
    cfg.dtype = 2;
    cfg.raw.assign(config_json.begin(), config_json.end());
    entries.push_back(std::move(cfg));
    params.for_each([&](const Param<S>& p) { entries.push_back(tensor_entry(p.name, p.value)); });
    write_container(path, entries);
}

// Fills an already-constructed ParamSet; every param must be present with
// matching dtype and shape, and no stray tensors are allowed. Returns the
// config blob.
template <typename S>
std::string load_checkpoint(const std::string& path, ParamSet<S>& params) {
    const auto entries = read_container(path);
    std::string config;
    size_t used = 0;
    for (const auto& e : entries) {
        if (e.name == kConfigEntryName) {
            config.assign(e.raw.begin(), e.raw.end());
            ++used;
            continue;
        }
        if (!params.contains(e.name)) throw io_error("checkpoint: unexpected tensor " + e.name);
        Param<S>& p = params.at(e.name);
        const Mat<S> m = entry_tensor<S>(e);
        if (m.rows() != p.value.rows() || m.cols() != p.value.cols())
            throw io_error("checkpoint: shape mismatch for " + e.name);
        p.value = m;
        ++used;
    }
    if (used != entries.size() || entries.size() != params.size() + 1)
        throw io_error("checkpoint: tensor set mismatch");
    return config;
}

}  // namespace vpt
