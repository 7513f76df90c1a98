#include "vpt/checkpoint.hpp"

#include <fstream>

namespace vpt {

namespace {

template <typename T>
void write_pod(std::ofstream& out, T v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::ifstream& in) {
    T v{};
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!in) throw io_error("container: truncated file");
    return v;
}

}  // namespace

void write_container(const std::string& path, const std::vector<ContainerEntry>& entries) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw io_error("container: cannot open for write: " + path);
    out.write("VPTC", 4);
    write_pod<uint32_t>(out, kContainerVersion);
    write_pod<uint64_t>(out, entries.size());
    for (const auto& e : entries) {
        write_pod<uint32_t>(out, static_cast<uint32_t>(e.name.size()));
        out.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
        write_pod<uint8_t>(out, e.dtype);
        write_pod<uint32_t>(out, static_cast<uint32_t>(e.shape.size()));
        for (const uint64_t d : e.shape) write_pod<uint64_t>(out, d);
        write_pod<uint64_t>(out, e.raw.size());
        out.write(e.raw.data(), static_cast<std::streamsize>(e.raw.size()));
    }
    if (!out) throw io_error("container: write failed: " + path);
}

std::vector<ContainerEntry> read_container(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw io_error("container: cannot open: " + path);
    char magic[4];
    in.read(magic, 4);
    if (!in || std::string_view(magic, 4) != "VPTC") throw io_error("container: bad magic");
    const uint32_t version = read_pod<uint32_t>(in);
    if (version != kContainerVersion) throw io_error("container: unsupported version");
    const uint64_t count = read_pod<uint64_t>(in);
    std::vector<ContainerEntry> entries;
    entries.reserve(count);
    for (uint64_t i = 0; i < count; ++i) {
        ContainerEntry e;
        const uint32_t name_len = read_pod<uint32_t>(in);
        e.name.resize(name_len);
        in.read(e.name.data(), name_len);
        e.dtype = read_pod<uint8_t>(in);
        const uint32_t ndim = read_pod<uint32_t>(in);
        e.shape.resize(ndim);
        for (uint32_t d = 0; d < ndim; ++d) e.shape[d] = read_pod<uint64_t>(in);
        const uint64_t len = read_pod<uint64_t>(in);
        e.raw.resize(len);
        in.read(e.raw.data(), static_cast<std::streamsize>(len));
        if (!in) throw io_error("container: truncated entry " + e.name);
        entries.push_back(std::move(e));
    }
    return entries;
}

}  // namespace vpt
