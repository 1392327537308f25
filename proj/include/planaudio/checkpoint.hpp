#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "planaudio/common.hpp"
#include "planaudio/optim.hpp"
#include "planaudio/tensor.hpp"

namespace planaudio {

// Parameter file layout, byte for byte:
//   u32  format version
//   u64  parameter count
//   then per parameter, in ascending name order:
//     u32       name length in bytes
//     bytes     UTF-8 name
//     u32       number of dimensions
//     u64 * nd  extents
//     f64 * n   values, row-major
// All integers and doubles are little-endian.
inline constexpr uint32_t kCheckpointVersion = 1;

namespace detail {

inline void put_u32(std::vector<uint8_t>& out, uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<uint8_t>((v >> (8 * i)) & 0xff));
}

inline void put_u64(std::vector<uint8_t>& out, uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<uint8_t>((v >> (8 * i)) & 0xff));
}

inline void put_f64(std::vector<uint8_t>& out, double d) {
    uint64_t bits;
    std::memcpy(&bits, &d, sizeof(bits));
    put_u64(out, bits);
}

class ByteReader {
public:
    ByteReader(const uint8_t* data, size_t size) : data_(data), size_(size) {}

    uint32_t u32() {
        need(4);
        uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(data_[pos_ + i]) << (8 * i);
        pos_ += 4;
        return v;
    }

    uint64_t u64() {
        need(8);
        uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(data_[pos_ + i]) << (8 * i);
        pos_ += 8;
        return v;
    }

    double f64() {
        uint64_t bits = u64();
        double d;
        std::memcpy(&d, &bits, sizeof(d));
        return d;
    }

    std::string str(size_t n) {
        need(n);
        std::string s(reinterpret_cast<const char*>(data_ + pos_), n);
        pos_ += n;
        return s;
    }

    size_t remaining() const { return size_ - pos_; }

private:
    void need(size_t n) const {
        if (size_ - pos_ < n)
            throw IoError(strformat("parameter file truncated at byte %zu", pos_));
    }

    const uint8_t* data_;
    size_t size_;
    size_t pos_ = 0;
};

}  // namespace detail

inline std::vector<uint8_t> encode_params(const ParamStore& store,
                                          uint32_t version = kCheckpointVersion) {
    std::vector<uint8_t> out;
    detail::put_u32(out, version);
    detail::put_u64(out, static_cast<uint64_t>(store.tensor_count()));
    // std::map iteration is already ascending by name.
    for (const auto& [name, tensor] : store.values()) {
        detail::put_u32(out, static_cast<uint32_t>(name.size()));
        out.insert(out.end(), name.begin(), name.end());
        detail::put_u32(out, static_cast<uint32_t>(tensor.ndim()));
        for (size_t extent : tensor.shape) detail::put_u64(out, static_cast<uint64_t>(extent));
        for (double d : tensor.v) detail::put_f64(out, d);
    }
    return out;
}

inline ParamStore decode_params(const uint8_t* data, size_t size,
                                uint32_t expect_version = kCheckpointVersion) {
    detail::ByteReader r(data, size);
    uint32_t version = r.u32();
    if (version != expect_version)
        throw IoError(strformat("parameter file version %u, expected %u", version, expect_version));
    uint64_t count = r.u64();
    ParamStore store;
    std::string prev_name;
    for (uint64_t p = 0; p < count; ++p) {
        uint32_t name_len = r.u32();
        std::string name = r.str(name_len);
        if (name.empty()) throw IoError("parameter file contains an unnamed tensor");
        if (p > 0 && !(prev_name < name))
            throw IoError(strformat("parameter names out of order: '%s' after '%s'",
                                    name.c_str(), prev_name.c_str()));
        uint32_t ndim = r.u32();
        std::vector<size_t> shape(ndim);
        size_t numel = 1;
        for (uint32_t d = 0; d < ndim; ++d) {
            uint64_t extent = r.u64();
            if (extent == 0) throw IoError(strformat("zero extent in tensor '%s'", name.c_str()));
            shape[d] = static_cast<size_t>(extent);
            numel *= shape[d];
        }
        Tensor t;
        t.shape = shape;
        t.v.resize(numel);
        for (size_t i = 0; i < numel; ++i) t.v[i] = r.f64();
        store.add(name, std::move(t));
        prev_name = std::move(name);
    }
    if (r.remaining() != 0)
        throw IoError(strformat("parameter file has %zu trailing bytes", r.remaining()));
    return store;
}

inline void write_param_file(const std::string& path, const ParamStore& store,
                             uint32_t version = kCheckpointVersion) {
    std::vector<uint8_t> bytes = encode_params(store, version);
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError(strformat("cannot open '%s' for writing", path.c_str()));
    f.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
    if (!f) throw IoError(strformat("short write to '%s'", path.c_str()));
}

inline ParamStore read_param_file(const std::string& path,
                                  uint32_t expect_version = kCheckpointVersion) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError(strformat("cannot open '%s' for reading", path.c_str()));
    std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                               std::istreambuf_iterator<char>());
    return decode_params(bytes.data(), bytes.size(), expect_version);
}

// Loads a parameter file into an existing store, insisting on an exact
// name-and-shape match so a checkpoint can never silently partially apply.
inline void adopt_param_file(ParamStore& dst, const std::string& path,
                             uint32_t expect_version = kCheckpointVersion) {
    ParamStore loaded = read_param_file(path, expect_version);
    if (loaded.tensor_count() != dst.tensor_count()) {
        throw IoError(strformat("'%s' holds %zu tensors, the model has %zu", path.c_str(),
                                loaded.tensor_count(), dst.tensor_count()));
    }
    for (const auto& [name, t] : loaded.values()) {
        if (!dst.has(name)) {
            throw IoError(strformat("'%s' holds tensor '%s' which is not a model parameter",
                                    path.c_str(), name.c_str()));
        }
        Tensor& d = dst.value(name);
        if (d.shape != t.shape) {
            throw IoError(strformat("tensor '%s' in '%s' is %s, the model wants %s", name.c_str(),
                                    path.c_str(), t.shape_str().c_str(), d.shape_str().c_str()));
        }
        d = t;
    }
}

}  // namespace planaudio
