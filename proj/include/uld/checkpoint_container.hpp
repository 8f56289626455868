#pragma once

// Binary container of named tensors and string blobs. Backs model
// checkpoints, optimizer state and pretrained backbone weights.
// Little-endian, same-machine format.

#include <cstring>
#include <fstream>
#include <map>

#include "uld/tensor.hpp"

namespace uld {

class TensorFile {
  public:
    static constexpr char kMagic[9] = "ULDTENS1";

    struct Entry {
        uint8_t dtype = 0;  // 0 = f32, 1 = f64, 2 = blob
        std::vector<int> dims;
        std::vector<char> raw;
    };

    template <typename T>
    void set(const std::string& name, const Tensor<T>& t) {
        Entry e;
        e.dtype = sizeof(T) == 4 ? 0 : 1;
        e.dims = t.shape();
        e.raw.resize(static_cast<size_t>(t.size()) * sizeof(T));
        std::memcpy(e.raw.data(), t.data(), e.raw.size());
        entries_[name] = std::move(e);
    }

    void set_blob(const std::string& name, const std::string& value) {
        Entry e;
        e.dtype = 2;
        e.raw.assign(value.begin(), value.end());
        entries_[name] = std::move(e);
    }

    bool has(const std::string& name) const { return entries_.count(name) != 0; }

    template <typename T>
    Tensor<T> get(const std::string& name) const {
        const Entry& e = find(name);
        if (e.dtype == 2) throw IoError("tensor file: '" + name + "' is a blob, not a tensor");
        Tensor<T> out(e.dims);
        if (e.dtype == (sizeof(T) == 4 ? 0 : 1)) {
            std::memcpy(out.data(), e.raw.data(), e.raw.size());
        } else if (e.dtype == 0) {
            const float* src = reinterpret_cast<const float*>(e.raw.data());
            for (int64_t i = 0; i < out.size(); ++i) out[i] = static_cast<T>(src[i]);
        } else {
            const double* src = reinterpret_cast<const double*>(e.raw.data());
            for (int64_t i = 0; i < out.size(); ++i) out[i] = static_cast<T>(src[i]);
        }
        return out;
    }

    std::string get_blob(const std::string& name) const {
        const Entry& e = find(name);
        if (e.dtype != 2) throw IoError("tensor file: '" + name + "' is not a blob");
        return std::string(e.raw.begin(), e.raw.end());
    }

    const std::map<std::string, Entry>& entries() const { return entries_; }

    void write(const std::string& path) const {
        std::ofstream f(path, std::ios::binary);
        if (!f) throw IoError("cannot write " + path);
        f.write(kMagic, 8);
        write_u64(f, entries_.size());
        for (const auto& [name, e] : entries_) {
            write_u32(f, static_cast<uint32_t>(name.size()));
            f.write(name.data(), static_cast<std::streamsize>(name.size()));
            f.put(static_cast<char>(e.dtype));
            write_u32(f, static_cast<uint32_t>(e.dims.size()));
            for (int d : e.dims) write_u32(f, static_cast<uint32_t>(d));
            write_u64(f, e.raw.size());
            f.write(e.raw.data(), static_cast<std::streamsize>(e.raw.size()));
        }
        if (!f) throw IoError("write failed: " + path);
    }

    static TensorFile read(const std::string& path) {
        std::ifstream f(path, std::ios::binary);
        if (!f) throw IoError("cannot read " + path);
        char magic[8];
        f.read(magic, 8);
        if (!f || std::memcmp(magic, kMagic, 8) != 0)
            throw IoError(path + ": not a tensor container");
        TensorFile tf;
        const uint64_t count = read_u64(f);
        for (uint64_t i = 0; i < count; ++i) {
            const uint32_t name_len = read_u32(f);
            std::string name(name_len, '\0');
            f.read(name.data(), name_len);
            Entry e;
            e.dtype = static_cast<uint8_t>(f.get());
            const uint32_t ndim = read_u32(f);
            e.dims.resize(ndim);
            for (uint32_t d = 0; d < ndim; ++d) e.dims[d] = static_cast<int>(read_u32(f));
            const uint64_t bytes = read_u64(f);
            e.raw.resize(bytes);
            f.read(e.raw.data(), static_cast<std::streamsize>(bytes));
            if (!f) throw IoError(path + ": truncated entry '" + name + "'");
            tf.entries_[name] = std::move(e);
        }
        return tf;
    }

  private:
    const Entry& find(const std::string& name) const {
        auto it = entries_.find(name);
        if (it == entries_.end()) throw IoError("tensor file: missing entry '" + name + "'");
        return it->second;
    }

    static void write_u32(std::ofstream& f, uint32_t v) {
        f.write(reinterpret_cast<const char*>(&v), 4);
    }
    static void write_u64(std::ofstream& f, uint64_t v) {
        f.write(reinterpret_cast<const char*>(&v), 8);
    }
    static uint32_t read_u32(std::ifstream& f) {
        uint32_t v = 0;
        f.read(reinterpret_cast<char*>(&v), 4);
        return v;
    }
    static uint64_t read_u64(std::ifstream& f) {
        uint64_t v = 0;
        f.read(reinterpret_cast<char*>(&v), 8);
        return v;
    }

    std::map<std::string, Entry> entries_;
};

}  // namespace uld
