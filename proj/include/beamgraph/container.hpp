#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "beamgraph/common.hpp"

namespace beamgraph {

// Binary tensor container, magic "BGTC":
//   magic[4] | version u32 LE | header_len u64 LE | UTF-8 JSON manifest |
//   zero padding to 8 | payload buffers (little-endian, 8-byte aligned,
//   in manifest order).
// The manifest lists {name, dtype, shape} per array plus free-form metadata.
class TensorContainer {
public:
    enum class DType { kF32, kF64, kI64, kC64 };  // c64: interleaved f32 pairs

    static constexpr uint32_t kSchemaVersion = 1;

    void add_f32(const std::string& name, std::vector<int64_t> shape, std::vector<float> data);
    void add_f64(const std::string& name, std::vector<int64_t> shape, std::vector<double> data);
    void add_i64(const std::string& name, std::vector<int64_t> shape, std::vector<int64_t> data);
    // Complex as interleaved re/im float pairs; size = product(shape) pairs.
    void add_c64(const std::string& name, std::vector<int64_t> shape, std::vector<float> interleaved);

    bool has(const std::string& name) const;
    std::vector<std::string> names() const;
    const std::vector<int64_t>& shape(const std::string& name) const;
    DType dtype(const std::string& name) const;

    std::vector<float> get_f32(const std::string& name) const;
    std::vector<double> get_f64(const std::string& name) const;
    std::vector<int64_t> get_i64(const std::string& name) const;
    std::vector<float> get_c64(const std::string& name) const;

    // Free-form metadata (string-keyed; values stored as JSON scalars).
    std::map<std::string, std::string> meta_str;
    std::map<std::string, int64_t> meta_int;
    std::map<std::string, double> meta_float;

    void save(const std::string& path) const;
    static TensorContainer load(const std::string& path);

private:
    struct Entry {
        DType dtype;
        std::vector<int64_t> shape;
        std::vector<uint8_t> bytes;  // little-endian payload
    };
    const Entry& entry(const std::string& name) const;

    std::vector<std::string> order_;
    std::map<std::string, Entry> entries_;
};

}  // namespace beamgraph
