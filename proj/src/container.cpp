#include "beamgraph/container.hpp"

#include <cstring>
#include <fstream>

#include "json.hpp"

namespace beamgraph {

namespace {

using nlohmann::json;

const char* dtype_name(TensorContainer::DType t) {
    switch (t) {
        case TensorContainer::DType::kF32: return "f32";
        case TensorContainer::DType::kF64: return "f64";
        case TensorContainer::DType::kI64: return "i64";
        case TensorContainer::DType::kC64: return "c64";
    }
    return "?";
}

TensorContainer::DType dtype_from_name(const std::string& s) {
    if (s == "f32") return TensorContainer::DType::kF32;
    if (s == "f64") return TensorContainer::DType::kF64;
    if (s == "i64") return TensorContainer::DType::kI64;
    if (s == "c64") return TensorContainer::DType::kC64;
    fail_arg("TensorContainer: unknown dtype '" + s + "'");
}

size_t elem_bytes(TensorContainer::DType t) {
    switch (t) {
        case TensorContainer::DType::kF32: return 4;
        case TensorContainer::DType::kF64: return 8;
        case TensorContainer::DType::kI64: return 8;
        case TensorContainer::DType::kC64: return 8;  // two f32 per element
    }
    return 0;
}

int64_t shape_elems(const std::vector<int64_t>& shape) {
    int64_t n = 1;
    for (int64_t s : shape) {
        require(s >= 0, "TensorContainer: negative shape entry");
        n *= s;
    }
    return n;
}

template <typename T>
std::vector<uint8_t> to_bytes(const std::vector<T>& v) {
    std::vector<uint8_t> out(v.size() * sizeof(T));
    if (!v.empty()) std::memcpy(out.data(), v.data(), out.size());
    return out;
}

template <typename T>
std::vector<T> from_bytes(const std::vector<uint8_t>& b) {
    std::vector<T> out(b.size() / sizeof(T));
    if (!out.empty()) std::memcpy(out.data(), b.data(), b.size());
    return out;
}

}  // namespace

void TensorContainer::add_f32(const std::string& name, std::vector<int64_t> shape,
                              std::vector<float> data) {
    require(shape_elems(shape) == static_cast<int64_t>(data.size()),
            "TensorContainer: shape/data size mismatch for " + name);
    require(!entries_.count(name), "TensorContainer: duplicate array " + name);
    order_.push_back(name);
    entries_[name] = Entry{DType::kF32, std::move(shape), to_bytes(data)};
}

void TensorContainer::add_f64(const std::string& name, std::vector<int64_t> shape,
                              std::vector<double> data) {
    require(shape_elems(shape) == static_cast<int64_t>(data.size()),
            "TensorContainer: shape/data size mismatch for " + name);
    require(!entries_.count(name), "TensorContainer: duplicate array " + name);
    order_.push_back(name);
    entries_[name] = Entry{DType::kF64, std::move(shape), to_bytes(data)};
}

void TensorContainer::add_i64(const std::string& name, std::vector<int64_t> shape,
                              std::vector<int64_t> data) {
    require(shape_elems(shape) == static_cast<int64_t>(data.size()),
            "TensorContainer: shape/data size mismatch for " + name);
    require(!entries_.count(name), "TensorContainer: duplicate array " + name);
    order_.push_back(name);
    entries_[name] = Entry{DType::kI64, std::move(shape), to_bytes(data)};
}

void TensorContainer::add_c64(const std::string& name, std::vector<int64_t> shape,
                              std::vector<float> interleaved) {
    require(2 * shape_elems(shape) == static_cast<int64_t>(interleaved.size()),
            "TensorContainer: c64 expects two floats per element for " + name);
    require(!entries_.count(name), "TensorContainer: duplicate array " + name);
    order_.push_back(name);
    entries_[name] = Entry{DType::kC64, std::move(shape), to_bytes(interleaved)};
}

bool TensorContainer::has(const std::string& name) const { return entries_.count(name) > 0; }

std::vector<std::string> TensorContainer::names() const { return order_; }

const TensorContainer::Entry& TensorContainer::entry(const std::string& name) const {
    auto it = entries_.find(name);
    require(it != entries_.end(), "TensorContainer: missing array " + name);
    return it->second;
}

const std::vector<int64_t>& TensorContainer::shape(const std::string& name) const {
    return entry(name).shape;
}

TensorContainer::DType TensorContainer::dtype(const std::string& name) const {
    return entry(name).dtype;
}

std::vector<float> TensorContainer::get_f32(const std::string& name) const {
    const Entry& e = entry(name);
    require(e.dtype == DType::kF32, "TensorContainer: " + name + " is not f32");
    return from_bytes<float>(e.bytes);
}

std::vector<double> TensorContainer::get_f64(const std::string& name) const {
    const Entry& e = entry(name);
    require(e.dtype == DType::kF64, "TensorContainer: " + name + " is not f64");
    return from_bytes<double>(e.bytes);
}

std::vector<int64_t> TensorContainer::get_i64(const std::string& name) const {
    const Entry& e = entry(name);
    require(e.dtype == DType::kI64, "TensorContainer: " + name + " is not i64");
    return from_bytes<int64_t>(e.bytes);
}

std::vector<float> TensorContainer::get_c64(const std::string& name) const {
    const Entry& e = entry(name);
    require(e.dtype == DType::kC64, "TensorContainer: " + name + " is not c64");
    return from_bytes<float>(e.bytes);
}

void TensorContainer::save(const std::string& path) const {
    json manifest;
    manifest["arrays"] = json::array();
    for (const auto& name : order_) {
        const Entry& e = entries_.at(name);
        manifest["arrays"].push_back(
            {{"name", name}, {"dtype", dtype_name(e.dtype)}, {"shape", e.shape}});
    }
    json meta = json::object();
    for (const auto& [k, v] : meta_str) meta[k] = v;
    for (const auto& [k, v] : meta_int) meta[k] = v;
    for (const auto& [k, v] : meta_float) meta[k] = v;
    manifest["meta"] = meta;
    const std::string header = manifest.dump();

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    require(f.good(), "TensorContainer: cannot open " + path);
    f.write("BGTC", 4);
    const uint32_t version = kSchemaVersion;
    f.write(reinterpret_cast<const char*>(&version), 4);
    const uint64_t header_len = header.size();
    f.write(reinterpret_cast<const char*>(&header_len), 8);
    f.write(header.data(), static_cast<std::streamsize>(header.size()));

    size_t pos = 16 + header.size();
    auto pad_to_8 = [&] {
        static const char zeros[8] = {0};
        const size_t pad = (8 - pos % 8) % 8;
        f.write(zeros, static_cast<std::streamsize>(pad));
        pos += pad;
    };
    pad_to_8();
    for (const auto& name : order_) {
        const Entry& e = entries_.at(name);
        f.write(reinterpret_cast<const char*>(e.bytes.data()),
                static_cast<std::streamsize>(e.bytes.size()));
        pos += e.bytes.size();
        pad_to_8();
    }
    require(f.good(), "TensorContainer: write failed for " + path);
}

TensorContainer TensorContainer::load(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    require(f.good(), "TensorContainer: cannot open " + path);
    std::vector<uint8_t> raw((std::istreambuf_iterator<char>(f)),
                             std::istreambuf_iterator<char>());
    require(raw.size() >= 16, "TensorContainer: truncated file " + path);
    require(std::memcmp(raw.data(), "BGTC", 4) == 0,
            "TensorContainer: bad magic in " + path);
    uint32_t version;
    std::memcpy(&version, raw.data() + 4, 4);
    require(version == kSchemaVersion, "TensorContainer: unsupported schema version");
    uint64_t header_len;
    std::memcpy(&header_len, raw.data() + 8, 8);
    require(16 + header_len <= raw.size(), "TensorContainer: truncated header");

    json manifest;
    try {
        manifest = json::parse(raw.begin() + 16, raw.begin() + 16 + header_len);
    } catch (const json::exception& e) {
        fail_arg(std::string("TensorContainer: bad manifest: ") + e.what());
    }

    TensorContainer out;
    if (manifest.contains("meta")) {
        for (auto& [k, v] : manifest["meta"].items()) {
            if (v.is_string())
                out.meta_str[k] = v.get<std::string>();
            else if (v.is_number_integer())
                out.meta_int[k] = v.get<int64_t>();
            else if (v.is_number_float())
                out.meta_float[k] = v.get<double>();
        }
    }

    size_t pos = 16 + header_len;
    pos += (8 - pos % 8) % 8;
    for (const auto& arr : manifest["arrays"]) {
        const std::string name = arr.at("name").get<std::string>();
        const DType dtype = dtype_from_name(arr.at("dtype").get<std::string>());
        std::vector<int64_t> shape = arr.at("shape").get<std::vector<int64_t>>();
        size_t nbytes = static_cast<size_t>(shape_elems(shape)) * elem_bytes(dtype);
        require(pos + nbytes <= raw.size(),
                "TensorContainer: payload size mismatch for " + name);
        Entry e;
        e.dtype = dtype;
        e.shape = std::move(shape);
        e.bytes.assign(raw.begin() + pos, raw.begin() + pos + nbytes);
        out.order_.push_back(name);
        out.entries_[name] = std::move(e);
        pos += nbytes;
        pos += (8 - pos % 8) % 8;
    }
    require(pos == raw.size(), "TensorContainer: declared sizes do not match payload in " + path);
    return out;
}

}  // namespace beamgraph
