#pragma once

// Checkpoint container and its bit-exact binary file format.
//
// Layout (little-endian):
//   magic "RHAC" | version u32 = 1 | variant u8 | base_width u32 | epoch u32
//   | has_optimizer u8 | tensor_count u32
//   | per tensor: name_len u16, name UTF-8, ndim u8, dims u32×ndim,
//     payload 32-bit floats row-major
//   | optimizer (when present): the same tensor block for the interleaved
//     Adam moments, then step u64.

#include <cstring>
#include <fstream>

#include "rhanet/errors.hpp"
#include "rhanet/model.hpp"
#include "rhanet/optim.hpp"

namespace rhanet {

struct Checkpoint {
    uint32_t version = 1;
    ModelConfig config;
    std::vector<std::pair<std::string, Tensor<float>>> tensors;
    bool has_optimizer = false;
    std::vector<std::pair<std::string, Tensor<float>>> optimizer_tensors;
    uint64_t optimizer_step = 0;
    uint32_t epoch = 0;
};

namespace detail_ckpt {

inline constexpr char kMagic[4] = {'R', 'H', 'A', 'C'};
inline constexpr uint32_t kVersion = 1;

template <typename T>
void put(std::vector<uint8_t>& buf, T v) {
    static_assert(std::is_trivially_copyable_v<T>);
    const size_t n = buf.size();
    buf.resize(n + sizeof(T));
    std::memcpy(buf.data() + n, &v, sizeof(T));
}

struct Reader {
    const std::vector<uint8_t>& buf;
    size_t pos = 0;

    template <typename T>
    T get() {
        if (pos + sizeof(T) > buf.size()) throw DataError("truncated checkpoint");
        T v;
        std::memcpy(&v, buf.data() + pos, sizeof(T));
        pos += sizeof(T);
        return v;
    }
    std::string get_string(size_t n) {
        if (pos + n > buf.size()) throw DataError("truncated checkpoint");
        std::string s(reinterpret_cast<const char*>(buf.data() + pos), n);
        pos += n;
        return s;
    }
};

inline void put_tensor_block(std::vector<uint8_t>& buf,
                             const std::vector<std::pair<std::string, Tensor<float>>>& tensors) {
    put<uint32_t>(buf, static_cast<uint32_t>(tensors.size()));
    for (const auto& [name, t] : tensors) {
        put<uint16_t>(buf, static_cast<uint16_t>(name.size()));
        buf.insert(buf.end(), name.begin(), name.end());
        put<uint8_t>(buf, static_cast<uint8_t>(t.rank()));
        for (int d = 0; d < t.rank(); ++d) put<uint32_t>(buf, static_cast<uint32_t>(t.dim(d)));
        const size_t n = buf.size();
        buf.resize(n + t.values().size() * sizeof(float));
        std::memcpy(buf.data() + n, t.values().data(), t.values().size() * sizeof(float));
    }
}

inline std::vector<std::pair<std::string, Tensor<float>>> get_tensor_block(Reader& r) {
    const uint32_t count = r.get<uint32_t>();
    std::vector<std::pair<std::string, Tensor<float>>> out;
    out.reserve(count);
    for (uint32_t i = 0; i < count; ++i) {
        const uint16_t name_len = r.get<uint16_t>();
        std::string name = r.get_string(name_len);
        const uint8_t ndim = r.get<uint8_t>();
        Shape shape(ndim);
        for (uint8_t d = 0; d < ndim; ++d) shape[d] = static_cast<int>(r.get<uint32_t>());
        const int64_t n = shape_numel(shape);
        if (r.pos + static_cast<size_t>(n) * sizeof(float) > r.buf.size())
            throw DataError("truncated checkpoint");
        std::vector<float> values(static_cast<size_t>(n));
        std::memcpy(values.data(), r.buf.data() + r.pos, values.size() * sizeof(float));
        r.pos += values.size() * sizeof(float);
        out.emplace_back(std::move(name), Tensor<float>(std::move(shape), std::move(values)));
    }
    return out;
}

} // namespace detail_ckpt

inline std::vector<uint8_t> serialize_checkpoint(const Checkpoint& c) {
    std::vector<uint8_t> buf;
    buf.insert(buf.end(), detail_ckpt::kMagic, detail_ckpt::kMagic + 4);
    detail_ckpt::put<uint32_t>(buf, c.version);
    detail_ckpt::put<uint8_t>(buf, static_cast<uint8_t>(c.config.variant));
    detail_ckpt::put<uint32_t>(buf, static_cast<uint32_t>(c.config.base_width));
    detail_ckpt::put<uint32_t>(buf, c.epoch);
    detail_ckpt::put<uint8_t>(buf, c.has_optimizer ? 1 : 0);
    detail_ckpt::put_tensor_block(buf, c.tensors);
    if (c.has_optimizer) {
        detail_ckpt::put_tensor_block(buf, c.optimizer_tensors);
        detail_ckpt::put<uint64_t>(buf, c.optimizer_step);
    }
    return buf;
}

inline void save_checkpoint(const std::string& path, const Checkpoint& c) {
    const auto buf = serialize_checkpoint(c);
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw DataError("cannot open checkpoint for writing: " + path);
    f.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (!f) throw DataError("write failed: " + path);
}

inline Checkpoint deserialize_checkpoint(const std::vector<uint8_t>& buf) {
    detail_ckpt::Reader r{buf};
    if (buf.size() < 4 || std::memcmp(buf.data(), detail_ckpt::kMagic, 4) != 0)
        throw DataError("not a checkpoint (bad magic)");
    r.pos = 4;
    Checkpoint c;
    c.version = r.get<uint32_t>();
    if (c.version != detail_ckpt::kVersion)
        throw DataError("unsupported checkpoint version " + std::to_string(c.version));
    const uint8_t variant = r.get<uint8_t>();
    if (variant > 4) throw DataError("checkpoint names unknown variant code " + std::to_string(variant));
    c.config.variant = static_cast<Variant>(variant);
    c.config.base_width = static_cast<int>(r.get<uint32_t>());
    c.epoch = r.get<uint32_t>();
    const bool has_opt = r.get<uint8_t>() != 0;
    c.tensors = detail_ckpt::get_tensor_block(r);
    c.has_optimizer = has_opt;
    if (has_opt) {
        c.optimizer_tensors = detail_ckpt::get_tensor_block(r);
        c.optimizer_step = r.get<uint64_t>();
    }
    if (r.pos != buf.size()) throw DataError("checkpoint has trailing bytes");
    return c;
}

inline Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary | std::ios::ate);
    if (!f) throw DataError("cannot read checkpoint: " + path);
    const auto size = static_cast<size_t>(f.tellg());
    f.seekg(0);
    std::vector<uint8_t> buf(size);
    f.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(size));
    if (!f) throw DataError("read failed: " + path);
    return deserialize_checkpoint(buf);
}

inline Checkpoint make_checkpoint(const Model<float>& m, uint32_t epoch,
                                  const Adam<float>* opt = nullptr) {
    Checkpoint c;
    c.config = m.cfg;
    c.epoch = epoch;
    for (const auto& nt : m.names.params) c.tensors.push_back(nt);
    for (const auto& nt : m.names.buffers) c.tensors.push_back(nt);
    if (opt) {
        c.has_optimizer = true;
        c.optimizer_tensors = opt->state_tensors();
        c.optimizer_step = opt->step_count();
    }
    return c;
}

// Copies checkpoint tensors into a model built from the same configuration,
// validating names and shapes.
inline void apply_checkpoint(const Checkpoint& c, Model<float>& m) {
    std::vector<std::pair<std::string, Tensor<float>>> expected;
    for (const auto& nt : m.names.params) expected.push_back(nt);
    for (const auto& nt : m.names.buffers) expected.push_back(nt);
    if (expected.size() != c.tensors.size())
        throw DataError("checkpoint holds " + std::to_string(c.tensors.size()) + " tensors, model '" +
                        variant_name(m.cfg.variant) + "' W=" + std::to_string(m.cfg.base_width) +
                        " expects " + std::to_string(expected.size()));
    for (size_t i = 0; i < expected.size(); ++i) {
        const auto& [name, stored] = c.tensors[i];
        auto& [want_name, dst] = expected[i];
        if (name != want_name)
            throw DataError("checkpoint tensor '" + name + "' where '" + want_name + "' expected");
        if (stored.shape() != dst.shape())
            throw DataError("checkpoint tensor '" + name + "' has shape " +
                            shape_str(stored.shape()) + ", model expects " + shape_str(dst.shape()));
        dst.values() = stored.values();
    }
}

// Restores the interleaved Adam moments saved by make_checkpoint.
inline void apply_optimizer_state(const Checkpoint& c, Adam<float>& opt) {
    if (!c.has_optimizer) throw DataError("checkpoint has no optimizer state");
    auto dst = opt.state_tensors();
    if (dst.size() != c.optimizer_tensors.size())
        throw DataError("optimizer state holds " + std::to_string(c.optimizer_tensors.size()) +
                        " tensors, expected " + std::to_string(dst.size()));
    for (size_t i = 0; i < dst.size(); ++i) {
        const auto& [name, stored] = c.optimizer_tensors[i];
        if (name != dst[i].first)
            throw DataError("optimizer tensor '" + name + "' where '" + dst[i].first + "' expected");
        if (stored.shape() != dst[i].second.shape())
            throw DataError("optimizer tensor '" + name + "' shape mismatch");
        dst[i].second.values() = stored.values();
    }
    opt.set_step_count(c.optimizer_step);
}

} // namespace rhanet
