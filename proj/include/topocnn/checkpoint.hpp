#pragma once

// Binary checkpoint format (all integers and floats little-endian):
//
//   "PTOC"                       magic
//   u32 version                  = 1
//   u32 adaptive_n
//   u32 layer_count
//   u32 input_h, input_w, input_c
//   layer_count x { u32 kind, u32 activation, u32 field_count, u32 fields[field_count] }
//   u32 has_adam
//   [has_adam] u64 step, f64 lr, f64 beta1, f64 beta2, f64 epsilon
//   f32 parameter blobs, layer order, weights then bias
//   [has_adam] f32 first-moment blobs, then f32 second-moment blobs, same order
//   u32 crc32 of every preceding byte

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <zlib.h>

#include "topocnn/network.hpp"

namespace topocnn {

inline constexpr char kCheckpointMagic[4] = {'P', 'T', 'O', 'C'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
public:
    enum class Kind { Io, BadMagic, VersionMismatch, Truncated, ChecksumMismatch, Malformed };

    CheckpointError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
    [[nodiscard]] Kind kind() const noexcept { return kind_; }

private:
    Kind kind_;
};

struct Checkpoint {
    Model model;
    std::optional<AdamState> adam;
};

struct CheckpointHeader {
    std::uint32_t version = 0;
    Model shell;  // layers and input dims, no parameters
    bool has_adam = false;
    std::size_t header_bytes = 0;
};

inline std::uint32_t crc32_of(std::span<const std::uint8_t> bytes) {
    uLong crc = ::crc32(0L, Z_NULL, 0);
    // zlib takes uInt lengths; feed large buffers in chunks.
    std::size_t off = 0;
    while (off < bytes.size()) {
        const auto chunk = static_cast<uInt>(std::min<std::size_t>(bytes.size() - off, 1u << 30));
        crc = ::crc32(crc, bytes.data() + off, chunk);
        off += chunk;
    }
    return static_cast<std::uint32_t>(crc);
}

namespace detail {

class ByteWriter {
public:
    void u32(std::uint32_t v) { put(v); }
    void u64(std::uint64_t v) { put(v); }
    void f64(double v) { put(std::bit_cast<std::uint64_t>(v)); }
    void f32(float v) { put(std::bit_cast<std::uint32_t>(v)); }
    void raw(const void* p, std::size_t n) {
        const auto* b = static_cast<const std::uint8_t*>(p);
        bytes.insert(bytes.end(), b, b + n);
    }
    std::vector<std::uint8_t> bytes;

private:
    template <typename U>
    void put(U v) {
        for (std::size_t i = 0; i < sizeof(U); ++i) bytes.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
};

class ByteReader {
public:
    explicit ByteReader(std::span<const std::uint8_t> b) : bytes_(b) {}

    std::uint32_t u32() { return get<std::uint32_t>(); }
    std::uint64_t u64() { return get<std::uint64_t>(); }
    double f64() { return std::bit_cast<double>(get<std::uint64_t>()); }
    float f32() { return std::bit_cast<float>(get<std::uint32_t>()); }
    void need(std::size_t n) const {
        if (bytes_.size() - pos_ < n) {
            throw CheckpointError(CheckpointError::Kind::Truncated, "checkpoint truncated at byte " + std::to_string(pos_));
        }
    }
    [[nodiscard]] std::size_t pos() const noexcept { return pos_; }

private:
    template <typename U>
    U get() {
        need(sizeof(U));
        U v = 0;
        for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(bytes_[pos_ + i]) << (8 * i);
        pos_ += sizeof(U);
        return v;
    }
    std::span<const std::uint8_t> bytes_;
    std::size_t pos_ = 0;
};

inline std::uint32_t narrow(std::size_t v) {
    if (v > UINT32_MAX) throw CheckpointError(CheckpointError::Kind::Malformed, "value does not fit in u32");
    return static_cast<std::uint32_t>(v);
}

inline std::vector<std::uint32_t> conv_fields(const ConvParams& p, std::size_t in_ch) {
    return {narrow(p.filters),          narrow(p.kh),          narrow(p.kw),
            narrow(p.sv),               narrow(p.sh),          static_cast<std::uint32_t>(p.padding.mode),
            narrow(p.padding.top),      narrow(p.padding.bottom), narrow(p.padding.left),
            narrow(p.padding.right),    narrow(in_ch)};
}

inline std::vector<std::uint32_t> layer_fields(const LayerSpec& layer) {
    return std::visit(
        [](const auto& l) -> std::vector<std::uint32_t> {
            using T = std::decay_t<decltype(l)>;
            if constexpr (std::is_same_v<T, ConvLayer> || std::is_same_v<T, TConvLayer>) {
                return conv_fields(l.params, l.in_ch);
            } else if constexpr (std::is_same_v<T, PoolLayer>) {
                return {narrow(l.params.ph), narrow(l.params.pw), narrow(l.params.sv), narrow(l.params.sh)};
            } else if constexpr (std::is_same_v<T, FlattenLayer>) {
                return {};
            } else if constexpr (std::is_same_v<T, DenseLayer>) {
                return {narrow(l.in), narrow(l.out)};
            } else {
                return {narrow(l.h), narrow(l.w), narrow(l.c)};
            }
        },
        layer.params);
}

inline LayerSpec decode_layer(std::uint32_t kind, std::uint32_t act, const std::vector<std::uint32_t>& f) {
    auto expect = [&](std::size_t n) {
        if (f.size() != n) {
            throw CheckpointError(CheckpointError::Kind::Malformed,
                                  "layer kind " + std::to_string(kind) + " expects " + std::to_string(n) + " fields");
        }
    };
    if (act > 1) throw CheckpointError(CheckpointError::Kind::Malformed, "unknown activation " + std::to_string(act));
    const auto activation = static_cast<Activation>(act);
    auto conv_params = [&]() {
        expect(11);
        if (f[5] > 2) throw CheckpointError(CheckpointError::Kind::Malformed, "unknown padding mode");
        ConvParams p{f[0], f[1], f[2], f[3], f[4],
                     Padding{static_cast<Padding::Mode>(f[5]), f[6], f[7], f[8], f[9]}};
        return p;
    };
    switch (static_cast<LayerKind>(kind)) {
        case LayerKind::Conv: {
            auto p = conv_params();
            return {ConvLayer{p, f[10]}, activation};
        }
        case LayerKind::TConv: {
            auto p = conv_params();
            return {TConvLayer{p, f[10]}, activation};
        }
        case LayerKind::MaxPool:
            expect(4);
            return {PoolLayer{{f[0], f[1], f[2], f[3]}}, activation};
        case LayerKind::Flatten:
            expect(0);
            return {FlattenLayer{}, activation};
        case LayerKind::Dense:
            expect(2);
            return {DenseLayer{f[0], f[1]}, activation};
        case LayerKind::Reshape:
            expect(3);
            return {ReshapeLayer{f[0], f[1], f[2]}, activation};
    }
    throw CheckpointError(CheckpointError::Kind::Malformed, "unknown layer kind " + std::to_string(kind));
}

inline void write_blob_f32(ByteWriter& w, const ParamBlob& b) {
    for (double v : b.weights.data()) w.f32(static_cast<float>(v));
    for (double v : b.bias) w.f32(static_cast<float>(v));
}

inline void read_blob_f32(ByteReader& r, ParamBlob& b) {
    r.need(4 * b.size());
    for (double& v : b.weights.data()) v = static_cast<double>(r.f32());
    for (double& v : b.bias) v = static_cast<double>(r.f32());
}

inline std::vector<ParamBlob> zero_blobs(const std::vector<LayerSpec>& layers) {
    std::vector<ParamBlob> blobs;
    for (const auto& l : layers) {
        ParamBlob b;
        if (auto ws = weight_shape(l)) {
            b.weights = Tensor(*ws);
            b.bias.assign(bias_size(l), 0.0);
        }
        blobs.push_back(std::move(b));
    }
    return blobs;
}

inline void write_header(ByteWriter& w, const Model& m) {
    w.raw(kCheckpointMagic, 4);
    w.u32(kCheckpointVersion);
    w.u32(narrow(m.adaptive_n));
    w.u32(narrow(m.layers.size()));
    w.u32(narrow(m.input_h));
    w.u32(narrow(m.input_w));
    w.u32(narrow(m.input_c));
    for (const auto& l : m.layers) {
        const auto fields = layer_fields(l);
        w.u32(static_cast<std::uint32_t>(l.kind()));
        w.u32(static_cast<std::uint32_t>(l.activation));
        w.u32(narrow(fields.size()));
        for (auto v : fields) w.u32(v);
    }
}

inline CheckpointHeader parse_header(ByteReader& r, std::span<const std::uint8_t> bytes) {
    r.need(4);
    if (std::memcmp(bytes.data(), kCheckpointMagic, 4) != 0) {
        throw CheckpointError(CheckpointError::Kind::BadMagic, "not a checkpoint (bad magic)");
    }
    r.u32();  // magic, already checked
    CheckpointHeader h;
    h.version = r.u32();
    if (h.version != kCheckpointVersion) {
        throw CheckpointError(CheckpointError::Kind::VersionMismatch,
                              "unsupported checkpoint version " + std::to_string(h.version));
    }
    h.shell.adaptive_n = r.u32();
    const std::uint32_t count = r.u32();
    h.shell.input_h = r.u32();
    h.shell.input_w = r.u32();
    h.shell.input_c = r.u32();
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::uint32_t kind = r.u32();
        const std::uint32_t act = r.u32();
        const std::uint32_t nf = r.u32();
        r.need(4ull * nf);
        std::vector<std::uint32_t> fields(nf);
        for (auto& v : fields) v = r.u32();
        h.shell.layers.push_back(decode_layer(kind, act, fields));
    }
    try {
        (void)shape_chain(h.shell);
    } catch (const std::exception& e) {
        throw CheckpointError(CheckpointError::Kind::Malformed, std::string("inconsistent layer table: ") + e.what());
    }
    h.has_adam = r.u32() != 0;
    h.header_bytes = r.pos();
    return h;
}

}  // namespace detail

/// Serialized checkpoint bytes. Parameters (and Adam moments) are stored as f32.
inline std::vector<std::uint8_t> serialize_checkpoint(const Model& m, const AdamState* adam = nullptr) {
    detail::ByteWriter w;
    w.bytes.reserve(64 + 4 * parameter_count(m) * (adam ? 3 : 1));
    detail::write_header(w, m);
    w.u32(adam ? 1 : 0);
    if (adam) {
        w.u64(adam->step);
        w.f64(adam->hyper.lr);
        w.f64(adam->hyper.beta1);
        w.f64(adam->hyper.beta2);
        w.f64(adam->hyper.epsilon);
    }
    for (const auto& b : m.params) detail::write_blob_f32(w, b);
    if (adam) {
        for (const auto& b : adam->m) detail::write_blob_f32(w, b);
        for (const auto& b : adam->v) detail::write_blob_f32(w, b);
    }
    w.u32(crc32_of(w.bytes));
    return std::move(w.bytes);
}

/// Header bytes for a model without parameter blobs or checksum; used to
/// inspect architectures too large to materialise.
inline std::vector<std::uint8_t> serialize_header(const Model& m) {
    detail::ByteWriter w;
    detail::write_header(w, m);
    w.u32(0);
    return std::move(w.bytes);
}

inline CheckpointHeader parse_checkpoint_header(std::span<const std::uint8_t> bytes) {
    detail::ByteReader r(bytes);
    return detail::parse_header(r, bytes);
}

inline Checkpoint deserialize_checkpoint(std::span<const std::uint8_t> bytes) {
    detail::ByteReader r(bytes);
    CheckpointHeader h = detail::parse_header(r, bytes);

    Checkpoint ck;
    ck.model = std::move(h.shell);
    ck.model.params = detail::zero_blobs(ck.model.layers);
    std::optional<AdamState> adam;
    if (h.has_adam) {
        AdamState s;
        s.step = r.u64();
        s.hyper = {r.f64(), r.f64(), r.f64(), r.f64()};
        adam = std::move(s);
    }
    const std::size_t blob_bytes = 4 * parameter_count(ck.model) * (h.has_adam ? 3 : 1);
    const std::size_t expected = r.pos() + blob_bytes + 4;
    if (bytes.size() < expected) {
        throw CheckpointError(CheckpointError::Kind::Truncated, "checkpoint truncated: " + std::to_string(bytes.size()) +
                                                                     " bytes, expected " + std::to_string(expected));
    }
    if (bytes.size() > expected) {
        throw CheckpointError(CheckpointError::Kind::Malformed, "trailing bytes after checkpoint payload");
    }
    detail::ByteReader tail(bytes.subspan(bytes.size() - 4));
    if (tail.u32() != crc32_of(bytes.first(bytes.size() - 4))) {
        throw CheckpointError(CheckpointError::Kind::ChecksumMismatch, "checkpoint checksum mismatch");
    }
    for (auto& b : ck.model.params) detail::read_blob_f32(r, b);
    if (adam) {
        adam->m = detail::zero_blobs(ck.model.layers);
        adam->v = detail::zero_blobs(ck.model.layers);
        for (auto& b : adam->m) detail::read_blob_f32(r, b);
        for (auto& b : adam->v) detail::read_blob_f32(r, b);
    }
    ck.adam = std::move(adam);
    return ck;
}

inline void write_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError(CheckpointError::Kind::Io, "cannot open " + path.string() + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw CheckpointError(CheckpointError::Kind::Io, "write failed: " + path.string());
}

inline std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CheckpointError(CheckpointError::Kind::Io, "cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void save_checkpoint(const Model& m, const AdamState* adam, const std::filesystem::path& path) {
    write_bytes(path, serialize_checkpoint(m, adam));
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) { return deserialize_checkpoint(read_bytes(path)); }

/// Copy of `m` with every parameter rounded through f32, i.e. what a
/// save/load round trip yields.
inline Model round_to_f32(Model m) {
    for (auto& b : m.params) {
        for (double& v : b.weights.data()) v = static_cast<double>(static_cast<float>(v));
        for (double& v : b.bias) v = static_cast<double>(static_cast<float>(v));
    }
    return m;
}

}  // namespace topocnn
