#pragma once

// Binary checkpoint, all integers and floats little-endian:
//
//   "MPCL"                      4 bytes magic
//   u32 format version          (kCheckpointVersion)
//   u32 hash_bits
//   u32 dim
//   u64 Adam step counter
//   f64 beta1, f64 beta2, f64 eps
//   f32 embedding table         (2^hash_bits * dim, row-major)
//   f32 projection              (dim * dim, row-major)
//   f32 Adam m / v embedding, m / v projection
//   u32 CRC-32 (zlib polynomial) of every preceding byte

#include <zlib.h>

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "mpcl/core/errors.hpp"
#include "mpcl/encoder.hpp"
#include "mpcl/optimizer.hpp"

namespace mpcl {

inline constexpr std::array<char, 4> kCheckpointMagic{'M', 'P', 'C', 'L'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
    ModelParams<float> params;
    OptimizerState<float> optimizer;
};

namespace detail {

class ByteWriter {
public:
    void raw(const char* p, std::size_t n) { bytes_.insert(bytes_.end(), p, p + n); }

    template <class U>
    void uint(U v) {
        for (std::size_t i = 0; i < sizeof(U); ++i) bytes_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
    }

    void f64(double v) { uint(std::bit_cast<std::uint64_t>(v)); }

    void f32_array(std::span<const float> values) {
        bytes_.reserve(bytes_.size() + 4 * values.size());
        for (float v : values) uint(std::bit_cast<std::uint32_t>(v));
    }

    const std::vector<char>& bytes() const noexcept { return bytes_; }
    std::vector<char>& bytes() noexcept { return bytes_; }

private:
    std::vector<char> bytes_;
};

class ByteReader {
public:
    explicit ByteReader(std::span<const char> bytes) : bytes_(bytes) {}

    template <class U>
    U uint() {
        need(sizeof(U));
        U v = 0;
        for (std::size_t i = 0; i < sizeof(U); ++i) {
            v |= static_cast<U>(static_cast<std::uint8_t>(bytes_[pos_ + i])) << (8 * i);
        }
        pos_ += sizeof(U);
        return v;
    }

    double f64() { return std::bit_cast<double>(uint<std::uint64_t>()); }

    void f32_array(std::span<float> out) {
        need(4 * out.size());
        for (float& v : out) v = std::bit_cast<float>(uint<std::uint32_t>());
    }

    std::size_t position() const noexcept { return pos_; }

private:
    void need(std::size_t n) const {
        if (pos_ + n > bytes_.size()) {
            throw CheckpointError(CheckpointError::Kind::checksum, "checkpoint truncated: payload shorter than header implies");
        }
    }

    std::span<const char> bytes_;
    std::size_t pos_ = 0;
};

inline std::uint32_t crc32_of(std::span<const char> bytes) {
    return static_cast<std::uint32_t>(
        ::crc32_z(0L, reinterpret_cast<const Bytef*>(bytes.data()), static_cast<z_size_t>(bytes.size())));
}

}  // namespace detail

inline std::vector<char> serialize_checkpoint(const ModelParams<float>& params, const OptimizerState<float>& state) {
    params.validate();
    if (state.m_embedding.rows() != params.embedding.rows() || state.m_embedding.cols() != params.dim ||
        state.m_projection.rows() != params.dim) {
        throw InvalidArgument("serialize_checkpoint: optimizer state does not match parameters");
    }
    detail::ByteWriter w;
    w.raw(kCheckpointMagic.data(), kCheckpointMagic.size());
    w.uint<std::uint32_t>(kCheckpointVersion);
    w.uint<std::uint32_t>(params.hash_bits);
    w.uint<std::uint32_t>(static_cast<std::uint32_t>(params.dim));
    w.uint<std::uint64_t>(state.step);
    w.f64(state.config.beta1);
    w.f64(state.config.beta2);
    w.f64(state.config.eps);
    w.f32_array(params.embedding.flat());
    w.f32_array(params.projection.flat());
    w.f32_array(state.m_embedding.flat());
    w.f32_array(state.v_embedding.flat());
    w.f32_array(state.m_projection.flat());
    w.f32_array(state.v_projection.flat());
    const std::uint32_t crc = detail::crc32_of(w.bytes());
    w.uint<std::uint32_t>(crc);
    return std::move(w.bytes());
}

inline Checkpoint deserialize_checkpoint(std::span<const char> bytes) {
    using Kind = CheckpointError::Kind;
    if (bytes.size() < kCheckpointMagic.size()) throw CheckpointError(Kind::checksum, "checkpoint truncated: no header");
    if (!std::equal(kCheckpointMagic.begin(), kCheckpointMagic.end(), bytes.begin())) {
        throw CheckpointError(Kind::magic, "not a checkpoint: magic mismatch");
    }
    detail::ByteReader header(bytes.subspan(4));
    const auto version = header.uint<std::uint32_t>();
    if (version != kCheckpointVersion) {
        throw CheckpointError(Kind::version, "unsupported checkpoint version " + std::to_string(version));
    }
    if (bytes.size() < 8 + 4) throw CheckpointError(Kind::checksum, "checkpoint truncated: no checksum");
    const auto body = bytes.first(bytes.size() - 4);
    const auto stored_crc = detail::ByteReader(bytes.last(4)).uint<std::uint32_t>();
    if (detail::crc32_of(body) != stored_crc) throw CheckpointError(Kind::checksum, "checkpoint checksum mismatch");

    detail::ByteReader r(body.subspan(8));
    Checkpoint ck;
    const auto hash_bits = r.uint<std::uint32_t>();
    const auto dim = r.uint<std::uint32_t>();
    if (hash_bits < 1 || hash_bits > 30 || dim < 1) throw CheckpointError(Kind::shape, "checkpoint header has invalid shape");
    ck.params.hash_bits = hash_bits;
    ck.params.dim = dim;
    ck.params.embedding = Matrix<float>(ck.params.vocab_size(), dim);
    ck.params.projection = Matrix<float>(dim, dim);
    ck.optimizer = OptimizerState<float>::zeros_like(ck.params);
    ck.optimizer.step = r.uint<std::uint64_t>();
    ck.optimizer.config.beta1 = r.f64();
    ck.optimizer.config.beta2 = r.f64();
    ck.optimizer.config.eps = r.f64();
    r.f32_array(ck.params.embedding.flat());
    r.f32_array(ck.params.projection.flat());
    r.f32_array(ck.optimizer.m_embedding.flat());
    r.f32_array(ck.optimizer.v_embedding.flat());
    r.f32_array(ck.optimizer.m_projection.flat());
    r.f32_array(ck.optimizer.v_projection.flat());
    if (8 + r.position() != body.size()) throw CheckpointError(Kind::checksum, "checkpoint has trailing bytes");
    ck.optimizer.rebuild_active_rows();
    return ck;
}

inline void save_checkpoint(const ModelParams<float>& params, const OptimizerState<float>& state,
                            const std::filesystem::path& path) {
    const auto bytes = serialize_checkpoint(params, state);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError(CheckpointError::Kind::io, "cannot open " + path.string() + " for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw CheckpointError(CheckpointError::Kind::io, "write failed: " + path.string());
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CheckpointError(CheckpointError::Kind::io, "cannot open " + path.string());
    std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (in.bad()) throw CheckpointError(CheckpointError::Kind::io, "read failed: " + path.string());
    return deserialize_checkpoint(bytes);
}

}  // namespace mpcl
