// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <bit>
#include <cstdint>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include "mark/errors.hpp"

namespace mark {

/// Byte-level primitives shared by the dataset readers and the checkpoint
/// container.  All multi-byte values are assembled explicitly so the files
/// are identical regardless of host endianness.

inline void read_exact(std::istream& in, void* dst, size_t n, const std::string& what) {
    in.read(static_cast<char*>(dst), static_cast<std::streamsize>(n));
    if (static_cast<size_t>(in.gcount()) != n)
        throw format_error(what + ": truncated (wanted " + std::to_string(n) +
                           " bytes, got " + std::to_string(in.gcount()) + ")");
}

inline void write_bytes(std::ostream& out, const void* src, size_t n) {
    out.write(static_cast<const char*>(src), static_cast<std::streamsize>(n));
}

inline uint32_t read_u32_be(std::istream& in, const std::string& what) {
    unsigned char b[4];
    read_exact(in, b, 4, what);
    return (uint32_t(b[0]) << 24) | (uint32_t(b[1]) << 16) | (uint32_t(b[2]) << 8) |
           uint32_t(b[3]);
}

inline void write_u32_be(std::ostream& out, uint32_t v) {
    const unsigned char b[4] = {static_cast<unsigned char>(v >> 24),
                                static_cast<unsigned char>(v >> 16),
                                static_cast<unsigned char>(v >> 8),
                                static_cast<unsigned char>(v)};
    write_bytes(out, b, 4);
}

inline uint16_t read_u16_le(std::istream& in, const std::string& what) {
    unsigned char b[2];
    read_exact(in, b, 2, what);
    return static_cast<uint16_t>(uint16_t(b[0]) | (uint16_t(b[1]) << 8));
}

inline void write_u16_le(std::ostream& out, uint16_t v) {
    const unsigned char b[2] = {static_cast<unsigned char>(v),
                                static_cast<unsigned char>(v >> 8)};
    write_bytes(out, b, 2);
}

inline uint32_t read_u32_le(std::istream& in, const std::string& what) {
    unsigned char b[4];
    read_exact(in, b, 4, what);
    return uint32_t(b[0]) | (uint32_t(b[1]) << 8) | (uint32_t(b[2]) << 16) |
           (uint32_t(b[3]) << 24);
}

inline void write_u32_le(std::ostream& out, uint32_t v) {
    const unsigned char b[4] = {static_cast<unsigned char>(v),
                                static_cast<unsigned char>(v >> 8),
                                static_cast<unsigned char>(v >> 16),
                                static_cast<unsigned char>(v >> 24)};
    write_bytes(out, b, 4);
}

inline float read_f32_le(std::istream& in, const std::string& what) {
    return std::bit_cast<float>(read_u32_le(in, what));
}

inline void write_f32_le(std::ostream& out, float v) {
    write_u32_le(out, std::bit_cast<uint32_t>(v));
}

inline void read_f32_array_le(std::istream& in, float* dst, size_t n, const std::string& what) {
    std::vector<unsigned char> buf(n * 4);
    read_exact(in, buf.data(), buf.size(), what);
    for (size_t i = 0; i < n; ++i) {
        const uint32_t v = uint32_t(buf[4 * i]) | (uint32_t(buf[4 * i + 1]) << 8) |
                           (uint32_t(buf[4 * i + 2]) << 16) | (uint32_t(buf[4 * i + 3]) << 24);
        dst[i] = std::bit_cast<float>(v);
    }
}

inline void write_f32_array_le(std::ostream& out, const float* src, size_t n) {
    std::vector<unsigned char> buf(n * 4);
    for (size_t i = 0; i < n; ++i) {
        const uint32_t v = std::bit_cast<uint32_t>(src[i]);
        buf[4 * i] = static_cast<unsigned char>(v);
        buf[4 * i + 1] = static_cast<unsigned char>(v >> 8);
        buf[4 * i + 2] = static_cast<unsigned char>(v >> 16);
        buf[4 * i + 3] = static_cast<unsigned char>(v >> 24);
    }
    write_bytes(out, buf.data(), buf.size());
}

} // namespace mark
