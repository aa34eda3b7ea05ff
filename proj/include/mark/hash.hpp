// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <cstring>
#include <string>

namespace mark {

/// FNV-1a 64-bit. Used for parameter digests in audit trails and result
/// files; not cryptographic.
class Fnv1a {
public:
    void update(const void* bytes, size_t n) {
        const auto* p = static_cast<const unsigned char*>(bytes);
        for (size_t i = 0; i < n; ++i) {
            h_ ^= p[i];
            h_ *= 0x100000001B3ULL;
        }
    }

    template <typename T>
    void update_value(const T& v) {
        static_assert(std::is_trivially_copyable_v<T>);
        update(&v, sizeof(T));
    }

    uint64_t digest() const { return h_; }

    std::string hex() const {
        static const char* k = "0123456789abcdef";
        std::string s(16, '0');
        uint64_t v = h_;
        for (int i = 15; i >= 0; --i) {
            s[static_cast<size_t>(i)] = k[v & 0xF];
            v >>= 4;
        }
        return s;
    }

private:
    uint64_t h_ = 0xCBF29CE484222325ULL;
};

} // namespace mark
