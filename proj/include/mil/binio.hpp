#ifndef MIL_BINIO_HPP
#define MIL_BINIO_HPP

#include <cstdint>
#include <cstring>
#include <string>
#include <vector>

#include "mil/errors.hpp"

namespace mil::binio {

// Little-endian writers/readers over a byte buffer. Explicit byte order
// keeps the on-disk formats identical across hosts.

inline void put_u8(std::vector<std::uint8_t>& out, std::uint8_t v) { out.push_back(v); }

inline void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
    out.push_back(static_cast<std::uint8_t>(v & 0xFF));
    out.push_back(static_cast<std::uint8_t>(v >> 8));
}

inline void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xFF));
}

inline void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xFF));
}

inline void put_f64(std::vector<std::uint8_t>& out, double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, sizeof(bits));
    put_u64(out, bits);
}

inline void put_bytes(std::vector<std::uint8_t>& out, const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    out.insert(out.end(), b, b + n);
}

inline void put_string16(std::vector<std::uint8_t>& out, const std::string& s) {
    if (s.size() > 0xFFFF) throw FormatError("string too long for u16 length prefix");
    put_u16(out, static_cast<std::uint16_t>(s.size()));
    put_bytes(out, s.data(), s.size());
}

class Reader {
public:
    Reader(const std::uint8_t* data, std::size_t size, std::string what)
        : data_(data), size_(size), what_(std::move(what)) {}

    std::size_t remaining() const { return size_ - pos_; }

    const std::uint8_t* take(std::size_t n) {
        if (remaining() < n) {
            throw FormatError(what_ + ": truncated (need " + std::to_string(n) + " bytes, have " +
                              std::to_string(remaining()) + ")");
        }
        const std::uint8_t* p = data_ + pos_;
        pos_ += n;
        return p;
    }

    std::uint8_t u8() { return *take(1); }

    std::uint16_t u16() {
        const std::uint8_t* p = take(2);
        return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
    }

    std::uint32_t u32() {
        const std::uint8_t* p = take(4);
        return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
               (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
    }

    std::uint64_t u64() {
        std::uint64_t lo = u32();
        std::uint64_t hi = u32();
        return lo | (hi << 32);
    }

    double f64() {
        std::uint64_t bits = u64();
        double v;
        std::memcpy(&v, &bits, sizeof(v));
        return v;
    }

    std::string string16() {
        std::uint16_t n = u16();
        const std::uint8_t* p = take(n);
        return std::string(reinterpret_cast<const char*>(p), n);
    }

    void expect_magic(const char magic[4]) {
        const std::uint8_t* p = take(4);
        if (std::memcmp(p, magic, 4) != 0) {
            throw FormatError(what_ + ": bad magic, expected '" + std::string(magic, 4) + "'");
        }
    }

    void expect_exhausted() {
        if (remaining() != 0) {
            throw FormatError(what_ + ": " + std::to_string(remaining()) +
                              " unexpected trailing bytes");
        }
    }

private:
    const std::uint8_t* data_;
    std::size_t size_;
    std::size_t pos_ = 0;
    std::string what_;
};

std::vector<std::uint8_t> read_file(const std::string& path);
void write_file(const std::string& path, const std::vector<std::uint8_t>& bytes);

}  // namespace mil::binio

#endif  // MIL_BINIO_HPP
