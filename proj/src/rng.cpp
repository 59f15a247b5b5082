#include "mil/rng.hpp"

#include <cmath>

#include "mil/errors.hpp"

namespace mil {

namespace {
constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;
constexpr double kTwoPi = 6.283185307179586476925286766559;
}  // namespace

std::uint64_t RngStream::mix64(std::uint64_t x) {
    x ^= x >> 30;
    x *= 0xBF58476D1CE4E5B9ULL;
    x ^= x >> 27;
    x *= 0x94D049BB133111EBULL;
    x ^= x >> 31;
    return x;
}

RngStream::RngStream(std::uint64_t seed, std::initializer_list<std::uint64_t> ids) {
    std::uint64_t k = mix64(seed + kGolden);
    for (std::uint64_t id : ids) {
        k = mix64(k ^ mix64(id + kGolden));
    }
    key_ = k;
}

std::uint64_t RngStream::next_u64() {
    return mix64(key_ + (++counter_) * kGolden);
}

std::uint64_t RngStream::next_below(std::uint64_t n) {
    if (n == 0) throw InvalidConfig("next_below(0)");
    if ((n & (n - 1)) == 0) {
        return next_u64() & (n - 1);
    }
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t x;
    do {
        x = next_u64();
    } while (x >= limit);
    return x % n;
}

double RngStream::next_unit() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double RngStream::next_gaussian() {
    if (has_spare_) {
        has_spare_ = false;
        return spare_;
    }
    const double u1 = 1.0 - next_unit();  // (0, 1]
    const double u2 = next_unit();
    const double r = std::sqrt(-2.0 * std::log(u1));
    spare_ = r * std::sin(kTwoPi * u2);
    has_spare_ = true;
    return r * std::cos(kTwoPi * u2);
}

std::uint64_t hash_string(const char* s, std::size_t len) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (std::size_t i = 0; i < len; ++i) {
        h ^= static_cast<unsigned char>(s[i]);
        h *= 0x100000001b3ULL;
    }
    return h;
}

}  // namespace mil
