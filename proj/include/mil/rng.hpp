#ifndef MIL_RNG_HPP
#define MIL_RNG_HPP

#include <cstdint>
#include <initializer_list>

namespace mil {

// Purpose tags keeping every random stream in a run disjoint.
namespace stream_tag {
constexpr std::uint64_t kInit = 1;
constexpr std::uint64_t kSample = 2;
constexpr std::uint64_t kShuffle = 3;
constexpr std::uint64_t kGenerate = 4;
constexpr std::uint64_t kSplit = 5;
constexpr std::uint64_t kAugment = 6;
constexpr std::uint64_t kBootstrap = 7;
constexpr std::uint64_t kGradCheck = 8;
}  // namespace stream_tag

// Counter-based generator: the state is a key mixed from (master seed,
// stream ids) plus a draw counter, so streams with distinct ids are
// independent and the same (seed, ids) replays the same sequence on any
// platform. SplitMix64 finalizer does the mixing; no libc/std distribution
// is involved anywhere, which keeps draws bit-stable across toolchains.
class RngStream {
public:
    RngStream(std::uint64_t seed, std::initializer_list<std::uint64_t> ids);

    std::uint64_t next_u64();
    // Uniform in [0, n), exact (rejection sampling). n must be >= 1.
    std::uint64_t next_below(std::uint64_t n);
    // Uniform in [0, 1), 53-bit resolution.
    double next_unit();
    // Standard normal via Box-Muller; the pair's second value is cached.
    double next_gaussian();

    static std::uint64_t mix64(std::uint64_t x);

private:
    std::uint64_t key_ = 0;
    std::uint64_t counter_ = 0;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

// FNV-1a, used to derive a stream id from a bag id string.
std::uint64_t hash_string(const char* s, std::size_t len);

}  // namespace mil

#endif  // MIL_RNG_HPP
