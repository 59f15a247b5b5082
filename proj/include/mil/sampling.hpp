#ifndef MIL_SAMPLING_HPP
#define MIL_SAMPLING_HPP

#include <cstdint>
#include <string>

#include "mil/data.hpp"
#include "mil/rng.hpp"

namespace mil {

// Within-bag sampling policy, applied once per training visit and never at
// inference.
struct SamplingPolicy {
    enum class Kind { Full, Fraction, FixedCount };

    Kind kind = Kind::Full;
    double fraction = 1.0;       // (0, 1] when kind == Fraction
    std::uint64_t count = 1;     // >= 1  when kind == FixedCount

    static SamplingPolicy full();
    static SamplingPolicy fraction_of(double p);
    static SamplingPolicy fixed_count(std::uint64_t k);

    // CLI form: "full" | "frac:0.30" | "count:8".
    static SamplingPolicy parse(const std::string& text);
    std::string label() const;

    bool operator==(const SamplingPolicy&) const = default;
};

// Instances to draw from a bag of size m_total:
//   Full        -> m_total
//   Fraction(p) -> max(1, round-half-away-from-zero(p * m_total))
//   FixedCount(k) -> min(k, m_total)
std::size_t resolve_count(const SamplingPolicy& policy, std::size_t m_total);

// Uniform draw of resolve_count(...) instances without replacement (partial
// Fisher-Yates). Keeps bag id/label, records selected original indices, and
// leaves the input bag untouched. When the resolved count equals the bag
// size the original order is returned unchanged and no randomness is
// consumed, so Full and Fraction(1.0) coincide bit for bit.
InstanceBag sample_bag(const InstanceBag& bag, const SamplingPolicy& policy, RngStream& rng);

}  // namespace mil

#endif  // MIL_SAMPLING_HPP
