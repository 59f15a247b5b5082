#include "mil/sampling.hpp"

#include <cmath>
#include <numeric>

#include "mil/errors.hpp"
#include "mil/instrument.hpp"

namespace mil {

SamplingPolicy SamplingPolicy::full() { return SamplingPolicy{}; }

SamplingPolicy SamplingPolicy::fraction_of(double p) {
    if (!(p > 0.0) || p > 1.0) throw InvalidConfig("sampling fraction must be in (0, 1]");
    SamplingPolicy s;
    s.kind = Kind::Fraction;
    s.fraction = p;
    return s;
}

SamplingPolicy SamplingPolicy::fixed_count(std::uint64_t k) {
    if (k < 1) throw InvalidConfig("sampling count must be >= 1");
    SamplingPolicy s;
    s.kind = Kind::FixedCount;
    s.count = k;
    return s;
}

SamplingPolicy SamplingPolicy::parse(const std::string& text) {
    if (text == "full") return full();
    if (text.rfind("frac:", 0) == 0) {
        std::size_t used = 0;
        double p = 0.0;
        try {
            p = std::stod(text.substr(5), &used);
        } catch (const std::exception&) {
            throw InvalidConfig("cannot parse sampling fraction in '" + text + "'");
        }
        if (used != text.size() - 5) {
            throw InvalidConfig("cannot parse sampling fraction in '" + text + "'");
        }
        return fraction_of(p);
    }
    if (text.rfind("count:", 0) == 0) {
        std::size_t used = 0;
        long long k = 0;
        try {
            k = std::stoll(text.substr(6), &used);
        } catch (const std::exception&) {
            throw InvalidConfig("cannot parse sampling count in '" + text + "'");
        }
        if (used != text.size() - 6 || k < 1) {
            throw InvalidConfig("cannot parse sampling count in '" + text + "'");
        }
        return fixed_count(static_cast<std::uint64_t>(k));
    }
    throw InvalidConfig("unknown sampling policy '" + text + "' (use full | frac:P | count:K)");
}

std::string SamplingPolicy::label() const {
    switch (kind) {
        case Kind::Full:
            return "full";
        case Kind::Fraction: {
            char buf[32];
            std::snprintf(buf, sizeof(buf), "frac:%.2f", fraction);
            return buf;
        }
        case Kind::FixedCount:
            return "count:" + std::to_string(count);
    }
    return "?";
}

std::size_t resolve_count(const SamplingPolicy& policy, std::size_t m_total) {
    if (m_total < 1) throw TooFewInstances("resolve_count on an empty bag");
    switch (policy.kind) {
        case SamplingPolicy::Kind::Full:
            return m_total;
        case SamplingPolicy::Kind::Fraction: {
            const double exact = policy.fraction * static_cast<double>(m_total);
            auto rounded = static_cast<std::size_t>(std::llround(exact));
            if (rounded < 1) rounded = 1;
            if (rounded > m_total) rounded = m_total;
            return rounded;
        }
        case SamplingPolicy::Kind::FixedCount:
            return std::min<std::size_t>(policy.count, m_total);
    }
    return m_total;
}

InstanceBag sample_bag(const InstanceBag& bag, const SamplingPolicy& policy, RngStream& rng) {
    const std::size_t m_total = bag.size();
    if (m_total == 0) throw TooFewInstances("sample_bag on an empty bag");
    ++instrument::counters().sampling_events;

    const std::size_t m = resolve_count(policy, m_total);
    if (m == m_total) {
        return bag;  // identity path, no randomness consumed
    }

    std::vector<std::size_t> pool(m_total);
    std::iota(pool.begin(), pool.end(), 0);
    for (std::size_t i = 0; i < m; ++i) {
        const std::size_t j = i + static_cast<std::size_t>(rng.next_below(m_total - i));
        std::swap(pool[i], pool[j]);
    }

    InstanceBag out;
    out.bag_id = bag.bag_id;
    out.label = bag.label;
    out.features = Tensor(m, bag.dim());
    if (bag.coords) out.coords.emplace(m);
    out.original_indices.resize(m);
    for (std::size_t i = 0; i < m; ++i) {
        const std::size_t src = pool[i];
        for (std::size_t j = 0; j < bag.dim(); ++j) {
            out.features.at(i, j) = bag.features.at(src, j);
        }
        if (bag.coords) (*out.coords)[i] = (*bag.coords)[src];
        out.original_indices[i] = bag.original_indices.empty() ? src : bag.original_indices[src];
    }
    return out;
}

}  // namespace mil
