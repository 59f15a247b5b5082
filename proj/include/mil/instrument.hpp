#ifndef MIL_INSTRUMENT_HPP
#define MIL_INSTRUMENT_HPP

#include <cstdint>

namespace mil::instrument {

// Per-thread event counters proving that evaluation paths never touch
// sampling or augmentation. A training fold runs on one thread, so the
// thread-local scope matches the sequential-fold execution model.
struct Counters {
    std::uint64_t sampling_events = 0;
    std::uint64_t augment_events = 0;
};

Counters& counters();

// Captures the counters on entry; delta() reports events since then.
class PurityProbe {
public:
    PurityProbe() : start_(counters()) {}
    std::uint64_t delta() const {
        const Counters& now = counters();
        return (now.sampling_events - start_.sampling_events) +
               (now.augment_events - start_.augment_events);
    }

private:
    Counters start_;
};

}  // namespace mil::instrument

#endif  // MIL_INSTRUMENT_HPP
