#include "mil/instrument.hpp"

namespace mil::instrument {

Counters& counters() {
    thread_local Counters c;
    return c;
}

}  // namespace mil::instrument
