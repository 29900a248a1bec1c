#pragma once

#include <cstddef>
#include <cstdint>

#include "cotpred/trace.hpp"

namespace cotpred {

struct SyntheticSpec {
    std::size_t length = 1000;
    std::uint64_t seed = 1;
    double mean_dl = 40.0;  // Mbps
    double ar = 0.85;       // AR(1) coefficient of the deviation from the regime mean
    double noise = 6.0;     // innovation std, Mbps
    double handover_rate = 0.01;
    /// Values are rounded to this step; 0.01 keeps them exact at two printed decimals.
    double quantum = 0.01;
};

/// Drive-test-like trace: regime-switching AR(1) downlink, correlated uplink and
/// RSRP, occasional handovers. Deterministic for a given spec.
Trace synthetic_trace(const SyntheticSpec &spec);

} // namespace cotpred
