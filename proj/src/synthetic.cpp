#include "cotpred/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "cotpred/error.hpp"

namespace cotpred {

namespace {

double quantize(double v, double q) {
    if (q <= 0.0) return v;
    // Dividing by an integral 1/q lands on the double nearest the decimal value.
    const double inv = std::round(1.0 / q);
    if (std::abs(inv * q - 1.0) < 1e-12) return std::round(v * inv) / inv;
    return std::round(v / q) * q;
}

} // namespace

Trace synthetic_trace(const SyntheticSpec &spec) {
    if (spec.length == 0) throw ArgumentError("synthetic trace length must be positive");
    if (std::abs(spec.ar) >= 1.0) throw ArgumentError("synthetic AR coefficient must lie in (-1, 1)");
    std::mt19937_64 rng(spec.seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::uniform_real_distribution<double> unif(0.0, 1.0);

    Trace trace;
    trace.scenario = "synthetic";
    trace.records.reserve(spec.length);
    double dev = 0.0;
    double regime = spec.mean_dl;
    double rsrp = -85.0;
    bool nr = true;
    for (std::size_t i = 0; i < spec.length; ++i) {
        if (unif(rng) < 0.005) regime = spec.mean_dl * (0.4 + 1.2 * unif(rng));
        dev = spec.ar * dev + spec.noise * gauss(rng);
        const bool handover = unif(rng) < spec.handover_rate;
        if (handover) {
            rsrp = -70.0 - 30.0 * unif(rng);
            nr = unif(rng) < 0.7;
        }
        rsrp = std::clamp(rsrp + 0.8 * gauss(rng), -130.0, -50.0);
        const double dl = std::max(0.0, regime + dev - (handover ? 0.5 * regime : 0.0));

        TraceRecord r;
        r.t = static_cast<long>(i) + 1;
        r.dl_throughput = quantize(dl, spec.quantum);
        r.ul_throughput = quantize(std::max(0.0, 0.1 * dl + 0.5 * gauss(rng)), spec.quantum);
        r.rsrp_serving = quantize(rsrp, spec.quantum);
        r.rsrp_neighbor = quantize(rsrp - 3.0 - 4.0 * unif(rng), spec.quantum);
        r.network_mode = nr ? "5G" : "LTE";
        r.handover = handover;
        trace.records.push_back(std::move(r));
    }
    return trace;
}

} // namespace cotpred
