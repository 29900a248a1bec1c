#pragma once

#include <string>
#include <vector>

#include "cotpred/demonstration.hpp"
#include "cotpred/windowing.hpp"

namespace testing {

inline cotpred::ContextMatrix fixture_context(std::vector<double> ul, std::vector<double> rs, std::vector<double> rn,
                                              std::vector<std::string> mode, std::vector<bool> ho) {
    cotpred::ContextMatrix c;
    c.columns = {"ul_throughput", "rsrp_serving", "rsrp_neighbor", "network_mode", "handover"};
    for (std::size_t i = 0; i < ul.size(); ++i) {
        c.cells.emplace_back(ul[i]);
        c.cells.emplace_back(rs[i]);
        c.cells.emplace_back(rn[i]);
        c.cells.emplace_back(mode[i]);
        c.cells.emplace_back(static_cast<bool>(ho[i]));
    }
    return c;
}

/// Two driving-scenario demonstrations with rationales of typical generated length.
inline std::vector<cotpred::Demonstration> reference_demos() {
    cotpred::Demonstration a;
    a.window.gamma = {41.27, 44.9, 39.15, 47.62, 52.08};
    a.window.context = fixture_context({3.12, 3.4, 2.95, 3.61, 3.88}, {-84.0, -83.5, -85.25, -82.75, -81.5},
                                       {-91.0, -90.5, -92.0, -90.25, -89.75},
                                       {"NR-NSA", "NR-NSA", "NR-NSA", "NR-NSA", "NR-NSA"},
                                       {false, false, false, false, false});
    a.window.label = 53.4;
    a.window.origin_t = 118;
    a.rationale =
        "Step 1: the window rises from 41.27 to 52.08 Mbps with one dip at t-2, so the short-term trend is upward "
        "at roughly 2.7 Mbps per second. Step 2: variability is moderate; the dip recovered within one second, "
        "which suggests scheduling noise rather than a link problem. Step 3: serving RSRP improved by 2.5 dB over "
        "the window and stays about 8 dB above the neighbour, so the link is strengthening and no handover is "
        "imminent. Step 4: uplink grows with downlink, consistent with an active transfer. Step 5: damp the trend "
        "because throughput near 50 Mbps is close to the recent peak and increments usually shrink, giving a "
        "forecast slightly above the last value.";
    a.lecture = "L";
    a.plan = "P";
    a.generator_model = "fixture";
    a.content_hash = "fixture-a";

    cotpred::Demonstration b;
    b.window.gamma = {38.6, 40.11, 36.92, 42.35, 45.7};
    b.window.context = fixture_context({2.8, 2.91, 2.67, 3.05, 3.3}, {-86.25, -85.5, -87.0, -85.0, -84.25},
                                       {-90.5, -90.0, -91.25, -89.5, -89.0},
                                       {"NR-NSA", "NR-NSA", "NR-NSA", "NR-NSA", "NR-NSA"},
                                       {false, false, false, false, false});
    b.window.label = 46.85;
    b.window.origin_t = 342;
    b.rationale =
        "Step 1: throughput climbs from 38.60 to 45.70 Mbps, with a brief drop at t-2 that is fully reversed, so "
        "the underlying trend is upward by about 1.8 Mbps per second. Step 2: the swing of roughly 5 Mbps sets "
        "the uncertainty; the last two steps are consistent, which favours continuation. Step 3: serving RSRP "
        "improves by 2 dB and the neighbour remains weaker by about 5 dB, so link quality supports higher "
        "throughput and a handover is unlikely. Step 4: no mode change or handover appears, so there is no "
        "disruption to account for. Step 5: extrapolate a smaller increment than the last jump, since gains "
        "taper after a rebound, which places the next value a little above 45.70 Mbps.";
    b.lecture = "L";
    b.plan = "P";
    b.generator_model = "fixture";
    b.content_hash = "fixture-b";
    return {b, a}; // most similar last
}

inline cotpred::QuerySample reference_query() {
    cotpred::QuerySample q;
    q.gamma = {40.02, 43.55, 38.8, 46.1, 50.37};
    q.context = fixture_context({3.01, 3.28, 2.9, 3.5, 3.72}, {-84.5, -84.0, -85.5, -83.25, -82.0},
                                {-91.5, -90.75, -92.25, -90.5, -90.0},
                                {"NR-NSA", "NR-NSA", "NR-NSA", "NR-NSA", "NR-NSA"},
                                {false, false, false, false, false});
    q.origin_t = 455;
    return q;
}

} // namespace testing
