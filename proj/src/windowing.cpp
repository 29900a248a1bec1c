#include "cotpred/windowing.hpp"

#include "cotpred/error.hpp"
#include "cotpred/format.hpp"

namespace cotpred {

const std::vector<Feature> &default_features() {
    static const std::vector<Feature> features = {Feature::ul_throughput, Feature::rsrp_serving,
                                                  Feature::rsrp_neighbor, Feature::network_mode, Feature::handover};
    return features;
}

std::string feature_name(Feature f) {
    switch (f) {
    case Feature::ul_throughput: return "ul_throughput";
    case Feature::rsrp_serving: return "rsrp_serving";
    case Feature::rsrp_neighbor: return "rsrp_neighbor";
    case Feature::network_mode: return "network_mode";
    case Feature::handover: return "handover";
    }
    return "unknown";
}

Feature feature_from_name(const std::string &name) {
    for (Feature f : default_features()) {
        if (feature_name(f) == name) return f;
    }
    throw ArgumentError("unknown context feature '" + name + "'");
}

namespace {

FeatureValue extract(const TraceRecord &r, Feature f) {
    switch (f) {
    case Feature::ul_throughput: return r.ul_throughput;
    case Feature::rsrp_serving: return r.rsrp_serving;
    case Feature::rsrp_neighbor: return r.rsrp_neighbor;
    case Feature::network_mode: return r.network_mode.value_or("");
    case Feature::handover: return r.handover.value_or(false);
    }
    return 0.0;
}

ContextMatrix make_context(const Trace &trace, std::size_t first, std::size_t W, std::span<const Feature> features) {
    ContextMatrix ctx;
    ctx.columns.reserve(features.size());
    for (Feature f : features) ctx.columns.push_back(feature_name(f));
    ctx.cells.reserve(W * features.size());
    for (std::size_t i = first; i < first + W; ++i) {
        for (Feature f : features) ctx.cells.push_back(extract(trace.records[i], f));
    }
    return ctx;
}

} // namespace

std::size_t count_windows(std::size_t H, std::size_t W, std::size_t S) {
    if (W < 1 || S < 1 || H < W) throw ArgumentError("count_windows requires H >= W >= 1 and S >= 1");
    return (H - W) / S + 1;
}

QuerySample make_query(const Trace &trace, std::size_t newest, std::size_t W, std::span<const Feature> features) {
    if (W < 1 || newest + 1 < W || newest >= trace.size()) throw WindowError("query window out of range");
    const std::size_t first = newest + 1 - W;
    QuerySample q;
    q.gamma.reserve(W);
    for (std::size_t i = first; i <= newest; ++i) q.gamma.push_back(trace.records[i].dl_throughput);
    q.context = make_context(trace, first, W, features);
    q.origin_t = trace.records[newest].t;
    return q;
}

std::vector<LabeledWindow> build_labeled_windows(const Trace &trace, std::size_t W, std::size_t S,
                                                 std::span<const Feature> features) {
    if (W < 1 || S < 1) throw ArgumentError("window size and stride must be >= 1");
    const std::size_t H = trace.size();
    if (H <= W) throw WindowError("trace of " + std::to_string(H) + " records is too short for W=" + std::to_string(W));
    std::vector<LabeledWindow> windows;
    windows.reserve((H - 1 - W) / S + 1);
    // 1-based origin t runs W .. H-1; zero-based newest index is t-1.
    for (std::size_t t = W; t <= H - 1; t += S) {
        auto q = make_query(trace, t - 1, W, features);
        windows.push_back({std::move(q.gamma), std::move(q.context), trace.records[t].dl_throughput, q.origin_t});
    }
    return windows;
}

std::vector<double> first_differences(std::span<const double> gamma) {
    if (gamma.size() < 2) throw ArgumentError("first differences need at least 2 values");
    std::vector<double> out(gamma.size() - 1);
    for (std::size_t i = 0; i + 1 < gamma.size(); ++i) out[i] = gamma[i + 1] - gamma[i];
    return out;
}

QuerySample as_query(const LabeledWindow &window) { return {window.gamma, window.context, window.origin_t}; }

std::string feature_to_string(const FeatureValue &value, int decimals) {
    if (const auto *d = std::get_if<double>(&value)) return format_fixed(*d, decimals);
    if (const auto *b = std::get_if<bool>(&value)) return *b ? "yes" : "no";
    return std::get<std::string>(value);
}

} // namespace cotpred
