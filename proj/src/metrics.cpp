#include "cotpred/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "cotpred/error.hpp"
#include "cotpred/format.hpp"

namespace cotpred {

namespace {

void check_pair(std::span<const double> pred, std::span<const double> truth) {
    if (pred.size() != truth.size()) {
        throw ArgumentError("prediction/truth length mismatch: " + std::to_string(pred.size()) + " vs " +
                            std::to_string(truth.size()));
    }
    if (pred.empty()) throw ArgumentError("metrics need at least one point");
}

double sum_squared_error(std::span<const double> pred, std::span<const double> truth) {
    double acc = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const double d = pred[i] - truth[i];
        acc += d * d;
    }
    return acc;
}

} // namespace

double mae(std::span<const double> pred, std::span<const double> truth) {
    check_pair(pred, truth);
    double acc = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) acc += std::abs(pred[i] - truth[i]);
    return acc / static_cast<double>(pred.size());
}

double rmse(std::span<const double> pred, std::span<const double> truth) {
    check_pair(pred, truth);
    return std::sqrt(sum_squared_error(pred, truth) / static_cast<double>(pred.size()));
}

double r2_score(std::span<const double> pred, std::span<const double> truth) {
    check_pair(pred, truth);
    if (truth.size() < 2) throw ArgumentError("R^2 needs at least two points");
    const double mean = std::accumulate(truth.begin(), truth.end(), 0.0) / static_cast<double>(truth.size());
    double ss_tot = 0.0;
    for (double y : truth) ss_tot += (y - mean) * (y - mean);
    if (ss_tot == 0.0) throw UndefinedMetricError("R^2 is undefined for constant ground truth");
    return 1.0 - sum_squared_error(pred, truth) / ss_tot;
}

MetricSet compute_metrics(std::span<const double> pred, std::span<const double> truth, std::size_t parse_miss_count) {
    return {mae(pred, truth), rmse(pred, truth), r2_score(pred, truth), pred.size(), parse_miss_count};
}

// ---------------------------------------------------------------------------
// Permutation entropy

namespace {

std::size_t check_pe_args(std::span<const double> series, int m, int tau) {
    if (m < 2 || m > 20) throw ArgumentError("permutation entropy order must be in [2, 20]");
    if (tau < 1) throw ArgumentError("permutation entropy delay must be >= 1");
    const std::size_t span_len = static_cast<std::size_t>(m - 1) * static_cast<std::size_t>(tau);
    if (series.size() < span_len + 2) {
        throw ArgumentError("series of length " + std::to_string(series.size()) + " too short for m=" +
                            std::to_string(m) + ", tau=" + std::to_string(tau));
    }
    return series.size() - span_len;
}

std::uint64_t pattern_at(std::span<const double> series, std::size_t start, int m, int tau) {
    // Stable argsort by (value, position) over at most 20 elements.
    std::uint8_t order[20];
    double vals[20];
    for (int i = 0; i < m; ++i) {
        order[i] = static_cast<std::uint8_t>(i);
        vals[i] = series[start + static_cast<std::size_t>(i) * static_cast<std::size_t>(tau)];
    }
    std::stable_sort(order, order + m, [&](std::uint8_t a, std::uint8_t b) { return vals[a] < vals[b]; });
    // Lehmer code of the permutation `order`.
    std::uint64_t code = 0;
    for (int i = 0; i < m; ++i) {
        int smaller_after = 0;
        for (int j = i + 1; j < m; ++j) smaller_after += order[j] < order[i] ? 1 : 0;
        code = code * static_cast<std::uint64_t>(m - i) + static_cast<std::uint64_t>(smaller_after);
    }
    return code;
}

double normalized_entropy(std::vector<std::uint64_t> codes, int m) {
    std::sort(codes.begin(), codes.end());
    const double n = static_cast<double>(codes.size());
    double h = 0.0;
    for (std::size_t i = 0; i < codes.size();) {
        std::size_t j = i;
        while (j < codes.size() && codes[j] == codes[i]) ++j;
        const double p = static_cast<double>(j - i) / n;
        h -= p * std::log(p);
        i = j;
    }
    const double log_fact = std::lgamma(static_cast<double>(m) + 1.0);
    return std::clamp(h / log_fact, 0.0, 1.0);
}

} // namespace

std::vector<std::uint64_t> ordinal_patterns(std::span<const double> series, int m, int tau) {
    const std::size_t count = check_pe_args(series, m, tau);
    std::vector<std::uint64_t> codes(count);
    const auto n = static_cast<std::ptrdiff_t>(count);
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t i = 0; i < n; ++i) codes[static_cast<std::size_t>(i)] = pattern_at(series, static_cast<std::size_t>(i), m, tau);
    return codes;
}

std::vector<std::uint64_t> ordinal_patterns_serial(std::span<const double> series, int m, int tau) {
    const std::size_t count = check_pe_args(series, m, tau);
    std::vector<std::uint64_t> codes(count);
    for (std::size_t i = 0; i < count; ++i) codes[i] = pattern_at(series, i, m, tau);
    return codes;
}

double permutation_entropy_norm(std::span<const double> series, int m, int tau) {
    return normalized_entropy(ordinal_patterns(series, m, tau), m);
}

double permutation_entropy_norm_serial(std::span<const double> series, int m, int tau) {
    return normalized_entropy(ordinal_patterns_serial(series, m, tau), m);
}

// ---------------------------------------------------------------------------
// Aggregation

RunAggregate aggregate_runs(std::span<const MetricSet> runs) {
    if (runs.empty()) throw ArgumentError("aggregate_runs needs at least one run");
    RunAggregate agg;
    agg.runs = runs.size();
    agg.n_points = runs.front().n_points;
    const double n = static_cast<double>(runs.size());
    auto field = [&](auto get, double &mean_out, double &std_out) {
        const bool identical = std::all_of(runs.begin(), runs.end(), [&](const MetricSet &r) { return get(r) == get(runs.front()); });
        if (identical) {
            mean_out = get(runs.front());
            std_out = 0.0;
            return;
        }
        double sum = 0.0;
        for (const auto &r : runs) sum += get(r);
        const double mean = sum / n;
        double ss = 0.0;
        for (const auto &r : runs) ss += (get(r) - mean) * (get(r) - mean);
        mean_out = mean;
        std_out = runs.size() > 1 ? std::sqrt(ss / (n - 1.0)) : 0.0;
    };
    field([](const MetricSet &r) { return r.mae; }, agg.mean.mae, agg.std.mae);
    field([](const MetricSet &r) { return r.rmse; }, agg.mean.rmse, agg.std.rmse);
    field([](const MetricSet &r) { return r.r2; }, agg.mean.r2, agg.std.r2);
    field([](const MetricSet &r) { return static_cast<double>(r.parse_miss_count); }, agg.mean.parse_miss_count,
          agg.std.parse_miss_count);
    return agg;
}

std::string format_mean_std(double mean, double std, int decimals) {
    return format_fixed(mean, decimals) + " ± " + format_fixed(std, decimals);
}

} // namespace cotpred
