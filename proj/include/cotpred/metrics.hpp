#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace cotpred {

double mae(std::span<const double> pred, std::span<const double> truth);
double rmse(std::span<const double> pred, std::span<const double> truth);
/// 1 - SS_res / SS_tot. Constant truth throws UndefinedMetricError.
double r2_score(std::span<const double> pred, std::span<const double> truth);

struct MetricSet {
    double mae = 0.0;
    double rmse = 0.0;
    double r2 = 0.0;
    std::size_t n_points = 0;
    std::size_t parse_miss_count = 0;
};

MetricSet compute_metrics(std::span<const double> pred, std::span<const double> truth,
                          std::size_t parse_miss_count = 0);

/// Ordinal pattern of each embedded vector, as the Lehmer code of its stable
/// ascending argsort (ties: earlier index ranks lower). OpenMP-parallel.
std::vector<std::uint64_t> ordinal_patterns(std::span<const double> series, int m, int tau);
std::vector<std::uint64_t> ordinal_patterns_serial(std::span<const double> series, int m, int tau);

/// Shannon entropy of the ordinal-pattern distribution divided by log(m!).
/// Requires len >= (m-1)*tau + 2, 2 <= m <= 20, tau >= 1.
double permutation_entropy_norm(std::span<const double> series, int m = 3, int tau = 1);
double permutation_entropy_norm_serial(std::span<const double> series, int m = 3, int tau = 1);

struct MetricStats {
    double mae = 0.0;
    double rmse = 0.0;
    double r2 = 0.0;
    double parse_miss_count = 0.0;
};

struct RunAggregate {
    MetricStats mean;
    MetricStats std; // sample (n-1) standard deviation; zero for a single run
    std::size_t runs = 0;
    std::size_t n_points = 0;
    bool sample_std = true;
};

RunAggregate aggregate_runs(std::span<const MetricSet> runs);

/// "8.039 ± 0.257"
std::string format_mean_std(double mean, double std, int decimals = 3);

} // namespace cotpred
