#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace cotpred {

/// One per-second measurement row. Missing numeric cells are NaN; missing
/// categorical/boolean cells are nullopt. After clean_trace() every field is set.
struct TraceRecord {
    long t = 0;                    // 1-based second index
    double dl_throughput = 0.0;    // Mbps
    double ul_throughput = 0.0;    // Mbps
    double rsrp_serving = 0.0;     // dBm
    double rsrp_neighbor = 0.0;    // dBm
    std::optional<std::string> network_mode;
    std::optional<bool> handover;

    bool operator==(const TraceRecord &) const = default;
};

struct Trace {
    std::vector<TraceRecord> records;
    std::string scenario;

    std::size_t size() const noexcept { return records.size(); }
    bool empty() const noexcept { return records.empty(); }
    /// Downlink throughput column, in record order.
    std::vector<double> dl_series() const;
};

enum class ThroughputUnit { mbps, kbps };

/// Maps the six trace fields onto source column names.
struct TraceSchema {
    std::string dl_throughput = "dl_throughput";
    std::string ul_throughput = "ul_throughput";
    std::string rsrp_serving = "rsrp_serving";
    std::string rsrp_neighbor = "rsrp_neighbor";
    std::string network_mode = "network_mode";
    std::string handover = "handover";
    /// When set and the handover column is absent, handover is derived as
    /// "cell id differs from the previous row's cell id".
    std::optional<std::string> cell_id;
    ThroughputUnit dl_unit = ThroughputUnit::mbps;
    ThroughputUnit ul_unit = ThroughputUnit::mbps;
    char delimiter = ',';
    std::vector<std::string> missing_markers = {"", "NaN", "-"};
};

/// Reads a delimiter-separated file with a header row. Rows keep file order and
/// are re-indexed 1..H.
Trace load_trace(const std::filesystem::path &path, const TraceSchema &schema, std::string scenario = {});

/// Writes the canonical column layout load_trace() reads with a default schema.
/// Finite values round-trip bit-exactly.
void save_trace(const Trace &trace, const std::filesystem::path &path);

struct CleaningPolicy {
    double rsrp_min = -160.0;
    double rsrp_max = -40.0;
};

struct CleaningLog {
    std::size_t input_records = 0;
    std::size_t output_records = 0;
    std::size_t leading_dropped = 0;
    std::size_t filled_cells = 0;
    std::size_t out_of_range_cells = 0;
};

struct CleanedTrace {
    Trace trace;
    CleaningLog log;
};

/// Forward-fills missing cells from the most recent valid value and drops
/// leading rows that have no valid predecessor in some column. Negative
/// throughput and out-of-range RSRP count as missing. Output is re-indexed 1..H'.
CleanedTrace clean_trace(const Trace &trace, const CleaningPolicy &policy = {});

/// Splits at floor(H/2). Requires H >= 2 * (test_horizon + window).
std::pair<Trace, Trace> split_train_test(const Trace &trace, std::size_t test_horizon, std::size_t window = 0);

} // namespace cotpred
