#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "cotpred/trace.hpp"

namespace cotpred {

/// A context cell carried verbatim: numeric, token, or flag.
using FeatureValue = std::variant<double, std::string, bool>;

enum class Feature { ul_throughput, rsrp_serving, rsrp_neighbor, network_mode, handover };

const std::vector<Feature> &default_features();
std::string feature_name(Feature f);
Feature feature_from_name(const std::string &name);

/// W x K matrix of context cells; row i is aligned with gamma[i] (oldest first).
struct ContextMatrix {
    std::vector<std::string> columns;
    std::vector<FeatureValue> cells; // row-major

    std::size_t rows() const noexcept { return columns.empty() ? 0 : cells.size() / columns.size(); }
    std::size_t cols() const noexcept { return columns.size(); }
    const FeatureValue &at(std::size_t row, std::size_t col) const { return cells.at(row * columns.size() + col); }

    bool operator==(const ContextMatrix &) const = default;
};

/// Historical window with its next-step label. Storage is oldest -> newest.
struct LabeledWindow {
    std::vector<double> gamma;
    ContextMatrix context;
    double label = 0.0;
    long origin_t = 0; // source second index of gamma.back()

    bool operator==(const LabeledWindow &) const = default;
};

/// A test input: same as LabeledWindow but carries no label.
struct QuerySample {
    std::vector<double> gamma;
    ContextMatrix context;
    long origin_t = 0;
};

/// Number of windows, floor((H - W) / S) + 1. Counts one window whose label lies
/// past the end of the trace; see build_labeled_windows for the labelled count.
std::size_t count_windows(std::size_t H, std::size_t W, std::size_t S);

/// Windows at origins W, W+S, ... <= H-1 (1-based), each labelled with the next value.
std::vector<LabeledWindow> build_labeled_windows(const Trace &trace, std::size_t W, std::size_t S,
                                                 std::span<const Feature> features = default_features());

/// Window whose newest element is the record at zero-based position `newest`.
/// Reads only records (newest - W, newest].
QuerySample make_query(const Trace &trace, std::size_t newest, std::size_t W,
                       std::span<const Feature> features = default_features());

/// deltas[i] = gamma[i+1] - gamma[i]; length W-1.
std::vector<double> first_differences(std::span<const double> gamma);

/// Strips the label; the only route from a window to a prompt query.
QuerySample as_query(const LabeledWindow &window);

std::string feature_to_string(const FeatureValue &value, int decimals);

} // namespace cotpred
