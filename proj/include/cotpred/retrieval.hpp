#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "cotpred/demonstration.hpp"
#include "cotpred/windowing.hpp"

namespace cotpred {

/// Relative weight of the raw-window and first-difference distances. The
/// default 1:1 is the plain sum; a zero weight ablates that term.
struct ScoreWeights {
    double raw = 1.0;
    double delta = 1.0;
};

struct ScoredCandidate {
    std::size_t index = 0;
    double e1 = 0.0; // ||gamma_q - gamma_c||
    double e2 = 0.0; // ||diff(gamma_q) - diff(gamma_c)||
    double score = 0.0;
};

struct SelectionResult {
    std::vector<std::size_t> indices; // best first
    std::vector<double> scores;
};

/// Context features do not take part in scoring.
ScoredCandidate score_candidate(const QuerySample &query, const LabeledWindow &candidate, ScoreWeights weights = {});

/// Training windows flattened into contiguous raw and first-difference rows.
class RetrievalIndex {
public:
    RetrievalIndex() = default;
    explicit RetrievalIndex(std::span<const LabeledWindow> windows);
    explicit RetrievalIndex(std::span<const Demonstration> corpus);

    void add(std::span<const double> gamma);

    std::size_t size() const noexcept { return count_; }
    std::size_t window() const noexcept { return window_; }
    std::span<const double> gamma(std::size_t i) const { return {gammas_.data() + i * window_, window_}; }
    std::span<const double> deltas(std::size_t i) const {
        return {deltas_.data() + i * (window_ - 1), window_ - 1};
    }

private:
    std::size_t window_ = 0;
    std::size_t count_ = 0;
    std::vector<double> gammas_;
    std::vector<double> deltas_;
};

/// Scores every indexed candidate; OpenMP-parallel over candidates.
std::vector<ScoredCandidate> score_all(const QuerySample &query, const RetrievalIndex &index,
                                       ScoreWeights weights = {});
/// Single-threaded reference for score_all; results are bit-identical.
std::vector<ScoredCandidate> score_all_serial(const QuerySample &query, const RetrievalIndex &index,
                                              ScoreWeights weights = {});

/// The M lowest-score indices, ties broken by the smaller index. M = 0 gives an
/// empty selection; M > N throws SelectionError.
SelectionResult select_top_m(const QuerySample &query, const RetrievalIndex &index, std::size_t M,
                             ScoreWeights weights = {});
SelectionResult select_top_m(const QuerySample &query, std::span<const Demonstration> corpus, std::size_t M,
                             ScoreWeights weights = {});

/// One selection per query, OpenMP-parallel over queries.
std::vector<SelectionResult> select_batch(std::span<const QuerySample> queries, const RetrievalIndex &index,
                                          std::size_t M, ScoreWeights weights = {});
/// Single-threaded reference for select_batch.
std::vector<SelectionResult> select_batch_serial(std::span<const QuerySample> queries, const RetrievalIndex &index,
                                                 std::size_t M, ScoreWeights weights = {});

} // namespace cotpred
