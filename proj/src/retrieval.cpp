#include "cotpred/retrieval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "cotpred/error.hpp"

namespace cotpred {

namespace {

double euclidean(std::span<const double> a, std::span<const double> b) {
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        acc += d * d;
    }
    return std::sqrt(acc);
}

ScoredCandidate score_row(std::size_t n, std::span<const double> q_gamma, std::span<const double> q_delta,
                          std::span<const double> c_gamma, std::span<const double> c_delta, ScoreWeights w) {
    ScoredCandidate c;
    c.index = n;
    c.e1 = euclidean(q_gamma, c_gamma);
    c.e2 = euclidean(q_delta, c_delta);
    c.score = w.raw * c.e1 + w.delta * c.e2;
    return c;
}

void check_query(const QuerySample &query, const RetrievalIndex &index) {
    if (index.size() > 0 && query.gamma.size() != index.window()) {
        throw DimensionError("query window " + std::to_string(query.gamma.size()) + " != corpus window " +
                             std::to_string(index.window()));
    }
}

void score_range(const QuerySample &query, const std::vector<double> &q_delta, const RetrievalIndex &index,
                 ScoreWeights w, std::vector<ScoredCandidate> &out, bool parallel) {
    const auto n = static_cast<std::ptrdiff_t>(index.size());
    out.resize(index.size());
#pragma omp parallel for schedule(static) if (parallel)
    for (std::ptrdiff_t i = 0; i < n; ++i) {
        const auto k = static_cast<std::size_t>(i);
        out[k] = score_row(k, query.gamma, q_delta, index.gamma(k), index.deltas(k), w);
    }
}

SelectionResult select_from(std::vector<ScoredCandidate> scored, std::size_t M) {
    if (M > scored.size()) {
        throw SelectionError("cannot select " + std::to_string(M) + " of " + std::to_string(scored.size()) +
                             " demonstrations");
    }
    auto better = [](const ScoredCandidate &a, const ScoredCandidate &b) {
        return a.score < b.score || (a.score == b.score && a.index < b.index);
    };
    std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(M), scored.end(), better);
    SelectionResult result;
    result.indices.reserve(M);
    result.scores.reserve(M);
    for (std::size_t i = 0; i < M; ++i) {
        result.indices.push_back(scored[i].index);
        result.scores.push_back(scored[i].score);
    }
    return result;
}

SelectionResult select_impl(const QuerySample &query, const RetrievalIndex &index, std::size_t M, ScoreWeights w,
                            bool parallel) {
    if (M == 0) return {};
    if (M > index.size()) {
        throw SelectionError("cannot select " + std::to_string(M) + " of " + std::to_string(index.size()) +
                             " demonstrations");
    }
    check_query(query, index);
    std::vector<ScoredCandidate> scored;
    score_range(query, first_differences(query.gamma), index, w, scored, parallel);
    return select_from(std::move(scored), M);
}

} // namespace

ScoredCandidate score_candidate(const QuerySample &query, const LabeledWindow &candidate, ScoreWeights weights) {
    if (query.gamma.size() != candidate.gamma.size()) {
        throw DimensionError("window sizes differ: " + std::to_string(query.gamma.size()) + " vs " +
                             std::to_string(candidate.gamma.size()));
    }
    if (query.gamma.size() < 2) throw DimensionError("scoring needs windows of at least 2 values");
    const auto qd = first_differences(query.gamma);
    const auto cd = first_differences(candidate.gamma);
    return score_row(0, query.gamma, qd, candidate.gamma, cd, weights);
}

RetrievalIndex::RetrievalIndex(std::span<const LabeledWindow> windows) {
    for (const auto &w : windows) add(w.gamma);
}

RetrievalIndex::RetrievalIndex(std::span<const Demonstration> corpus) {
    for (const auto &d : corpus) add(d.window.gamma);
}

void RetrievalIndex::add(std::span<const double> gamma) {
    if (count_ == 0) {
        if (gamma.size() < 2) throw DimensionError("indexed windows need at least 2 values");
        window_ = gamma.size();
    } else if (gamma.size() != window_) {
        throw DimensionError("window size " + std::to_string(gamma.size()) + " differs from index window " +
                             std::to_string(window_));
    }
    gammas_.insert(gammas_.end(), gamma.begin(), gamma.end());
    const auto d = first_differences(gamma);
    deltas_.insert(deltas_.end(), d.begin(), d.end());
    ++count_;
}

std::vector<ScoredCandidate> score_all(const QuerySample &query, const RetrievalIndex &index, ScoreWeights weights) {
    check_query(query, index);
    std::vector<ScoredCandidate> out;
    if (index.size() == 0) return out;
    score_range(query, first_differences(query.gamma), index, weights, out, true);
    return out;
}

std::vector<ScoredCandidate> score_all_serial(const QuerySample &query, const RetrievalIndex &index,
                                              ScoreWeights weights) {
    check_query(query, index);
    std::vector<ScoredCandidate> out;
    if (index.size() == 0) return out;
    const auto q_delta = first_differences(query.gamma);
    out.reserve(index.size());
    for (std::size_t k = 0; k < index.size(); ++k) {
        out.push_back(score_row(k, query.gamma, q_delta, index.gamma(k), index.deltas(k), weights));
    }
    return out;
}

SelectionResult select_top_m(const QuerySample &query, const RetrievalIndex &index, std::size_t M,
                             ScoreWeights weights) {
    return select_impl(query, index, M, weights, true);
}

SelectionResult select_top_m(const QuerySample &query, std::span<const Demonstration> corpus, std::size_t M,
                             ScoreWeights weights) {
    if (M == 0) return {};
    return select_top_m(query, RetrievalIndex(corpus), M, weights);
}

std::vector<SelectionResult> select_batch(std::span<const QuerySample> queries, const RetrievalIndex &index,
                                          std::size_t M, ScoreWeights weights) {
    std::vector<SelectionResult> out(queries.size());
    const auto n = static_cast<std::ptrdiff_t>(queries.size());
    // Exceptions must not escape the parallel region.
    std::exception_ptr failure;
#pragma omp parallel for schedule(dynamic, 4)
    for (std::ptrdiff_t i = 0; i < n; ++i) {
        try {
            out[static_cast<std::size_t>(i)] = select_impl(queries[static_cast<std::size_t>(i)], index, M, weights, false);
        } catch (...) {
#pragma omp critical(cotpred_select_batch)
            if (!failure) failure = std::current_exception();
        }
    }
    if (failure) std::rethrow_exception(failure);
    return out;
}

std::vector<SelectionResult> select_batch_serial(std::span<const QuerySample> queries, const RetrievalIndex &index,
                                                 std::size_t M, ScoreWeights weights) {
    std::vector<SelectionResult> out;
    out.reserve(queries.size());
    for (const auto &q : queries) out.push_back(select_impl(q, index, M, weights, false));
    return out;
}

} // namespace cotpred
