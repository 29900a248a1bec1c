// Parallel kernels against their serial references.
#include <benchmark/benchmark.h>

#include <random>

#include "cotpred/metrics.hpp"
#include "cotpred/retrieval.hpp"

using namespace cotpred;

namespace {

std::vector<double> noise(std::size_t n, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 200.0);
    std::vector<double> v(n);
    for (auto &x : v) x = u(rng);
    return v;
}

RetrievalIndex make_index(std::size_t n, std::size_t W) {
    const auto flat = noise(n * W, 1);
    RetrievalIndex index;
    for (std::size_t i = 0; i < n; ++i) index.add(std::span(flat).subspan(i * W, W));
    return index;
}

std::vector<QuerySample> make_queries(std::size_t n, std::size_t W) {
    const auto flat = noise(n * W, 2);
    std::vector<QuerySample> out(n);
    for (std::size_t i = 0; i < n; ++i) out[i].gamma.assign(flat.begin() + static_cast<long>(i * W), flat.begin() + static_cast<long>((i + 1) * W));
    return out;
}

template <bool Parallel>
void BM_score_all(benchmark::State &state) {
    const auto index = make_index(static_cast<std::size_t>(state.range(0)), 5);
    const auto q = make_queries(1, 5).front();
    for (auto _ : state) {
        auto r = Parallel ? score_all(q, index) : score_all_serial(q, index);
        benchmark::DoNotOptimize(r.data());
    }
    state.SetItemsProcessed(state.iterations() * state.range(0));
}

template <bool Parallel>
void BM_select_batch(benchmark::State &state) {
    const auto index = make_index(static_cast<std::size_t>(state.range(0)), 5);
    const auto queries = make_queries(200, 5);
    for (auto _ : state) {
        auto r = Parallel ? select_batch(queries, index, 2) : select_batch_serial(queries, index, 2);
        benchmark::DoNotOptimize(r.data());
    }
    state.SetItemsProcessed(state.iterations() * 200);
}

template <bool Parallel>
void BM_permutation_entropy(benchmark::State &state) {
    const auto x = noise(static_cast<std::size_t>(state.range(0)), 3);
    for (auto _ : state) {
        benchmark::DoNotOptimize(Parallel ? permutation_entropy_norm(x, 5, 1) : permutation_entropy_norm_serial(x, 5, 1));
    }
    state.SetItemsProcessed(state.iterations() * state.range(0));
}

} // namespace

BENCHMARK(BM_score_all<false>)->Name("score_all/serial")->Arg(1000)->Arg(100000);
BENCHMARK(BM_score_all<true>)->Name("score_all/omp")->Arg(1000)->Arg(100000);
BENCHMARK(BM_select_batch<false>)->Name("select_batch/serial")->Arg(700)->Arg(10000);
BENCHMARK(BM_select_batch<true>)->Name("select_batch/omp")->Arg(700)->Arg(10000);
BENCHMARK(BM_permutation_entropy<false>)->Name("perm_entropy/serial")->Arg(100000)->Arg(1000000);
BENCHMARK(BM_permutation_entropy<true>)->Name("perm_entropy/omp")->Arg(100000)->Arg(1000000);

BENCHMARK_MAIN();
