#include <doctest.h>

#include <cmath>
#include <json.hpp>

#include "cotpred/error.hpp"
#include "cotpred/experiment.hpp"
#include "experiment_fixture.hpp"
#include "test_support.hpp"

using namespace cotpred;

namespace {

struct Setup {
    testing::TempDir dir;
    ExperimentConfig config;
    ScenarioData data;
    std::vector<Demonstration> corpus;

    Setup(std::size_t length, std::size_t T, std::size_t runs, std::uint64_t seed = 3) {
        config = testing::mock_config(dir.path(), testing::synthetic(length, seed), T, runs);
        data = prepare_scenario(config, config.scenarios.front());
        PersistenceMock gen;
        run_offline(config, data, gen);
        corpus = load_corpus(corpus_path(config, data.name));
    }
};

std::size_t lines_in(const std::string &text) { return static_cast<std::size_t>(std::count(text.begin(), text.end(), '\n')); }

} // namespace

TEST_CASE("config parsing") {
    testing::TempDir dir;
    const std::string base = R"({"scenarios": [{"name": "a", "trace": "data/a.csv"}], "output_dir": "out")";
    SUBCASE("defaults and relative paths") {
        const auto c = parse_config(base + "}", dir.path());
        CHECK(c.window == 5);
        CHECK(c.shots == 2);
        CHECK(c.runs == 5);
        CHECK(c.test_horizon == 200);
        CHECK(c.style == PromptStyle::cot);
        CHECK(c.scenarios.at(0).trace == dir / "data" / "a.csv");
        CHECK(c.output_dir == dir / "out");
        CHECK(&c.scenario("a") == &c.scenarios[0]);
        CHECK_THROWS_AS(c.scenario("b"), ConfigError);
    }
    SUBCASE("unknown keys are rejected") {
        CHECK_THROWS_AS(parse_config(base + R"(, "windw": 4})"), ConfigError);
        CHECK_THROWS_AS(parse_config(base + R"(, "backend": {"kind": "http", "modle": "x"}})"), ConfigError);
    }
    SUBCASE("invalid values") {
        CHECK_THROWS_AS(parse_config(base + R"(, "mode": "fewshot"})"), ConfigError);
        CHECK_THROWS_AS(parse_config(base + R"(, "window": 1})"), ConfigError);
        CHECK_THROWS_AS(parse_config(base + R"(, "runs": 0})"), ConfigError);
        CHECK_THROWS_AS(parse_config(base + R"(, "backend": {"kind": "carrier-pigeon"}})"), ConfigError);
        CHECK_THROWS_AS(parse_config(base + R"(, "ablation": {"use_e1": false, "use_e2": false}})"), ConfigError);
        CHECK_THROWS_AS(parse_config("{not json"), ConfigError);
    }
    SUBCASE("digest is stable and sensitive") {
        const auto a = parse_config(base + "}", dir.path());
        const auto b = parse_config(base + "}", dir.path());
        CHECK(a.digest() == b.digest());
        CHECK(a.digest().size() == 64);
        CHECK(parse_config(base + R"(, "shots": 3})", dir.path()).digest() != a.digest());
        // Round trip through the canonical form.
        CHECK(parse_config(a.canonical_json(), dir.path()).digest() == a.digest());
    }
    SUBCASE("the shipped example config loads") {
        const auto c = load_config(std::filesystem::path(COTPRED_SOURCE_DIR) / "configs" / "example.json");
        CHECK(c.scenarios.size() == 2);
        CHECK(c.backend.kind == "mock-persistence");
        CHECK(std::filesystem::exists(c.scenarios[0].trace));
    }
}

TEST_CASE("ablation flags") {
    CHECK(AblationFlags{}.variant() == "full");
    CHECK(AblationFlags{false, true, true}.variant() == "no_rationale");
    CHECK(AblationFlags{true, false, true}.variant() == "no_e1");
    CHECK(AblationFlags{true, true, false}.variant() == "no_e2");
    CHECK(AblationFlags{true, false, true}.weights().raw == 0.0);
    CHECK(AblationFlags{true, false, true}.weights().delta == 1.0);
    CHECK(AblationFlags{true, true, false}.weights().delta == 0.0);
    CHECK_THROWS_AS(AblationFlags({false, false, true}).validate(), ConfigError);
    CHECK_THROWS_AS(AblationFlags({true, false, false}).validate(), ConfigError);
}

TEST_CASE("scenario preparation") {
    Setup s(400, 50, 1);
    CHECK(s.data.train.size() + s.data.test.size() == s.data.cleaned.size());
    CHECK(s.data.query_positions.size() == 50);
    CHECK(s.data.query_positions.front() == 4);
    for (std::size_t k = 0; k < 50; ++k) {
        const std::size_t pos = s.data.query_positions[k];
        CHECK(s.data.truth(k) == s.data.test.records[pos + 1].dl_throughput);
        const auto h = s.data.history(k);
        CHECK(h.size() == s.data.train.size() + pos + 1);
        CHECK(h.back() == s.data.test.records[pos].dl_throughput);
    }
    CHECK(s.data.train_permutation_entropy > 0.0);
    CHECK(s.data.train_permutation_entropy <= 1.0);
    CHECK(s.corpus.size() == build_labeled_windows(s.data.train, 5, 1).size());

    auto c = s.config;
    c.test_horizon = 200; // 400 records cannot hold 2 x (200 + 5)
    CHECK_THROWS_AS(prepare_scenario(c, c.scenarios.front()), SplitError);
}

TEST_CASE("online run: call accounting and persistence equivalence") {
    Setup s(900, 200, 5);
    PersistenceMock mock;
    const auto r = run_online(s.config, s.data, s.corpus, mock, online_options(s.config));
    CHECK(r.calls.expected_calls == 1000);
    CHECK(r.calls.backend_calls == 1000);
    CHECK(mock.calls() == 1000);
    CHECK(r.calls.retrieval_calls == 200);
    CHECK(r.steps.size() == 1000);
    CHECK(r.per_run.size() == 5);
    CHECK(r.method == "2-shot CoT-LLM");

    const auto base = run_baselines(s.config, s.data, {{BaselineMethod::persistence}, true});
    REQUIRE(base.size() == 1);
    CHECK(std::abs(r.aggregate.mean.mae - base[0].aggregate.mean.mae) <= 1e-9);
    CHECK(std::abs(r.aggregate.mean.rmse - base[0].aggregate.mean.rmse) <= 1e-9);
    CHECK(std::abs(r.aggregate.mean.r2 - base[0].aggregate.mean.r2) <= 1e-9);
    CHECK(r.aggregate.std.mae == 0.0);
    CHECK(r.truth_digest == base[0].truth_digest);
    CHECK(r.config_digest == base[0].config_digest);
    for (const auto &st : r.steps) {
        CHECK(st.selected.size() == 2);
        CHECK(st.parse_path == "tagged");
        CHECK(st.max_read_t < st.t);
        CHECK(st.scores.size() == 2);
        CHECK(st.scores[0] >= st.scores[1]); // best last
    }
}

TEST_CASE("online run: cache accounting") {
    Setup s(400, 20, 2);
    ResponseCache cache;
    PersistenceMock mock;
    const auto r1 = run_online(s.config, s.data, s.corpus, mock, online_options(s.config), &cache);
    CHECK(r1.calls.backend_calls + r1.calls.cache_hits == r1.calls.expected_calls);
    // The mock ignores seeds, so the second run is served from the cache.
    CHECK(r1.calls.backend_calls == 20);
    const auto r2 = run_online(s.config, s.data, s.corpus, mock, online_options(s.config), &cache);
    CHECK(r2.calls.backend_calls == 0);
    CHECK(r2.calls.cache_hits == 40);
    CHECK(r2.aggregate.mean.mae == r1.aggregate.mean.mae);

    auto c = s.config;
    c.cache_online = false;
    const auto r3 = run_online(c, s.data, s.corpus, mock, online_options(c), &cache);
    CHECK(r3.calls.backend_calls == 40);
}

TEST_CASE("online run: zero shots skips retrieval") {
    Setup s(400, 30, 1);
    PersistenceMock mock;
    OnlineOptions o;
    o.shots = 0;
    const auto r = run_online(s.config, s.data, s.corpus, mock, o);
    CHECK(r.calls.retrieval_calls == 0);
    CHECK(r.method == "Zero-shot CoT-LLM");
    CHECK(r.mode == "zero_shot_cot");
    for (const auto &st : r.steps) CHECK(st.selected.empty());

    ScriptedMock probe(std::vector<std::string>(30, "FINAL_ANSWER: 1"));
    run_online(s.config, s.data, s.corpus, probe, o);
    for (const auto &req : probe.requests()) {
        CHECK(req.back().content.find("### Example ") == std::string::npos);
    }
}

TEST_CASE("online run: selections follow the retrieval rule per ablation") {
    Setup s(400, 25, 1);
    for (AblationFlags flags : {AblationFlags{true, true, true}, AblationFlags{true, false, true},
                                AblationFlags{true, true, false}}) {
        PersistenceMock mock;
        OnlineOptions o;
        o.ablation = flags;
        const auto r = run_online(s.config, s.data, s.corpus, mock, o);
        for (std::size_t k = 0; k < 25; ++k) {
            const auto q = make_query(s.data.test, s.data.query_positions[k], 5, s.config.features);
            const auto want = select_top_m(q, s.corpus, 2, flags.weights());
            const std::vector<std::size_t> reversed(want.indices.rbegin(), want.indices.rend());
            CHECK(r.steps[k].selected == reversed);
        }
    }
}

TEST_CASE("online run: parse misses fall back to persistence") {
    Setup s(400, 4, 1);
    ScriptedMock mock({"no idea", "FINAL_ANSWER: 12", "about 7.5 Mbps", "FINAL_ANSWER: -2"});
    auto c = s.config;
    c.backend.http.max_in_flight = 1;
    const auto r = run_online(c, s.data, s.corpus, mock, online_options(c));
    REQUIRE(r.steps.size() == 4);
    CHECK(r.steps[0].parse_path == "miss");
    CHECK(r.steps[0].y_hat == s.data.history(0).back());
    CHECK(r.steps[1].y_hat == 12.0);
    CHECK(r.steps[2].parse_path == "fallback_last_number");
    CHECK(r.steps[3].clamped);
    CHECK(r.steps[3].y_hat == 0.0);
    CHECK(r.fallback_events == 1);
    CHECK(r.per_run[0].parse_miss_count == 1);
}

TEST_CASE("online run: backend failure aborts") {
    Setup s(400, 3, 1);
    ScriptedMock mock({"FINAL_ANSWER: 1"});
    CHECK_THROWS_AS(run_online(s.config, s.data, s.corpus, mock, online_options(s.config)), BackendError);
    OnlineOptions o;
    o.shots = s.corpus.size() + 1;
    PersistenceMock pm;
    CHECK_THROWS_AS(run_online(s.config, s.data, s.corpus, pm, o), SelectionError);
}

TEST_CASE("reports are byte-identical across repeated runs") {
    Setup s(400, 40, 3);
    auto once = [&](const std::string &sub) {
        PersistenceMock mock;
        std::vector<EvalReport> reports;
        reports.push_back(run_online(s.config, s.data, s.corpus, mock, online_options(s.config)));
        for (auto &b : run_baselines(s.config, s.data)) reports.push_back(std::move(b));
        for (auto &st : reports[0].steps) st.latency_ms = 0; // wall-clock
        return emit_report(reports, s.dir / sub);
    };
    const auto a = once("a");
    const auto b = once("b");
    CHECK(testing::read_file(a.metrics_csv) == testing::read_file(b.metrics_csv));
    CHECK(testing::read_file(a.summary_json) == testing::read_file(b.summary_json));
    CHECK(testing::read_file(*a.steps_csv) == testing::read_file(*b.steps_csv));
    // 1 LLM report over 3 runs plus 5 baselines.
    CHECK(lines_in(testing::read_file(*a.steps_csv)) == 1 + 40 * 3 + 5 * 40);
    CHECK(lines_in(testing::read_file(a.metrics_csv)) == 1 + 6);
}

TEST_CASE("baselines") {
    Setup s(600, 100, 5);
    const auto serial = run_baselines(s.config, s.data, {BaselineOptions{}.methods, false});
    const auto par = run_baselines(s.config, s.data);
    REQUIRE(par.size() == 5);
    for (std::size_t i = 0; i < 5; ++i) {
        CHECK(par[i].aggregate.mean.mae == serial[i].aggregate.mean.mae);
        CHECK(par[i].per_run.size() == 1);
        CHECK(par[i].aggregate.std.mae == 0.0);
        CHECK(par[i].steps.size() == 100);
        CHECK(par[i].truth_digest == s.data.truth_digest());
        for (const auto &st : par[i].steps) CHECK(st.max_read_t < st.t);
    }
    // SMA computed independently from the test half.
    const auto truth = s.data.truth_vector();
    double acc = 0;
    for (std::size_t k = 0; k < 100; ++k) {
        const std::size_t pos = s.data.query_positions[k];
        double m = 0;
        for (std::size_t j = pos - 4; j <= pos; ++j) m += s.data.test.records[j].dl_throughput;
        acc += std::abs(m / 5 - truth[k]);
    }
    CHECK(par[0].method == "sma");
    CHECK(par[0].aggregate.mean.mae == doctest::Approx(acc / 100).epsilon(1e-12));
}

TEST_CASE("constant truth gives NaN R^2 with a warning") {
    testing::TempDir dir;
    auto tr = testing::synthetic(400, 5);
    for (auto &r : tr.records) r.dl_throughput = 10.0; // constant truth
    auto c = testing::mock_config(dir.path(), tr, 20, 1);
    const auto d = prepare_scenario(c, c.scenarios.front());
    const auto reports = run_baselines(c, d);
    REQUIRE(reports.size() == 5);
    for (const auto &r : reports) {
        CHECK(std::isnan(r.aggregate.mean.r2));
        CHECK_FALSE(r.warnings.empty());
    }
    CHECK(reports[0].aggregate.mean.mae == 0.0);
}

TEST_CASE("M sweep") {
    Setup s(400, 5, 1);
    PersistenceMock mock;
    std::vector<std::size_t> ms = {0, 1, 2, 3, 4, 5, 6, 7};
    const auto all = sweep_m(s.config, s.data, s.corpus, mock, ms);
    CHECK(all.size() == 16);
    CHECK(all[0].method == "Zero-shot CoT-LLM");
    CHECK(all[8].method == "Zero-shot ICL-LLM");
    CHECK(all[15].shots == 7);
    CHECK(sweep_m(s.config, s.data, s.corpus, mock, {}).empty());
    const auto dup = sweep_m(s.config, s.data, s.corpus, mock, {2, 2, 0});
    CHECK(dup.size() == 4);
    REQUIRE_FALSE(dup[0].warnings.empty());
    CHECK(dup[0].warnings[0].find("duplicate") != std::string::npos);
}

TEST_CASE("ablation produces four labelled variants") {
    Setup s(400, 5, 1);
    PersistenceMock mock;
    const auto r = run_ablation(s.config, s.data, s.corpus, mock);
    REQUIRE(r.size() == 4);
    CHECK(r[0].method == "2-shot CoT-LLM");
    CHECK(r[1].method == "2-shot CoT-LLM (w/o r)");
    CHECK(r[2].method == "2-shot CoT-LLM (w/o e1)");
    CHECK(r[3].method == "2-shot CoT-LLM (w/o e2)");
    CHECK(r[1].variant == "no_rationale");
}

TEST_CASE("report files") {
    Setup s(400, 10, 2);
    PersistenceMock mock;
    const std::vector<EvalReport> one = {run_online(s.config, s.data, s.corpus, mock, online_options(s.config))};
    const auto files = emit_report(one, s.dir / "rep", "x_", false);
    CHECK(files.metrics_csv.filename() == "x_metrics.csv");
    CHECK_FALSE(files.steps_csv.has_value());
    const auto csv = testing::read_file(files.metrics_csv);
    CHECK(lines_in(csv) == 2);
    CHECK(csv.rfind("scenario,method,variant,mode,shots,runs,n_points,mae_mean", 0) == 0);

    const auto loaded = load_summary(files.summary_json);
    REQUIRE(loaded.size() == 1);
    CHECK(loaded[0].method == one[0].method);
    CHECK(loaded[0].aggregate.mean.mae == one[0].aggregate.mean.mae);
    CHECK(loaded[0].per_run.size() == 2);
    CHECK(loaded[0].calls.backend_calls == 20);

    const auto table = format_table(loaded);
    CHECK(table.find("| Scenario | Method | MAE | RMSE | R²") == 0);
    CHECK(table.find(format_mean_std(one[0].aggregate.mean.mae, 0.0)) != std::string::npos);

    testing::write_file(s.dir / "blocker", "file");
    CHECK_THROWS_AS(emit_report(one, s.dir / "blocker" / "sub"), IoError);
}

TEST_CASE("predictions never depend on later records") {
    testing::TempDir dir;
    const auto base = testing::synthetic(400, 8);
    const std::size_t T = 30;
    auto predictions = [&](const Trace &tr, const std::string &name) {
        auto c = testing::mock_config(dir.path(), tr, T, 1, name);
        c.output_dir = dir / ("out_" + name);
        const auto d = prepare_scenario(c, c.scenarios.front());
        PersistenceMock mock;
        run_offline(c, d, mock);
        const auto corpus = load_corpus(corpus_path(c, name));
        std::vector<std::vector<double>> out;
        auto collect = [&](const EvalReport &r) {
            std::vector<double> v;
            for (const auto &st : r.steps) v.push_back(st.y_hat);
            out.push_back(v);
        };
        collect(run_online(c, d, corpus, mock, online_options(c)));
        for (const auto &r : run_baselines(c, d)) collect(r);
        return std::pair{out, d.train.size()};
    };
    const auto [ref, train_size] = predictions(base, "ref");
    // Rewrite everything from test position 20 on; steps whose newest input is
    // before position 20 (k + 4 < 20) must not move.
    auto perturbed = base;
    for (std::size_t i = train_size + 20; i < perturbed.records.size(); ++i) {
        perturbed.records[i].dl_throughput = 500.0 - perturbed.records[i].dl_throughput;
        perturbed.records[i].ul_throughput = 0.5;
    }
    const auto [got, _] = predictions(perturbed, "pert");
    REQUIRE(got.size() == ref.size());
    for (std::size_t m = 0; m < ref.size(); ++m) {
        for (std::size_t k = 0; k + 4 < 20; ++k) CHECK(got[m][k] == ref[m][k]);
        bool moved = false;
        for (std::size_t k = 16; k < T; ++k) moved = moved || got[m][k] != ref[m][k];
        CHECK(moved); // the perturbation is visible once it enters the window
    }
}
