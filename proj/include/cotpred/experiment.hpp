#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "cotpred/baselines.hpp"
#include "cotpred/demonstration.hpp"
#include "cotpred/llm_client.hpp"
#include "cotpred/metrics.hpp"
#include "cotpred/pcot.hpp"
#include "cotpred/retrieval.hpp"
#include "cotpred/trace.hpp"
#include "cotpred/windowing.hpp"

namespace cotpred {

enum class PromptStyle { cot, icl };

/// The four variants of the ablation table; any other flag mix is rejected.
struct AblationFlags {
    bool use_rationale = true;
    bool use_e1 = true;
    bool use_e2 = true;

    void validate() const;
    /// "full", "no_rationale", "no_e1" or "no_e2".
    std::string variant() const;
    ScoreWeights weights() const;
};

struct BackendSettings {
    /// "http" or "mock-persistence".
    std::string kind = "http";
    BackendConfig http;
};

struct ScenarioConfig {
    std::string name;
    std::filesystem::path trace;
    TraceSchema schema;
};

struct ExperimentConfig {
    std::vector<ScenarioConfig> scenarios;
    std::size_t window = 5;
    std::size_t stride = 1;
    std::size_t test_horizon = 200;
    std::vector<Feature> features = default_features();
    std::size_t shots = 2;
    PromptStyle style = PromptStyle::cot;
    AblationFlags ablation;
    BackendSettings backend;
    std::size_t runs = 5;
    std::uint64_t base_seed = 0;
    std::filesystem::path output_dir = "out";
    std::optional<std::filesystem::path> instructions_dir;
    std::optional<std::filesystem::path> cache_path;
    bool cache_online = true;
    int decimals = 2;
    ArimaOrder arima_order{1, 1, 1};
    int pe_order = 3;
    int pe_delay = 1;
    CleaningPolicy cleaning;

    void validate() const;
    /// Canonical JSON (paths as given); the digest is taken over this text.
    std::string canonical_json() const;
    std::string digest() const;
    InstructionSet instructions() const;
    const ScenarioConfig &scenario(const std::string &name) const;
};

/// Parses a JSON config document; relative paths resolve against its directory.
ExperimentConfig load_config(const std::filesystem::path &path);
ExperimentConfig parse_config(const std::string &json_text, const std::filesystem::path &base_dir = {});

std::unique_ptr<ChatBackend> make_backend(const BackendSettings &settings);

/// Loaded, cleaned and split trace plus the fixed test positions.
struct ScenarioData {
    std::string name;
    CleaningLog cleaning;
    Trace cleaned;
    Trace train;
    Trace test;
    std::size_t window = 0;
    std::size_t test_points = 0;
    /// Zero-based positions in `test` of the newest element of each query.
    std::vector<std::size_t> query_positions;
    double train_permutation_entropy = 0.0;

    /// Ground truth for query k: the value one second after its newest element.
    double truth(std::size_t k) const;
    std::vector<double> truth_vector() const;
    std::string truth_digest() const;
    /// Downlink values of the cleaned trace up to and including query k's newest element.
    std::span<const double> history(std::size_t k) const;

private:
    std::vector<double> cleaned_dl_;
    friend ScenarioData prepare_scenario(const ExperimentConfig &, const ScenarioConfig &);
};

ScenarioData prepare_scenario(const ExperimentConfig &config, const ScenarioConfig &scenario);

struct StepRecord {
    std::size_t run = 0;
    long t = 0;          // target second (test trace index)
    long origin_t = 0;   // newest second in the query window
    long max_read_t = 0; // newest second read before the prediction was emitted
    double y = 0.0;
    double y_hat = 0.0;
    std::vector<std::size_t> selected;
    std::vector<double> scores;
    std::string parse_path; // tagged | fallback_last_number | miss | baseline
    bool clamped = false;
    std::int64_t input_tokens = 0;
    std::int64_t output_tokens = 0;
    double latency_ms = 0.0;
};

struct CallLedger {
    std::uint64_t expected_calls = 0;
    std::uint64_t backend_calls = 0;
    std::uint64_t cache_hits = 0;
    std::uint64_t retrieval_calls = 0;
};

struct EvalReport {
    std::string scenario;
    std::string method; // human-readable row label
    std::string variant;
    std::string mode;
    std::size_t shots = 0;
    RunAggregate aggregate;
    std::vector<MetricSet> per_run;
    std::vector<StepRecord> steps;
    std::string config_digest;
    std::string truth_digest;
    CallLedger calls;
    std::size_t fallback_events = 0; // parse misses or ARIMA persistence fallbacks
    double train_permutation_entropy = 0.0;
    std::vector<std::string> warnings;
};

struct OfflineResult {
    std::filesystem::path corpus_path;
    CorpusBuildStats stats;
};

/// Builds (or resumes) the demonstration corpus of one scenario's training half.
OfflineResult run_offline(const ExperimentConfig &config, const ScenarioData &data, ChatBackend &backend,
                          ResponseCache *cache = nullptr);
std::filesystem::path corpus_path(const ExperimentConfig &config, const std::string &scenario);

struct OnlineOptions {
    PromptStyle style = PromptStyle::cot;
    std::size_t shots = 2;
    AblationFlags ablation;
};

OnlineOptions online_options(const ExperimentConfig &config);

/// Online phase over the first T test windows, repeated for every run.
EvalReport run_online(const ExperimentConfig &config, const ScenarioData &data, std::span<const Demonstration> corpus,
                      ChatBackend &backend, const OnlineOptions &options, ResponseCache *cache = nullptr);

struct BaselineOptions {
    std::vector<BaselineMethod> methods = {BaselineMethod::sma, BaselineMethod::wma, BaselineMethod::arima,
                                           BaselineMethod::kalman, BaselineMethod::persistence};
    bool parallel = true;
};

std::vector<EvalReport> run_baselines(const ExperimentConfig &config, const ScenarioData &data,
                                      const BaselineOptions &options = {});

/// One report per (style, M); M = 0 runs the zero-shot prompts. Duplicate M
/// values are dropped with a warning on the first report.
std::vector<EvalReport> sweep_m(const ExperimentConfig &config, const ScenarioData &data,
                                std::span<const Demonstration> corpus, ChatBackend &backend,
                                std::vector<std::size_t> m_values, ResponseCache *cache = nullptr);

/// Full CoT plus the no-rationale, no-e1 and no-e2 variants.
std::vector<EvalReport> run_ablation(const ExperimentConfig &config, const ScenarioData &data,
                                     std::span<const Demonstration> corpus, ChatBackend &backend,
                                     ResponseCache *cache = nullptr);

struct ReportFiles {
    std::filesystem::path metrics_csv;
    std::filesystem::path summary_json;
    std::optional<std::filesystem::path> steps_csv;
};

/// Writes metrics.csv, summary.json and (optionally) steps.csv under `dir`,
/// with `prefix` prepended to each file name.
ReportFiles emit_report(std::span<const EvalReport> reports, const std::filesystem::path &dir,
                        const std::string &prefix = {}, bool per_step = true);

/// Reads the reports of a summary.json written by emit_report (steps omitted).
std::vector<EvalReport> load_summary(const std::filesystem::path &path);
/// Markdown table with "mean ± std" cells.
std::string format_table(std::span<const EvalReport> reports);

} // namespace cotpred
