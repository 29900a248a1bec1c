#include "cotpred/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <fstream>
#include <iostream>
#include <limits>
#include <set>
#include <sstream>

#include <json.hpp>

#include "cotpred/digest.hpp"
#include "cotpred/error.hpp"
#include "cotpred/format.hpp"
#include "cotpred/parallel.hpp"

namespace cotpred {

using nlohmann::json;
namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Ablation flags

void AblationFlags::validate() const {
    const int off = (use_rationale ? 0 : 1) + (use_e1 ? 0 : 1) + (use_e2 ? 0 : 1);
    if (off > 1) {
        throw ConfigError("ablation switches off at most one of rationale, e1, e2");
    }
}

std::string AblationFlags::variant() const {
    validate();
    if (!use_rationale) return "no_rationale";
    if (!use_e1) return "no_e1";
    if (!use_e2) return "no_e2";
    return "full";
}

ScoreWeights AblationFlags::weights() const {
    return {use_e1 ? 1.0 : 0.0, use_e2 ? 1.0 : 0.0};
}

// ---------------------------------------------------------------------------
// Config

namespace {

std::string style_name(PromptStyle s) { return s == PromptStyle::cot ? "cot" : "icl"; }

PromptStyle style_from(const std::string &s) {
    if (s == "cot") return PromptStyle::cot;
    if (s == "icl") return PromptStyle::icl;
    throw ConfigError("mode must be \"cot\" or \"icl\", got \"" + s + "\"");
}

std::string unit_name(ThroughputUnit u) { return u == ThroughputUnit::kbps ? "kbps" : "mbps"; }

ThroughputUnit unit_from(const std::string &s) {
    if (s == "mbps" || s == "Mbps") return ThroughputUnit::mbps;
    if (s == "kbps" || s == "Kbps") return ThroughputUnit::kbps;
    throw ConfigError("unknown throughput unit \"" + s + "\"");
}

void check_keys(const json &obj, std::initializer_list<const char *> allowed, const std::string &where) {
    if (!obj.is_object()) throw ConfigError(where + " must be an object");
    for (const auto &[key, value] : obj.items()) {
        if (std::none_of(allowed.begin(), allowed.end(), [&](const char *a) { return key == a; })) {
            throw ConfigError("unknown key \"" + key + "\" in " + where);
        }
    }
}

template <class T>
void read_opt(const json &obj, const char *key, T &out, const std::string &where) {
    auto it = obj.find(key);
    if (it == obj.end()) return;
    try {
        out = it->get<T>();
    } catch (const json::exception &e) {
        throw ConfigError(where + "." + key + ": " + e.what());
    }
}

fs::path resolve(const fs::path &base, const std::string &p) {
    fs::path path(p);
    if (path.is_relative() && !base.empty()) return (base / path).lexically_normal();
    return path.lexically_normal();
}

TraceSchema parse_schema(const json &obj, TraceSchema schema) {
    check_keys(obj,
               {"dl_throughput", "ul_throughput", "rsrp_serving", "rsrp_neighbor", "network_mode", "handover",
                "cell_id", "dl_unit", "ul_unit", "delimiter", "missing_markers"},
               "schema");
    read_opt(obj, "dl_throughput", schema.dl_throughput, "schema");
    read_opt(obj, "ul_throughput", schema.ul_throughput, "schema");
    read_opt(obj, "rsrp_serving", schema.rsrp_serving, "schema");
    read_opt(obj, "rsrp_neighbor", schema.rsrp_neighbor, "schema");
    read_opt(obj, "network_mode", schema.network_mode, "schema");
    read_opt(obj, "handover", schema.handover, "schema");
    if (auto it = obj.find("cell_id"); it != obj.end()) {
        if (it->is_null()) schema.cell_id.reset();
        else schema.cell_id = it->get<std::string>();
    }
    if (auto it = obj.find("dl_unit"); it != obj.end()) schema.dl_unit = unit_from(it->get<std::string>());
    if (auto it = obj.find("ul_unit"); it != obj.end()) schema.ul_unit = unit_from(it->get<std::string>());
    if (auto it = obj.find("delimiter"); it != obj.end()) {
        const auto d = it->get<std::string>();
        if (d.size() != 1) throw ConfigError("schema.delimiter must be a single character");
        schema.delimiter = d[0];
    }
    read_opt(obj, "missing_markers", schema.missing_markers, "schema");
    return schema;
}

json schema_json(const TraceSchema &s) {
    json j = {{"dl_throughput", s.dl_throughput},
              {"ul_throughput", s.ul_throughput},
              {"rsrp_serving", s.rsrp_serving},
              {"rsrp_neighbor", s.rsrp_neighbor},
              {"network_mode", s.network_mode},
              {"handover", s.handover},
              {"dl_unit", unit_name(s.dl_unit)},
              {"ul_unit", unit_name(s.ul_unit)},
              {"delimiter", std::string(1, s.delimiter)},
              {"missing_markers", s.missing_markers}};
    j["cell_id"] = s.cell_id ? json(*s.cell_id) : json(nullptr);
    return j;
}

BackendSettings parse_backend(const json &obj) {
    check_keys(obj,
               {"kind", "base_url", "model_id", "temperature", "max_output_tokens", "timeout_ms", "max_retries",
                "auth_token_env", "initial_backoff_ms", "max_in_flight"},
               "backend");
    BackendSettings b;
    read_opt(obj, "kind", b.kind, "backend");
    read_opt(obj, "base_url", b.http.base_url, "backend");
    read_opt(obj, "model_id", b.http.model_id, "backend");
    read_opt(obj, "temperature", b.http.temperature, "backend");
    read_opt(obj, "max_output_tokens", b.http.max_output_tokens, "backend");
    read_opt(obj, "max_retries", b.http.max_retries, "backend");
    read_opt(obj, "auth_token_env", b.http.auth_token_env, "backend");
    read_opt(obj, "max_in_flight", b.http.max_in_flight, "backend");
    long long timeout = b.http.timeout.count();
    long long backoff = b.http.initial_backoff.count();
    read_opt(obj, "timeout_ms", timeout, "backend");
    read_opt(obj, "initial_backoff_ms", backoff, "backend");
    b.http.timeout = std::chrono::milliseconds(timeout);
    b.http.initial_backoff = std::chrono::milliseconds(backoff);
    return b;
}

json backend_json(const BackendSettings &b) {
    return {{"kind", b.kind},
            {"base_url", b.http.base_url},
            {"model_id", b.http.model_id},
            {"temperature", b.http.temperature},
            {"max_output_tokens", b.http.max_output_tokens},
            {"timeout_ms", b.http.timeout.count()},
            {"max_retries", b.http.max_retries},
            {"auth_token_env", b.http.auth_token_env},
            {"initial_backoff_ms", b.http.initial_backoff.count()},
            {"max_in_flight", b.http.max_in_flight}};
}

} // namespace

void ExperimentConfig::validate() const {
    if (scenarios.empty()) throw ConfigError("config lists no scenarios");
    std::set<std::string> names;
    for (const auto &s : scenarios) {
        if (s.name.empty()) throw ConfigError("scenario without a name");
        if (!names.insert(s.name).second) throw ConfigError("duplicate scenario \"" + s.name + "\"");
    }
    if (window < 2) throw ConfigError("window must be >= 2");
    if (stride < 1) throw ConfigError("stride must be >= 1");
    if (test_horizon < 1) throw ConfigError("test_horizon must be >= 1");
    if (runs < 1) throw ConfigError("runs must be >= 1");
    if (features.empty()) throw ConfigError("at least one context feature is required");
    if (decimals < 0 || decimals > 10) throw ConfigError("decimals must be in [0, 10]");
    if (backend.kind != "http" && backend.kind != "mock-persistence") {
        throw ConfigError("backend.kind must be \"http\" or \"mock-persistence\"");
    }
    if (backend.http.max_in_flight < 1) throw ConfigError("backend.max_in_flight must be >= 1");
    if (backend.http.max_retries < 0) throw ConfigError("backend.max_retries must be >= 0");
    if (arima_order.d < 0 || arima_order.d > 1 || arima_order.p < 0 || arima_order.q < 0) {
        throw ConfigError("arima_order needs p, q >= 0 and d in {0, 1}");
    }
    if (pe_order < 2 || pe_order > 20 || pe_delay < 1) throw ConfigError("permutation entropy order/delay out of range");
    ablation.validate();
}

std::string ExperimentConfig::canonical_json() const {
    json j;
    json sc = json::array();
    for (const auto &s : scenarios) {
        sc.push_back({{"name", s.name}, {"trace", s.trace.generic_string()}, {"schema", schema_json(s.schema)}});
    }
    j["scenarios"] = sc;
    j["window"] = window;
    j["stride"] = stride;
    j["test_horizon"] = test_horizon;
    json feats = json::array();
    for (auto f : features) feats.push_back(feature_name(f));
    j["features"] = feats;
    j["shots"] = shots;
    j["mode"] = style_name(style);
    j["ablation"] = {{"use_rationale", ablation.use_rationale}, {"use_e1", ablation.use_e1}, {"use_e2", ablation.use_e2}};
    j["backend"] = backend_json(backend);
    j["runs"] = runs;
    j["base_seed"] = base_seed;
    j["output_dir"] = output_dir.generic_string();
    j["instructions_dir"] = instructions_dir ? json(instructions_dir->generic_string()) : json(nullptr);
    j["cache_path"] = cache_path ? json(cache_path->generic_string()) : json(nullptr);
    j["cache_online"] = cache_online;
    j["decimals"] = decimals;
    j["arima_order"] = {arima_order.p, arima_order.d, arima_order.q};
    j["permutation_entropy"] = {{"order", pe_order}, {"delay", pe_delay}};
    j["cleaning"] = {{"rsrp_min", cleaning.rsrp_min}, {"rsrp_max", cleaning.rsrp_max}};
    return j.dump();
}

std::string ExperimentConfig::digest() const { return sha256_hex(canonical_json()); }

InstructionSet ExperimentConfig::instructions() const {
    InstructionSet ins = instructions_dir ? InstructionSet::load(*instructions_dir) : InstructionSet::defaults();
    ins.validate();
    return ins;
}

const ScenarioConfig &ExperimentConfig::scenario(const std::string &name) const {
    for (const auto &s : scenarios) {
        if (s.name == name) return s;
    }
    throw ConfigError("no scenario named \"" + name + "\"");
}

ExperimentConfig parse_config(const std::string &json_text, const fs::path &base_dir) {
    json root;
    try {
        root = json::parse(json_text);
    } catch (const json::parse_error &e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    check_keys(root,
               {"scenarios", "schema", "window", "stride", "test_horizon", "features", "shots", "mode", "ablation",
                "backend", "runs", "base_seed", "output_dir", "instructions_dir", "cache_path", "cache_online",
                "decimals", "arima_order", "permutation_entropy", "cleaning"},
               "config");
    ExperimentConfig cfg;
    TraceSchema default_schema;
    if (auto it = root.find("schema"); it != root.end()) default_schema = parse_schema(*it, default_schema);

    auto sc = root.find("scenarios");
    if (sc == root.end() || !sc->is_array()) throw ConfigError("config.scenarios must be an array");
    for (const auto &entry : *sc) {
        check_keys(entry, {"name", "trace", "schema"}, "scenario");
        ScenarioConfig s;
        read_opt(entry, "name", s.name, "scenario");
        std::string trace;
        read_opt(entry, "trace", trace, "scenario");
        if (trace.empty()) throw ConfigError("scenario \"" + s.name + "\" has no trace path");
        s.trace = resolve(base_dir, trace);
        s.schema = default_schema;
        if (auto it = entry.find("schema"); it != entry.end()) s.schema = parse_schema(*it, default_schema);
        cfg.scenarios.push_back(std::move(s));
    }

    read_opt(root, "window", cfg.window, "config");
    read_opt(root, "stride", cfg.stride, "config");
    read_opt(root, "test_horizon", cfg.test_horizon, "config");
    if (auto it = root.find("features"); it != root.end()) {
        cfg.features.clear();
        try {
            for (const auto &f : *it) cfg.features.push_back(feature_from_name(f.get<std::string>()));
        } catch (const ArgumentError &e) {
            throw ConfigError(e.what());
        }
    }
    read_opt(root, "shots", cfg.shots, "config");
    if (auto it = root.find("mode"); it != root.end()) cfg.style = style_from(it->get<std::string>());
    if (auto it = root.find("ablation"); it != root.end()) {
        check_keys(*it, {"use_rationale", "use_e1", "use_e2"}, "ablation");
        read_opt(*it, "use_rationale", cfg.ablation.use_rationale, "ablation");
        read_opt(*it, "use_e1", cfg.ablation.use_e1, "ablation");
        read_opt(*it, "use_e2", cfg.ablation.use_e2, "ablation");
    }
    if (auto it = root.find("backend"); it != root.end()) cfg.backend = parse_backend(*it);
    read_opt(root, "runs", cfg.runs, "config");
    read_opt(root, "base_seed", cfg.base_seed, "config");
    if (auto it = root.find("output_dir"); it != root.end()) cfg.output_dir = resolve(base_dir, it->get<std::string>());
    else cfg.output_dir = resolve(base_dir, "out");
    if (auto it = root.find("instructions_dir"); it != root.end() && !it->is_null()) {
        cfg.instructions_dir = resolve(base_dir, it->get<std::string>());
    }
    if (auto it = root.find("cache_path"); it != root.end() && !it->is_null()) {
        cfg.cache_path = resolve(base_dir, it->get<std::string>());
    }
    read_opt(root, "cache_online", cfg.cache_online, "config");
    read_opt(root, "decimals", cfg.decimals, "config");
    if (auto it = root.find("arima_order"); it != root.end()) {
        const auto v = it->get<std::vector<int>>();
        if (v.size() != 3) throw ConfigError("arima_order must be [p, d, q]");
        cfg.arima_order = {v[0], v[1], v[2]};
    }
    if (auto it = root.find("permutation_entropy"); it != root.end()) {
        check_keys(*it, {"order", "delay"}, "permutation_entropy");
        read_opt(*it, "order", cfg.pe_order, "permutation_entropy");
        read_opt(*it, "delay", cfg.pe_delay, "permutation_entropy");
    }
    if (auto it = root.find("cleaning"); it != root.end()) {
        check_keys(*it, {"rsrp_min", "rsrp_max"}, "cleaning");
        read_opt(*it, "rsrp_min", cfg.cleaning.rsrp_min, "cleaning");
        read_opt(*it, "rsrp_max", cfg.cleaning.rsrp_max, "cleaning");
    }
    cfg.validate();
    return cfg;
}

ExperimentConfig load_config(const fs::path &path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open config " + path.string());
    std::stringstream buf;
    buf << in.rdbuf();
    return parse_config(buf.str(), path.parent_path());
}

std::unique_ptr<ChatBackend> make_backend(const BackendSettings &settings) {
    if (settings.kind == "http") return std::make_unique<HttpBackend>(settings.http);
    if (settings.kind == "mock-persistence") return std::make_unique<PersistenceMock>();
    throw ConfigError("unknown backend kind \"" + settings.kind + "\"");
}

// ---------------------------------------------------------------------------
// Scenario preparation

double ScenarioData::truth(std::size_t k) const { return test.records.at(query_positions.at(k) + 1).dl_throughput; }

std::vector<double> ScenarioData::truth_vector() const {
    std::vector<double> y(query_positions.size());
    for (std::size_t k = 0; k < y.size(); ++k) y[k] = truth(k);
    return y;
}

std::string ScenarioData::truth_digest() const {
    std::string text;
    for (double v : truth_vector()) text += format_roundtrip(v) + "\n";
    return sha256_hex(text);
}

std::span<const double> ScenarioData::history(std::size_t k) const {
    const std::size_t newest = train.size() + query_positions.at(k);
    return {cleaned_dl_.data(), newest + 1};
}

ScenarioData prepare_scenario(const ExperimentConfig &config, const ScenarioConfig &scenario) {
    ScenarioData d;
    d.name = scenario.name;
    const Trace raw = load_trace(scenario.trace, scenario.schema, scenario.name);
    auto cleaned = clean_trace(raw, config.cleaning);
    d.cleaning = cleaned.log;
    d.cleaned = std::move(cleaned.trace);
    auto [train, test] = split_train_test(d.cleaned, config.test_horizon, config.window);
    d.train = std::move(train);
    d.test = std::move(test);
    d.window = config.window;
    d.test_points = config.test_horizon;
    // Query k ends at test position W-1+k; its label sits one second later.
    for (std::size_t k = 0; k < config.test_horizon; ++k) d.query_positions.push_back(config.window - 1 + k);
    if (d.query_positions.back() + 1 >= d.test.size()) {
        throw SplitError("test half of \"" + scenario.name + "\" holds fewer than T + W records");
    }
    d.cleaned_dl_ = d.cleaned.dl_series();
    const auto train_dl = d.train.dl_series();
    d.train_permutation_entropy = permutation_entropy_norm(train_dl, config.pe_order, config.pe_delay);
    return d;
}

// ---------------------------------------------------------------------------
// Offline

fs::path corpus_path(const ExperimentConfig &config, const std::string &scenario) {
    return config.output_dir / ("corpus_" + scenario + ".jsonl");
}

OfflineResult run_offline(const ExperimentConfig &config, const ScenarioData &data, ChatBackend &backend,
                          ResponseCache *cache) {
    make_directories(config.output_dir);
    OfflineResult result;
    result.corpus_path = corpus_path(config, data.name);
    CorpusStore store(result.corpus_path);
    const auto ins = config.instructions();
    RenderOptions opts;
    opts.decimals = config.decimals;
    if (cache) {
        CachedBackend cached(backend, *cache);
        result.stats = build_corpus(data.train, config.window, config.stride, config.features, ins, cached, store, opts).stats;
    } else {
        result.stats = build_corpus(data.train, config.window, config.stride, config.features, ins, backend, store, opts).stats;
    }
    return result;
}

// ---------------------------------------------------------------------------
// Online

namespace {

std::string method_label(PromptStyle style, std::size_t shots, const std::string &variant) {
    std::string label = shots == 0 ? std::string("Zero-shot ") : std::to_string(shots) + "-shot ";
    label += style == PromptStyle::cot ? "CoT-LLM" : "ICL-LLM";
    if (variant == "no_rationale") label += " (w/o r)";
    else if (variant == "no_e1") label += " (w/o e1)";
    else if (variant == "no_e2") label += " (w/o e2)";
    return label;
}

/// MAE and RMSE always; R^2 becomes NaN with a warning when the truth is constant.
MetricSet metrics_or_warn(std::span<const double> pred, std::span<const double> truth, std::size_t misses,
                          std::vector<std::string> &warnings) {
    MetricSet m;
    m.mae = mae(pred, truth);
    m.rmse = rmse(pred, truth);
    m.n_points = pred.size();
    m.parse_miss_count = misses;
    try {
        m.r2 = r2_score(pred, truth);
    } catch (const Error &e) {
        m.r2 = std::numeric_limits<double>::quiet_NaN();
        if (warnings.empty() || warnings.back() != e.what()) warnings.emplace_back(e.what());
    }
    return m;
}

} // namespace

OnlineOptions online_options(const ExperimentConfig &config) {
    return {config.style, config.shots, config.ablation};
}

EvalReport run_online(const ExperimentConfig &config, const ScenarioData &data, std::span<const Demonstration> corpus,
                      ChatBackend &backend, const OnlineOptions &options, ResponseCache *cache) {
    options.ablation.validate();
    const auto ins = config.instructions();
    const std::size_t T = data.query_positions.size();
    const std::size_t M = options.shots;
    const bool cot = options.style == PromptStyle::cot;
    const PromptMode mode = M == 0 ? (cot ? PromptMode::zero_shot_cot : PromptMode::zero_shot_icl)
                                   : (cot ? PromptMode::m_shot_cot : PromptMode::m_shot_icl);
    RenderOptions render;
    render.decimals = config.decimals;
    render.include_rationales = options.ablation.use_rationale;

    EvalReport report;
    report.scenario = data.name;
    report.variant = options.ablation.variant();
    report.method = method_label(options.style, M, report.variant);
    report.mode = to_string(mode);
    report.shots = M;
    report.config_digest = config.digest();
    report.truth_digest = data.truth_digest();
    report.train_permutation_entropy = data.train_permutation_entropy;

    std::vector<QuerySample> queries;
    queries.reserve(T);
    for (std::size_t pos : data.query_positions) queries.push_back(make_query(data.test, pos, config.window, config.features));

    // Selection is deterministic, so it is shared by every run.
    std::vector<SelectionResult> selections(T);
    if (M > 0) {
        if (M > corpus.size()) {
            throw SelectionError("M = " + std::to_string(M) + " exceeds the corpus size " + std::to_string(corpus.size()));
        }
        const RetrievalIndex index(corpus);
        selections = select_batch(queries, index, M, options.ablation.weights());
        report.calls.retrieval_calls = T;
    }

    std::vector<PromptBundle> prompts(T);
    for (std::size_t k = 0; k < T; ++k) {
        // Best candidate goes last, next to the query.
        std::vector<std::size_t> order(selections[k].indices.rbegin(), selections[k].indices.rend());
        std::vector<Demonstration> demos;
        demos.reserve(order.size());
        for (std::size_t i : order) demos.push_back(corpus[i]);
        prompts[k] = render_prompt(queries[k], demos, mode, ins, render, order);
    }

    std::optional<CachedBackend> cached;
    if (cache && config.cache_online) cached.emplace(backend, *cache);
    ChatBackend &b = cached ? static_cast<ChatBackend &>(*cached) : backend;

    const std::uint64_t calls_before = backend.calls();
    const auto truth = data.truth_vector();
    std::atomic<std::uint64_t> hits{0};
    std::vector<double> pred(T);
    for (std::size_t run = 0; run < config.runs; ++run) {
        CompletionOptions copts;
        copts.seed = config.base_seed + run;
        std::vector<StepRecord> steps(T);
        std::vector<std::exception_ptr> errors(T);
        bounded_for(T, b.max_in_flight(), [&](std::size_t k) {
            try {
                StepRecord &s = steps[k];
                const std::size_t pos = data.query_positions[k];
                s.run = run;
                s.origin_t = queries[k].origin_t;
                s.max_read_t = data.test.records[pos].t;
                s.t = data.test.records[pos + 1].t;
                s.selected = prompts[k].demo_indices;
                // Scores in prompt order, matching `selected`.
                s.scores.assign(selections[k].scores.rbegin(), selections[k].scores.rend());
                const ChatExchange ex = b.complete(prompts[k].messages, copts);
                if (ex.from_cache) hits.fetch_add(1);
                s.input_tokens = ex.input_tokens;
                s.output_tokens = ex.output_tokens;
                s.latency_ms = static_cast<double>(ex.latency.count());
                try {
                    const auto parsed = parse_prediction(ex.response_text);
                    s.y_hat = parsed.value;
                    s.parse_path = to_string(parsed.parse_path);
                    s.clamped = parsed.clamped;
                } catch (const PredictionParseError &) {
                    s.y_hat = queries[k].gamma.back();
                    s.parse_path = "miss";
                }
            } catch (...) {
                errors[k] = std::current_exception();
            }
        });
        for (auto &e : errors) {
            if (e) std::rethrow_exception(e);
        }
        std::size_t misses = 0;
        for (std::size_t k = 0; k < T; ++k) {
            steps[k].y = truth[k];
            pred[k] = steps[k].y_hat;
            misses += steps[k].parse_path == "miss" ? 1 : 0;
        }
        report.fallback_events += misses;
        report.per_run.push_back(metrics_or_warn(pred, truth, misses, report.warnings));
        report.steps.insert(report.steps.end(), steps.begin(), steps.end());
    }
    report.aggregate = aggregate_runs(report.per_run);
    report.calls.expected_calls = static_cast<std::uint64_t>(T) * config.runs;
    report.calls.backend_calls = backend.calls() - calls_before;
    report.calls.cache_hits = hits.load();
    return report;
}

// ---------------------------------------------------------------------------
// Baselines

std::vector<EvalReport> run_baselines(const ExperimentConfig &config, const ScenarioData &data,
                                      const BaselineOptions &options) {
    const std::size_t T = data.query_positions.size();
    const std::size_t W = config.window;
    const auto truth = data.truth_vector();
    const auto train_dl = data.train.dl_series();
    const KalmanParams kalman = fit_kalman(train_dl);
    const std::string digest = config.digest();
    const std::string truth_digest = data.truth_digest();

    std::vector<EvalReport> out;
    for (BaselineMethod method : options.methods) {
        EvalReport r;
        r.scenario = data.name;
        r.method = to_string(method);
        r.variant = "baseline";
        r.mode = "baseline";
        r.config_digest = digest;
        r.truth_digest = truth_digest;
        r.train_permutation_entropy = data.train_permutation_entropy;

        std::vector<BaselineForecast> fc(T);
        std::vector<std::exception_ptr> errors(T);
        std::vector<std::size_t> read_len(T, 0);
        auto step = [&](std::size_t k) {
            try {
                const auto hist = data.history(k);
                read_len[k] = hist.size();
                switch (method) {
                case BaselineMethod::sma:
                    fc[k] = {method, sma_forecast(hist.last(W)), {}, false};
                    break;
                case BaselineMethod::wma:
                    fc[k] = {method, wma_forecast(hist.last(W)), {}, false};
                    break;
                case BaselineMethod::persistence:
                    fc[k] = {method, persistence_forecast(hist), {}, false};
                    break;
                case BaselineMethod::arima:
                    fc[k] = arima_forecast(hist, config.arima_order);
                    break;
                case BaselineMethod::kalman:
                    fc[k] = kalman_forecast(hist, kalman);
                    break;
                }
            } catch (...) {
                errors[k] = std::current_exception();
            }
        };
        if (options.parallel) {
            const auto n = static_cast<std::ptrdiff_t>(T);
#pragma omp parallel for schedule(dynamic)
            for (std::ptrdiff_t k = 0; k < n; ++k) step(static_cast<std::size_t>(k));
        } else {
            for (std::size_t k = 0; k < T; ++k) step(k);
        }

        // A failing method is reported with NaN metrics; the others still run.
        if (auto bad = std::find_if(errors.begin(), errors.end(), [](const auto &e) { return e != nullptr; });
            bad != errors.end()) {
            try {
                std::rethrow_exception(*bad);
            } catch (const std::exception &e) {
                r.warnings.push_back(r.method + " failed: " + e.what());
            }
            const double nan = std::numeric_limits<double>::quiet_NaN();
            r.per_run.push_back({nan, nan, nan, 0, 0});
            r.aggregate.runs = 1;
            r.aggregate.mean = {nan, nan, nan, 0.0};
            out.push_back(std::move(r));
            continue;
        }

        std::vector<double> pred(T);
        for (std::size_t k = 0; k < T; ++k) {
            const std::size_t pos = data.query_positions[k];
            StepRecord s;
            s.t = data.test.records[pos + 1].t;
            s.origin_t = data.test.records[pos].t;
            s.max_read_t = data.cleaned.records[read_len[k] - 1].t;
            s.y = truth[k];
            s.y_hat = fc[k].value;
            s.parse_path = fc[k].fallback ? "fallback_persistence" : "baseline";
            pred[k] = s.y_hat;
            r.fallback_events += fc[k].fallback ? 1 : 0;
            r.steps.push_back(std::move(s));
        }
        if (r.fallback_events > 0) {
            r.warnings.push_back(std::to_string(r.fallback_events) + " forecasts fell back to persistence");
        }
        r.per_run.push_back(metrics_or_warn(pred, truth, 0, r.warnings));
        r.aggregate = aggregate_runs(r.per_run);
        out.push_back(std::move(r));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Sweeps

std::vector<EvalReport> sweep_m(const ExperimentConfig &config, const ScenarioData &data,
                                std::span<const Demonstration> corpus, ChatBackend &backend,
                                std::vector<std::size_t> m_values, ResponseCache *cache) {
    std::vector<std::string> warnings;
    std::vector<std::size_t> unique;
    for (std::size_t m : m_values) {
        if (std::find(unique.begin(), unique.end(), m) != unique.end()) {
            warnings.push_back("duplicate M = " + std::to_string(m) + " ignored");
            continue;
        }
        unique.push_back(m);
    }
    std::vector<EvalReport> out;
    for (PromptStyle style : {PromptStyle::cot, PromptStyle::icl}) {
        for (std::size_t m : unique) {
            OnlineOptions opts;
            opts.style = style;
            opts.shots = m;
            out.push_back(run_online(config, data, corpus, backend, opts, cache));
        }
    }
    if (!out.empty()) {
        auto &w = out.front().warnings;
        w.insert(w.begin(), warnings.begin(), warnings.end());
    }
    return out;
}

std::vector<EvalReport> run_ablation(const ExperimentConfig &config, const ScenarioData &data,
                                     std::span<const Demonstration> corpus, ChatBackend &backend,
                                     ResponseCache *cache) {
    const AblationFlags variants[] = {{true, true, true}, {false, true, true}, {true, false, true}, {true, true, false}};
    std::vector<EvalReport> out;
    for (const auto &flags : variants) {
        OnlineOptions opts;
        opts.style = PromptStyle::cot;
        opts.shots = config.shots;
        opts.ablation = flags;
        out.push_back(run_online(config, data, corpus, backend, opts, cache));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Reports

namespace {

json number_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

double number_from(const json &j) { return j.is_null() ? std::numeric_limits<double>::quiet_NaN() : j.get<double>(); }

std::string csv_num(double v) { return std::isfinite(v) ? format_roundtrip(v) : std::string("nan"); }

std::string csv_field(const std::string &s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + "\"";
}

std::string mean_std_or_na(double mean, double std) {
    if (!std::isfinite(mean)) return "n/a";
    return format_mean_std(mean, std, 3);
}

json stats_json(const MetricStats &s) {
    return {{"mae", number_or_null(s.mae)},
            {"rmse", number_or_null(s.rmse)},
            {"r2", number_or_null(s.r2)},
            {"parse_miss_count", number_or_null(s.parse_miss_count)}};
}

MetricStats stats_from(const json &j) {
    return {number_from(j.at("mae")), number_from(j.at("rmse")), number_from(j.at("r2")),
            number_from(j.at("parse_miss_count"))};
}

void write_text(const fs::path &path, const std::string &text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out << text;
    if (!out) throw IoError("write failed for " + path.string());
}

template <class T>
std::string join(const std::vector<T> &v, auto fmt) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) s += ';';
        s += fmt(v[i]);
    }
    return s;
}

} // namespace

ReportFiles emit_report(std::span<const EvalReport> reports, const fs::path &dir, const std::string &prefix,
                        bool per_step) {
    make_directories(dir);
    ReportFiles files;
    files.metrics_csv = dir / (prefix + "metrics.csv");
    files.summary_json = dir / (prefix + "summary.json");

    std::ostringstream csv;
    csv << "scenario,method,variant,mode,shots,runs,n_points,mae_mean,mae_std,rmse_mean,rmse_std,r2_mean,r2_std,"
           "parse_miss_mean,fallback_events,expected_calls,backend_calls,cache_hits,config_digest,truth_digest\n";
    json arr = json::array();
    for (const auto &r : reports) {
        const auto &a = r.aggregate;
        csv << csv_field(r.scenario) << ',' << csv_field(r.method) << ',' << r.variant << ',' << r.mode << ','
            << r.shots << ',' << a.runs << ',' << a.n_points << ',' << csv_num(a.mean.mae) << ',' << csv_num(a.std.mae)
            << ',' << csv_num(a.mean.rmse) << ',' << csv_num(a.std.rmse) << ',' << csv_num(a.mean.r2) << ','
            << csv_num(a.std.r2) << ',' << csv_num(a.mean.parse_miss_count) << ',' << r.fallback_events << ','
            << r.calls.expected_calls << ',' << r.calls.backend_calls << ',' << r.calls.cache_hits << ','
            << r.config_digest << ',' << r.truth_digest << '\n';

        json runs = json::array();
        for (const auto &m : r.per_run) {
            runs.push_back({{"mae", number_or_null(m.mae)},
                            {"rmse", number_or_null(m.rmse)},
                            {"r2", number_or_null(m.r2)},
                            {"n_points", m.n_points},
                            {"parse_miss_count", m.parse_miss_count}});
        }
        arr.push_back({{"scenario", r.scenario},
                       {"method", r.method},
                       {"variant", r.variant},
                       {"mode", r.mode},
                       {"shots", r.shots},
                       {"runs", a.runs},
                       {"n_points", a.n_points},
                       {"mean", stats_json(a.mean)},
                       {"std", stats_json(a.std)},
                       {"std_kind", a.sample_std ? "sample" : "population"},
                       {"display",
                        {{"mae", mean_std_or_na(a.mean.mae, a.std.mae)},
                         {"rmse", mean_std_or_na(a.mean.rmse, a.std.rmse)},
                         {"r2", mean_std_or_na(a.mean.r2, a.std.r2)}}},
                       {"per_run", runs},
                       {"fallback_events", r.fallback_events},
                       {"calls",
                        {{"expected", r.calls.expected_calls},
                         {"backend", r.calls.backend_calls},
                         {"cache_hits", r.calls.cache_hits},
                         {"retrieval", r.calls.retrieval_calls}}},
                       {"train_permutation_entropy", number_or_null(r.train_permutation_entropy)},
                       {"config_digest", r.config_digest},
                       {"truth_digest", r.truth_digest},
                       {"warnings", r.warnings}});
    }
    write_text(files.metrics_csv, csv.str());
    write_text(files.summary_json, json{{"reports", arr}}.dump(2) + "\n");

    if (per_step) {
        files.steps_csv = dir / (prefix + "steps.csv");
        std::ostringstream steps;
        steps << "scenario,method,variant,run,t,origin_t,max_read_t,y,y_hat,selected,scores,parse_path,clamped,"
                 "input_tokens,output_tokens,latency_ms\n";
        for (const auto &r : reports) {
            for (const auto &s : r.steps) {
                steps << csv_field(r.scenario) << ',' << csv_field(r.method) << ',' << r.variant << ',' << s.run
                      << ',' << s.t << ',' << s.origin_t << ',' << s.max_read_t << ',' << csv_num(s.y) << ','
                      << csv_num(s.y_hat) << ',' << join(s.selected, [](std::size_t i) { return std::to_string(i); })
                      << ',' << join(s.scores, [](double v) { return csv_num(v); }) << ',' << s.parse_path << ','
                      << (s.clamped ? 1 : 0) << ',' << s.input_tokens << ',' << s.output_tokens << ','
                      << csv_num(s.latency_ms) << '\n';
            }
        }
        write_text(*files.steps_csv, steps.str());
    }
    return files;
}

std::vector<EvalReport> load_summary(const fs::path &path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    json root;
    try {
        root = json::parse(in);
    } catch (const json::exception &e) {
        throw ParseError(0, path.string() + ": " + e.what());
    }
    std::vector<EvalReport> out;
    try {
        for (const auto &j : root.at("reports")) {
            EvalReport r;
            r.scenario = j.at("scenario").get<std::string>();
            r.method = j.at("method").get<std::string>();
            r.variant = j.at("variant").get<std::string>();
            r.mode = j.at("mode").get<std::string>();
            r.shots = j.at("shots").get<std::size_t>();
            r.aggregate.runs = j.at("runs").get<std::size_t>();
            r.aggregate.n_points = j.at("n_points").get<std::size_t>();
            r.aggregate.mean = stats_from(j.at("mean"));
            r.aggregate.std = stats_from(j.at("std"));
            r.aggregate.sample_std = j.value("std_kind", "sample") == "sample";
            for (const auto &m : j.at("per_run")) {
                MetricSet ms;
                ms.mae = number_from(m.at("mae"));
                ms.rmse = number_from(m.at("rmse"));
                ms.r2 = number_from(m.at("r2"));
                ms.n_points = m.at("n_points").get<std::size_t>();
                ms.parse_miss_count = m.at("parse_miss_count").get<std::size_t>();
                r.per_run.push_back(ms);
            }
            r.fallback_events = j.at("fallback_events").get<std::size_t>();
            const auto &c = j.at("calls");
            r.calls = {c.at("expected").get<std::uint64_t>(), c.at("backend").get<std::uint64_t>(),
                       c.at("cache_hits").get<std::uint64_t>(), c.at("retrieval").get<std::uint64_t>()};
            r.train_permutation_entropy = number_from(j.at("train_permutation_entropy"));
            r.config_digest = j.at("config_digest").get<std::string>();
            r.truth_digest = j.at("truth_digest").get<std::string>();
            r.warnings = j.at("warnings").get<std::vector<std::string>>();
            out.push_back(std::move(r));
        }
    } catch (const json::exception &e) {
        throw ParseError(0, path.string() + ": " + e.what());
    }
    return out;
}

std::string format_table(std::span<const EvalReport> reports) {
    std::ostringstream os;
    os << "| Scenario | Method | MAE | RMSE | R² | Runs | Misses |\n";
    os << "|---|---|---|---|---|---|---|\n";
    for (const auto &r : reports) {
        const auto &a = r.aggregate;
        os << "| " << r.scenario << " | " << r.method << " | " << mean_std_or_na(a.mean.mae, a.std.mae) << " | "
           << mean_std_or_na(a.mean.rmse, a.std.rmse) << " | " << mean_std_or_na(a.mean.r2, a.std.r2) << " | "
           << a.runs << " | " << r.fallback_events << " |\n";
    }
    return os.str();
}

} // namespace cotpred
