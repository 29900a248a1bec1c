// Command-line front end: ingest, offline, predict, baselines, ablate, sweep-m, report, synth.

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "cotpred/error.hpp"
#include "cotpred/experiment.hpp"
#include "cotpred/format.hpp"
#include "cotpred/synthetic.hpp"

namespace fs = std::filesystem;
using namespace cotpred;

namespace {

/// Command-line overrides of config fields; unset options leave the file's value.
struct Overrides {
    std::string config;
    std::vector<std::string> scenarios;
    std::optional<std::size_t> window, stride, test_horizon, shots, runs;
    std::optional<std::uint64_t> base_seed;
    std::optional<std::string> mode, output_dir, backend, base_url, model, instructions_dir, cache_path;
    std::optional<double> temperature;
    std::optional<std::size_t> max_in_flight;
    bool no_rationale = false, no_e1 = false, no_e2 = false, no_cache = false;

    void attach(CLI::App *app, bool llm) {
        app->add_option("-c,--config", config, "experiment config (JSON)")->required()->check(CLI::ExistingFile);
        app->add_option("-s,--scenario", scenarios, "restrict to these scenarios");
        app->add_option("--window", window, "window length W");
        app->add_option("--stride", stride, "training window stride S");
        app->add_option("--test-horizon", test_horizon, "test points T");
        app->add_option("--output-dir", output_dir);
        if (!llm) return;
        app->add_option("-m,--shots", shots, "demonstrations per prompt M");
        app->add_option("--mode", mode, "cot or icl")->check(CLI::IsMember({"cot", "icl"}));
        app->add_option("--runs", runs);
        app->add_option("--base-seed", base_seed);
        app->add_option("--backend", backend, "http or mock-persistence")
            ->check(CLI::IsMember({"http", "mock-persistence"}));
        app->add_option("--base-url", base_url);
        app->add_option("--model", model);
        app->add_option("--temperature", temperature);
        app->add_option("--max-in-flight", max_in_flight);
        app->add_option("--instructions-dir", instructions_dir);
        app->add_option("--cache", cache_path, "response cache file");
        app->add_flag("--no-cache", no_cache, "bypass the response cache");
        app->add_flag("--no-rationale", no_rationale, "ablation: drop rationales from demonstrations");
        app->add_flag("--no-e1", no_e1, "ablation: rank by first differences only");
        app->add_flag("--no-e2", no_e2, "ablation: rank by raw windows only");
    }

    ExperimentConfig apply() const {
        ExperimentConfig cfg = load_config(config);
        if (!scenarios.empty()) {
            std::vector<ScenarioConfig> kept;
            for (const auto &name : scenarios) kept.push_back(cfg.scenario(name));
            cfg.scenarios = std::move(kept);
        }
        if (window) cfg.window = *window;
        if (stride) cfg.stride = *stride;
        if (test_horizon) cfg.test_horizon = *test_horizon;
        if (shots) cfg.shots = *shots;
        if (runs) cfg.runs = *runs;
        if (base_seed) cfg.base_seed = *base_seed;
        if (mode) cfg.style = *mode == "icl" ? PromptStyle::icl : PromptStyle::cot;
        if (output_dir) cfg.output_dir = *output_dir;
        if (backend) cfg.backend.kind = *backend;
        if (base_url) cfg.backend.http.base_url = *base_url;
        if (model) cfg.backend.http.model_id = *model;
        if (temperature) cfg.backend.http.temperature = *temperature;
        if (max_in_flight) cfg.backend.http.max_in_flight = *max_in_flight;
        if (instructions_dir) cfg.instructions_dir = *instructions_dir;
        if (cache_path) cfg.cache_path = *cache_path;
        if (no_cache) cfg.cache_path.reset();
        if (no_rationale) cfg.ablation.use_rationale = false;
        if (no_e1) cfg.ablation.use_e1 = false;
        if (no_e2) cfg.ablation.use_e2 = false;
        cfg.validate();
        return cfg;
    }
};

std::unique_ptr<ResponseCache> open_cache(const ExperimentConfig &cfg) {
    if (!cfg.cache_path) return nullptr;
    if (cfg.cache_path->has_parent_path()) make_directories(cfg.cache_path->parent_path());
    return std::make_unique<ResponseCache>(*cfg.cache_path);
}

std::vector<Demonstration> corpus_for(const ExperimentConfig &cfg, const ScenarioData &data, bool needed) {
    const auto path = corpus_path(cfg, data.name);
    if (!fs::exists(path)) {
        if (needed) throw IoError("no corpus at " + path.string() + "; run `offline` first");
        return {};
    }
    return load_corpus(path);
}

void print_warnings(const std::vector<EvalReport> &reports) {
    for (const auto &r : reports) {
        for (const auto &w : r.warnings) std::cerr << "warning: " << r.scenario << " / " << r.method << ": " << w << "\n";
    }
}

void finish(const std::vector<EvalReport> &reports, const ExperimentConfig &cfg, const std::string &prefix) {
    print_warnings(reports);
    const auto files = emit_report(reports, cfg.output_dir, prefix);
    std::cout << format_table(reports);
    std::cout << "wrote " << files.metrics_csv.string() << ", " << files.summary_json.string();
    if (files.steps_csv) std::cout << ", " << files.steps_csv->string();
    std::cout << "\n";
}

int cmd_ingest(const Overrides &o, const std::optional<std::string> &write_dir) {
    const auto cfg = o.apply();
    for (const auto &sc : cfg.scenarios) {
        const auto d = prepare_scenario(cfg, sc);
        const auto windows = build_labeled_windows(d.train, cfg.window, cfg.stride, cfg.features);
        std::cout << sc.name << ": " << d.cleaning.input_records << " records, " << d.cleaning.leading_dropped
                  << " leading dropped, " << d.cleaning.filled_cells << " cells filled ("
                  << d.cleaning.out_of_range_cells << " out of range)\n"
                  << "  train " << d.train.size() << " / test " << d.test.size() << ", " << windows.size()
                  << " labelled training windows (window formula gives "
                  << count_windows(d.train.size(), cfg.window, cfg.stride) << ")\n"
                  << "  normalised permutation entropy of train downlink: "
                  << format_fixed(d.train_permutation_entropy, 3) << "\n";
        if (write_dir) {
            make_directories(*write_dir);
            save_trace(d.cleaned, fs::path(*write_dir) / (sc.name + "_clean.csv"));
        }
    }
    return 0;
}

int cmd_offline(const Overrides &o) {
    const auto cfg = o.apply();
    auto backend = make_backend(cfg.backend);
    auto cache = open_cache(cfg);
    for (const auto &sc : cfg.scenarios) {
        const auto d = prepare_scenario(cfg, sc);
        const auto res = run_offline(cfg, d, *backend, cache.get());
        std::cout << sc.name << ": " << res.stats.windows << " windows, " << res.stats.generated << " generated, "
                  << res.stats.reused << " reused, " << res.stats.backend_calls << " backend calls -> "
                  << res.corpus_path.string() << "\n";
    }
    return 0;
}

int cmd_predict(const Overrides &o) {
    const auto cfg = o.apply();
    auto backend = make_backend(cfg.backend);
    auto cache = open_cache(cfg);
    std::vector<EvalReport> reports;
    for (const auto &sc : cfg.scenarios) {
        const auto d = prepare_scenario(cfg, sc);
        const auto corpus = corpus_for(cfg, d, cfg.shots > 0);
        reports.push_back(run_online(cfg, d, corpus, *backend, online_options(cfg), cache.get()));
    }
    finish(reports, cfg, "predict_");
    return 0;
}

int cmd_baselines(const Overrides &o, const std::vector<std::string> &methods, bool serial) {
    const auto cfg = o.apply();
    BaselineOptions opts;
    if (!methods.empty()) {
        opts.methods.clear();
        for (const auto &m : methods) opts.methods.push_back(baseline_method_from_string(m));
    }
    opts.parallel = !serial;
    std::vector<EvalReport> reports;
    for (const auto &sc : cfg.scenarios) {
        const auto d = prepare_scenario(cfg, sc);
        auto r = run_baselines(cfg, d, opts);
        reports.insert(reports.end(), r.begin(), r.end());
    }
    finish(reports, cfg, "baselines_");
    return 0;
}

int cmd_ablate(const Overrides &o) {
    const auto cfg = o.apply();
    auto backend = make_backend(cfg.backend);
    auto cache = open_cache(cfg);
    std::vector<EvalReport> reports;
    for (const auto &sc : cfg.scenarios) {
        const auto d = prepare_scenario(cfg, sc);
        const auto corpus = corpus_for(cfg, d, true);
        auto r = run_ablation(cfg, d, corpus, *backend, cache.get());
        reports.insert(reports.end(), r.begin(), r.end());
    }
    finish(reports, cfg, "ablation_");
    return 0;
}

int cmd_sweep(const Overrides &o, const std::vector<std::size_t> &m_values) {
    const auto cfg = o.apply();
    auto backend = make_backend(cfg.backend);
    auto cache = open_cache(cfg);
    std::vector<EvalReport> reports;
    for (const auto &sc : cfg.scenarios) {
        const auto d = prepare_scenario(cfg, sc);
        const bool needs_corpus = std::any_of(m_values.begin(), m_values.end(), [](std::size_t m) { return m > 0; });
        const auto corpus = corpus_for(cfg, d, needs_corpus);
        auto r = sweep_m(cfg, d, corpus, *backend, m_values, cache.get());
        reports.insert(reports.end(), r.begin(), r.end());
    }
    if (reports.empty()) {
        std::cout << "no M values given; nothing to do\n";
        return 0;
    }
    finish(reports, cfg, "sweep_m_");
    return 0;
}

int cmd_report(const std::vector<std::string> &inputs, const std::optional<std::string> &out_dir) {
    std::vector<EvalReport> all;
    for (const auto &in : inputs) {
        auto r = load_summary(in);
        all.insert(all.end(), r.begin(), r.end());
    }
    std::cout << format_table(all);
    if (out_dir) {
        const auto files = emit_report(all, *out_dir, "combined_", false);
        std::cout << "wrote " << files.metrics_csv.string() << ", " << files.summary_json.string() << "\n";
    }
    return 0;
}

int cmd_synth(const SyntheticSpec &spec, const std::string &out) {
    const auto trace = synthetic_trace(spec);
    const fs::path path(out);
    if (path.has_parent_path()) make_directories(path.parent_path());
    save_trace(trace, path);
    std::cout << "wrote " << trace.size() << " records to " << out << "\n";
    return 0;
}

} // namespace

int main(int argc, char **argv) {
    CLI::App app{"Chain-of-thought LLM throughput prediction experiments"};
    app.require_subcommand(1);

    Overrides ingest_o, offline_o, predict_o, base_o, ablate_o, sweep_o;
    std::optional<std::string> write_dir;
    auto *ingest = app.add_subcommand("ingest", "load, clean and split traces; print statistics");
    ingest_o.attach(ingest, false);
    ingest->add_option("--write-cleaned", write_dir, "directory for cleaned traces");

    auto *offline = app.add_subcommand("offline", "build the demonstration corpus (lecture, plan, rationale)");
    offline_o.attach(offline, true);

    auto *predict = app.add_subcommand("predict", "online prediction over the test horizon");
    predict_o.attach(predict, true);

    std::vector<std::string> methods;
    bool serial = false;
    auto *baselines = app.add_subcommand("baselines", "SMA, WMA, ARIMA, Kalman and persistence forecasts");
    base_o.attach(baselines, false);
    baselines->add_option("--methods", methods, "subset of sma, wma, arima, kalman, persistence");
    baselines->add_flag("--serial", serial, "disable the parallel step loop");

    auto *ablate = app.add_subcommand("ablate", "full CoT against no-rationale, no-e1 and no-e2 variants");
    ablate_o.attach(ablate, true);

    std::vector<std::size_t> m_values = {0, 1, 2, 3, 4, 5, 6, 7};
    auto *sweep = app.add_subcommand("sweep-m", "CoT and ICL over a range of M");
    sweep_o.attach(sweep, true);
    sweep->add_option("--m-values", m_values, "M values (default 0..7)");

    std::vector<std::string> inputs;
    std::optional<std::string> report_out;
    auto *report = app.add_subcommand("report", "tabulate one or more summary.json files");
    report->add_option("inputs", inputs, "summary.json files")->required()->check(CLI::ExistingFile);
    report->add_option("-o,--output-dir", report_out, "also write combined metrics and summary here");

    SyntheticSpec synth_spec;
    std::string synth_out;
    auto *synth = app.add_subcommand("synth", "write a synthetic trace in the canonical layout");
    synth->add_option("-o,--out", synth_out)->required();
    synth->add_option("--length", synth_spec.length);
    synth->add_option("--seed", synth_spec.seed);
    synth->add_option("--mean", synth_spec.mean_dl, "mean downlink throughput (Mbps)");
    synth->add_option("--noise", synth_spec.noise);

    CLI11_PARSE(app, argc, argv);

    try {
        if (*ingest) return cmd_ingest(ingest_o, write_dir);
        if (*offline) return cmd_offline(offline_o);
        if (*predict) return cmd_predict(predict_o);
        if (*baselines) return cmd_baselines(base_o, methods, serial);
        if (*ablate) return cmd_ablate(ablate_o);
        if (*sweep) return cmd_sweep(sweep_o, m_values);
        if (*report) return cmd_report(inputs, report_out);
        if (*synth) return cmd_synth(synth_spec, synth_out);
    } catch (const GenerationError &e) {
        std::cerr << "error: " << e.what() << " (rerun to resume)\n";
        return 3;
    } catch (const ConfigError &e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const Error &e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception &e) {
        std::cerr << "internal error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
