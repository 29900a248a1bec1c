#include "cotpred/pcot.hpp"

#include <json.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <regex>
#include <sstream>

#include "cotpred/digest.hpp"
#include "cotpred/error.hpp"
#include "cotpred/format.hpp"
#include "cotpred/parallel.hpp"
#include "cotpred/prompt_format.hpp"

namespace cotpred {

using json = nlohmann::json;
namespace pf = prompt_format;

// ---------------------------------------------------------------------------
// Instructions

InstructionSet InstructionSet::defaults() {
    InstructionSet s;
    s.system_preamble =
        "You are an expert in cellular network traffic analysis. You forecast the per-second downlink "
        "throughput of a 5G user from a short window of recent measurements: downlink throughput, uplink "
        "throughput, serving-cell and neighbouring-cell RSRP, the network mode and handover events.";
    s.lecture =
        "Write a short, general lecture on the principles that govern how downlink throughput evolves in "
        "situations like the example below. Cover recent trend and momentum, short-term volatility, how "
        "uplink activity relates to downlink demand, what serving and neighbouring RSRP imply for link "
        "quality, and how network-mode changes or handovers disturb throughput. The ground-truth next "
        "value is given for context only; keep the lecture general and do not restate the numbers.";
    s.plan =
        "Using the lecture and the example below, write a general numbered plan that a forecaster could "
        "follow to predict the next-second downlink throughput from any window of this kind. Describe the "
        "steps only; do not compute a prediction.";
    s.rationale =
        "Follow the plan and draw on the lecture to reason step by step from the example's measurements "
        "toward its next-second downlink throughput. The ground-truth value is given so that your reasoning "
        "can be checked: derive it from the observed trend, variability and context rather than restating "
        "it. Keep the rationale under 150 words and do not add a FINAL_ANSWER line.";
    s.predict_icl =
        "Predict the downlink throughput of the next second from the recent measurements of the query "
        "window. Solved examples from similar situations may be shown before the query.";
    s.predict_cot = s.predict_icl +
                    " Before answering, think step-by-step about the trend, the variability and the context "
                    "features, in the way the example rationales do.";
    return s;
}

namespace {

constexpr std::pair<const char *, std::string InstructionSet::*> kInstructionFiles[] = {
    {"system_preamble.txt", &InstructionSet::system_preamble},
    {"lecture.txt", &InstructionSet::lecture},
    {"plan.txt", &InstructionSet::plan},
    {"rationale.txt", &InstructionSet::rationale},
    {"predict_cot.txt", &InstructionSet::predict_cot},
    {"predict_icl.txt", &InstructionSet::predict_icl},
};

} // namespace

InstructionSet InstructionSet::load(const std::filesystem::path &dir) {
    InstructionSet s;
    for (const auto &[file, member] : kInstructionFiles) {
        std::ifstream in(dir / file, std::ios::binary);
        if (!in) throw IoError("cannot read instruction file " + (dir / file).string());
        std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
        s.*member = std::string(trim(text));
    }
    s.validate();
    return s;
}

void InstructionSet::save(const std::filesystem::path &dir) const {
    make_directories(dir);
    for (const auto &[file, member] : kInstructionFiles) {
        std::ofstream out(dir / file, std::ios::binary);
        if (!out) throw IoError("cannot write instruction file " + (dir / file).string());
        out << this->*member << '\n';
    }
}

void InstructionSet::validate() const {
    for (const auto &[file, member] : kInstructionFiles) {
        if (trim(this->*member).empty()) throw ConfigError(std::string("instruction ") + file + " is empty");
    }
    if (predict_cot.find(pf::step_directive) == std::string::npos) {
        throw ConfigError("CoT prediction instruction must contain \"think step-by-step\"");
    }
}

// ---------------------------------------------------------------------------
// Rendering

std::string to_string(PromptMode mode) {
    switch (mode) {
    case PromptMode::zero_shot_cot: return "zero_shot_cot";
    case PromptMode::zero_shot_icl: return "zero_shot_icl";
    case PromptMode::m_shot_cot: return "m_shot_cot";
    case PromptMode::m_shot_icl: return "m_shot_icl";
    case PromptMode::lecture_gen: return "lecture_gen";
    case PromptMode::plan_gen: return "plan_gen";
    case PromptMode::rationale_gen: return "rationale_gen";
    }
    return "unknown";
}

PromptMode prompt_mode_from_string(std::string_view text) {
    for (auto m : {PromptMode::zero_shot_cot, PromptMode::zero_shot_icl, PromptMode::m_shot_cot,
                   PromptMode::m_shot_icl, PromptMode::lecture_gen, PromptMode::plan_gen, PromptMode::rationale_gen}) {
        if (to_string(m) == text) return m;
    }
    throw ArgumentError("unknown prompt mode '" + std::string(text) + "'");
}

std::string PromptBundle::text() const {
    std::string out;
    for (const auto &m : messages) {
        out += "[" + m.role + "]\n" + m.content + "\n";
    }
    return out;
}

namespace {

void render_window(std::ostringstream &out, std::span<const double> gamma, const ContextMatrix &ctx, int decimals) {
    out << pf::throughput_label << " [";
    for (std::size_t i = 0; i < gamma.size(); ++i) {
        if (i) out << ", ";
        out << format_fixed(gamma[i], decimals);
    }
    out << "]\n";
    if (ctx.cols() == 0) return;
    out << pf::context_label << "\n| step |";
    for (const auto &c : ctx.columns) out << ' ' << c << " |";
    out << '\n';
    const std::size_t rows = ctx.rows();
    for (std::size_t r = 0; r < rows; ++r) {
        const std::size_t back = rows - 1 - r;
        out << "| " << (back == 0 ? std::string("t") : "t-" + std::to_string(back)) << " |";
        for (std::size_t c = 0; c < ctx.cols(); ++c) out << ' ' << feature_to_string(ctx.at(r, c), decimals) << " |";
        out << '\n';
    }
}

const std::string kAnswerInstruction = "End your response with one line of the form \"" + std::string(pf::answer_tag) +
                                       " <value>\" giving the predicted next-second downlink throughput in Mbps.";

PromptBundle finish(PromptMode mode, const InstructionSet &ins, std::string user,
                    std::vector<std::size_t> indices = {}) {
    PromptBundle b;
    b.mode = mode;
    b.messages = {{"system", ins.system_preamble}, {"user", std::move(user)}};
    b.demo_indices = std::move(indices);
    b.token_estimate = estimate_tokens(b.messages);
    return b;
}

} // namespace

PromptBundle render_prompt(const QuerySample &query, std::span<const Demonstration> demos, PromptMode mode,
                           const InstructionSet &instructions, const RenderOptions &options,
                           std::span<const std::size_t> demo_indices) {
    const bool cot = mode == PromptMode::zero_shot_cot || mode == PromptMode::m_shot_cot;
    switch (mode) {
    case PromptMode::zero_shot_cot:
    case PromptMode::zero_shot_icl:
        if (!demos.empty()) throw AssemblyError("zero-shot prompt given " + std::to_string(demos.size()) + " examples");
        break;
    case PromptMode::m_shot_cot:
    case PromptMode::m_shot_icl:
        if (demos.empty()) throw AssemblyError("M-shot prompt needs at least one example");
        break;
    default: throw AssemblyError("mode " + to_string(mode) + " is not a prediction mode");
    }
    if (!demo_indices.empty() && demo_indices.size() != demos.size()) {
        throw AssemblyError("demo index count does not match the example count");
    }
    const bool with_rationale = mode == PromptMode::m_shot_cot && options.include_rationales;

    std::ostringstream out;
    out << (cot ? instructions.predict_cot : instructions.predict_icl) << "\n\n";
    for (std::size_t i = 0; i < demos.size(); ++i) {
        const auto &d = demos[i];
        if (d.window.gamma.size() != query.gamma.size()) throw AssemblyError("example window size differs from query");
        out << pf::example_header << (i + 1) << '\n';
        render_window(out, d.window.gamma, d.window.context, options.decimals);
        if (with_rationale) {
            if (trim(d.rationale).empty()) throw AssemblyError("CoT example " + std::to_string(i + 1) + " has no rationale");
            out << pf::rationale_label << ' ' << trim(d.rationale) << '\n';
        }
        out << pf::answer_tag << ' ' << format_fixed(d.window.label, options.decimals) << "\n\n";
    }
    out << pf::query_header << '\n';
    render_window(out, query.gamma, query.context, options.decimals);
    out << '\n' << kAnswerInstruction;

    return finish(mode, instructions, out.str(), {demo_indices.begin(), demo_indices.end()});
}

PromptBundle render_generation_prompt(PromptMode mode, const LabeledWindow &example, const InstructionSet &ins,
                                      std::string_view lecture, std::string_view plan, const RenderOptions &options) {
    std::ostringstream out;
    switch (mode) {
    case PromptMode::lecture_gen: out << ins.lecture << "\n\n"; break;
    case PromptMode::plan_gen:
        if (trim(lecture).empty()) throw AssemblyError("plan generation needs a lecture");
        out << ins.plan << "\n\n" << pf::lecture_label << '\n' << trim(lecture) << "\n\n";
        break;
    case PromptMode::rationale_gen:
        if (trim(lecture).empty() || trim(plan).empty()) throw AssemblyError("rationale generation needs lecture and plan");
        out << ins.rationale << "\n\n"
            << pf::lecture_label << '\n' << trim(lecture) << "\n\n"
            << pf::plan_label << '\n' << trim(plan) << "\n\n";
        break;
    default: throw AssemblyError("mode " + to_string(mode) + " is not a generation mode");
    }
    out << "### Example\n";
    render_window(out, example.gamma, example.context, options.decimals);
    out << pf::truth_label << ' ' << format_fixed(example.label, options.decimals);
    return finish(mode, ins, out.str());
}

// ---------------------------------------------------------------------------
// Generation

namespace {

std::string run_generation(const PromptBundle &bundle, ChatBackend &backend, std::size_t example_index,
                           const char *stage) {
    ChatExchange ex;
    try {
        ex = backend.complete(bundle.messages);
    } catch (const BackendError &e) {
        throw GenerationError(example_index, 0, std::string(stage) + ": " + e.what());
    }
    auto text = trim(ex.response_text);
    if (text.empty()) throw GenerationError(example_index, 0, std::string(stage) + ": empty response");
    return std::string(text);
}

} // namespace

std::string generate_lecture(const LabeledWindow &example, const InstructionSet &instructions, ChatBackend &backend,
                             std::size_t example_index, const RenderOptions &options) {
    return run_generation(render_generation_prompt(PromptMode::lecture_gen, example, instructions, {}, {}, options),
                          backend, example_index, "lecture");
}

std::string generate_plan(std::string_view lecture, const LabeledWindow &example, const InstructionSet &instructions,
                          ChatBackend &backend, std::size_t example_index, const RenderOptions &options) {
    return run_generation(render_generation_prompt(PromptMode::plan_gen, example, instructions, lecture, {}, options),
                          backend, example_index, "plan");
}

std::string generate_rationale(std::string_view lecture, std::string_view plan, const LabeledWindow &example,
                               const InstructionSet &instructions, ChatBackend &backend, std::size_t example_index,
                               const RenderOptions &options) {
    return run_generation(
        render_generation_prompt(PromptMode::rationale_gen, example, instructions, lecture, plan, options), backend,
        example_index, "rationale");
}

// ---------------------------------------------------------------------------
// Corpus serialisation

namespace {

json context_json(const ContextMatrix &ctx) {
    json rows = json::array();
    for (std::size_t r = 0; r < ctx.rows(); ++r) {
        json row = json::array();
        for (std::size_t c = 0; c < ctx.cols(); ++c) {
            std::visit([&](const auto &v) { row.push_back(v); }, ctx.at(r, c));
        }
        rows.push_back(std::move(row));
    }
    return {{"columns", ctx.columns}, {"rows", std::move(rows)}};
}

ContextMatrix context_from_json(const json &j) {
    ContextMatrix ctx;
    ctx.columns = j.at("columns").get<std::vector<std::string>>();
    for (const auto &row : j.at("rows")) {
        if (row.size() != ctx.columns.size()) throw ArgumentError("context row width mismatch");
        for (const auto &cell : row) {
            if (cell.is_boolean()) ctx.cells.emplace_back(cell.get<bool>());
            else if (cell.is_number()) ctx.cells.emplace_back(cell.get<double>());
            else ctx.cells.emplace_back(cell.get<std::string>());
        }
    }
    return ctx;
}

json window_json(const LabeledWindow &w) {
    return {{"origin_t", w.origin_t}, {"gamma", w.gamma}, {"context", context_json(w.context)}, {"label", w.label}};
}

} // namespace

std::string content_hash(const LabeledWindow &window, const InstructionSet &ins) {
    json j = {{"window", window_json(window)},
              {"instructions", {{"lecture", ins.lecture}, {"plan", ins.plan}, {"rationale", ins.rationale},
                                {"system", ins.system_preamble}}}};
    return sha256_hex(j.dump());
}

std::string corpus_line(const Demonstration &d) {
    json j = window_json(d.window);
    j["content_hash"] = d.content_hash;
    j["lecture"] = d.lecture;
    j["plan"] = d.plan;
    j["rationale"] = d.rationale;
    j["generator_model"] = d.generator_model;
    return j.dump();
}

Demonstration parse_corpus_line(std::string_view line) {
    const auto j = json::parse(line);
    Demonstration d;
    d.window.origin_t = j.at("origin_t").get<long>();
    d.window.gamma = j.at("gamma").get<std::vector<double>>();
    d.window.context = context_from_json(j.at("context"));
    d.window.label = j.at("label").get<double>();
    d.content_hash = j.at("content_hash").get<std::string>();
    d.lecture = j.at("lecture").get<std::string>();
    d.plan = j.at("plan").get<std::string>();
    d.rationale = j.at("rationale").get<std::string>();
    d.generator_model = j.at("generator_model").get<std::string>();
    return d;
}

void save_corpus(std::span<const Demonstration> corpus, const std::filesystem::path &path) {
    const auto tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot write corpus file " + tmp);
        for (const auto &d : corpus) out << corpus_line(d) << '\n';
        if (!out) throw IoError("failed writing corpus file " + tmp);
    }
    std::filesystem::rename(tmp, path);
}

std::vector<Demonstration> load_corpus(const std::filesystem::path &path) {
    if (!std::filesystem::exists(path)) throw IoError("corpus file not found: " + path.string());
    CorpusStore store(path);
    return store.demonstrations();
}

CorpusStore::CorpusStore(std::filesystem::path path) : path_(std::move(path)) {
    std::ifstream in(*path_, std::ios::binary);
    if (!in) return;
    std::string content((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    std::size_t pos = 0;
    std::size_t line_no = 0;
    while (pos < content.size()) {
        ++line_no;
        const std::size_t start = pos;
        const auto end = content.find('\n', pos);
        const bool terminated = end != std::string::npos;
        std::string_view line(content.data() + pos, (terminated ? end : content.size()) - pos);
        pos = terminated ? end + 1 : content.size();
        if (trim(line).empty()) continue;
        try {
            auto d = parse_corpus_line(line);
            by_key_[d.content_hash + '\n' + d.generator_model] = demos_.size();
            demos_.push_back(std::move(d));
        } catch (const std::exception &e) {
            // An interrupted append leaves an unterminated tail; anything else is corruption.
            if (!terminated) {
                in.close();
                std::filesystem::resize_file(*path_, start);
                content.resize(start);
                truncated_tail_ = true;
                break;
            }
            throw ParseError(line_no, std::string("corrupt corpus record: ") + e.what());
        }
    }
    needs_newline_ = !content.empty() && content.back() != '\n';
}

bool CorpusStore::contains(const std::string &hash, const std::string &model) const { return find(hash, model) != nullptr; }

const Demonstration *CorpusStore::find(const std::string &hash, const std::string &model) const {
    std::lock_guard lock(mutex_);
    auto it = by_key_.find(hash + '\n' + model);
    return it == by_key_.end() ? nullptr : &demos_[it->second];
}

void CorpusStore::append(const Demonstration &demo) {
    std::lock_guard lock(mutex_);
    if (path_) {
        std::ofstream out(*path_, std::ios::app | std::ios::binary);
        if (!out) throw IoError("cannot append to corpus file " + path_->string());
        std::string line = corpus_line(demo);
        if (needs_newline_) line.insert(line.begin(), '\n');
        line.push_back('\n');
        out.write(line.data(), static_cast<std::streamsize>(line.size()));
        out.flush();
        if (!out) throw IoError("failed writing corpus file " + path_->string());
        needs_newline_ = false;
    }
    by_key_[demo.content_hash + '\n' + demo.generator_model] = demos_.size();
    demos_.push_back(demo);
}

std::size_t CorpusStore::size() const {
    std::lock_guard lock(mutex_);
    return demos_.size();
}

std::vector<Demonstration> CorpusStore::demonstrations() const {
    std::lock_guard lock(mutex_);
    auto out = demos_;
    std::stable_sort(out.begin(), out.end(),
                     [](const Demonstration &a, const Demonstration &b) { return a.window.origin_t < b.window.origin_t; });
    return out;
}

CorpusBuildResult build_corpus(const Trace &train, std::size_t W, std::size_t S, std::span<const Feature> features,
                               const InstructionSet &instructions, ChatBackend &backend, CorpusStore &store,
                               const RenderOptions &options) {
    instructions.validate();
    CorpusBuildResult result;
    std::vector<LabeledWindow> windows;
    if (train.size() > W) windows = build_labeled_windows(train, W, S, features);
    result.stats.windows = windows.size();

    const auto model = backend.model_id();
    const auto calls_before = backend.calls();
    std::vector<Demonstration> corpus(windows.size());
    std::vector<std::size_t> pending;
    for (std::size_t n = 0; n < windows.size(); ++n) {
        const auto hash = content_hash(windows[n], instructions);
        if (const auto *cached = store.find(hash, model)) {
            corpus[n] = *cached;
            ++result.stats.reused;
        } else {
            corpus[n].window = windows[n];
            corpus[n].content_hash = hash;
            corpus[n].generator_model = model;
            pending.push_back(n);
        }
    }

    std::mutex failure_mutex;
    std::optional<std::size_t> failed_index;
    std::string failure_text;
    bounded_for(pending.size(), backend.max_in_flight(), [&](std::size_t k) {
        const std::size_t n = pending[k];
        auto &d = corpus[n];
        try {
            d.lecture = generate_lecture(d.window, instructions, backend, n, options);
            d.plan = generate_plan(d.lecture, d.window, instructions, backend, n, options);
            d.rationale = generate_rationale(d.lecture, d.plan, d.window, instructions, backend, n, options);
            store.append(d);
        } catch (const std::exception &e) {
            std::lock_guard lock(failure_mutex);
            if (!failed_index || n < *failed_index) {
                failed_index = n;
                failure_text = e.what();
            }
        }
    });
    result.stats.backend_calls = backend.calls() - calls_before;
    if (failed_index) {
        throw GenerationError(*failed_index, store.size(), failure_text);
    }
    result.stats.generated = pending.size();
    result.corpus = std::move(corpus);
    return result;
}

// ---------------------------------------------------------------------------
// Answer parsing

std::string to_string(ParsePath path) {
    return path == ParsePath::tagged ? "tagged" : "fallback_last_number";
}

namespace {

struct NumberMatch {
    double value;
    std::size_t pos;
};

std::vector<NumberMatch> find_numbers(std::string_view text) {
    static const std::regex number_re(R"([-+]?(?:\d+(?:\.\d*)?|\.\d+)(?:[eE][-+]?\d+)?)");
    std::vector<NumberMatch> out;
    const std::string s(text);
    for (auto it = std::sregex_iterator(s.begin(), s.end(), number_re); it != std::sregex_iterator(); ++it) {
        const auto token = it->str();
        std::string_view digits = token;
        if (digits.front() == '+') digits.remove_prefix(1);
        double v = 0.0;
        auto [ptr, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), v);
        if (ec == std::errc{} && std::isfinite(v)) out.push_back({v, static_cast<std::size_t>(it->position())});
    }
    return out;
}

} // namespace

ParsedPrediction parse_prediction(std::string_view raw) {
    ParsedPrediction p;
    p.raw_response = std::string(raw);
    const auto numbers = find_numbers(raw);
    const auto tag = raw.rfind(pf::answer_tag);
    const NumberMatch *chosen = nullptr;
    if (tag != std::string_view::npos) {
        const auto after = tag + pf::answer_tag.size();
        auto it = std::find_if(numbers.begin(), numbers.end(), [&](const NumberMatch &m) { return m.pos >= after; });
        if (it != numbers.end()) {
            chosen = &*it;
            p.parse_path = ParsePath::tagged;
            p.rationale_text = std::string(trim(raw.substr(0, tag)));
        }
    }
    if (chosen == nullptr) {
        if (numbers.empty()) throw PredictionParseError("no number in response");
        chosen = &numbers.back();
        p.parse_path = ParsePath::fallback_last_number;
        p.rationale_text = std::string(trim(raw));
    }
    p.value = chosen->value;
    if (p.value < 0.0) {
        p.value = 0.0;
        p.clamped = true;
    }
    return p;
}

} // namespace cotpred
