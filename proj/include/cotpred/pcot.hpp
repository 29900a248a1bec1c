#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <mutex>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "cotpred/demonstration.hpp"
#include "cotpred/llm_client.hpp"
#include "cotpred/trace.hpp"
#include "cotpred/windowing.hpp"

namespace cotpred {

/// Instruction texts for the lecture / plan / rationale stages and the two
/// prediction styles.
struct InstructionSet {
    std::string system_preamble;
    std::string lecture;
    std::string plan;
    std::string rationale;
    std::string predict_cot; // must contain "think step-by-step"
    std::string predict_icl;

    /// Built-in texts; identical to the files shipped in data/instructions/.
    static InstructionSet defaults();
    /// Reads system_preamble.txt, lecture.txt, plan.txt, rationale.txt,
    /// predict_cot.txt and predict_icl.txt from `dir`.
    static InstructionSet load(const std::filesystem::path &dir);
    void save(const std::filesystem::path &dir) const;
    void validate() const;

    bool operator==(const InstructionSet &) const = default;
};

enum class PromptMode { zero_shot_cot, zero_shot_icl, m_shot_cot, m_shot_icl, lecture_gen, plan_gen, rationale_gen };

std::string to_string(PromptMode mode);
PromptMode prompt_mode_from_string(std::string_view text);

struct RenderOptions {
    int decimals = 2;
    /// Only meaningful for m_shot_cot; false renders example blocks without
    /// rationales while keeping the step-by-step instruction.
    bool include_rationales = true;
};

struct PromptBundle {
    PromptMode mode = PromptMode::zero_shot_icl;
    std::vector<ChatMessage> messages;
    std::vector<std::size_t> demo_indices;
    std::int64_t token_estimate = 0;

    /// Concatenated message contents, for inspection and golden files.
    std::string text() const;
};

/// Renders an online prediction prompt. Demonstrations appear in the given
/// order; callers put the most similar one last.
PromptBundle render_prompt(const QuerySample &query, std::span<const Demonstration> demos, PromptMode mode,
                           const InstructionSet &instructions, const RenderOptions &options = {},
                           std::span<const std::size_t> demo_indices = {});

/// Renders one offline generation request. `lecture` is required for plan and
/// rationale generation, `plan` for rationale generation.
PromptBundle render_generation_prompt(PromptMode mode, const LabeledWindow &example,
                                      const InstructionSet &instructions, std::string_view lecture = {},
                                      std::string_view plan = {}, const RenderOptions &options = {});

std::string generate_lecture(const LabeledWindow &example, const InstructionSet &instructions, ChatBackend &backend,
                             std::size_t example_index = 0, const RenderOptions &options = {});
std::string generate_plan(std::string_view lecture, const LabeledWindow &example, const InstructionSet &instructions,
                          ChatBackend &backend, std::size_t example_index = 0, const RenderOptions &options = {});
std::string generate_rationale(std::string_view lecture, std::string_view plan, const LabeledWindow &example,
                               const InstructionSet &instructions, ChatBackend &backend,
                               std::size_t example_index = 0, const RenderOptions &options = {});

std::string content_hash(const LabeledWindow &window, const InstructionSet &instructions);

/// One JSON object per line: content_hash, origin_t, gamma, context, label,
/// lecture, plan, rationale, generator_model.
std::string corpus_line(const Demonstration &demo);
Demonstration parse_corpus_line(std::string_view line);
void save_corpus(std::span<const Demonstration> corpus, const std::filesystem::path &path);
std::vector<Demonstration> load_corpus(const std::filesystem::path &path);

/// Corpus file doubling as the resume checkpoint of build_corpus. Each finished
/// demonstration is appended as one line.
class CorpusStore {
public:
    CorpusStore() = default; // in-memory
    explicit CorpusStore(std::filesystem::path path);

    bool contains(const std::string &hash, const std::string &model) const;
    const Demonstration *find(const std::string &hash, const std::string &model) const;
    void append(const Demonstration &demo);
    std::size_t size() const;
    /// Stored demonstrations ordered by origin_t.
    std::vector<Demonstration> demonstrations() const;
    /// An unterminated, unparsable last line was discarded on load.
    bool recovered_truncated_tail() const noexcept { return truncated_tail_; }

private:
    std::optional<std::filesystem::path> path_;
    mutable std::mutex mutex_;
    std::vector<Demonstration> demos_;
    std::unordered_map<std::string, std::size_t> by_key_;
    bool truncated_tail_ = false;
    bool needs_newline_ = false;
};

struct CorpusBuildStats {
    std::size_t windows = 0;
    std::size_t generated = 0;
    std::size_t reused = 0;
    std::uint64_t backend_calls = 0;
};

struct CorpusBuildResult {
    std::vector<Demonstration> corpus;
    CorpusBuildStats stats;
};

/// Offline phase: one demonstration per labelled window of the training trace,
/// three backend calls (lecture, plan, rationale) per window not already in
/// `store`. A generation failure throws GenerationError after every finished
/// demonstration has been persisted, so a re-run resumes where it stopped.
CorpusBuildResult build_corpus(const Trace &train, std::size_t W, std::size_t S, std::span<const Feature> features,
                               const InstructionSet &instructions, ChatBackend &backend, CorpusStore &store,
                               const RenderOptions &options = {});

enum class ParsePath { tagged, fallback_last_number };
std::string to_string(ParsePath path);

struct ParsedPrediction {
    double value = 0.0;
    std::string rationale_text;
    std::string raw_response;
    ParsePath parse_path = ParsePath::tagged;
    bool clamped = false;
};

/// Reads the first number after the last "FINAL_ANSWER:" tag, else the last
/// number anywhere. Negative values clamp to 0. No number throws PredictionParseError.
ParsedPrediction parse_prediction(std::string_view raw);

} // namespace cotpred
