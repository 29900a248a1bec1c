#pragma once

#include <string_view>

namespace cotpred::prompt_format {

inline constexpr std::string_view answer_tag = "FINAL_ANSWER:";
inline constexpr std::string_view example_header = "### Example ";
inline constexpr std::string_view query_header = "### Query";
inline constexpr std::string_view throughput_label = "Downlink throughput (Mbps, oldest to newest):";
inline constexpr std::string_view context_label = "Context (oldest to newest):";
inline constexpr std::string_view rationale_label = "Rationale:";
inline constexpr std::string_view lecture_label = "Lecture:";
inline constexpr std::string_view plan_label = "Plan:";
inline constexpr std::string_view truth_label = "Ground-truth next-second throughput (Mbps):";
inline constexpr std::string_view step_directive = "think step-by-step";

} // namespace cotpred::prompt_format
