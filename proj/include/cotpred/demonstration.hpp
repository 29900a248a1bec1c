#pragma once

#include <string>

#include "cotpred/windowing.hpp"

namespace cotpred {

/// A labelled window plus the reasoning generated for it offline.
struct Demonstration {
    LabeledWindow window;
    std::string rationale;
    std::string lecture; // kept for audit
    std::string plan;    // kept for audit
    std::string generator_model;
    std::string content_hash; // sha-256 hex of window + instructions

    bool operator==(const Demonstration &) const = default;
};

} // namespace cotpred
