#pragma once

#include <set>
#include <string>

#include "ptrl/error.hpp"

namespace ptrl {

// Actor block indices of the canonical net: [input, L1, L2, output].
inline constexpr int kBlockL1 = 1;
inline constexpr int kBlockL2 = 2;

enum class FreezeMode { none, l1, l2, both };

/// The set of actor blocks held fixed during fine-tuning. Only the
/// hidden-to-hidden blocks (indices 1 and 2) are freezable; input and output
/// blocks have robot-specific dimensions and always stay trainable, as do
/// the critic and the policy log-std.
struct FreezeSpec {
    std::set<int> frozen_blocks;

    bool contains(int block) const { return frozen_blocks.count(block) > 0; }
    bool empty() const { return frozen_blocks.empty(); }
};

inline FreezeSpec make_freeze_spec(FreezeMode mode) {
    switch (mode) {
        case FreezeMode::none: return {};
        case FreezeMode::l1: return {{kBlockL1}};
        case FreezeMode::l2: return {{kBlockL2}};
        case FreezeMode::both: return {{kBlockL1, kBlockL2}};
    }
    throw ConfigError("invalid freeze mode");
}

inline FreezeMode parse_freeze_mode(const std::string& name) {
    if (name == "none") return FreezeMode::none;
    if (name == "l1") return FreezeMode::l1;
    if (name == "l2") return FreezeMode::l2;
    if (name == "both") return FreezeMode::both;
    throw ConfigError("unknown freeze mode '" + name + "' (expected none|l1|l2|both)");
}

inline const char* freeze_mode_name(FreezeMode mode) {
    switch (mode) {
        case FreezeMode::none: return "none";
        case FreezeMode::l1: return "l1";
        case FreezeMode::l2: return "l2";
        case FreezeMode::both: return "both";
    }
    return "?";
}

inline FreezeSpec make_freeze_spec(const std::string& name) {
    return make_freeze_spec(parse_freeze_mode(name));
}

}  // namespace ptrl
