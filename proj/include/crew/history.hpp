#pragma once

#include <cstddef>
#include <set>
#include <vector>

#include "crew/chat.hpp"

namespace crew {

// Pair-preserving history trim.
//
// The history is grouped into units: an assistant message that carries tool
// calls forms one unit together with the tool results that answer it, so the
// two sides of a call are dropped or kept together. The leading system
// message is always retained; after that the oldest units are dropped first
// until at most `cap` messages remain, preserving relative order.
//
// Throws MalformedHistory for a tool result that does not follow its call.
inline std::vector<ChatMessage> trim_history(const std::vector<ChatMessage>& messages,
                                             std::size_t cap = 150) {
    if (cap == 0) fail(ErrorCode::invalid_argument, "history cap must be positive");
    if (messages.empty()) return {};

    std::size_t begin = 0;
    bool keep_system = messages.front().role == Role::system;
    if (keep_system) begin = 1;

    // Group the remainder into units.
    struct Unit {
        std::size_t first;
        std::size_t count;
    };
    std::vector<Unit> units;
    std::size_t i = begin;
    while (i < messages.size()) {
        const ChatMessage& m = messages[i];
        if (m.role == Role::tool)
            fail(ErrorCode::malformed_history,
                 "tool result at position " + std::to_string(i) + " has no preceding tool call");
        if (m.role == Role::assistant && !m.tool_calls.empty()) {
            std::set<std::string> pending;
            for (const auto& c : m.tool_calls) pending.insert(c.id);
            std::size_t j = i + 1;
            while (j < messages.size() && messages[j].role == Role::tool) {
                if (!pending.count(messages[j].tool_call_id))
                    fail(ErrorCode::malformed_history,
                         "tool result at position " + std::to_string(j) +
                             " does not answer the preceding tool call");
                pending.erase(messages[j].tool_call_id);
                ++j;
            }
            units.push_back({i, j - i});
            i = j;
        } else {
            units.push_back({i, 1});
            ++i;
        }
    }

    std::size_t budget = cap - (keep_system ? 1 : 0);

    // Keep the longest suffix of units that fits the budget.
    std::size_t total = 0;
    std::size_t first_kept = units.size();
    for (std::size_t k = units.size(); k-- > 0;) {
        if (total + units[k].count > budget) break;
        total += units[k].count;
        first_kept = k;
    }

    std::vector<ChatMessage> out;
    out.reserve(total + (keep_system ? 1 : 0));
    if (keep_system) out.push_back(messages.front());
    for (std::size_t k = first_kept; k < units.size(); ++k)
        for (std::size_t m = 0; m < units[k].count; ++m)
            out.push_back(messages[units[k].first + m]);
    return out;
}

}  // namespace crew
