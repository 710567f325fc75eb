#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <mutex>
#include <stdexcept>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

namespace crew {

// Monetary amounts are integer micro-dollars so cost accounting is exact.
using Money = std::int64_t;

constexpr Money kMicrosPerDollar = 1'000'000;

inline Money dollars(double d) {
    return static_cast<Money>(d >= 0 ? d * kMicrosPerDollar + 0.5 : d * kMicrosPerDollar - 0.5);
}

inline double to_dollars(Money m) { return static_cast<double>(m) / kMicrosPerDollar; }

enum class ErrorCode {
    // scaffold
    missing_manifest,
    malformed_agent_dir,
    duplicate_agent_name,
    unknown_skill,
    persist_failure,
    // runtime
    unknown_agent,
    already_active,
    not_active,
    unknown_recipient,
    already_finalized,
    malformed_history,
    evaluator_failure,
    // traces
    schema_error,
    immutable_experience,
    // gateway
    gateway_unavailable,
    non_retryable,
    script_exhausted,
    unknown_model,
    // attribution / evolution
    parse_failure,
    length_mismatch,
    reflection_timeout,
    gate_rejected,
    // general
    invalid_argument,
};

inline const char* error_code_name(ErrorCode c) {
    switch (c) {
        case ErrorCode::missing_manifest: return "MissingManifest";
        case ErrorCode::malformed_agent_dir: return "MalformedAgentDir";
        case ErrorCode::duplicate_agent_name: return "DuplicateAgentName";
        case ErrorCode::unknown_skill: return "UnknownSkill";
        case ErrorCode::persist_failure: return "PersistFailure";
        case ErrorCode::unknown_agent: return "UnknownAgent";
        case ErrorCode::already_active: return "AlreadyActive";
        case ErrorCode::not_active: return "NotActive";
        case ErrorCode::unknown_recipient: return "UnknownRecipient";
        case ErrorCode::already_finalized: return "AlreadyFinalized";
        case ErrorCode::malformed_history: return "MalformedHistory";
        case ErrorCode::evaluator_failure: return "EvaluatorFailure";
        case ErrorCode::schema_error: return "SchemaError";
        case ErrorCode::immutable_experience: return "ImmutableExperience";
        case ErrorCode::gateway_unavailable: return "GatewayUnavailable";
        case ErrorCode::non_retryable: return "NonRetryable";
        case ErrorCode::script_exhausted: return "ScriptExhausted";
        case ErrorCode::unknown_model: return "UnknownModel";
        case ErrorCode::parse_failure: return "ParseFailure";
        case ErrorCode::length_mismatch: return "LengthMismatch";
        case ErrorCode::reflection_timeout: return "ReflectionTimeout";
        case ErrorCode::gate_rejected: return "GateRejected";
        case ErrorCode::invalid_argument: return "InvalidArgument";
    }
    return "UnknownError";
}

class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& message)
        : std::runtime_error(std::string(error_code_name(code)) + ": " + message), code_(code) {}

    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) {
    throw Error(code, message);
}

// Clock abstraction. Production code uses SystemClock; tests use FakeClock so
// retry delays, budgets, and event timestamps are deterministic.
//
// stamp_ms() is the event-timestamp source: a FakeClock advances by its tick
// on every stamp, which gives reproducible, strictly ordered timestamps.
// now_ms() never has side effects.
class Clock {
public:
    virtual ~Clock() = default;
    virtual std::int64_t now_ms() = 0;
    virtual std::int64_t stamp_ms() { return now_ms(); }
    virtual void sleep_for_ms(std::int64_t ms) = 0;
};

class SystemClock final : public Clock {
public:
    std::int64_t now_ms() override {
        using namespace std::chrono;
        return duration_cast<milliseconds>(steady_clock::now().time_since_epoch()).count();
    }
    void sleep_for_ms(std::int64_t ms) override {
        std::this_thread::sleep_for(std::chrono::milliseconds(ms));
    }
};

class FakeClock final : public Clock {
public:
    explicit FakeClock(std::int64_t start_ms = 0, std::int64_t tick_ms = 1)
        : now_(start_ms), tick_(tick_ms) {}

    std::int64_t now_ms() override {
        std::lock_guard lk(mu_);
        return now_;
    }
    // Each stamp returns the current time, then advances by the tick.
    std::int64_t stamp_ms() override {
        std::lock_guard lk(mu_);
        std::int64_t t = now_;
        now_ += tick_;
        return t;
    }
    void sleep_for_ms(std::int64_t ms) override {
        std::lock_guard lk(mu_);
        now_ += ms;
        sleeps_.push_back(ms);
    }
    void advance_ms(std::int64_t ms) {
        std::lock_guard lk(mu_);
        now_ += ms;
    }
    std::vector<std::int64_t> sleeps() const {
        std::lock_guard lk(mu_);
        return sleeps_;
    }
    void set_tick_ms(std::int64_t tick) {
        std::lock_guard lk(mu_);
        tick_ = tick;
    }

private:
    mutable std::mutex mu_;
    std::int64_t now_;
    std::int64_t tick_;
    std::vector<std::int64_t> sleeps_;
};

// Identifiers destined for directory or file names: start alphanumeric, then
// alphanumerics, '-' or '_'. Rejects path separators, dots and empty names.
inline bool is_filesystem_safe_name(std::string_view name) {
    if (name.empty() || name.size() > 128) return false;
    auto alnum = [](char c) {
        return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9');
    };
    if (!alnum(name.front())) return false;
    for (char c : name) {
        if (!alnum(c) && c != '-' && c != '_') return false;
    }
    return true;
}

inline std::string trim(std::string_view s) {
    size_t b = s.find_first_not_of(" \t\r\n");
    if (b == std::string_view::npos) return {};
    size_t e = s.find_last_not_of(" \t\r\n");
    return std::string(s.substr(b, e - b + 1));
}

inline std::vector<std::string> split_lines(std::string_view text) {
    std::vector<std::string> lines;
    size_t pos = 0;
    while (pos <= text.size()) {
        size_t nl = text.find('\n', pos);
        if (nl == std::string_view::npos) {
            lines.emplace_back(text.substr(pos));
            break;
        }
        lines.emplace_back(text.substr(pos, nl - pos));
        pos = nl + 1;
    }
    return lines;
}

}  // namespace crew
