#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <utility>

#include "crew/chat.hpp"
#include "crew/core.hpp"

namespace crew {

// Exponential back-off: delay before retry n is base * 2^(n-1), capped.
struct RetryPolicy {
    int max_attempts = 5;
    double base_delay_s = 1.5;
    double max_delay_s = 60.0;

    // n is 1-based (delay slept after the n-th failed attempt).
    double delay_for_attempt_s(int n) const {
        double d = base_delay_s * std::pow(2.0, n - 1);
        return std::min(d, max_delay_s);
    }
};

// Prices are kept as integer micro-dollars per million tokens so cost is a
// pure integer computation: exact and identical across runs.
class CostModel {
public:
    void set_price(const std::string& model, double input_per_mtok_dollars,
                   double output_per_mtok_dollars) {
        if (input_per_mtok_dollars < 0 || output_per_mtok_dollars < 0)
            fail(ErrorCode::invalid_argument, "negative price for model " + model);
        prices_[model] = {dollars(input_per_mtok_dollars), dollars(output_per_mtok_dollars)};
    }

    bool has(const std::string& model) const { return prices_.count(model) != 0; }

    // cost = in_tokens*p_in + out_tokens*p_out with prices per 1M tokens,
    // rounded half-up to micro-dollars.
    Money estimate(const Usage& usage, const std::string& model) const {
        auto it = prices_.find(model);
        if (it == prices_.end())
            fail(ErrorCode::unknown_model, "no price configured for model '" + model + "'");
        if (usage.input_tokens < 0 || usage.output_tokens < 0)
            fail(ErrorCode::invalid_argument, "negative token count");
        using i128 = __int128;
        i128 micros_x_mtok = i128(usage.input_tokens) * it->second.first +
                             i128(usage.output_tokens) * it->second.second;
        i128 q = (micros_x_mtok + 500'000) / 1'000'000;  // round half-up
        return static_cast<Money>(q);
    }

private:
    // (input, output) micro-dollars per million tokens
    std::map<std::string, std::pair<Money, Money>> prices_;
};

inline Money estimate_cost(const Usage& usage, const std::string& model, const CostModel& cm) {
    return cm.estimate(usage, model);
}

class ModelGateway {
public:
    virtual ~ModelGateway() = default;
    virtual ChatResponse complete(const ChatRequest& req) = 0;
};

// Runs fn up to policy.max_attempts times, sleeping the back-off schedule
// between attempts. fn must throw Error(non_retryable) for failures that
// should not be retried; any other Error counts as transient.
template <typename Fn>
auto retry_call(const RetryPolicy& policy, Clock& clock, Fn&& fn) -> decltype(fn()) {
    std::string last_error;
    for (int attempt = 1; attempt <= policy.max_attempts; ++attempt) {
        try {
            return fn();
        } catch (const Error& e) {
            if (e.code() == ErrorCode::non_retryable) throw;
            last_error = e.what();
        }
        if (attempt < policy.max_attempts) {
            double d = policy.delay_for_attempt_s(attempt);
            clock.sleep_for_ms(static_cast<std::int64_t>(d * 1000.0 + 0.5));
        }
    }
    fail(ErrorCode::gateway_unavailable,
         "gave up after " + std::to_string(policy.max_attempts) + " attempts; last: " + last_error);
}

// Deterministic test backend. Responses are keyed by (caller, step) where
// step counts that caller's calls starting at 1; per-caller and global
// defaults back the table. A miss with no default throws ScriptExhausted so
// test bugs surface loudly instead of silently looping.
class ScriptedGateway final : public ModelGateway {
public:
    ScriptedGateway() = default;

    void add(const std::string& caller, int step, ChatResponse resp) {
        std::lock_guard lk(mu_);
        entries_[{caller, step}] = std::move(resp);
    }
    void set_default(const std::string& caller, ChatResponse resp) {
        std::lock_guard lk(mu_);
        caller_defaults_[caller] = std::move(resp);
    }
    void set_default(ChatResponse resp) {
        std::lock_guard lk(mu_);
        any_default_ = std::move(resp);
    }

    ChatResponse complete(const ChatRequest& req) override {
        std::lock_guard lk(mu_);
        int step = ++counters_[req.caller];
        const ChatResponse* found = nullptr;
        if (auto it = entries_.find({req.caller, step}); it != entries_.end()) found = &it->second;
        else if (auto d = caller_defaults_.find(req.caller); d != caller_defaults_.end())
            found = &d->second;
        else if (any_default_) found = &*any_default_;
        if (!found)
            fail(ErrorCode::script_exhausted,
                 "no scripted response for (" + req.caller + ", step " + std::to_string(step) + ")");
        ChatResponse resp = *found;
        // Tool-disable guarantee: a request without tool schemas can never
        // yield tool calls from this backend.
        if (!req.tools_enabled()) resp.tool_calls.clear();
        return resp;
    }

    int calls_for(const std::string& caller) const {
        std::lock_guard lk(mu_);
        auto it = counters_.find(caller);
        return it == counters_.end() ? 0 : it->second;
    }

    // Script file shape:
    //   { "defaults": {"any": {...}, "by_agent": {"planner": {...}}},
    //     "entries": [{"agent": "planner", "step": 1, "response": {...}}] }
    // where a response object is {"text", "tool_calls", "usage"}.
    static ScriptedGateway from_json(const json& j) {
        ScriptedGateway gw;
        if (j.contains("defaults")) {
            const auto& d = j.at("defaults");
            if (d.contains("any")) gw.set_default(d.at("any").get<ChatResponse>());
            if (d.contains("by_agent"))
                for (auto& [agent, resp] : d.at("by_agent").items())
                    gw.set_default(agent, resp.get<ChatResponse>());
        }
        for (const auto& e : j.value("entries", json::array())) {
            gw.add(e.at("agent").get<std::string>(), e.at("step").get<int>(),
                   e.at("response").get<ChatResponse>());
        }
        return gw;
    }

    static ScriptedGateway from_file(const std::string& path) {
        std::ifstream in(path);
        if (!in) fail(ErrorCode::schema_error, "cannot open script file " + path);
        json j;
        try {
            in >> j;
        } catch (const json::exception& e) {
            fail(ErrorCode::schema_error, "script file " + path + ": " + e.what());
        }
        return from_json(j);
    }

private:
    mutable std::mutex mu_;
    std::map<std::pair<std::string, int>, ChatResponse> entries_;
    std::map<std::string, ChatResponse> caller_defaults_;
    std::optional<ChatResponse> any_default_;
    std::map<std::string, int> counters_;
};

}  // namespace crew
