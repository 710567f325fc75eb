#pragma once

#include <condition_variable>
#include <deque>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <yaml-cpp/yaml.h>

#include "crew/chat.hpp"
#include "crew/core.hpp"

namespace crew {

enum class EventKind { message, tool_call, tool_result, lifecycle, model_call, model_result };

inline const char* event_kind_name(EventKind k) {
    switch (k) {
        case EventKind::message: return "message";
        case EventKind::tool_call: return "tool_call";
        case EventKind::tool_result: return "tool_result";
        case EventKind::lifecycle: return "lifecycle";
        case EventKind::model_call: return "model_call";
        case EventKind::model_result: return "model_result";
    }
    return "lifecycle";
}

inline EventKind event_kind_from_name(std::string_view s) {
    if (s == "message") return EventKind::message;
    if (s == "tool_call") return EventKind::tool_call;
    if (s == "tool_result") return EventKind::tool_result;
    if (s == "lifecycle") return EventKind::lifecycle;
    if (s == "model_call") return EventKind::model_call;
    if (s == "model_result") return EventKind::model_result;
    fail(ErrorCode::schema_error, "unknown event kind '" + std::string(s) + "'");
}

struct BusEvent {
    std::int64_t seq = 0;
    std::int64_t ts_ms = 0;
    EventKind kind = EventKind::lifecycle;
    std::string actor;      // agent name or "system"
    std::string recipient;  // messages only; empty otherwise
    json payload = json::object();
    Money cost = 0;
};

inline void to_json(json& j, const BusEvent& e) {
    j = json{{"seq", e.seq},       {"ts", e.ts_ms},
             {"kind", event_kind_name(e.kind)}, {"actor", e.actor},
             {"payload", e.payload}, {"cost", e.cost}};
    if (!e.recipient.empty()) j["recipient"] = e.recipient;
}

inline void from_json(const json& j, BusEvent& e) {
    e.seq = j.at("seq").get<std::int64_t>();
    e.ts_ms = j.value("ts", std::int64_t{0});
    e.kind = event_kind_from_name(j.at("kind").get<std::string>());
    e.actor = j.value("actor", "system");
    e.recipient = j.value("recipient", "");
    e.payload = j.value("payload", json::object());
    e.cost = j.value("cost", Money{0});  // older traces carry no cost field
}

// ---------------------------------------------------------------------------
// Budgets

enum class BudgetKind { seconds, messages, cost };

inline const char* budget_kind_name(BudgetKind k) {
    switch (k) {
        case BudgetKind::seconds: return "max_seconds";
        case BudgetKind::messages: return "max_messages";
        case BudgetKind::cost: return "max_cost";
    }
    return "max_cost";
}

struct Budget {
    std::int64_t max_seconds = 0;
    std::int64_t max_messages = 0;
    Money max_cost = 0;

    std::int64_t spent_seconds = 0;
    std::int64_t spent_messages = 0;
    Money spent_cost = 0;

    std::optional<BudgetKind> exhausted_kind() const {
        if (max_seconds > 0 && spent_seconds >= max_seconds) return BudgetKind::seconds;
        if (max_messages > 0 && spent_messages >= max_messages) return BudgetKind::messages;
        if (max_cost > 0 && spent_cost >= max_cost) return BudgetKind::cost;
        return std::nullopt;
    }
    bool exhausted() const { return exhausted_kind().has_value(); }
};

// Accumulates one event into the running totals. Only message events count
// toward max_messages; tool and model traffic counts toward cost only.
inline Budget& charge(Budget& budget, const BusEvent& event) {
    if (event.cost < 0) fail(ErrorCode::invalid_argument, "negative event cost");
    budget.spent_cost += event.cost;
    if (event.kind == EventKind::message) budget.spent_messages += 1;
    return budget;
}

// Named budget profiles (seconds / messages / dollars).
inline std::optional<Budget> builtin_budget_profile(const std::string& name) {
    auto mk = [](std::int64_t s, std::int64_t m, double c) {
        Budget b;
        b.max_seconds = s;
        b.max_messages = m;
        b.max_cost = dollars(c);
        return b;
    };
    if (name == "swe-pro") return mk(1800, 600, 50);
    if (name == "beyond-swe") return mk(1800, 600, 30);
    if (name == "gaia") return mk(600, 300, 30);
    if (name == "locobench") return mk(1200, 400, 30);
    if (name == "loca") return mk(3200, 600, 150);
    if (name == "research-rubrics") return mk(1800, 600, 50);
    return std::nullopt;
}

// Profile config file: a `profiles:` map of name -> {max_seconds,
// max_messages, max_cost}.
inline std::map<std::string, Budget> load_budget_profiles(const std::string& path) {
    std::map<std::string, Budget> out;
    YAML::Node doc;
    try {
        doc = YAML::LoadFile(path);
    } catch (const YAML::Exception& e) {
        fail(ErrorCode::schema_error, "budget config " + path + ": " + e.what());
    }
    YAML::Node profiles = doc["profiles"] ? doc["profiles"] : doc;
    for (const auto& kv : profiles) {
        Budget b;
        const auto& v = kv.second;
        if (v["max_seconds"]) b.max_seconds = v["max_seconds"].as<std::int64_t>();
        if (v["max_messages"]) b.max_messages = v["max_messages"].as<std::int64_t>();
        if (v["max_cost"]) b.max_cost = dollars(v["max_cost"].as<double>());
        out[kv.first.as<std::string>()] = b;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Mailboxes and the bus

struct Delivery {
    std::string from;
    std::string body;
    std::int64_t seq = 0;
};

class Mailbox {
public:
    void push(Delivery d) {
        {
            std::lock_guard lk(mu_);
            queue_.push_back(std::move(d));
        }
        cv_.notify_all();
    }

    // Recruitment briefs jump the queue so they are the first thing a
    // freshly started agent reads.
    void push_front(Delivery d) {
        {
            std::lock_guard lk(mu_);
            queue_.push_front(std::move(d));
        }
        cv_.notify_all();
    }

    std::vector<Delivery> drain() {
        std::lock_guard lk(mu_);
        std::vector<Delivery> out(queue_.begin(), queue_.end());
        queue_.clear();
        return out;
    }

    bool empty() const {
        std::lock_guard lk(mu_);
        return queue_.empty();
    }

    // Returns once mail is available or the (real-time) poll deadline passes.
    bool wait_nonempty_for_ms(std::int64_t ms) {
        std::unique_lock lk(mu_);
        return cv_.wait_for(lk, std::chrono::milliseconds(ms), [&] { return !queue_.empty(); });
    }

    void notify() { cv_.notify_all(); }

private:
    mutable std::mutex mu_;
    std::condition_variable cv_;
    std::deque<Delivery> queue_;
};

// Append-only event log. The bus is the single serialization point of an
// episode: one appender at a time, gap-free seq numbering, message delivery
// into the recipient mailbox under the same lock so per-pair delivery order
// equals append order.
class Bus {
public:
    explicit Bus(Clock& clock) : clock_(clock) { start_ms_ = clock_.now_ms(); }

    void set_budget(Budget b) {
        std::lock_guard lk(mu_);
        budget_ = b;
    }

    void add_mailbox(const std::string& agent) {
        std::lock_guard lk(mu_);
        mailboxes_[agent];  // default-construct
    }

    Mailbox* mailbox(const std::string& agent) {
        std::lock_guard lk(mu_);
        auto it = mailboxes_.find(agent);
        return it == mailboxes_.end() ? nullptr : &it->second;
    }

    std::int64_t append(EventKind kind, const std::string& actor, const std::string& recipient,
                        json payload, Money cost = 0) {
        std::lock_guard lk(mu_);
        Mailbox* mb = nullptr;
        if (kind == EventKind::message) {
            auto it = mailboxes_.find(recipient);
            if (it == mailboxes_.end())
                fail(ErrorCode::unknown_recipient, "no mailbox for '" + recipient + "'");
            mb = &it->second;
        }
        BusEvent e;
        e.seq = static_cast<std::int64_t>(events_.size());
        e.ts_ms = clock_.stamp_ms();
        e.kind = kind;
        e.actor = actor;
        e.recipient = recipient;
        e.payload = std::move(payload);
        e.cost = cost;
        charge(budget_, e);
        budget_.spent_seconds = (e.ts_ms - start_ms_) / 1000;
        if (mb) mb->push({actor, e.payload.value("body", ""), e.seq});
        events_.push_back(std::move(e));
        return events_.back().seq;
    }

    std::vector<BusEvent> events() const {
        std::lock_guard lk(mu_);
        return events_;
    }

    std::size_t size() const {
        std::lock_guard lk(mu_);
        return events_.size();
    }

    Budget budget() const {
        std::lock_guard lk(mu_);
        return budget_;
    }

    // Refreshes the wall-clock component and reports exhaustion.
    std::optional<BudgetKind> poll_budget() {
        std::lock_guard lk(mu_);
        budget_.spent_seconds = (clock_.now_ms() - start_ms_) / 1000;
        return budget_.exhausted_kind();
    }

    std::int64_t start_ms() const { return start_ms_; }

private:
    Clock& clock_;
    mutable std::mutex mu_;
    std::vector<BusEvent> events_;
    std::map<std::string, Mailbox> mailboxes_;
    Budget budget_;
    std::int64_t start_ms_ = 0;
};

}  // namespace crew
