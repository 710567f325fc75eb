#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "crew/bus.hpp"
#include "crew/core.hpp"

namespace crew {

struct Score {
    double value = 0.0;
    std::string verdict;
};

// Maps a deliverable to its evaluated score. Scripted evaluators back the
// tests; external-command evaluators wrap real harnesses.
using Evaluator = std::function<Score(const std::string& deliverable)>;

struct TaskOutcome {
    std::string deliverable;
    Score score;
    std::string finalized_by;  // agent name, or "system" when force-finalize fired
};

// Seq-ordered interleaving of all agents' local chains and cross-agent
// events for one task.
struct Trajectory {
    std::vector<BusEvent> events;
    std::vector<std::string> agents;  // exactly the actors, minus "system"
};

inline Trajectory make_trajectory(std::vector<BusEvent> events) {
    Trajectory t;
    std::set<std::string> names;
    for (const auto& e : events)
        if (e.actor != "system") names.insert(e.actor);
    t.agents.assign(names.begin(), names.end());
    t.events = std::move(events);
    return t;
}

// One task's frozen record e = (task, trajectory, outcome).
struct Experience {
    std::string episode_id;
    std::int64_t team_version = 0;
    std::string task;
    Trajectory trajectory;
    TaskOutcome outcome;
};

using ExperiencePtr = std::shared_ptr<const Experience>;

inline ExperiencePtr freeze(std::vector<BusEvent> events, std::string task, TaskOutcome outcome,
                            std::string episode_id, std::int64_t team_version) {
    auto e = std::make_shared<Experience>();
    e->episode_id = std::move(episode_id);
    e->team_version = team_version;
    e->task = std::move(task);
    e->trajectory = make_trajectory(std::move(events));
    e->outcome = std::move(outcome);
    return e;
}

// ---------------------------------------------------------------------------
// Local traces

// The projection of a trajectory onto one agent: the order-preserving
// subsequence of events that involve it. A message involves both endpoints,
// so it appears in the sender's and the recipient's local traces.
struct LocalTrace {
    std::string agent;
    std::vector<BusEvent> events;
};

inline bool event_involves(const BusEvent& e, const std::string& agent) {
    return e.actor == agent || e.recipient == agent;
}

inline LocalTrace local_trace(const Trajectory& t, const std::string& agent) {
    if (std::find(t.agents.begin(), t.agents.end(), agent) == t.agents.end())
        fail(ErrorCode::unknown_agent, "agent '" + agent + "' did not participate");
    LocalTrace lt;
    lt.agent = agent;
    for (const auto& e : t.events)
        if (event_involves(e, agent)) lt.events.push_back(e);
    return lt;
}

// One analyzer-visible step: agent name, full input, full output.
struct StepRecord {
    int index = 0;  // dense from 1
    std::string agent;
    std::string input;
    std::string output;
};

// Collapses a trajectory into the step space used for attribution: each
// model_call/model_result pair becomes one step, in seq order.
inline std::vector<StepRecord> trajectory_steps(const Trajectory& t) {
    std::vector<StepRecord> steps;
    std::map<std::string, const BusEvent*> open_calls;
    for (const auto& e : t.events) {
        if (e.kind == EventKind::model_call) {
            open_calls[e.actor] = &e;
        } else if (e.kind == EventKind::model_result) {
            StepRecord s;
            s.index = static_cast<int>(steps.size()) + 1;
            s.agent = e.actor;
            auto it = open_calls.find(e.actor);
            if (it != open_calls.end()) {
                s.input = it->second->payload.value("messages", json::array()).dump();
                open_calls.erase(it);
            }
            json out;
            out["text"] = e.payload.value("text", "");
            if (e.payload.contains("tool_calls")) out["tool_calls"] = e.payload["tool_calls"];
            s.output = out.dump();
            steps.push_back(std::move(s));
        }
    }
    return steps;
}

// ---------------------------------------------------------------------------
// Annotated traces (external failure-attribution corpora)

// A time-ordered list of step records plus a ground-truth
// (mistake_agent, mistake_step) annotation.
struct AnnotatedTrace {
    std::vector<StepRecord> steps;
    std::string mistake_agent;
    int mistake_step = 0;
    std::int64_t est_tokens = 0;  // chars/4 heuristic, used for split bucketing

    bool long_context() const { return est_tokens > 128'000; }
};

// File format: JSON lines. First line is the header
//   {"mistake_agent": "...", "mistake_step": N}
// followed by one {"agent", "input", "output"} record per line, in step
// order.
inline AnnotatedTrace parse_annotated(std::istream& in, const std::string& where) {
    AnnotatedTrace t;
    std::string line;
    int lineno = 0;
    auto parse_line = [&](const std::string& text) {
        try {
            return json::parse(text);
        } catch (const json::exception& e) {
            fail(ErrorCode::schema_error,
                 where + ":" + std::to_string(lineno) + ": " + e.what());
        }
    };
    bool have_header = false;
    std::int64_t chars = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (trim(line).empty()) continue;
        json j = parse_line(line);
        if (!have_header) {
            if (!j.contains("mistake_agent") || !j.contains("mistake_step"))
                fail(ErrorCode::schema_error,
                     where + ":1: header must carry mistake_agent and mistake_step");
            t.mistake_agent = j.at("mistake_agent").get<std::string>();
            t.mistake_step = j.at("mistake_step").get<int>();
            have_header = true;
            continue;
        }
        StepRecord s;
        s.index = static_cast<int>(t.steps.size()) + 1;
        for (const char* field : {"agent", "input", "output"})
            if (!j.contains(field))
                fail(ErrorCode::schema_error, where + ":" + std::to_string(lineno) +
                                                  ": record missing field '" + field + "'");
        s.agent = j.at("agent").get<std::string>();
        s.input = j.at("input").get<std::string>();
        s.output = j.at("output").get<std::string>();
        chars += static_cast<std::int64_t>(s.input.size() + s.output.size());
        t.steps.push_back(std::move(s));
    }
    if (!have_header) fail(ErrorCode::schema_error, where + ": empty trace file");
    if (t.steps.empty()) fail(ErrorCode::schema_error, where + ": no step records");
    if (t.mistake_step < 1 || t.mistake_step > static_cast<int>(t.steps.size()))
        fail(ErrorCode::schema_error,
             where + ": ground-truth step " + std::to_string(t.mistake_step) +
                 " outside 1.." + std::to_string(t.steps.size()));
    t.est_tokens = (chars + 3) / 4;
    return t;
}

inline AnnotatedTrace import_annotated(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) fail(ErrorCode::schema_error, "cannot open " + path.string());
    return parse_annotated(in, path.filename().string());
}

// ---------------------------------------------------------------------------
// Experience serialization: one JSON record per line. Line 1 is the episode
// header, every further line is one bus event.

inline constexpr int kTraceFormatVersion = 2;

inline std::string experience_to_string(const Experience& e) {
    json header{{"format_version", kTraceFormatVersion},
                {"episode_id", e.episode_id},
                {"team_version", e.team_version},
                {"task", e.task},
                {"agents", e.trajectory.agents},
                {"outcome",
                 {{"deliverable", e.outcome.deliverable},
                  {"score", e.outcome.score.value},
                  {"verdict", e.outcome.score.verdict},
                  {"finalized_by", e.outcome.finalized_by}}}};
    std::string out = header.dump() + "\n";
    for (const auto& ev : e.trajectory.events) out += json(ev).dump() + "\n";
    return out;
}

inline Experience experience_from_string(const std::string& text, const std::string& where) {
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    Experience e;
    bool have_header = false;
    std::vector<BusEvent> events;
    while (std::getline(in, line)) {
        ++lineno;
        if (trim(line).empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& err) {
            fail(ErrorCode::schema_error,
                 where + ": record at line " + std::to_string(lineno) + ": " + err.what());
        }
        try {
            if (!have_header) {
                e.episode_id = j.at("episode_id").get<std::string>();
                e.team_version = j.value("team_version", std::int64_t{0});
                e.task = j.value("task", "");
                const json out = j.value("outcome", json::object());
                e.outcome.deliverable = out.value("deliverable", "");
                e.outcome.score.value = out.value("score", 0.0);
                e.outcome.score.verdict = out.value("verdict", "");
                e.outcome.finalized_by = out.value("finalized_by", "unknown");
                have_header = true;
            } else {
                events.push_back(j.get<BusEvent>());
            }
        } catch (const json::exception& err) {
            fail(ErrorCode::schema_error,
                 where + ": record at line " + std::to_string(lineno) + ": " + err.what());
        }
    }
    if (!have_header) fail(ErrorCode::schema_error, where + ": missing header record");
    for (std::size_t i = 0; i < events.size(); ++i)
        if (events[i].seq != static_cast<std::int64_t>(i))
            fail(ErrorCode::schema_error, where + ": record at line " + std::to_string(i + 2) +
                                              ": expected seq " + std::to_string(i) + ", got " +
                                              std::to_string(events[i].seq));
    e.trajectory = make_trajectory(std::move(events));
    return e;
}

inline void export_experience(const Experience& e, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorCode::persist_failure, "cannot write " + path.string());
    std::string text = experience_to_string(e);
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    if (!out) fail(ErrorCode::persist_failure, "short write to " + path.string());
}

inline Experience load_experience(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorCode::schema_error, "cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return experience_from_string(ss.str(), path.filename().string());
}

// Write-once persistence for frozen experiences. Re-freezing the same
// episode with identical bytes is a no-op; diverging bytes are rejected so a
// frozen record can never be silently rewritten.
class ExperienceStore {
public:
    explicit ExperienceStore(std::filesystem::path dir) : dir_(std::move(dir)) {
        std::filesystem::create_directories(dir_);
    }

    std::filesystem::path path_for(const std::string& episode_id) const {
        return dir_ / (episode_id + ".trace");
    }

    ExperiencePtr freeze(std::vector<BusEvent> events, std::string task, TaskOutcome outcome,
                         std::string episode_id, std::int64_t team_version) {
        auto e = crew::freeze(std::move(events), std::move(task), std::move(outcome),
                              std::move(episode_id), team_version);
        persist(*e);
        return e;
    }

    void persist(const Experience& e) {
        auto p = path_for(e.episode_id);
        std::string text = experience_to_string(e);
        if (std::filesystem::exists(p)) {
            if (read_file(p) != text)
                fail(ErrorCode::immutable_experience,
                     "episode " + e.episode_id + " is already frozen with different content");
            return;
        }
        std::ofstream out(p, std::ios::binary);
        if (!out) fail(ErrorCode::persist_failure, "cannot write " + p.string());
        out.write(text.data(), static_cast<std::streamsize>(text.size()));
    }

    Experience load(const std::string& episode_id) const { return load_experience(path_for(episode_id)); }

private:
    std::filesystem::path dir_;
};

}  // namespace crew
