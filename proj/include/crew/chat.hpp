#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "crew/core.hpp"

namespace crew {

using json = nlohmann::json;

enum class Role { system, user, assistant, tool };

inline const char* role_name(Role r) {
    switch (r) {
        case Role::system: return "system";
        case Role::user: return "user";
        case Role::assistant: return "assistant";
        case Role::tool: return "tool";
    }
    return "user";
}

inline Role role_from_name(std::string_view s) {
    if (s == "system") return Role::system;
    if (s == "assistant") return Role::assistant;
    if (s == "tool") return Role::tool;
    if (s == "user") return Role::user;
    fail(ErrorCode::schema_error, "unknown chat role '" + std::string(s) + "'");
}

struct ToolCall {
    std::string id;
    std::string name;
    json arguments = json::object();
};

struct ToolSchema {
    std::string name;
    std::string description;
    json parameters = json::object();
};

struct ChatMessage {
    Role role = Role::user;
    std::string content;
    std::vector<ToolCall> tool_calls;  // assistant messages only
    std::string tool_call_id;          // tool results only

    static ChatMessage system(std::string text) { return {Role::system, std::move(text), {}, {}}; }
    static ChatMessage user(std::string text) { return {Role::user, std::move(text), {}, {}}; }
    static ChatMessage assistant(std::string text, std::vector<ToolCall> calls = {}) {
        return {Role::assistant, std::move(text), std::move(calls), {}};
    }
    static ChatMessage tool_result(std::string call_id, std::string text) {
        return {Role::tool, std::move(text), {}, std::move(call_id)};
    }
};

struct Usage {
    std::int64_t input_tokens = 0;
    std::int64_t output_tokens = 0;
};

struct ChatRequest {
    std::string model;
    std::vector<ChatMessage> messages;
    // Absent tool_schemas means tools are disabled for this call; the
    // response must then contain no tool calls.
    std::optional<std::vector<ToolSchema>> tool_schemas;
    double temperature = 0.2;
    int max_output_tokens = 32768;
    // Identity of the calling loop; the scripted backend keys on it.
    std::string caller = "default";
    int timeout_seconds = 600;

    bool tools_enabled() const { return tool_schemas.has_value() && !tool_schemas->empty(); }
};

struct ChatResponse {
    std::string text;
    std::vector<ToolCall> tool_calls;
    Usage usage;
};

inline void to_json(json& j, const ToolCall& t) {
    j = json{{"id", t.id}, {"name", t.name}, {"arguments", t.arguments}};
}

inline void from_json(const json& j, ToolCall& t) {
    t.id = j.value("id", "");
    t.name = j.at("name").get<std::string>();
    t.arguments = j.value("arguments", json::object());
}

inline void to_json(json& j, const Usage& u) {
    j = json{{"input_tokens", u.input_tokens}, {"output_tokens", u.output_tokens}};
}

inline void from_json(const json& j, Usage& u) {
    u.input_tokens = j.value("input_tokens", std::int64_t{0});
    u.output_tokens = j.value("output_tokens", std::int64_t{0});
}

inline void to_json(json& j, const ChatMessage& m) {
    j = json{{"role", role_name(m.role)}, {"content", m.content}};
    if (!m.tool_calls.empty()) j["tool_calls"] = m.tool_calls;
    if (!m.tool_call_id.empty()) j["tool_call_id"] = m.tool_call_id;
}

inline void from_json(const json& j, ChatMessage& m) {
    m.role = role_from_name(j.at("role").get<std::string>());
    m.content = j.value("content", "");
    m.tool_calls = j.value("tool_calls", std::vector<ToolCall>{});
    m.tool_call_id = j.value("tool_call_id", "");
}

inline void to_json(json& j, const ChatResponse& r) {
    j = json{{"text", r.text}, {"usage", r.usage}};
    if (!r.tool_calls.empty()) j["tool_calls"] = r.tool_calls;
}

inline void from_json(const json& j, ChatResponse& r) {
    r.text = j.value("text", "");
    r.tool_calls = j.value("tool_calls", std::vector<ToolCall>{});
    if (j.contains("usage")) r.usage = j.at("usage").get<Usage>();
}

}  // namespace crew
