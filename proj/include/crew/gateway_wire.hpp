#pragma once

#include <cstdlib>
#include <functional>
#include <string>

#include <httplib.h>

#include "crew/gateway.hpp"

namespace crew {

// One HTTP exchange as seen by the retry layer.
struct HttpReply {
    bool transport_error = false;  // connect/timeout/DNS class failures
    int status = 0;
    std::string body;
};

using HttpTransport = std::function<HttpReply(const std::string& path, const std::string& body,
                                              int timeout_seconds)>;

// Chat-completion wire client (role-tagged messages, tool schema array,
// structured tool-call responses). Endpoint and credentials come from the
// environment: CREW_API_BASE, CREW_API_KEY, CREW_API_PATH.
class WireGateway final : public ModelGateway {
public:
    WireGateway(Clock& clock, RetryPolicy policy = {}, HttpTransport transport = nullptr,
                std::string base_url = "", std::string api_key = "", std::string path = "")
        : clock_(clock), policy_(policy), transport_(std::move(transport)),
          base_url_(std::move(base_url)), api_key_(std::move(api_key)), path_(std::move(path)) {
        if (base_url_.empty())
            if (const char* e = std::getenv("CREW_API_BASE")) base_url_ = e;
        if (api_key_.empty())
            if (const char* e = std::getenv("CREW_API_KEY")) api_key_ = e;
        if (path_.empty()) {
            const char* e = std::getenv("CREW_API_PATH");
            path_ = e ? e : "/v1/chat/completions";
        }
    }

    ChatResponse complete(const ChatRequest& req) override {
        json body = encode_request(req);
        std::string payload = body.dump();
        return retry_call(policy_, clock_, [&] {
            HttpReply reply = send(payload, req.timeout_seconds);
            if (reply.transport_error)
                fail(ErrorCode::gateway_unavailable, "transport failure");
            if (reply.status == 429 || reply.status == 408 || reply.status >= 500)
                fail(ErrorCode::gateway_unavailable,
                     "retryable status " + std::to_string(reply.status));
            if (reply.status < 200 || reply.status >= 300)
                fail(ErrorCode::non_retryable, "status " + std::to_string(reply.status) + ": " +
                                                   reply.body.substr(0, 200));
            return decode_response(reply.body, req);
        });
    }

    // Tool schemas are re-serialized on every call; nothing is cached across
    // steps.
    static json encode_request(const ChatRequest& req) {
        json messages = json::array();
        for (const auto& m : req.messages) {
            json jm{{"role", role_name(m.role)}, {"content", m.content}};
            if (!m.tool_calls.empty()) {
                json calls = json::array();
                for (const auto& c : m.tool_calls)
                    calls.push_back({{"id", c.id},
                                     {"type", "function"},
                                     {"function",
                                      {{"name", c.name}, {"arguments", c.arguments.dump()}}}});
                jm["tool_calls"] = std::move(calls);
            }
            if (!m.tool_call_id.empty()) jm["tool_call_id"] = m.tool_call_id;
            messages.push_back(std::move(jm));
        }
        json body{{"model", req.model},
                  {"messages", std::move(messages)},
                  {"temperature", req.temperature},
                  {"max_tokens", req.max_output_tokens}};
        if (req.tools_enabled()) {
            json tools = json::array();
            for (const auto& t : *req.tool_schemas)
                tools.push_back({{"type", "function"},
                                 {"function",
                                  {{"name", t.name},
                                   {"description", t.description},
                                   {"parameters", t.parameters}}}});
            body["tools"] = std::move(tools);
        }
        return body;
    }

    static ChatResponse decode_response(const std::string& body, const ChatRequest& req) {
        json j;
        try {
            j = json::parse(body);
        } catch (const json::exception& e) {
            fail(ErrorCode::gateway_unavailable, std::string("unparsable response body: ") + e.what());
        }
        ChatResponse resp;
        try {
            const json& msg = j.at("choices").at(0).at("message");
            if (msg.contains("content") && !msg.at("content").is_null())
                resp.text = msg.at("content").get<std::string>();
            if (msg.contains("tool_calls")) {
                for (const auto& c : msg.at("tool_calls")) {
                    ToolCall tc;
                    tc.id = c.value("id", "");
                    tc.name = c.at("function").at("name").get<std::string>();
                    std::string args = c.at("function").value("arguments", "{}");
                    tc.arguments = args.empty() ? json::object() : json::parse(args);
                    resp.tool_calls.push_back(std::move(tc));
                }
            }
            if (j.contains("usage")) {
                resp.usage.input_tokens = j["usage"].value("prompt_tokens", std::int64_t{0});
                resp.usage.output_tokens = j["usage"].value("completion_tokens", std::int64_t{0});
            }
        } catch (const json::exception& e) {
            fail(ErrorCode::gateway_unavailable, std::string("malformed response: ") + e.what());
        }
        // Tool calls in a response to a schema-free request are a protocol
        // violation, not something to retry into.
        if (!req.tools_enabled() && !resp.tool_calls.empty())
            fail(ErrorCode::non_retryable, "backend returned tool calls to a tool-free request");
        return resp;
    }

private:
    HttpReply send(const std::string& payload, int timeout_seconds) {
        if (transport_) return transport_(path_, payload, timeout_seconds);
        if (base_url_.empty())
            fail(ErrorCode::non_retryable, "CREW_API_BASE is not set");
        httplib::Client cli(base_url_);
        cli.set_connection_timeout(std::min(timeout_seconds, 30), 0);
        cli.set_read_timeout(timeout_seconds, 0);
        httplib::Headers headers;
        if (!api_key_.empty()) headers.emplace("Authorization", "Bearer " + api_key_);
        auto res = cli.Post(path_, headers, payload, "application/json");
        if (!res) return {true, 0, ""};
        return {false, res->status, res->body};
    }

    Clock& clock_;
    RetryPolicy policy_;
    HttpTransport transport_;
    std::string base_url_;
    std::string api_key_;
    std::string path_;
};

}  // namespace crew
