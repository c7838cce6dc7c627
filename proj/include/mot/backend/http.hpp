#pragma once

// OpenAI-compatible HTTP transport. Define CPPHTTPLIB_OPENSSL_SUPPORT (and
// link OpenSSL) to reach https endpoints.

#include <httplib.h>

#include <chrono>
#include <cstdlib>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "mot/backend/types.hpp"

namespace mot {

inline constexpr const char* api_key_env = "MOT_API_KEY";

struct RetryPolicy {
    int attempts = 3;
    std::chrono::milliseconds initial_backoff{1000};
};

struct HttpEndpoint {
    std::string origin;       // scheme://host[:port]
    std::string path_prefix;  // e.g. "/v1", no trailing slash

    static HttpEndpoint parse(const std::string& base_url) {
        const auto scheme_end = base_url.find("://");
        if (scheme_end == std::string::npos)
            throw ConfigError("base_url must include a scheme: " + base_url);
        const auto path_start = base_url.find('/', scheme_end + 3);
        HttpEndpoint ep;
        ep.origin = base_url.substr(0, path_start);
        if (path_start != std::string::npos) {
            ep.path_prefix = base_url.substr(path_start);
            while (!ep.path_prefix.empty() && ep.path_prefix.back() == '/') ep.path_prefix.pop_back();
        }
        return ep;
    }
};

namespace detail {

inline std::string api_key_from_env() {
    const char* k = std::getenv(api_key_env);
    return k ? std::string(k) : std::string{};
}

/// POSTs JSON with the retry policy: transport errors, 429 and 5xx are
/// retried with exponential backoff; other non-2xx statuses fail at once.
inline nlohmann::json post_json(const HttpEndpoint& ep, const std::string& path, const nlohmann::json& body,
                                const std::string& api_key, const RetryPolicy& retry,
                                std::chrono::seconds timeout) {
    httplib::Client client(ep.origin);
    client.set_connection_timeout(timeout);
    client.set_read_timeout(timeout);
    httplib::Headers headers;
    if (!api_key.empty()) headers.emplace("Authorization", "Bearer " + api_key);

    const std::string payload = body.dump();
    auto backoff = retry.initial_backoff;
    std::string last_error;
    const int attempts = std::max(retry.attempts, 1);
    for (int attempt = 1; attempt <= attempts; ++attempt) {
        auto res = client.Post(ep.path_prefix + path, headers, payload, "application/json");
        if (res && res->status >= 200 && res->status < 300) {
            try {
                return nlohmann::json::parse(res->body);
            } catch (const nlohmann::json::exception& e) {
                throw ProtocolError(std::string("malformed JSON from ") + path + ": " + e.what());
            }
        }
        if (res && res->status != 429 && res->status < 500)
            throw BackendError("HTTP " + std::to_string(res->status) + " from " + path + ": " + res->body);
        last_error = res ? "HTTP " + std::to_string(res->status) : "transport: " + httplib::to_string(res.error());
        if (attempt < attempts) {
            std::this_thread::sleep_for(backoff);
            backoff *= 2;
        }
    }
    throw RetriableError(path + " failed: " + last_error, attempts);
}

} // namespace detail

/// POST {base_url}/chat/completions with {model, messages, temperature, n, max_tokens, stop}.
class HttpChatBackend : public ChatBackend {
public:
    explicit HttpChatBackend(const std::string& base_url, std::string api_key = detail::api_key_from_env(),
                             RetryPolicy retry = {}, std::chrono::seconds timeout = std::chrono::seconds(120))
        : endpoint_(HttpEndpoint::parse(base_url)), api_key_(std::move(api_key)), retry_(retry), timeout_(timeout) {}

    static nlohmann::json request_body(const CompletionRequest& r) {
        nlohmann::json messages = nlohmann::json::array();
        for (const auto& m : r.messages) {
            const char* role = m.role == Role::system ? "system" : m.role == Role::user ? "user" : "assistant";
            messages.push_back({{"role", role}, {"content", m.text}});
        }
        nlohmann::json body = {{"model", r.model_id},
                               {"messages", std::move(messages)},
                               {"temperature", r.temperature},
                               {"n", r.num_samples},
                               {"max_tokens", r.max_tokens}};
        if (!r.stop_sequences.empty()) body["stop"] = r.stop_sequences;
        return body;
    }

protected:
    CompletionResult do_complete(const CompletionRequest& request) override {
        const auto doc = detail::post_json(endpoint_, "/chat/completions", request_body(request), api_key_, retry_,
                                           timeout_);
        CompletionResult out;
        try {
            const auto& choices = doc.at("choices");
            if (!choices.is_array() || choices.size() != request.num_samples)
                throw ProtocolError("expected " + std::to_string(request.num_samples) + " choices");
            out.samples.resize(choices.size());
            std::vector<bool> seen(choices.size(), false);
            for (std::size_t i = 0; i < choices.size(); ++i) {
                const auto& c = choices[i];
                const std::size_t idx = c.contains("index") ? c.at("index").get<std::size_t>() : i;
                if (idx >= choices.size() || seen[idx]) throw ProtocolError("bad choice index");
                seen[idx] = true;
                const auto& content = c.at("message").at("content");
                out.samples[idx] = content.is_null() ? std::string{} : content.get<std::string>();
            }
            if (doc.contains("usage") && doc["usage"].is_object()) {
                out.usage = TokenUsage{doc["usage"].value("prompt_tokens", std::size_t{0}),
                                       doc["usage"].value("completion_tokens", std::size_t{0})};
            }
        } catch (const nlohmann::json::exception& e) {
            throw ProtocolError(std::string("unexpected chat payload: ") + e.what());
        }
        return out;
    }

private:
    HttpEndpoint endpoint_;
    std::string api_key_;
    RetryPolicy retry_;
    std::chrono::seconds timeout_;
};

/// POST {base_url}/embeddings with {model, input}.
class HttpEmbedder : public EmbeddingBackend {
public:
    HttpEmbedder(const std::string& base_url, std::string model, std::string api_key = detail::api_key_from_env(),
                 RetryPolicy retry = {}, std::chrono::seconds timeout = std::chrono::seconds(120))
        : endpoint_(HttpEndpoint::parse(base_url)), model_(std::move(model)), api_key_(std::move(api_key)),
          retry_(retry), timeout_(timeout) {}

    std::string model_id() const override { return model_; }

protected:
    std::vector<EmbeddingVector> do_embed(std::span<const std::string> texts) override {
        const nlohmann::json body = {{"model", model_}, {"input", std::vector<std::string>(texts.begin(), texts.end())}};
        const auto doc = detail::post_json(endpoint_, "/embeddings", body, api_key_, retry_, timeout_);
        std::vector<EmbeddingVector> out(texts.size());
        try {
            const auto& data = doc.at("data");
            if (!data.is_array() || data.size() != texts.size()) throw ProtocolError("embedding count mismatch");
            for (std::size_t i = 0; i < data.size(); ++i) {
                const std::size_t idx = data[i].contains("index") ? data[i].at("index").get<std::size_t>() : i;
                if (idx >= out.size()) throw ProtocolError("bad embedding index");
                out[idx] = EmbeddingVector::normalized(data[i].at("embedding").get<std::vector<double>>());
            }
        } catch (const nlohmann::json::exception& e) {
            throw ProtocolError(std::string("unexpected embedding payload: ") + e.what());
        } catch (const DomainError& e) {
            throw ProtocolError(std::string("degenerate embedding: ") + e.what());
        }
        return out;
    }

private:
    HttpEndpoint endpoint_;
    std::string model_;
    std::string api_key_;
    RetryPolicy retry_;
    std::chrono::seconds timeout_;
};

} // namespace mot
