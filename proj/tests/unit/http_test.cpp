#include <gtest/gtest.h>

#include <atomic>
#include <filesystem>
#include <functional>
#include <mutex>
#include <thread>

#include "mot/backend/cache.hpp"
#include "mot/backend/http.hpp"

using namespace mot;
using namespace std::chrono_literals;

namespace {

// Local OpenAI-compatible stub. `handler` decides each response.
class StubServer {
public:
    using Handler = std::function<void(const nlohmann::json& body, httplib::Response&, int call)>;

    explicit StubServer(Handler handler) : handler_(std::move(handler)) {
        const auto route = [this](const httplib::Request& req, httplib::Response& res) {
            const int call = ++calls_;
            {
                std::lock_guard lock(mutex_);
                last_path_ = req.path;
                last_auth_ = req.get_header_value("Authorization");
            }
            nlohmann::json body;
            try {
                body = nlohmann::json::parse(req.body);
            } catch (...) {
                res.status = 400;
                return;
            }
            {
                std::lock_guard lock(mutex_);
                last_body_ = body;
            }
            handler_(body, res, call);
        };
        server_.Post("/v1/chat/completions", route);
        server_.Post("/v1/embeddings", route);
        port_ = server_.bind_to_any_port("127.0.0.1");
        thread_ = std::thread([this] { server_.listen_after_bind(); });
        server_.wait_until_ready();
    }

    ~StubServer() {
        server_.stop();
        thread_.join();
    }

    std::string base_url() const { return "http://127.0.0.1:" + std::to_string(port_) + "/v1"; }
    int calls() const { return calls_.load(); }
    nlohmann::json last_body() const {
        std::lock_guard lock(mutex_);
        return last_body_;
    }
    std::string last_path() const {
        std::lock_guard lock(mutex_);
        return last_path_;
    }
    std::string last_auth() const {
        std::lock_guard lock(mutex_);
        return last_auth_;
    }

private:
    Handler handler_;
    httplib::Server server_;
    int port_ = 0;
    std::thread thread_;
    std::atomic<int> calls_{0};
    mutable std::mutex mutex_;
    nlohmann::json last_body_;
    std::string last_path_;
    std::string last_auth_;
};

void reply_choices(const nlohmann::json& body, httplib::Response& res) {
    nlohmann::json choices = nlohmann::json::array();
    const int n = body.value("n", 1);
    // Deliberately out of order; the client must sort by index.
    for (int i = n - 1; i >= 0; --i)
        choices.push_back({{"index", i}, {"message", {{"role", "assistant"}, {"content", "sample " + std::to_string(i)}}}});
    res.set_content(nlohmann::json{{"choices", choices}, {"usage", {{"prompt_tokens", 5}, {"completion_tokens", 7}}}}.dump(),
                    "application/json");
}

RetryPolicy fast_retry() { return RetryPolicy{3, 1ms}; }

CompletionRequest sample_request(std::size_t n) {
    CompletionRequest r;
    r.messages = {{Role::system, "sys"}, {Role::user, "Q: 2+2?\nA:"}, {Role::assistant_prefix, "The answer is"}};
    r.temperature = n > 1 ? 1.2 : 0.0;
    r.num_samples = n;
    r.max_tokens = 64;
    r.stop_sequences = {"\nQ:"};
    r.model_id = "test-model";
    return r;
}

} // namespace

TEST(Http, EndpointParsing) {
    const auto ep = HttpEndpoint::parse("https://api.example.com/v1/");
    EXPECT_EQ(ep.origin, "https://api.example.com");
    EXPECT_EQ(ep.path_prefix, "/v1");
    EXPECT_EQ(HttpEndpoint::parse("http://h:8080").path_prefix, "");
    EXPECT_THROW(HttpEndpoint::parse("no-scheme"), ConfigError);
}

TEST(Http, RequestBodyMatchesWireFormat) {
    const auto body = HttpChatBackend::request_body(sample_request(4));
    EXPECT_EQ(body.at("model"), "test-model");
    EXPECT_EQ(body.at("n"), 4);
    EXPECT_EQ(body.at("max_tokens"), 64);
    EXPECT_DOUBLE_EQ(body.at("temperature").get<double>(), 1.2);
    EXPECT_EQ(body.at("stop"), nlohmann::json::array({"\nQ:"}));
    ASSERT_EQ(body.at("messages").size(), 3u);
    EXPECT_EQ(body["messages"][0]["role"], "system");
    EXPECT_EQ(body["messages"][2]["role"], "assistant");
    EXPECT_EQ(body["messages"][2]["content"], "The answer is");
}

TEST(Http, ChatCompletionRoundTrip) {
    StubServer server([](const nlohmann::json& body, httplib::Response& res, int) { reply_choices(body, res); });
    HttpChatBackend backend(server.base_url(), "secret", fast_retry());
    const auto r = backend.complete(sample_request(3));
    EXPECT_EQ(r.samples, (std::vector<std::string>{"sample 0", "sample 1", "sample 2"}));
    ASSERT_TRUE(r.usage);
    EXPECT_EQ(r.usage->completion_tokens, 7u);
    EXPECT_EQ(server.last_path(), "/v1/chat/completions");
    EXPECT_EQ(server.last_auth(), "Bearer secret");
    EXPECT_EQ(server.last_body().at("n"), 3);
}

TEST(Http, RetriesServerErrorsThenSucceeds) {
    StubServer server([](const nlohmann::json& body, httplib::Response& res, int call) {
        if (call < 3) {
            res.status = call == 1 ? 503 : 429;
            return;
        }
        reply_choices(body, res);
    });
    HttpChatBackend backend(server.base_url(), "", fast_retry());
    EXPECT_EQ(backend.complete(sample_request(1)).samples[0], "sample 0");
    EXPECT_EQ(server.calls(), 3);
}

TEST(Http, ExhaustedRetriesCarryAttemptCount) {
    StubServer server([](const nlohmann::json&, httplib::Response& res, int) { res.status = 500; });
    HttpChatBackend backend(server.base_url(), "", fast_retry());
    try {
        backend.complete(sample_request(1));
        FAIL();
    } catch (const RetriableError& e) {
        EXPECT_EQ(e.attempts(), 3);
        EXPECT_EQ(e.exit_code(), 3);
    }
    EXPECT_EQ(server.calls(), 3);
}

TEST(Http, ClientErrorsAreNotRetried) {
    StubServer server([](const nlohmann::json&, httplib::Response& res, int) { res.status = 401; });
    HttpChatBackend backend(server.base_url(), "", fast_retry());
    EXPECT_THROW(backend.complete(sample_request(1)), BackendError);
    EXPECT_EQ(server.calls(), 1);
}

TEST(Http, MalformedPayloadIsProtocolError) {
    StubServer bad_json([](const nlohmann::json&, httplib::Response& res, int) {
        res.set_content("{oops", "application/json");
    });
    HttpChatBackend a(bad_json.base_url(), "", fast_retry());
    EXPECT_THROW(a.complete(sample_request(1)), ProtocolError);

    StubServer wrong_count([](const nlohmann::json&, httplib::Response& res, int) {
        res.set_content(R"({"choices":[]})", "application/json");
    });
    HttpChatBackend b(wrong_count.base_url(), "", fast_retry());
    EXPECT_THROW(b.complete(sample_request(1)), ProtocolError);

    StubServer missing_message([](const nlohmann::json&, httplib::Response& res, int) {
        res.set_content(R"({"choices":[{"index":0}]})", "application/json");
    });
    HttpChatBackend c(missing_message.base_url(), "", fast_retry());
    EXPECT_THROW(c.complete(sample_request(1)), ProtocolError);
}

TEST(Http, UnreachableHostIsRetriable) {
    int port = 0;
    {
        httplib::Server probe;
        port = probe.bind_to_any_port("127.0.0.1");
    }
    HttpChatBackend backend("http://127.0.0.1:" + std::to_string(port) + "/v1", "", fast_retry(), 2s);
    EXPECT_THROW(backend.complete(sample_request(1)), RetriableError);
}

TEST(Http, CachedSecondCallSkipsNetwork) {
    StubServer server([](const nlohmann::json& body, httplib::Response& res, int) { reply_choices(body, res); });
    HttpChatBackend http(server.base_url(), "", fast_retry());
    const auto dir = std::filesystem::temp_directory_path() / ("mot_http_cache_" + std::to_string(::getpid()));
    std::filesystem::remove_all(dir);
    ResponseCache cache(dir);
    CachedChatBackend backend(http, cache);
    const auto first = backend.complete(sample_request(4));
    const auto second = backend.complete(sample_request(4));
    EXPECT_FALSE(first.cache_hit);
    EXPECT_TRUE(second.cache_hit);
    EXPECT_EQ(first.samples, second.samples);
    EXPECT_EQ(server.calls(), 1);
    std::filesystem::remove_all(dir);
}

TEST(Http, Embeddings) {
    StubServer server([](const nlohmann::json& body, httplib::Response& res, int) {
        nlohmann::json data = nlohmann::json::array();
        const auto& input = body.at("input");
        for (std::size_t i = 0; i < input.size(); ++i)
            data.push_back({{"index", i}, {"embedding", {3.0, 4.0 + static_cast<double>(i)}}});
        res.set_content(nlohmann::json{{"data", data}}.dump(), "application/json");
    });
    HttpEmbedder embedder(server.base_url(), "embed-model", "", fast_retry());
    const auto v = embedder.embed(std::vector<std::string>{"a", "b"});
    ASSERT_EQ(v.size(), 2u);
    EXPECT_NEAR(v[0].values()[0], 0.6, 1e-12);
    EXPECT_NEAR(v[0].values()[1], 0.8, 1e-12);
    EXPECT_NEAR(v[1].norm(), 1.0, 1e-12);
    EXPECT_EQ(server.last_path(), "/v1/embeddings");
    EXPECT_EQ(server.last_body().at("model"), "embed-model");
    EXPECT_EQ(embedder.model_id(), "embed-model");
}

TEST(Http, ZeroEmbeddingIsProtocolError) {
    StubServer server([](const nlohmann::json&, httplib::Response& res, int) {
        res.set_content(R"({"data":[{"index":0,"embedding":[0.0,0.0]}]})", "application/json");
    });
    HttpEmbedder embedder(server.base_url(), "m", "", fast_retry());
    EXPECT_THROW(embedder.embed_one("a"), ProtocolError);
}
