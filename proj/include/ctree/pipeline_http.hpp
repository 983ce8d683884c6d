#pragma once

// Chat-completion client over HTTP(S). Request body:
//   {"model": ..., "messages": [{"role", "content"}...], "temperature": 0}
// POSTed to <base_url>/chat/completions; the reply text is the first choice's
// message content. HTTPS needs the library built with CTREE_WITH_OPENSSL.

#if defined(CTREE_WITH_OPENSSL) && !defined(CPPHTTPLIB_OPENSSL_SUPPORT)
#define CPPHTTPLIB_OPENSSL_SUPPORT
#endif

#include <ctree/error.hpp>
#include <ctree/pipeline.hpp>

#include <httplib.h>

#include <chrono>
#include <cstdlib>
#include <string>
#include <thread>

namespace ctree::pipeline {

struct LlmEndpointConfig {
    std::string base_url;
    std::string model_name;
    std::string api_key_env = "CTREE_LLM_API_KEY";
    double timeout_seconds = 60.0;
    int max_retries = 3;

    void validate() const {
        if (base_url.empty()) throw ConfigError("endpoint: base URL is empty");
        if (!(timeout_seconds > 0.0)) throw ConfigError("endpoint: timeout must be positive");
        if (max_retries < 0) throw ConfigError("endpoint: max retries must be non-negative");
    }
};

struct SplitUrl {
    std::string scheme_host_port;
    std::string path;  // no trailing slash
};

inline SplitUrl split_url(const std::string& url) {
    const auto scheme_end = url.find("://");
    if (scheme_end == std::string::npos) throw ConfigError("endpoint URL '" + url + "' has no scheme");
    const std::string scheme = url.substr(0, scheme_end);
    if (scheme != "http" && scheme != "https") throw ConfigError("endpoint URL scheme must be http or https");
#ifndef CPPHTTPLIB_OPENSSL_SUPPORT
    if (scheme == "https") throw ConfigError("https endpoints need a build with OpenSSL support");
#endif
    const auto path_start = url.find('/', scheme_end + 3);
    SplitUrl out;
    out.scheme_host_port = url.substr(0, path_start);
    out.path = path_start == std::string::npos ? "" : url.substr(path_start);
    while (!out.path.empty() && out.path.back() == '/') out.path.pop_back();
    return out;
}

class HttpChatClient final : public ChatClient {
public:
    explicit HttpChatClient(LlmEndpointConfig config) : config_(std::move(config)) {
        config_.validate();
        url_ = split_url(config_.base_url);
    }

    [[nodiscard]] std::string model_name() const override { return config_.model_name; }

    std::string complete(const ChatRequest& request) override {
        httplib::Client client(url_.scheme_host_port);
        const auto timeout = std::chrono::duration_cast<std::chrono::microseconds>(
            std::chrono::duration<double>(config_.timeout_seconds));
        client.set_connection_timeout(timeout);
        client.set_read_timeout(timeout);
        client.set_write_timeout(timeout);

        httplib::Headers headers;
        if (const char* key = std::getenv(config_.api_key_env.c_str()); key != nullptr && *key != '\0') {
            headers.emplace("Authorization", std::string("Bearer ") + key);
        }
        const std::string body = request_to_json(request).dump();
        const std::string path = url_.path + "/chat/completions";

        std::string last_error;
        for (int attempt = 0; attempt <= config_.max_retries; ++attempt) {
            if (attempt > 0) std::this_thread::sleep_for(std::chrono::milliseconds(100 * attempt));
            auto res = client.Post(path, headers, body, "application/json");
            if (!res) {
                last_error = "transport error: " + httplib::to_string(res.error());
                continue;
            }
            if (res->status == 200) return completion_text(res->body);
            last_error = "HTTP status " + std::to_string(res->status);
            // client errors other than rate limiting will not improve on retry
            if (res->status >= 400 && res->status < 500 && res->status != 429) break;
        }
        throw TransportError("chat completion failed after retries: " + last_error);
    }

private:
    LlmEndpointConfig config_;
    SplitUrl url_;
};

} // namespace ctree::pipeline
