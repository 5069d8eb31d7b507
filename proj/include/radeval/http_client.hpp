#pragma once

#include <cstdlib>
#include <string>
#include <string_view>

#define CPPHTTPLIB_OPENSSL_SUPPORT
#include "httplib.h"

#include "radeval/chexprompt.hpp"

namespace radeval::judge {

inline constexpr const char* kApiKeyVariable = "RADEVAL_API_KEY";

/// scheme://host[:port] and path of an endpoint URL.
struct Endpoint {
    std::string origin;
    std::string path;
};

inline Endpoint split_endpoint(std::string_view url) {
    const auto scheme_end = url.find("://");
    if (scheme_end == std::string_view::npos) throw Error(ErrorCode::InvalidArgument, "endpoint URL needs a scheme: " + std::string(url));
    const auto path_start = url.find('/', scheme_end + 3);
    if (path_start == std::string_view::npos) return {std::string(url), "/"};
    return {std::string(url.substr(0, path_start)), std::string(url.substr(path_start))};
}

/// Chat-completion client over HTTP(S). The bearer token comes from the
/// RADEVAL_API_KEY environment variable only. A new connection is opened per
/// call, so one instance can serve several threads.
class HttpJudgeClient : public JudgeClient {
  public:
    HttpJudgeClient() {
        if (const char* key = std::getenv(kApiKeyVariable)) api_key_ = key;
    }

    std::string complete(const PromptPayload& payload, const JudgeConfig& config) override {
        const auto endpoint = split_endpoint(config.endpoint_url);
        httplib::Client cli(endpoint.origin);
        const auto secs = std::chrono::duration_cast<std::chrono::seconds>(config.timeout).count();
        cli.set_connection_timeout(static_cast<time_t>(secs), 0);
        cli.set_read_timeout(static_cast<time_t>(secs), 0);
        cli.set_write_timeout(static_cast<time_t>(secs), 0);
        httplib::Headers headers;
        if (!api_key_.empty()) headers.emplace("Authorization", "Bearer " + api_key_);

        auto res = cli.Post(endpoint.path, headers, request_body(payload, config).dump(), "application/json");
        if (!res) throw TransportError("request to " + config.endpoint_url + " failed: " + httplib::to_string(res.error()), true);
        if (res->status == 429 || res->status >= 500) {
            throw TransportError("HTTP " + std::to_string(res->status) + " from " + config.endpoint_url, true);
        }
        if (res->status != 200) {
            throw TransportError("HTTP " + std::to_string(res->status) + " from " + config.endpoint_url + ": " + res->body, false);
        }
        return completion_text(res->body);
    }

  private:
    std::string api_key_;
};

}  // namespace radeval::judge
