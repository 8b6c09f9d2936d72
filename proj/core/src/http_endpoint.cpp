#define CPPHTTPLIB_OPENSSL_SUPPORT
#include <httplib.h>

#include <cstdlib>

#include <fmt/format.h>

#include "gradepipe/llm_gateway.hpp"

namespace gradepipe {

namespace {

class HttpEndpoint final : public Endpoint {
 public:
  explicit HttpEndpoint(EndpointConfig config) : config_(std::move(config)) {
    if (!config_.token_env.empty()) {
      if (const char* token = std::getenv(config_.token_env.c_str()); token != nullptr) token_ = token;
    }
  }

  std::string send(const PromptRequest& request) override {
    const auto body = build_chat_body(config_, request).dump();
    // One client per call; httplib::Client must not be shared across in-flight requests.
    httplib::Client client(config_.base_url);
    client.set_connection_timeout(config_.timeout_s, 0);
    client.set_read_timeout(config_.timeout_s, 0);
    client.set_write_timeout(config_.timeout_s, 0);
    if (!token_.empty()) client.set_bearer_token_auth(token_);
    auto res = client.Post(config_.path, body, "application/json");
    if (!res) {
      throw TransportFailure(fmt::format("{}{}: {}", config_.base_url, config_.path, httplib::to_string(res.error())),
                             true);
    }
    if (res->status == 429 || res->status >= 500) {
      throw TransportFailure(fmt::format("HTTP {}", res->status), true);
    }
    if (res->status != 200) {
      throw TransportFailure(fmt::format("HTTP {}: {}", res->status, res->body.substr(0, 200)), false);
    }
    return extract_chat_text(res->body);
  }

 private:
  EndpointConfig config_;
  std::string token_;
};

}  // namespace

std::unique_ptr<Endpoint> make_http_endpoint(EndpointConfig config) {
  if (config.base_url.empty()) throw Error(Errc::InvalidConfig, "endpoint base_url is empty");
  return std::make_unique<HttpEndpoint>(std::move(config));
}

}  // namespace gradepipe
