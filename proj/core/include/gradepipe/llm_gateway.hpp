#pragma once

#include <array>
#include <atomic>
#include <chrono>
#include <cstddef>
#include <filesystem>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

#include "gradepipe/error.hpp"

namespace gradepipe {

enum class Strategy { Direct, Reverse, Generate };

std::string_view to_string(Strategy strategy) noexcept;
std::optional<Strategy> parse_strategy(std::string_view text);

struct PromptRequest {
  std::string text;
  Strategy strategy = Strategy::Direct;
  double temperature = 0.0;
  int max_output = 2048;
  std::string transcript_key;
  // Name/version of the template that produced `text`, e.g. "direct/v1".
  std::string template_version;
};

// sha256 over the strategy name and the prompt text.
std::string transcript_key(std::string_view text, Strategy strategy);

// Builds a request with temperature 0 and the transcript key filled in.
PromptRequest make_request(std::string text, Strategy strategy, std::string template_version = {});

enum class ResponseSource { Live, Replay };

struct ModelResponse {
  std::string text;
  double latency_ms = 0.0;
  int attempt = 1;
  ResponseSource source = ResponseSource::Live;
};

// Errc::TransportError carrying whether a retry might succeed.
class TransportFailure : public Error {
 public:
  TransportFailure(const std::string& detail, bool transient)
      : Error(Errc::TransportError, detail), transient_(transient) {}
  bool transient() const noexcept { return transient_; }

 private:
  bool transient_;
};

// Something that turns a prompt into raw completion text. Throws TransportFailure.
class Endpoint {
 public:
  virtual ~Endpoint() = default;
  virtual std::string send(const PromptRequest& request) = 0;
};

struct EndpointConfig {
  std::string base_url;  // "http://host:port" or "https://host"
  std::string path = "/v1/chat/completions";
  std::string model;
  // Name of the environment variable holding the bearer token; unset or empty means no auth.
  std::string token_env = "GRADEPIPE_API_TOKEN";
  int timeout_s = 120;
};

// Chat-completion wire schema (see docs/wire-schema.md).
nlohmann::json build_chat_body(const EndpointConfig& config, const PromptRequest& request);
// Pulls choices[0].message.content; a body that does not follow the schema is a non-transient failure.
std::string extract_chat_text(std::string_view body);

std::unique_ptr<Endpoint> make_http_endpoint(EndpointConfig config);

// Directory of <key>.json files, one per prompt. Access to a key is serialized.
class TranscriptStore {
 public:
  explicit TranscriptStore(std::filesystem::path dir);

  std::optional<std::string> get(const std::string& key) const;
  void put(const PromptRequest& request, std::string_view response);
  std::size_t size() const;
  const std::filesystem::path& dir() const noexcept { return dir_; }

 private:
  std::filesystem::path file_for(const std::string& key) const;
  std::mutex& lock_for(const std::string& key) const;

  std::filesystem::path dir_;
  mutable std::array<std::mutex, 32> stripes_;
};

struct RetryPolicy {
  int max_attempts = 3;
  std::chrono::milliseconds initial_backoff{250};
  double multiplier = 2.0;
  std::chrono::milliseconds max_backoff{8000};
};

// Throws InvalidPolicy.
void validate(const RetryPolicy& policy);

class CompletionClient {
 public:
  virtual ~CompletionClient() = default;
  virtual ModelResponse complete(const PromptRequest& request) = 0;
};

enum class GatewayMode { Live, Record, Replay };

std::string_view to_string(GatewayMode mode) noexcept;
std::optional<GatewayMode> parse_gateway_mode(std::string_view text);

struct GatewayOptions {
  GatewayMode mode = GatewayMode::Replay;
  std::size_t max_in_flight = 4;
  // Upper bound on endpoint calls (attempts included) over the gateway's lifetime.
  std::optional<std::size_t> call_budget;
};

// Live/Record send to the endpoint with retry; Record also persists; Replay reads the store only.
// Copies share the in-flight limit and budget counters.
class Gateway final : public CompletionClient {
 public:
  using Sleeper = std::function<void(std::chrono::milliseconds)>;

  Gateway(GatewayOptions options, std::shared_ptr<Endpoint> endpoint, std::shared_ptr<TranscriptStore> store);

  // Same gateway with a different retry policy. Throws InvalidPolicy.
  Gateway with_retry(const RetryPolicy& policy) const;
  void set_sleeper(Sleeper sleeper) { sleeper_ = std::move(sleeper); }

  ModelResponse complete(const PromptRequest& request) override;

  const RetryPolicy& retry_policy() const noexcept { return policy_; }
  GatewayMode mode() const noexcept { return options_.mode; }
  std::size_t endpoint_calls() const noexcept;

 private:
  struct Shared;

  ModelResponse send_with_retry(const PromptRequest& request);

  GatewayOptions options_;
  RetryPolicy policy_;
  std::shared_ptr<Endpoint> endpoint_;
  std::shared_ptr<TranscriptStore> store_;
  std::shared_ptr<Shared> shared_;
  Sleeper sleeper_;
};

// Forwards to another client and counts requests.
class CountingClient final : public CompletionClient {
 public:
  explicit CountingClient(CompletionClient& inner) : inner_(inner) {}
  ModelResponse complete(const PromptRequest& request) override {
    calls_.fetch_add(1, std::memory_order_relaxed);
    return inner_.complete(request);
  }
  std::size_t calls() const noexcept { return calls_.load(std::memory_order_relaxed); }

 private:
  CompletionClient& inner_;
  std::atomic<std::size_t> calls_{0};
};

}  // namespace gradepipe
