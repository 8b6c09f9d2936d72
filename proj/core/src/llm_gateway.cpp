#include "gradepipe/llm_gateway.hpp"

#include <algorithm>
#include <condition_variable>
#include <thread>

#include <fmt/format.h>

#include "gradepipe/io.hpp"

namespace gradepipe {

namespace fs = std::filesystem;
using nlohmann::json;

std::string_view to_string(Strategy strategy) noexcept {
  switch (strategy) {
    case Strategy::Direct: return "Direct";
    case Strategy::Reverse: return "Reverse";
    case Strategy::Generate: return "Generate";
  }
  return "Direct";
}

std::optional<Strategy> parse_strategy(std::string_view text) {
  const auto lower = io::to_lower(io::trim(text));
  if (lower == "direct") return Strategy::Direct;
  if (lower == "reverse") return Strategy::Reverse;
  if (lower == "generate") return Strategy::Generate;
  return std::nullopt;
}

std::string_view to_string(GatewayMode mode) noexcept {
  switch (mode) {
    case GatewayMode::Live: return "live";
    case GatewayMode::Record: return "record";
    case GatewayMode::Replay: return "replay";
  }
  return "replay";
}

std::optional<GatewayMode> parse_gateway_mode(std::string_view text) {
  const auto lower = io::to_lower(io::trim(text));
  if (lower == "live") return GatewayMode::Live;
  if (lower == "record") return GatewayMode::Record;
  if (lower == "replay") return GatewayMode::Replay;
  return std::nullopt;
}

std::string transcript_key(std::string_view text, Strategy strategy) {
  std::string material(to_string(strategy));
  material += '\n';
  material += text;
  return io::sha256_hex(material);
}

PromptRequest make_request(std::string text, Strategy strategy, std::string template_version) {
  PromptRequest req;
  req.transcript_key = transcript_key(text, strategy);
  req.text = std::move(text);
  req.strategy = strategy;
  req.template_version = std::move(template_version);
  return req;
}

json build_chat_body(const EndpointConfig& config, const PromptRequest& request) {
  return {{"model", config.model},
          {"messages", json::array({{{"role", "user"}, {"content", request.text}}})},
          {"temperature", request.temperature},
          {"max_tokens", request.max_output}};
}

std::string extract_chat_text(std::string_view body) {
  json doc = json::parse(body, nullptr, false);
  if (doc.is_discarded()) throw TransportFailure("response body is not JSON", false);
  const auto* choices = doc.is_object() && doc.contains("choices") ? &doc["choices"] : nullptr;
  if (choices == nullptr || !choices->is_array() || choices->empty()) {
    throw TransportFailure("response has no choices", false);
  }
  const auto& first = (*choices)[0];
  if (!first.is_object() || !first.contains("message") || !first["message"].is_object() ||
      !first["message"].contains("content") || !first["message"]["content"].is_string()) {
    throw TransportFailure("choices[0].message.content missing", false);
  }
  return first["message"]["content"].get<std::string>();
}

// ---------------------------------------------------------------------------

TranscriptStore::TranscriptStore(fs::path dir) : dir_(std::move(dir)) {}

fs::path TranscriptStore::file_for(const std::string& key) const { return dir_ / (key + ".json"); }

std::mutex& TranscriptStore::lock_for(const std::string& key) const {
  return stripes_[io::fnv1a64(key) % stripes_.size()];
}

std::optional<std::string> TranscriptStore::get(const std::string& key) const {
  std::lock_guard lock(lock_for(key));
  const auto path = file_for(key);
  if (!fs::exists(path)) return std::nullopt;
  const auto doc = json::parse(io::read_file(path), nullptr, false);
  if (doc.is_discarded() || !doc.is_object() || !doc.contains("response") || !doc["response"].is_string()) {
    throw Error(Errc::Io, fmt::format("corrupt transcript entry {}", path.string()));
  }
  return doc["response"].get<std::string>();
}

void TranscriptStore::put(const PromptRequest& request, std::string_view response) {
  std::lock_guard lock(lock_for(request.transcript_key));
  const json doc = {{"key", request.transcript_key},
                    {"strategy", to_string(request.strategy)},
                    {"template", request.template_version},
                    {"prompt", request.text},
                    {"response", std::string(response)}};
  const auto path = file_for(request.transcript_key);
  auto tmp = path;
  tmp += fmt::format(".tmp{}", std::hash<std::thread::id>{}(std::this_thread::get_id()));
  io::write_file(tmp, doc.dump(2) + "\n");
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw Error(Errc::Io, fmt::format("cannot move transcript into place: {}", ec.message()));
}

std::size_t TranscriptStore::size() const {
  if (!fs::exists(dir_)) return 0;
  std::size_t n = 0;
  for (const auto& entry : fs::directory_iterator(dir_)) {
    if (entry.is_regular_file() && entry.path().extension() == ".json") ++n;
  }
  return n;
}

// ---------------------------------------------------------------------------

void validate(const RetryPolicy& policy) {
  if (policy.max_attempts < 1) {
    throw Error(Errc::InvalidPolicy, fmt::format("max_attempts must be >= 1, got {}", policy.max_attempts));
  }
  if (policy.initial_backoff.count() < 0 || policy.max_backoff.count() < 0 || !(policy.multiplier >= 1.0)) {
    throw Error(Errc::InvalidPolicy, "backoff must be non-negative with multiplier >= 1");
  }
}

struct Gateway::Shared {
  explicit Shared(std::size_t limit) : slots(std::max<std::size_t>(limit, 1)) {}

  void acquire() {
    std::unique_lock lock(mu);
    cv.wait(lock, [&] { return slots > 0; });
    --slots;
  }
  void release() {
    {
      std::lock_guard lock(mu);
      ++slots;
    }
    cv.notify_one();
  }

  std::mutex mu;
  std::condition_variable cv;
  std::size_t slots;
  std::atomic<std::size_t> endpoint_calls{0};
};

Gateway::Gateway(GatewayOptions options, std::shared_ptr<Endpoint> endpoint, std::shared_ptr<TranscriptStore> store)
    : options_(options),
      endpoint_(std::move(endpoint)),
      store_(std::move(store)),
      shared_(std::make_shared<Shared>(options.max_in_flight)),
      sleeper_([](std::chrono::milliseconds d) { std::this_thread::sleep_for(d); }) {
  if (options_.mode != GatewayMode::Replay && !endpoint_) {
    throw Error(Errc::InvalidConfig, "live and record modes need an endpoint");
  }
  if (options_.mode != GatewayMode::Live && !store_) {
    throw Error(Errc::InvalidConfig, "record and replay modes need a transcript store");
  }
}

Gateway Gateway::with_retry(const RetryPolicy& policy) const {
  validate(policy);
  Gateway copy = *this;
  copy.policy_ = policy;
  return copy;
}

std::size_t Gateway::endpoint_calls() const noexcept { return shared_->endpoint_calls.load(); }

ModelResponse Gateway::complete(const PromptRequest& request) {
  if (request.text.empty()) throw Error(Errc::InvalidConfig, "empty prompt");
  if (request.temperature < 0.0) throw Error(Errc::InvalidConfig, "negative temperature");

  shared_->acquire();
  struct Release {
    Shared* s;
    ~Release() { s->release(); }
  } release{shared_.get()};

  if (options_.mode == GatewayMode::Replay) {
    auto text = store_->get(request.transcript_key);
    if (!text) {
      throw Error(Errc::ReplayMiss,
                  fmt::format("no transcript for {} prompt {}", to_string(request.strategy), request.transcript_key));
    }
    return ModelResponse{std::move(*text), 0.0, 1, ResponseSource::Replay};
  }

  auto response = send_with_retry(request);
  if (options_.mode == GatewayMode::Record) store_->put(request, response.text);
  return response;
}

ModelResponse Gateway::send_with_retry(const PromptRequest& request) {
  auto delay = policy_.initial_backoff;
  for (int attempt = 1;; ++attempt) {
    if (options_.call_budget) {
      const auto used = shared_->endpoint_calls.fetch_add(1);
      if (used >= *options_.call_budget) {
        shared_->endpoint_calls.fetch_sub(1);
        throw Error(Errc::BudgetExceeded, fmt::format("call budget of {} exhausted", *options_.call_budget));
      }
    } else {
      shared_->endpoint_calls.fetch_add(1);
    }

    const auto start = std::chrono::steady_clock::now();
    try {
      auto text = endpoint_->send(request);
      const std::chrono::duration<double, std::milli> elapsed = std::chrono::steady_clock::now() - start;
      return ModelResponse{std::move(text), elapsed.count(), attempt, ResponseSource::Live};
    } catch (const TransportFailure& failure) {
      if (!failure.transient() || attempt >= policy_.max_attempts) {
        throw TransportFailure(fmt::format("attempt {}/{}: {}", attempt, policy_.max_attempts, failure.detail()),
                               failure.transient());
      }
    }
    sleeper_(delay);
    const auto next = std::chrono::milliseconds(static_cast<long long>(static_cast<double>(delay.count()) * policy_.multiplier));
    delay = std::min(next, policy_.max_backoff);
  }
}

}  // namespace gradepipe
