#define CPPHTTPLIB_OPENSSL_SUPPORT
#include <httplib.h>

#include <doctest.h>

#include <atomic>
#include <cstdlib>
#include <thread>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "gradepipe/error.hpp"
#include "gradepipe/io.hpp"
#include "gradepipe/llm_gateway.hpp"
#include "support.hpp"

using namespace gradepipe;
using gradepipe::testing::TempDir;
using nlohmann::json;
using namespace std::chrono_literals;

namespace {

Errc code_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an Error");
  return Errc::Io;
}

// Fails `failures` times with the given transience, then echoes the prompt.
class FlakyEndpoint final : public Endpoint {
 public:
  FlakyEndpoint(int failures, bool transient) : failures_(failures), transient_(transient) {}
  std::string send(const PromptRequest& request) override {
    if (calls.fetch_add(1) < failures_) throw TransportFailure("boom", transient_);
    return "echo:" + request.text;
  }
  std::atomic<int> calls{0};

 private:
  int failures_;
  bool transient_;
};

class SlowEndpoint final : public Endpoint {
 public:
  std::string send(const PromptRequest&) override {
    const int now = ++active;
    int seen = peak.load();
    while (now > seen && !peak.compare_exchange_weak(seen, now)) {
    }
    std::this_thread::sleep_for(5ms);
    --active;
    return "ok";
  }
  std::atomic<int> active{0};
  std::atomic<int> peak{0};
};

Gateway live(std::shared_ptr<Endpoint> ep, GatewayOptions opt = {GatewayMode::Live, 4, std::nullopt}) {
  Gateway g(opt, std::move(ep), nullptr);
  g.set_sleeper([](std::chrono::milliseconds) {});
  return g;
}

std::string chat_reply(const std::string& content) {
  return json{{"id", "x"}, {"choices", json::array({{{"index", 0}, {"message", {{"role", "assistant"}, {"content", content}}}}})}}
      .dump();
}

}  // namespace

TEST_CASE("transcript keys depend on strategy and text") {
  const auto a = transcript_key("hello", Strategy::Direct);
  CHECK(a.size() == 64);
  CHECK(a == transcript_key("hello", Strategy::Direct));
  CHECK(a != transcript_key("hello", Strategy::Reverse));
  CHECK(a != transcript_key("hello ", Strategy::Direct));
  // sha256("Direct\nhello")
  CHECK(a == io::sha256_hex("Direct\nhello"));
  const auto req = make_request("hi", Strategy::Reverse, "reverse/v1");
  CHECK(req.temperature == 0.0);
  CHECK(req.transcript_key == transcript_key("hi", Strategy::Reverse));
}

TEST_CASE("sha256 known vector") {
  CHECK(io::sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST_CASE("chat wire schema") {
  EndpointConfig cfg;
  cfg.model = "m1";
  auto req = make_request("grade this", Strategy::Direct);
  const auto body = build_chat_body(cfg, req);
  CHECK(body["model"] == "m1");
  CHECK(body["messages"][0]["role"] == "user");
  CHECK(body["messages"][0]["content"] == "grade this");
  CHECK(body["temperature"] == 0.0);
  CHECK(body["max_tokens"] == 2048);

  CHECK(extract_chat_text(chat_reply("fine")) == "fine");
  for (const char* bad : {"not json", "{}", R"({"choices":[]})", R"({"choices":[{"message":{}}]})",
                          R"({"choices":[{"message":{"content":5}}]})"}) {
    try {
      extract_chat_text(bad);
      FAIL("should throw");
    } catch (const TransportFailure& f) {
      CHECK_FALSE(f.transient());
    }
  }
}

TEST_CASE("replay hits and misses") {
  TempDir tmp;
  auto store = std::make_shared<TranscriptStore>(tmp / "t");
  const auto req = make_request("prompt", Strategy::Direct);
  store->put(req, "stored reply");
  CHECK(store->size() == 1);
  Gateway g({GatewayMode::Replay, 2, std::nullopt}, nullptr, store);
  const auto r = g.complete(req);
  CHECK(r.text == "stored reply");
  CHECK(r.source == ResponseSource::Replay);
  CHECK(code_of([&] { g.complete(make_request("other", Strategy::Direct)); }) == Errc::ReplayMiss);
  CHECK(g.endpoint_calls() == 0);
}

TEST_CASE("record then replay returns identical text") {
  TempDir tmp;
  auto store = std::make_shared<TranscriptStore>(tmp / "t");
  auto ep = std::make_shared<FlakyEndpoint>(0, true);
  Gateway rec({GatewayMode::Record, 2, std::nullopt}, ep, store);
  const auto req = make_request("p1", Strategy::Reverse, "reverse/v1");
  const auto live_text = rec.complete(req).text;
  const auto doc = json::parse(io::read_file(tmp / "t" / (req.transcript_key + ".json")));
  CHECK(doc["strategy"] == "Reverse");
  CHECK(doc["template"] == "reverse/v1");
  CHECK(doc["prompt"] == "p1");

  Gateway rep({GatewayMode::Replay, 2, std::nullopt}, nullptr, store);
  CHECK(rep.complete(req).text == live_text);
  CHECK(ep->calls == 1);
}

TEST_CASE("corrupt transcript is an Io error") {
  TempDir tmp;
  auto store = std::make_shared<TranscriptStore>(tmp.path());
  const auto req = make_request("p", Strategy::Direct);
  io::write_file(tmp / (req.transcript_key + ".json"), "{not json");
  CHECK(code_of([&] { store->get(req.transcript_key); }) == Errc::Io);
}

TEST_CASE("retry on transient failures with exponential backoff") {
  auto ep = std::make_shared<FlakyEndpoint>(2, true);
  Gateway g({GatewayMode::Live, 1, std::nullopt}, ep, nullptr);
  std::vector<long> sleeps;
  g.set_sleeper([&](std::chrono::milliseconds d) { sleeps.push_back(d.count()); });
  const auto r = g.complete(make_request("x", Strategy::Direct));
  CHECK(r.attempt == 3);
  CHECK(r.text == "echo:x");
  CHECK(sleeps == std::vector<long>{250, 500});
  CHECK(g.endpoint_calls() == 3);
}

TEST_CASE("backoff is capped") {
  auto ep = std::make_shared<FlakyEndpoint>(5, true);
  Gateway base({GatewayMode::Live, 1, std::nullopt}, ep, nullptr);
  auto g = base.with_retry({6, 100ms, 3.0, 500ms});
  std::vector<long> sleeps;
  g.set_sleeper([&](std::chrono::milliseconds d) { sleeps.push_back(d.count()); });
  CHECK(g.complete(make_request("x", Strategy::Direct)).attempt == 6);
  CHECK(sleeps == std::vector<long>{100, 300, 500, 500, 500});
}

TEST_CASE("exhausted and non-transient failures surface as TransportError") {
  {
    auto ep = std::make_shared<FlakyEndpoint>(10, true);
    auto g = live(ep);
    try {
      g.complete(make_request("x", Strategy::Direct));
      FAIL("should throw");
    } catch (const TransportFailure& f) {
      CHECK(f.code() == Errc::TransportError);
      CHECK(f.detail().find("attempt 3/3") != std::string::npos);
    }
    CHECK(ep->calls == 3);
  }
  {
    auto ep = std::make_shared<FlakyEndpoint>(10, false);
    auto g = live(ep);
    CHECK(code_of([&] { g.complete(make_request("x", Strategy::Direct)); }) == Errc::TransportError);
    CHECK(ep->calls == 1);
  }
}

TEST_CASE("call budget counts attempts") {
  auto ep = std::make_shared<FlakyEndpoint>(1, true);
  auto g = live(ep, {GatewayMode::Live, 1, 2});
  CHECK(g.complete(make_request("a", Strategy::Direct)).attempt == 2);
  CHECK(code_of([&] { g.complete(make_request("b", Strategy::Direct)); }) == Errc::BudgetExceeded);
  CHECK(g.endpoint_calls() == 2);
}

TEST_CASE("policy and construction checks") {
  CHECK(code_of([] { validate(RetryPolicy{0, 1ms, 2.0, 1ms}); }) == Errc::InvalidPolicy);
  CHECK(code_of([] { validate(RetryPolicy{1, -1ms, 2.0, 1ms}); }) == Errc::InvalidPolicy);
  CHECK(code_of([] { validate(RetryPolicy{1, 1ms, 0.5, 1ms}); }) == Errc::InvalidPolicy);
  CHECK_NOTHROW(validate(RetryPolicy{}));
  CHECK(code_of([] { Gateway({GatewayMode::Live, 1, std::nullopt}, nullptr, nullptr); }) == Errc::InvalidConfig);
  CHECK(code_of([] { Gateway({GatewayMode::Replay, 1, std::nullopt}, nullptr, nullptr); }) == Errc::InvalidConfig);
  auto g = live(std::make_shared<FlakyEndpoint>(0, true));
  CHECK(code_of([&] { g.complete(make_request("", Strategy::Direct)); }) == Errc::InvalidConfig);
  auto bad = make_request("x", Strategy::Direct);
  bad.temperature = -1;
  CHECK(code_of([&] { g.complete(bad); }) == Errc::InvalidConfig);
  CHECK(parse_gateway_mode("RECORD") == GatewayMode::Record);
  CHECK_FALSE(parse_gateway_mode("cache").has_value());
}

TEST_CASE("in-flight limit bounds concurrency") {
  auto ep = std::make_shared<SlowEndpoint>();
  auto g = live(ep, {GatewayMode::Live, 2, std::nullopt});
  {
    std::vector<std::jthread> threads;
    for (int t = 0; t < 8; ++t) {
      threads.emplace_back([&, t] {
        for (int i = 0; i < 4; ++i) g.complete(make_request(std::to_string(t * 10 + i), Strategy::Direct));
      });
    }
  }
  CHECK(ep->peak.load() <= 2);
  CHECK(ep->peak.load() >= 1);
  CHECK(g.endpoint_calls() == 32);
}

TEST_CASE("concurrent record writes stay readable") {
  TempDir tmp;
  auto store = std::make_shared<TranscriptStore>(tmp.path());
  const auto req = make_request("same prompt", Strategy::Direct);
  {
    std::vector<std::jthread> threads;
    for (int t = 0; t < 8; ++t) {
      threads.emplace_back([&] {
        for (int i = 0; i < 20; ++i) store->put(req, "reply");
      });
    }
  }
  CHECK(store->size() == 1);
  CHECK(store->get(req.transcript_key) == std::optional<std::string>("reply"));
}

TEST_CASE("http endpoint against a local stub server") {
  httplib::Server server;
  std::atomic<int> flaky_hits{0};
  std::string seen_auth;
  json seen_body;
  std::mutex mu;
  server.Post("/v1/chat/completions", [&](const httplib::Request& req, httplib::Response& res) {
    std::lock_guard lock(mu);
    seen_auth = req.get_header_value("Authorization");
    seen_body = json::parse(req.body);
    res.set_content(chat_reply("graded: " + seen_body["messages"][0]["content"].get<std::string>()), "application/json");
  });
  server.Post("/flaky", [&](const httplib::Request&, httplib::Response& res) {
    if (flaky_hits.fetch_add(1) == 0) {
      res.status = 503;
      return;
    }
    res.set_content(chat_reply("recovered"), "application/json");
  });
  server.Post("/limited", [&](const httplib::Request&, httplib::Response& res) { res.status = 429; });
  server.Post("/denied", [&](const httplib::Request&, httplib::Response& res) {
    res.status = 401;
    res.set_content("no", "text/plain");
  });
  const int port = server.bind_to_any_port("127.0.0.1");
  REQUIRE(port > 0);
  std::jthread worker([&] { server.listen_after_bind(); });
  server.wait_until_ready();

  ::setenv("GRADEPIPE_TEST_TOKEN", "sekret", 1);
  EndpointConfig cfg;
  cfg.base_url = fmt::format("http://127.0.0.1:{}", port);
  cfg.model = "stub-model";
  cfg.token_env = "GRADEPIPE_TEST_TOKEN";
  cfg.timeout_s = 5;

  SUBCASE("schema and auth") {
    auto g = live(std::shared_ptr<Endpoint>(make_http_endpoint(cfg)));
    CHECK(g.complete(make_request("code", Strategy::Direct)).text == "graded: code");
    std::lock_guard lock(mu);
    CHECK(seen_auth == "Bearer sekret");
    CHECK(seen_body["model"] == "stub-model");
    CHECK(seen_body["temperature"] == 0.0);
  }
  SUBCASE("5xx is retried") {
    cfg.path = "/flaky";
    auto g = live(std::shared_ptr<Endpoint>(make_http_endpoint(cfg)));
    const auto r = g.complete(make_request("x", Strategy::Direct));
    CHECK(r.text == "recovered");
    CHECK(r.attempt == 2);
  }
  SUBCASE("429 exhausts retries") {
    cfg.path = "/limited";
    auto g = live(std::shared_ptr<Endpoint>(make_http_endpoint(cfg)));
    CHECK(code_of([&] { g.complete(make_request("x", Strategy::Direct)); }) == Errc::TransportError);
    CHECK(g.endpoint_calls() == 3);
  }
  SUBCASE("4xx is not retried") {
    cfg.path = "/denied";
    auto g = live(std::shared_ptr<Endpoint>(make_http_endpoint(cfg)));
    CHECK(code_of([&] { g.complete(make_request("x", Strategy::Direct)); }) == Errc::TransportError);
    CHECK(g.endpoint_calls() == 1);
  }
  SUBCASE("connection refused is transient") {
    cfg.base_url = "http://127.0.0.1:1";
    auto ep = make_http_endpoint(cfg);
    try {
      ep->send(make_request("x", Strategy::Direct));
      FAIL("should throw");
    } catch (const TransportFailure& f) {
      CHECK(f.transient());
    }
  }
  server.stop();
  CHECK(code_of([] { make_http_endpoint({}); }) == Errc::InvalidConfig);
}
