// Eigen (via refiner.hpp) must precede httplib: <resolv.h> defines a `_res` macro.
#include "more/refiner.hpp"

#include <doctest.h>

#include <atomic>
#include <cstdlib>
#include <thread>

#define CPPHTTPLIB_OPENSSL_SUPPORT
#include <httplib.h>

#include "more/error.hpp"

using namespace more;

namespace {

constexpr const char* kKeyVar = "MORE_TEST_LLM_KEY";

// Loopback chat-completions endpoint; `handler` decides each reply.
class FakeEndpoint {
 public:
  explicit FakeEndpoint(std::function<void(const httplib::Request&, httplib::Response&, int)> handler)
      : handler_(std::move(handler)) {
    server_.Post("/v1/chat/completions", [this](const httplib::Request& req, httplib::Response& res) {
      const int n = hits++;
      last_body = req.body;
      last_auth = req.get_header_value("Authorization");
      handler_(req, res, n);
    });
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  ~FakeEndpoint() {
    server_.stop();
    thread_.join();
  }
  std::string url() const { return "http://127.0.0.1:" + std::to_string(port_) + "/v1/chat/completions"; }

  std::atomic<int> hits{0};
  std::string last_body;
  std::string last_auth;

 private:
  httplib::Server server_;
  std::function<void(const httplib::Request&, httplib::Response&, int)> handler_;
  int port_ = 0;
  std::thread thread_;
};

std::string completion(const std::string& content) {
  return nlohmann::json{{"choices", {{{"message", {{"role", "assistant"}, {"content", content}}}}}}}.dump();
}

LlmClientConfig config_for(const FakeEndpoint& ep, std::size_t retries, double timeout = 2.0) {
  LlmClientConfig cfg;
  cfg.endpoint = ep.url();
  cfg.model = "test-model";
  cfg.api_key_env = kKeyVar;
  cfg.max_retries = retries;
  cfg.timeout_seconds = timeout;
  return cfg;
}

struct SleepLog {
  std::vector<std::chrono::milliseconds> calls;
  RemoteClient::Sleeper sleeper() {
    return [this](std::chrono::milliseconds d) { calls.push_back(d); };
  }
};

const RemoteClient::Sleeper kNoSleep = [](std::chrono::milliseconds) {};

const std::vector<ChatMessage> kMessages = {{"system", "be terse"}, {"user", "RULES\n#0: IF a > 1 THEN b"}};

}  // namespace

TEST_SUITE("remote_client") {
  TEST_CASE("posts the chat request and returns the first choice") {
    ::setenv(kKeyVar, "sk-test", 1);
    FakeEndpoint ep([](const httplib::Request&, httplib::Response& res, int) {
      res.set_content(completion("RULE 0: KEEP"), "application/json");
    });
    SleepLog log;
    RemoteClient client(config_for(ep, 2), log.sleeper());
    CHECK(client.complete(kMessages) == "RULE 0: KEEP");
    CHECK(client.attempts() == 1u);
    CHECK(log.calls.empty());
    CHECK(ep.last_auth == "Bearer sk-test");
    const auto body = nlohmann::json::parse(ep.last_body);
    CHECK(body["model"] == "test-model");
    CHECK(body["temperature"] == 0.0);
    REQUIRE(body["messages"].size() == 2u);
    CHECK(body["messages"][0]["role"] == "system");
    CHECK(body["messages"][1]["content"] == kMessages[1].content);
  }

  TEST_CASE("a missing API key fails without contacting the endpoint") {
    ::unsetenv(kKeyVar);
    FakeEndpoint ep([](const httplib::Request&, httplib::Response& res, int) {
      res.set_content(completion("x"), "application/json");
    });
    RemoteClient client(config_for(ep, 2), kNoSleep);
    CHECK_THROWS_AS(client.complete(kMessages), RefinementUnavailable);
    CHECK(ep.hits == 0);
  }

  TEST_CASE("server errors are retried with doubling backoff, then reported") {
    ::setenv(kKeyVar, "sk-test", 1);
    FakeEndpoint ep([](const httplib::Request&, httplib::Response& res, int) { res.status = 500; });
    SleepLog log;
    RemoteClient client(config_for(ep, 3), log.sleeper());
    try {
      client.complete(kMessages);
      FAIL("expected RefinementUnavailable");
    } catch (const RefinementUnavailable& e) {
      CHECK(std::string(e.what()).find("HTTP status 500") != std::string::npos);
    }
    CHECK(client.attempts() == 4u);
    CHECK(ep.hits == 4);
    CHECK(log.calls == std::vector<std::chrono::milliseconds>{std::chrono::milliseconds(1000),
                                                               std::chrono::milliseconds(2000),
                                                               std::chrono::milliseconds(4000)});
  }

  TEST_CASE("a transient failure is recovered by a retry") {
    ::setenv(kKeyVar, "sk-test", 1);
    FakeEndpoint ep([](const httplib::Request&, httplib::Response& res, int n) {
      if (n == 0) {
        res.set_content("{not json", "application/json");
        return;
      }
      res.set_content(completion("KEEP 0: fine"), "application/json");
    });
    SleepLog log;
    RemoteClient client(config_for(ep, 2), log.sleeper());
    CHECK(client.complete(kMessages) == "KEEP 0: fine");
    CHECK(client.attempts() == 2u);
    CHECK(log.calls.size() == 1u);
  }

  TEST_CASE("timeouts on every attempt end in RefinementUnavailable") {
    ::setenv(kKeyVar, "sk-test", 1);
    FakeEndpoint ep([](const httplib::Request&, httplib::Response& res, int) {
      std::this_thread::sleep_for(std::chrono::milliseconds(800));
      res.set_content(completion("late"), "application/json");
    });
    SleepLog log;
    RemoteClient client(config_for(ep, 1, 0.2), log.sleeper());
    CHECK_THROWS_AS(client.complete(kMessages), RefinementUnavailable);
    CHECK(client.attempts() == 2u);
  }

  TEST_CASE("an unreachable endpoint is reported, not thrown as a crash") {
    ::setenv(kKeyVar, "sk-test", 1);
    LlmClientConfig cfg;
    cfg.endpoint = "http://127.0.0.1:1/v1/chat/completions";
    cfg.api_key_env = kKeyVar;
    cfg.max_retries = 1;
    cfg.timeout_seconds = 0.5;
    SleepLog log;
    RemoteClient client(cfg, log.sleeper());
    CHECK_THROWS_AS(client.complete(kMessages), RefinementUnavailable);
    CHECK(client.attempts() == 2u);
  }

  TEST_CASE("the remote client plugs into the refinement protocol") {
    ::setenv(kKeyVar, "sk-test", 1);
    FakeEndpoint ep([](const httplib::Request& req, httplib::Response& res, int) {
      const bool pruning = req.body.find("PHASE: RULE PRUNING") != std::string::npos;
      res.set_content(completion(pruning ? "KEEP 0: plausible" : "RULE 0: KEEP\nCONTEXT 0: High values."),
                      "application/json");
    });
    const FeatureSchema schema({{"a", FeatureKind::Numeric, {}}}, "y", {"n", "b"});
    RuleSet rs;
    Rule r;
    r.predicates = {Predicate::gt(0, 1)};
    r.class_index = 1;
    r.anchor = {2};
    rs.add(r);
    ProtocolRefiner refiner(std::make_shared<RemoteClient>(config_for(ep, 0), kNoSleep));
    const auto [out, transcript] = refiner.refine(rs, schema);
    CHECK(ep.hits == 2);
    CHECK(out.rules()[0].context == "plausible");
    CHECK(transcript.adaptation_response == "RULE 0: KEEP\nCONTEXT 0: High values.");
    CHECK(transcript.to_json(schema).dump().find("sk-test") == std::string::npos);
  }

  TEST_CASE("endpoint URLs are validated") {
    LlmClientConfig cfg;
    cfg.endpoint = "ftp://example.com/x";
    CHECK_THROWS_AS(RemoteClient{cfg}, ConfigError);
    cfg.endpoint = "example.com/x";
    CHECK_THROWS_AS(RemoteClient{cfg}, ConfigError);
  }
}
