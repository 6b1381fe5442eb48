#include <catch2/catch_amalgamated.hpp>

#include <unistd.h>

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <memory>

#include "premia/inference_client.hpp"
#include "premia/util.hpp"

using Catch::Matchers::ContainsSubstring;
using Catch::Matchers::WithinAbs;
using namespace premia;
using namespace premia::client;
using nlohmann::json;

namespace {

constexpr const char* kTokenVar = "PREMIA_TEST_TOKEN";
constexpr const char* kSecret = "hunter2-super-secret";

EndpointConfig test_config() {
  EndpointConfig cfg;
  cfg.base_url = "http://example.test";
  cfg.model_name = "toy-1";
  cfg.auth_token_env = kTokenVar;
  cfg.max_retries = 3;
  cfg.backoff_s = 0.0;  // keep unit tests instant
  return cfg;
}

// One recorded exchange; `calls` counts transport invocations across retries.
struct FakeEndpoint {
  std::function<HttpResponse(int call)> script;
  int calls = 0;
  std::string last_path;
  json last_body;
  std::vector<std::pair<std::string, std::string>> last_headers;

  Transport transport() {
    return [this](const std::string& path, const std::string& body,
                  const std::vector<std::pair<std::string, std::string>>& headers) {
      last_path = path;
      last_body = json::parse(body);
      last_headers = headers;
      return script(calls++);
    };
  }

  std::string header(const std::string& name) const {
    for (const auto& [k, v] : last_headers)
      if (k == name) return v;
    return "";
  }
};

std::string completions_body(const std::vector<std::string>& tokens,
                             const std::vector<json>& logprobs,
                             const std::vector<size_t>& offsets) {
  json lp;
  lp["tokens"] = tokens;
  lp["token_logprobs"] = logprobs;
  if (!offsets.empty()) lp["text_offset"] = offsets;
  return json{{"choices", json::array({json{{"text", ""}, {"logprobs", lp}}})}}.dump();
}

HttpResponse ok(const std::string& body) { return {200, body}; }

}  // namespace

TEST_CASE("endpoint config validation") {
  EndpointConfig cfg = test_config();
  CHECK_NOTHROW(cfg.validate());

  SECTION("base url needs a scheme") {
    cfg.base_url = "example.test:8000";
    CHECK_THROWS_WITH(cfg.validate(), ContainsSubstring("http://"));
  }
  SECTION("model name required") {
    cfg.model_name = "";
    CHECK_THROWS_AS(cfg.validate(), ValidationError);
  }
  SECTION("bounds") {
    cfg.timeout_s = 0.0;
    CHECK_THROWS_AS(cfg.validate(), ValidationError);
    cfg = test_config();
    cfg.max_retries = -1;
    CHECK_THROWS_AS(cfg.validate(), ValidationError);
    cfg = test_config();
    cfg.parallelism = 0;
    CHECK_THROWS_AS(cfg.validate(), ValidationError);
  }
  SECTION("logprob base conversion factors") {
    CHECK(cfg.logprob_factor() == 1.0);
    cfg.logprob_base = "2";
    CHECK_THAT(cfg.logprob_factor(), WithinAbs(std::log(2.0), 1e-15));
    cfg.logprob_base = "10";
    CHECK_THAT(cfg.logprob_factor(), WithinAbs(std::log(10.0), 1e-15));
    cfg.logprob_base = "1";
    CHECK_THROWS_AS(cfg.logprob_factor(), ValidationError);
    cfg.logprob_base = "banana";
    CHECK_THROWS_WITH(cfg.logprob_factor(), ContainsSubstring("logprob_base"));
  }
  SECTION("json round trip never carries the token value") {
    setenv(kTokenVar, kSecret, 1);
    json obj = cfg.to_json();
    CHECK(obj.dump().find(kSecret) == std::string::npos);
    CHECK(obj.at("auth_token_env") == kTokenVar);  // only the variable NAME
    EndpointConfig back = EndpointConfig::from_json(obj);
    CHECK(back.base_url == cfg.base_url);
    CHECK(back.model_name == cfg.model_name);
    CHECK(back.max_retries == cfg.max_retries);
  }
}

TEST_CASE("base url parsing") {
  auto plain = detail::parse_base_url("http://host:8000");
  CHECK(plain.origin == "http://host:8000");
  CHECK(plain.path_prefix.empty());

  auto prefixed = detail::parse_base_url("https://host/api/v2/");
  CHECK(prefixed.origin == "https://host");
  CHECK(prefixed.path_prefix == "/api/v2");

  CHECK_THROWS_WITH(detail::parse_base_url("host:8000"), ContainsSubstring("scheme"));
}

TEST_CASE("fetch_full_logprobs parses a recorded exchange") {
  setenv(kTokenVar, kSecret, 1);
  FakeEndpoint fake;
  fake.script = [](int) {
    return ok(completions_body({"Hello", " world", "!"}, {-0.5, -0.25, -1.0}, {0, 5, 11}));
  };
  CompletionsClient c(test_config(), nullptr, nullptr, fake.transport());

  FetchedTokens out = c.fetch_full_logprobs("Hello world!");
  REQUIRE(out.tokens.size() == 3);
  CHECK(out.tokens[0].first == "Hello");
  CHECK(out.tokens[0].second == -0.5);
  CHECK(out.tokens[2].first == "!");
  CHECK_FALSE(out.dropped_null_first);
  CHECK_FALSE(out.boundary_straddle);

  // wire format: echoed completions scoring with zero generation
  CHECK(fake.last_path == "/v1/completions");
  CHECK(fake.last_body.at("model") == "toy-1");
  CHECK(fake.last_body.at("prompt") == "Hello world!");
  CHECK(fake.last_body.at("max_tokens") == 0);
  CHECK(fake.last_body.at("echo") == true);
  CHECK(fake.last_body.at("logprobs") == 0);
  CHECK(fake.header("Authorization") == std::string("Bearer ") + kSecret);
  CHECK(fake.header("Content-Type") == "application/json");
}

TEST_CASE("path prefix from the base url is preserved") {
  setenv(kTokenVar, kSecret, 1);
  FakeEndpoint fake;
  fake.script = [](int) { return ok(completions_body({"x"}, {-1.0}, {0})); };
  EndpointConfig cfg = test_config();
  cfg.base_url = "http://example.test/serving";
  CompletionsClient c(cfg, nullptr, nullptr, fake.transport());
  c.fetch_full_logprobs("x");
  CHECK(fake.last_path == "/serving/v1/completions");
}

TEST_CASE("a null first logprob is dropped and flagged") {
  setenv(kTokenVar, kSecret, 1);
  FakeEndpoint fake;
  fake.script = [](int) {
    return ok(completions_body({"Hello", " world"}, {nullptr, -0.7}, {0, 5}));
  };
  CompletionsClient c(test_config(), nullptr, nullptr, fake.transport());
  FetchedTokens out = c.fetch_full_logprobs("Hello world");
  REQUIRE(out.tokens.size() == 1);
  CHECK(out.tokens[0].first == " world");
  CHECK(out.tokens[0].second == -0.7);
  CHECK(out.dropped_null_first);
}

TEST_CASE("a null logprob elsewhere is a protocol error") {
  setenv(kTokenVar, kSecret, 1);
  FakeEndpoint fake;
  fake.script = [](int) { return ok(completions_body({"a", "b"}, {-0.5, nullptr}, {0, 1})); };
  CompletionsClient c(test_config(), nullptr, nullptr, fake.transport());
  CHECK_THROWS_AS(c.fetch_full_logprobs("ab"), ProtocolError);
}

TEST_CASE("wire logprobs are converted to nats") {
  setenv(kTokenVar, kSecret, 1);
  FakeEndpoint fake;
  fake.script = [](int) { return ok(completions_body({"ab"}, {-3.0}, {0})); };
  EndpointConfig cfg = test_config();
  cfg.logprob_base = "2";
  CompletionsClient c(cfg, nullptr, nullptr, fake.transport());
  FetchedTokens out = c.fetch_full_logprobs("ab");
  REQUIRE(out.tokens.size() == 1);
  CHECK_THAT(out.tokens[0].second, WithinAbs(-3.0 * std::log(2.0), 1e-15));
}

TEST_CASE("conditional slicing by character offsets") {
  setenv(kTokenVar, kSecret, 1);

  SECTION("clean boundary keeps only response tokens") {
    FakeEndpoint fake;
    fake.script = [](int) {
      return ok(completions_body({"ab", "cd"}, {-0.5, -0.25}, {0, 2}));
    };
    CompletionsClient c(test_config(), nullptr, nullptr, fake.transport());
    FetchedTokens out = c.fetch_cond_logprobs("ab", "cd");
    REQUIRE(out.tokens.size() == 1);
    CHECK(out.tokens[0].first == "cd");
    CHECK_FALSE(out.boundary_straddle);
  }
  SECTION("straddling token goes to the response side with a flag") {
    FakeEndpoint fake;
    fake.script = [](int) {
      return ok(completions_body({"ab", "cd"}, {-0.5, -0.25}, {0, 2}));
    };
    CompletionsClient c(test_config(), nullptr, nullptr, fake.transport());
    FetchedTokens out = c.fetch_cond_logprobs("abc", "d");
    REQUIRE(out.tokens.size() == 1);
    CHECK(out.tokens[0].first == "cd");
    CHECK(out.boundary_straddle);
  }
  SECTION("empty response never issues a request") {
    FakeEndpoint fake;
    fake.script = [](int) { return ok(completions_body({"ab"}, {-0.5}, {0})); };
    CompletionsClient c(test_config(), nullptr, nullptr, fake.transport());
    FetchedTokens out = c.fetch_cond_logprobs("ab", "");
    CHECK(out.tokens.empty());
    CHECK(fake.calls == 0);
  }
  SECTION("offsets beyond the text are a protocol error listing the span") {
    FakeEndpoint fake;
    fake.script = [](int) { return ok(completions_body({"abcd"}, {-0.5}, {3})); };
    CompletionsClient c(test_config(), nullptr, nullptr, fake.transport());
    CHECK_THROWS_WITH(c.fetch_cond_logprobs("ab", "cd"), ContainsSubstring("spans [3, 7)"));
  }
  SECTION("offset count must match token count") {
    FakeEndpoint fake;
    fake.script = [](int) { return ok(completions_body({"ab", "cd"}, {-0.5, -0.25}, {0})); };
    CompletionsClient c(test_config(), nullptr, nullptr, fake.transport());
    CHECK_THROWS_AS(c.fetch_full_logprobs("abcd"), ProtocolError);
  }
  SECTION("missing text_offset falls back to cumulative token lengths") {
    FakeEndpoint fake;
    fake.script = [](int) { return ok(completions_body({"ab", "cd"}, {-0.5, -0.25}, {})); };
    CompletionsClient c(test_config(), nullptr, nullptr, fake.transport());
    FetchedTokens out = c.fetch_cond_logprobs("ab", "cd");
    REQUIRE(out.tokens.size() == 1);
    CHECK(out.tokens[0].first == "cd");
  }
}

TEST_CASE("auth failures are not retried") {
  setenv(kTokenVar, kSecret, 1);
  for (int status : {401, 403}) {
    FakeEndpoint fake;
    fake.script = [status](int) { return HttpResponse{status, "denied"}; };
    CompletionsClient c(test_config(), nullptr, nullptr, fake.transport());
    try {
      c.fetch_full_logprobs("x");
      FAIL("expected AuthError");
    } catch (const AuthError& e) {
      CHECK(fake.calls == 1);  // zero retries
      CHECK_THAT(e.what(), ContainsSubstring(std::to_string(status)));
      CHECK(std::string(e.what()).find(kSecret) == std::string::npos);
    }
  }
}

TEST_CASE("missing auth env var fails before any request") {
  unsetenv("PREMIA_NO_SUCH_TOKEN");
  FakeEndpoint fake;
  fake.script = [](int) { return ok("{}"); };
  EndpointConfig cfg = test_config();
  cfg.auth_token_env = "PREMIA_NO_SUCH_TOKEN";
  CompletionsClient c(cfg, nullptr, nullptr, fake.transport());
  CHECK_THROWS_WITH(c.fetch_full_logprobs("x"), ContainsSubstring("PREMIA_NO_SUCH_TOKEN"));
  CHECK(fake.calls == 0);
}

TEST_CASE("429 responses are retried until they clear") {
  setenv(kTokenVar, kSecret, 1);
  FakeEndpoint fake;
  fake.script = [](int call) {
    if (call < 2) return HttpResponse{429, "slow down"};
    return ok(completions_body({"a"}, {-1.0}, {0}));
  };
  CompletionsClient c(test_config(), nullptr, nullptr, fake.transport());
  FetchedTokens out = c.fetch_full_logprobs("a");
  CHECK(out.tokens.size() == 1);
  CHECK(fake.calls == 3);
}

TEST_CASE("attempts never exceed max_retries + 1") {
  setenv(kTokenVar, kSecret, 1);

  SECTION("persistent 429") {
    FakeEndpoint fake;
    fake.script = [](int) { return HttpResponse{429, "no"}; };
    EndpointConfig cfg = test_config();
    cfg.max_retries = 2;
    CompletionsClient c(cfg, nullptr, nullptr, fake.transport());
    CHECK_THROWS_WITH(c.fetch_full_logprobs("a"), ContainsSubstring("3 attempts"));
    CHECK(fake.calls == 3);
  }
  SECTION("persistent transport failure") {
    FakeEndpoint fake;
    fake.script = [](int) -> HttpResponse { throw TransportError("connection refused"); };
    EndpointConfig cfg = test_config();
    cfg.max_retries = 1;
    CompletionsClient c(cfg, nullptr, nullptr, fake.transport());
    CHECK_THROWS_AS(c.fetch_full_logprobs("a"), TransportError);
    CHECK(fake.calls == 2);
  }
  SECTION("zero retries means exactly one attempt") {
    FakeEndpoint fake;
    fake.script = [](int) -> HttpResponse { throw TransportError("down"); };
    EndpointConfig cfg = test_config();
    cfg.max_retries = 0;
    CompletionsClient c(cfg, nullptr, nullptr, fake.transport());
    CHECK_THROWS_AS(c.fetch_full_logprobs("a"), TransportError);
    CHECK(fake.calls == 1);
  }
}

TEST_CASE("protocol errors name the endpoint and are not retried") {
  setenv(kTokenVar, kSecret, 1);

  SECTION("unexpected status") {
    FakeEndpoint fake;
    fake.script = [](int) { return HttpResponse{500, "boom"}; };
    CompletionsClient c(test_config(), nullptr, nullptr, fake.transport());
    CHECK_THROWS_WITH(c.fetch_full_logprobs("x"),
                      ContainsSubstring("http://example.test") &&
                          ContainsSubstring("500"));
    CHECK(fake.calls == 1);
  }
  SECTION("malformed json body") {
    FakeEndpoint fake;
    fake.script = [](int) { return ok("{\"choices\": ["); };
    CompletionsClient c(test_config(), nullptr, nullptr, fake.transport());
    CHECK_THROWS_WITH(c.fetch_full_logprobs("x"), ContainsSubstring("malformed JSON"));
  }
  SECTION("no choices") {
    FakeEndpoint fake;
    fake.script = [](int) { return ok(R"({"choices": []})"); };
    CompletionsClient c(test_config(), nullptr, nullptr, fake.transport());
    CHECK_THROWS_WITH(c.fetch_full_logprobs("x"), ContainsSubstring("no choices"));
  }
  SECTION("choices without logprobs (echo unsupported)") {
    FakeEndpoint fake;
    fake.script = [](int) { return ok(R"({"choices": [{"text": "x"}]})"); };
    CompletionsClient c(test_config(), nullptr, nullptr, fake.transport());
    CHECK_THROWS_WITH(c.fetch_full_logprobs("x"), ContainsSubstring("no logprobs"));
  }
  SECTION("mismatched token and logprob arrays") {
    FakeEndpoint fake;
    fake.script = [](int) {
      json lp = {{"tokens", json::array({"a", "b"})}, {"token_logprobs", json::array({-1.0})}};
      return ok(json{{"choices", json::array({json{{"logprobs", lp}}})}}.dump());
    };
    CompletionsClient c(test_config(), nullptr, nullptr, fake.transport());
    CHECK_THROWS_WITH(c.fetch_full_logprobs("ab"), ContainsSubstring("mismatched"));
  }
}

TEST_CASE("responses are cached by model and text digest") {
  setenv(kTokenVar, kSecret, 1);

  SECTION("in-memory cache short-circuits repeat fetches") {
    FakeEndpoint fake;
    fake.script = [](int) { return ok(completions_body({"a"}, {-1.0}, {0})); };
    auto cache = std::make_shared<LogprobCache>();
    CompletionsClient c(test_config(), nullptr, cache, fake.transport());
    c.fetch_full_logprobs("a");
    c.fetch_full_logprobs("a");
    CHECK(fake.calls == 1);
    c.fetch_full_logprobs("b");
    CHECK(fake.calls == 2);
    CHECK(cache->size() == 2);

    // prompt vs response split does not bypass the full-text cache
    FetchedTokens out = c.fetch_cond_logprobs("", "a");
    CHECK(fake.calls == 2);
    CHECK(out.tokens.size() == 1);
  }
  SECTION("file-backed cache survives a new client") {
    auto path = std::filesystem::temp_directory_path() /
                ("premia_client_test_cache_" + std::to_string(::getpid()) + ".jsonl");
    std::filesystem::remove(path);
    {
      FakeEndpoint fake;
      fake.script = [](int) { return ok(completions_body({"a"}, {-1.0}, {0})); };
      auto cache = std::make_shared<LogprobCache>(path.string());
      CompletionsClient c(test_config(), nullptr, cache, fake.transport());
      c.fetch_full_logprobs("a");
      CHECK(fake.calls == 1);
    }
    {
      FakeEndpoint fake;
      fake.script = [](int) -> HttpResponse { throw TransportError("offline"); };
      auto cache = std::make_shared<LogprobCache>(path.string());
      CHECK(cache->size() == 1);
      CompletionsClient c(test_config(), nullptr, cache, fake.transport());
      FetchedTokens out = c.fetch_full_logprobs("a");  // served from disk
      CHECK(fake.calls == 0);
      REQUIRE(out.tokens.size() == 1);
      CHECK(out.tokens[0].second == -1.0);
    }
    std::filesystem::remove(path);
  }
  SECTION("cache files never contain the auth token") {
    auto path = std::filesystem::temp_directory_path() /
                ("premia_client_test_cache2_" + std::to_string(::getpid()) + ".jsonl");
    std::filesystem::remove(path);
    FakeEndpoint fake;
    fake.script = [](int) { return ok(completions_body({"a"}, {-1.0}, {0})); };
    auto cache = std::make_shared<LogprobCache>(path.string());
    CompletionsClient c(test_config(), nullptr, cache, fake.transport());
    c.fetch_full_logprobs("a");
    CHECK(util::read_file(path).find(kSecret) == std::string::npos);
    std::filesystem::remove(path);
  }
}

TEST_CASE("rate limiter") {
  SECTION("zero rate is a no-op") {
    RateLimiter unlimited(0.0);
    auto t0 = std::chrono::steady_clock::now();
    for (int i = 0; i < 1000; ++i) unlimited.acquire();
    CHECK(std::chrono::steady_clock::now() - t0 < std::chrono::seconds(1));
  }
  SECTION("positive rate spaces acquisitions") {
    RateLimiter limited(500.0);
    auto t0 = std::chrono::steady_clock::now();
    for (int i = 0; i < 3; ++i) limited.acquire();  // burst 1 + two waits of 2ms
    auto elapsed = std::chrono::steady_clock::now() - t0;
    CHECK(elapsed >= std::chrono::milliseconds(2));
  }
}
