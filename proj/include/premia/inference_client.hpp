#pragma once

// Include this header (not <httplib.h> directly) everywhere HTTP is needed so
// the TLS configuration macro is consistent across translation units.
#ifndef CPPHTTPLIB_OPENSSL_SUPPORT
#define CPPHTTPLIB_OPENSSL_SUPPORT
#endif

#include <chrono>
#include <cmath>
#include <condition_variable>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <httplib.h>
#include <json.hpp>

#include "premia/errors.hpp"
#include "premia/util.hpp"

namespace premia::client {

using json = nlohmann::json;

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

struct EndpointConfig {
  std::string base_url;                 // scheme://host[:port][/path-prefix]
  std::string model_name;
  std::string auth_token_env;           // env var NAME; the value never leaves process memory
  double timeout_s = 30.0;
  int max_retries = 3;
  double backoff_s = 0.5;               // exponential base: backoff * 2^attempt
  std::string logprob_base = "e";       // "e", "2", or "10" (nats assumed by default)
  double requests_per_second = 0.0;     // 0 = unlimited
  int parallelism = 1;

  void validate() const {
    if (base_url.rfind("http://", 0) != 0 && base_url.rfind("https://", 0) != 0)
      throw ValidationError("base_url must start with http:// or https://");
    if (model_name.empty()) throw ValidationError("model_name must be set");
    if (!(timeout_s > 0)) throw ValidationError("timeout must be > 0");
    if (max_retries < 0) throw ValidationError("max_retries must be >= 0");
    if (backoff_s < 0) throw ValidationError("backoff must be >= 0");
    if (requests_per_second < 0) throw ValidationError("requests_per_second must be >= 0");
    if (parallelism < 1) throw ValidationError("parallelism must be >= 1");
    logprob_factor();
  }

  // Multiplier converting wire logprobs to nats.
  double logprob_factor() const {
    if (logprob_base == "e") return 1.0;
    double b = 0.0;
    try {
      size_t used = 0;
      b = std::stod(logprob_base, &used);
      if (used != logprob_base.size()) b = 0.0;
    } catch (const std::exception&) {
      b = 0.0;
    }
    if (!(b > 0) || b == 1.0)
      throw ValidationError("logprob_base must be \"e\" or a positive number != 1");
    return std::log(b);
  }

  json to_json() const {
    return json{{"base_url", base_url},
                {"model_name", model_name},
                {"auth_token_env", auth_token_env},
                {"timeout_s", timeout_s},
                {"max_retries", max_retries},
                {"backoff_s", backoff_s},
                {"logprob_base", logprob_base},
                {"requests_per_second", requests_per_second},
                {"parallelism", parallelism}};
  }

  static EndpointConfig from_json(const json& obj) {
    EndpointConfig c;
    if (!obj.is_object()) throw ValidationError("endpoint config must be a JSON object");
    c.base_url = obj.value("base_url", "");
    c.model_name = obj.value("model_name", "");
    c.auth_token_env = obj.value("auth_token_env", "");
    c.timeout_s = obj.value("timeout_s", c.timeout_s);
    c.max_retries = obj.value("max_retries", c.max_retries);
    c.backoff_s = obj.value("backoff_s", c.backoff_s);
    if (obj.contains("logprob_base")) {
      const json& b = obj.at("logprob_base");
      c.logprob_base = b.is_string() ? b.get<std::string>() : b.dump();
    }
    c.requests_per_second = obj.value("requests_per_second", c.requests_per_second);
    c.parallelism = obj.value("parallelism", c.parallelism);
    c.validate();
    return c;
  }
};

namespace detail {

struct ParsedUrl {
  std::string origin;       // scheme://host[:port]
  std::string path_prefix;  // "" or "/something" (no trailing slash)
};

inline ParsedUrl parse_base_url(const std::string& url) {
  size_t scheme_end = url.find("://");
  if (scheme_end == std::string::npos)
    throw ValidationError("base_url missing scheme: " + url);
  size_t slash = url.find('/', scheme_end + 3);
  ParsedUrl out;
  if (slash == std::string::npos) {
    out.origin = url;
  } else {
    out.origin = url.substr(0, slash);
    out.path_prefix = url.substr(slash);
    while (!out.path_prefix.empty() && out.path_prefix.back() == '/')
      out.path_prefix.pop_back();
  }
  return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Rate limiting (shared across worker threads; safe under concurrent use)
// ---------------------------------------------------------------------------

class RateLimiter {
 public:
  explicit RateLimiter(double requests_per_second) : rate_(requests_per_second) {}

  void acquire() {
    if (rate_ <= 0) return;
    std::unique_lock lock(mu_);
    auto now = std::chrono::steady_clock::now();
    refill(now);
    while (tokens_ < 1.0) {
      auto wait = std::chrono::duration<double>((1.0 - tokens_) / rate_);
      cv_.wait_for(lock, wait);
      now = std::chrono::steady_clock::now();
      refill(now);
    }
    tokens_ -= 1.0;
  }

 private:
  void refill(std::chrono::steady_clock::time_point now) {
    double elapsed = std::chrono::duration<double>(now - last_).count();
    last_ = now;
    tokens_ = std::min(burst_, tokens_ + elapsed * rate_);
  }

  double rate_;
  double burst_ = 1.0;
  double tokens_ = 1.0;
  std::chrono::steady_clock::time_point last_ = std::chrono::steady_clock::now();
  std::mutex mu_;
  std::condition_variable cv_;
};

// ---------------------------------------------------------------------------
// Response cache: JSONL file keyed by (model, sha256 of scored text)
// ---------------------------------------------------------------------------

class LogprobCache {
 public:
  LogprobCache() = default;  // in-memory only

  explicit LogprobCache(std::string path) : path_(std::move(path)) {
    std::ifstream in(path_);
    if (!in) return;
    std::string line;
    while (std::getline(in, line)) {
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      json obj = json::parse(line, nullptr, false);
      if (obj.is_discarded() || !obj.is_object()) continue;  // torn tail line from a kill
      if (!obj.contains("model") || !obj.contains("text_sha256") || !obj.contains("payload"))
        continue;
      entries_[key_of(obj["model"].get<std::string>(), obj["text_sha256"].get<std::string>())] =
          obj["payload"];
    }
  }

  std::optional<json> get(const std::string& model, const std::string& text_sha256) {
    std::lock_guard lock(mu_);
    auto it = entries_.find(key_of(model, text_sha256));
    if (it == entries_.end()) return std::nullopt;
    return it->second;
  }

  void put(const std::string& model, const std::string& text_sha256, json payload) {
    std::lock_guard lock(mu_);
    std::string key = key_of(model, text_sha256);
    if (entries_.contains(key)) return;
    if (!path_.empty()) {
      std::ofstream out(path_, std::ios::app);
      if (!out) throw std::runtime_error("cannot append to cache file " + path_);
      out << json{{"model", model}, {"text_sha256", text_sha256}, {"payload", payload}}.dump()
          << '\n';
    }
    entries_[key] = std::move(payload);
  }

  size_t size() const {
    std::lock_guard lock(mu_);
    return entries_.size();
  }

 private:
  static std::string key_of(const std::string& model, const std::string& sha) {
    return model + "\x1f" + sha;
  }

  std::string path_;
  std::map<std::string, json> entries_;
  mutable std::mutex mu_;
};

// ---------------------------------------------------------------------------
// Completions client
// ---------------------------------------------------------------------------

struct HttpResponse {
  int status = 0;
  std::string body;
};

// path, request body, headers -> response; throws TransportError when the
// request never produced an HTTP response
using Transport =
    std::function<HttpResponse(const std::string& path, const std::string& body,
                               const std::vector<std::pair<std::string, std::string>>& headers)>;

struct FetchedTokens {
  std::vector<std::pair<std::string, double>> tokens;  // nats
  bool dropped_null_first = false;
  bool boundary_straddle = false;
};

class CompletionsClient {
 public:
  CompletionsClient(EndpointConfig cfg, std::shared_ptr<RateLimiter> limiter = nullptr,
                    std::shared_ptr<LogprobCache> cache = nullptr, Transport transport = {})
      : cfg_(std::move(cfg)),
        limiter_(std::move(limiter)),
        cache_(std::move(cache)),
        transport_(std::move(transport)) {
    cfg_.validate();
    auto parsed = detail::parse_base_url(cfg_.base_url);
    path_prefix_ = parsed.path_prefix;
    if (!transport_) {
      http_ = std::make_unique<httplib::Client>(parsed.origin);
      http_->set_connection_timeout(std::chrono::duration<double>(cfg_.timeout_s));
      http_->set_read_timeout(std::chrono::duration<double>(cfg_.timeout_s));
      http_->set_write_timeout(std::chrono::duration<double>(cfg_.timeout_s));
    }
  }

  // Scores `text` via echoed completions; all token logprobs, leading null
  // dropped and flagged.
  FetchedTokens fetch_full_logprobs(const std::string& text) {
    json payload = scored_payload(text);
    return slice(payload, text, 0);
  }

  // Tokens of prompt+response whose span lies in the response; a token
  // straddling the boundary goes to the response side and sets the flag.
  FetchedTokens fetch_cond_logprobs(const std::string& prompt, const std::string& response) {
    if (response.empty()) return {};
    std::string text = prompt + response;
    json payload = scored_payload(text);
    return slice(payload, text, prompt.size());
  }

  int requests_made() const { return requests_; }

 private:
  // Raw logprobs object for the text: {"tokens": [...], "token_logprobs":
  // [...], "text_offset": [...]}; cache hit skips the network entirely.
  json scored_payload(const std::string& text) {
    std::string digest = util::sha256_hex(text);
    if (cache_) {
      if (auto hit = cache_->get(cfg_.model_name, digest)) return *hit;
    }
    json payload = request_once_with_retries(text);
    if (cache_) cache_->put(cfg_.model_name, digest, payload);
    return payload;
  }

  json request_once_with_retries(const std::string& text) {
    json body = {{"model", cfg_.model_name},
                 {"prompt", text},
                 {"max_tokens", 0},
                 {"echo", true},
                 {"logprobs", 0}};
    std::string body_s = body.dump();

    std::vector<std::pair<std::string, std::string>> headers;
    headers.emplace_back("Content-Type", "application/json");
    if (!cfg_.auth_token_env.empty()) {
      const char* token = std::getenv(cfg_.auth_token_env.c_str());
      if (token == nullptr || *token == '\0')
        throw AuthError("auth token env var \"" + cfg_.auth_token_env + "\" is not set");
      headers.emplace_back("Authorization", std::string("Bearer ") + token);
    }

    std::string path = path_prefix_ + "/v1/completions";
    std::string last_error;
    for (int attempt = 0; attempt <= cfg_.max_retries; ++attempt) {
      if (attempt > 0) {
        auto delay = std::chrono::duration<double>(cfg_.backoff_s * std::pow(2.0, attempt - 1));
        std::this_thread::sleep_for(delay);
      }
      if (limiter_) limiter_->acquire();
      HttpResponse resp;
      try {
        resp = send(path, body_s, headers);
        ++requests_;
      } catch (const TransportError& e) {
        last_error = e.what();
        continue;  // retry
      }
      if (resp.status == 401 || resp.status == 403)
        throw AuthError("endpoint " + cfg_.base_url + " rejected credentials (HTTP " +
                        std::to_string(resp.status) + ")");
      if (resp.status == 429) {
        last_error = "HTTP 429 from " + cfg_.base_url;
        continue;  // retry
      }
      if (resp.status != 200)
        throw ProtocolError("endpoint " + cfg_.base_url + " returned HTTP " +
                            std::to_string(resp.status));
      return parse_response_body(resp.body);
    }
    throw TransportError("request to " + cfg_.base_url + " failed after " +
                         std::to_string(cfg_.max_retries + 1) + " attempts: " + last_error);
  }

  HttpResponse send(const std::string& path, const std::string& body,
                    const std::vector<std::pair<std::string, std::string>>& headers) {
    if (transport_) return transport_(path, body, headers);
    httplib::Headers h;
    for (const auto& [k, v] : headers)
      if (k != "Content-Type") h.emplace(k, v);
    auto res = http_->Post(path, h, body, "application/json");
    if (!res)
      throw TransportError("no response from " + cfg_.base_url + ": " +
                           httplib::to_string(res.error()));
    return {res->status, res->body};
  }

  json parse_response_body(const std::string& body) {
    json obj;
    try {
      obj = json::parse(body);
    } catch (const json::exception& e) {
      // nlohmann reports the byte offset in what()
      throw ProtocolError("endpoint " + cfg_.base_url + " sent malformed JSON: " + e.what());
    }
    if (!obj.contains("choices") || !obj["choices"].is_array() || obj["choices"].empty())
      throw ProtocolError("endpoint " + cfg_.base_url + " response has no choices");
    const json& choice = obj["choices"][0];
    if (!choice.contains("logprobs") || choice["logprobs"].is_null())
      throw ProtocolError("endpoint " + cfg_.base_url +
                          " response has no logprobs (echo+logprobs unsupported?)");
    const json& lp = choice["logprobs"];
    if (!lp.contains("tokens") || !lp.contains("token_logprobs"))
      throw ProtocolError("endpoint " + cfg_.base_url +
                          " logprobs object lacks tokens/token_logprobs");
    json payload;
    payload["tokens"] = lp["tokens"];
    payload["token_logprobs"] = lp["token_logprobs"];
    if (lp.contains("text_offset")) payload["text_offset"] = lp["text_offset"];
    return payload;
  }

  // Converts the raw payload to nats and keeps tokens whose span touches
  // [from_offset, end); from_offset 0 means the whole text.
  FetchedTokens slice(const json& payload, const std::string& text, size_t from_offset) {
    const json& toks = payload.at("tokens");
    const json& lps = payload.at("token_logprobs");
    if (!toks.is_array() || !lps.is_array() || toks.size() != lps.size())
      throw ProtocolError("endpoint " + cfg_.base_url +
                          " returned mismatched tokens/token_logprobs arrays");

    std::vector<size_t> offsets;
    if (payload.contains("text_offset")) {
      for (const json& o : payload.at("text_offset")) offsets.push_back(o.get<size_t>());
      if (offsets.size() != toks.size())
        throw ProtocolError("endpoint " + cfg_.base_url + " returned " +
                            std::to_string(offsets.size()) + " text offsets for " +
                            std::to_string(toks.size()) + " tokens");
    } else {
      size_t pos = 0;
      for (const json& t : toks) {
        offsets.push_back(pos);
        pos += t.get<std::string>().size();
      }
    }

    double factor = cfg_.logprob_factor();
    FetchedTokens out;
    for (size_t i = 0; i < toks.size(); ++i) {
      std::string tok = toks[i].get<std::string>();
      size_t start = offsets[i];
      size_t end = start + tok.size();
      if (start > text.size() || end > text.size()) {
        std::ostringstream spans;
        spans << "token " << i << " spans [" << start << ", " << end << ") beyond text length "
              << text.size();
        throw ProtocolError("endpoint " + cfg_.base_url + " boundary detection failed: " +
                            spans.str());
      }
      if (end <= from_offset) continue;  // entirely inside the prompt
      if (start < from_offset) out.boundary_straddle = true;
      if (lps[i].is_null()) {
        if (i == 0) {
          out.dropped_null_first = true;
          continue;
        }
        throw ProtocolError("endpoint " + cfg_.base_url + " returned a null logprob at token " +
                            std::to_string(i));
      }
      out.tokens.emplace_back(std::move(tok), lps[i].get<double>() * factor);
    }
    return out;
  }

  EndpointConfig cfg_;
  std::string path_prefix_;
  std::shared_ptr<RateLimiter> limiter_;
  std::shared_ptr<LogprobCache> cache_;
  Transport transport_;
  std::unique_ptr<httplib::Client> http_;
  int requests_ = 0;
};

}  // namespace premia::client
