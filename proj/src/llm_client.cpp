// Eigen (via refiner.hpp) must precede httplib: <resolv.h> defines a `_res` macro.
#include "more/refiner.hpp"

#include <cstdlib>
#include <thread>

#define CPPHTTPLIB_OPENSSL_SUPPORT
#include <httplib.h>

#include "more/error.hpp"

namespace more {

namespace {

struct Endpoint {
  std::string origin;  // scheme://host[:port]
  std::string path;
};

Endpoint split_url(const std::string& url) {
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) throw ConfigError("LLM endpoint must be an http(s) URL: " + url);
  const auto scheme = url.substr(0, scheme_end);
  if (scheme != "http" && scheme != "https") throw ConfigError("unsupported LLM endpoint scheme '" + scheme + "'");
  const auto path_start = url.find('/', scheme_end + 3);
  if (path_start == std::string::npos) return {url, "/"};
  return {url.substr(0, path_start), url.substr(path_start)};
}

}  // namespace

void LlmClientConfig::validate() const {
  if (!(timeout_seconds > 0.0)) throw ConfigError("LLM timeout must be positive");
  split_url(endpoint);
}

RemoteClient::RemoteClient(LlmClientConfig cfg, Sleeper sleep) : cfg_(std::move(cfg)), sleep_(std::move(sleep)) {
  cfg_.validate();
  if (!sleep_) sleep_ = [](std::chrono::milliseconds d) { std::this_thread::sleep_for(d); };
}

std::string RemoteClient::complete(const std::vector<ChatMessage>& messages) {
  const char* key = std::getenv(cfg_.api_key_env.c_str());
  if (key == nullptr || *key == '\0') {
    throw RefinementUnavailable("environment variable " + cfg_.api_key_env + " is not set");
  }
  nlohmann::json body = {{"model", cfg_.model}, {"temperature", cfg_.temperature}, {"messages", nlohmann::json::array()}};
  for (const auto& m : messages) body["messages"].push_back({{"role", m.role}, {"content", m.content}});

  const auto endpoint = split_url(cfg_.endpoint);
  httplib::Client client(endpoint.origin);
  const auto seconds = static_cast<time_t>(cfg_.timeout_seconds);
  const auto micros = static_cast<time_t>((cfg_.timeout_seconds - static_cast<double>(seconds)) * 1e6);
  client.set_connection_timeout(seconds, micros);
  client.set_read_timeout(seconds, micros);
  client.set_write_timeout(seconds, micros);
  client.set_bearer_token_auth(key);

  std::string last_error;
  auto backoff = std::chrono::milliseconds(1000);
  for (std::size_t attempt = 0; attempt <= cfg_.max_retries; ++attempt) {
    if (attempt > 0) {
      sleep_(backoff);
      backoff *= 2;
    }
    ++attempts_;
    auto res = client.Post(endpoint.path, body.dump(), "application/json");
    if (!res) {
      last_error = "transport error: " + httplib::to_string(res.error());
      continue;
    }
    if (res->status != 200) {
      last_error = "HTTP status " + std::to_string(res->status);
      continue;
    }
    try {
      auto reply = nlohmann::json::parse(res->body);
      return reply.at("choices").at(0).at("message").at("content").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
      last_error = std::string("malformed completion response: ") + e.what();
    }
  }
  throw RefinementUnavailable("LLM request failed after " + std::to_string(cfg_.max_retries + 1) +
                              " attempts: " + last_error);
}

}  // namespace more
