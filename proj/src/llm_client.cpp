#include "toolret/llm_client.hpp"

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <thread>

#define CPPHTTPLIB_OPENSSL_SUPPORT
#include <httplib.h>
#include <json.hpp>

#include "toolret/errors.hpp"
#include "toolret/strings.hpp"

namespace toolret {

namespace {

using ordered_json = nlohmann::ordered_json;

// Splits "scheme://host[:port][/prefix]" into the client origin and the
// path prefix. httplib takes the origin whole.
struct ParsedUrl {
  std::string origin;
  std::string path_prefix;
};

ParsedUrl parse_base_url(const std::string& base_url) {
  const auto scheme_end = base_url.find("://");
  if (scheme_end == std::string::npos) {
    throw std::invalid_argument("base_url needs a scheme: " + base_url);
  }
  const auto path_start = base_url.find('/', scheme_end + 3);
  ParsedUrl parsed;
  if (path_start == std::string::npos) {
    parsed.origin = base_url;
  } else {
    parsed.origin = base_url.substr(0, path_start);
    parsed.path_prefix = base_url.substr(path_start);
  }
  while (!parsed.path_prefix.empty() && parsed.path_prefix.back() == '/') {
    parsed.path_prefix.pop_back();
  }
  return parsed;
}

std::string body_excerpt(const std::string& body) {
  constexpr size_t kMax = 200;
  if (body.size() <= kMax) return body;
  return body.substr(0, kMax) + "...";
}

// Replaces any occurrence of the API key in text destined for errors or
// logs. A response body that reflects the Authorization header must not
// leak the key through our diagnostics.
std::string scrub_secret(std::string text, const std::string& secret) {
  if (secret.empty()) return text;
  size_t at = 0;
  while ((at = text.find(secret, at)) != std::string::npos) {
    text.replace(at, secret.size(), "[redacted]");
    at += 10;  // length of the replacement
  }
  return text;
}

std::string read_api_key(const RemoteProviderConfig& config) {
  const char* key = std::getenv(config.api_key_env.c_str());
  if (key == nullptr || *key == '\0') {
    throw ProviderError("environment variable " + config.api_key_env +
                        " is not set (needed for the provider API key)");
  }
  return key;
}

std::optional<double> parse_retry_after(const httplib::Response& res) {
  if (!res.has_header("Retry-After")) return std::nullopt;
  const std::string value = res.get_header_value("Retry-After");
  double seconds = 0.0;
  try {
    size_t consumed = 0;
    seconds = std::stod(value, &consumed);
    if (consumed != value.size() || seconds < 0.0) return std::nullopt;
  } catch (const std::exception&) {
    return std::nullopt;  // HTTP-date form; fall back to our own backoff
  }
  return seconds;
}

std::string extract_completion(const std::string& body, const std::string& api_key) {
  ordered_json doc;
  try {
    doc = ordered_json::parse(body);
    return doc.at("choices").at(0).at("message").at("content").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw ProviderError("provider returned an unparseable completion (" +
                        std::string(e.what()) +
                        "); body: " + scrub_secret(body_excerpt(body), api_key));
  }
}

}  // namespace

std::string build_request_body(const RemoteProviderConfig& config,
                               const std::string& prompt) {
  ordered_json body;
  body["model"] = config.model_name;
  body["temperature"] = config.temperature;
  body["messages"] = ordered_json::array();
  ordered_json msg;
  msg["role"] = "user";
  msg["content"] = prompt;
  body["messages"].push_back(std::move(msg));
  return body.dump();
}

std::string chat(const RemoteProviderConfig& config, const std::string& prompt) {
  if (config.timeout_seconds <= 0.0) throw std::invalid_argument("timeout must be > 0");
  if (config.max_retries < 0) throw std::invalid_argument("max_retries must be >= 0");
  const std::string api_key = read_api_key(config);
  const ParsedUrl url = parse_base_url(config.base_url);
  const std::string path = url.path_prefix + "/chat/completions";
  const std::string payload = build_request_body(config, prompt);

  httplib::Client client(url.origin);
  const auto timeout = std::chrono::duration<double>(config.timeout_seconds);
  client.set_connection_timeout(std::chrono::duration_cast<std::chrono::milliseconds>(timeout));
  client.set_read_timeout(std::chrono::duration_cast<std::chrono::milliseconds>(timeout));
  client.set_write_timeout(std::chrono::duration_cast<std::chrono::milliseconds>(timeout));

  httplib::Headers headers{{"Authorization", "Bearer " + api_key}};

  const int attempts = config.max_retries + 1;
  int last_status = 0;
  std::string last_detail;
  for (int attempt = 0; attempt < attempts; ++attempt) {
    auto res = client.Post(path, headers, payload, "application/json");
    if (res && res->status >= 200 && res->status < 300) {
      return extract_completion(res->body, api_key);
    }
    if (res) {
      last_status = res->status;
      last_detail = "HTTP " + std::to_string(res->status) +
                    "; body: " + scrub_secret(body_excerpt(res->body), api_key);
    } else {
      last_status = 0;
      last_detail = "transport error: " + httplib::to_string(res.error());
    }
    if (attempt + 1 == attempts) break;

    double delay_ms = static_cast<double>(config.backoff_initial_ms) *
                      static_cast<double>(1u << std::min(attempt, 20));
    if (res && res->status == 429) {
      if (auto retry_after = parse_retry_after(*res)) {
        delay_ms = std::max(delay_ms, *retry_after * 1000.0);
      }
    }
    std::this_thread::sleep_for(std::chrono::duration<double, std::milli>(delay_ms));
  }
  throw ProviderError("provider request failed after " + std::to_string(attempts) +
                          " attempts: " + last_detail,
                      last_status);
}

RemoteProvider::RemoteProvider(RemoteProviderConfig config)
    : config_(std::move(config)) {}

std::string RemoteProvider::identity() const {
  return "remote-" + config_.model_name + "@" + config_.base_url;
}

std::string RemoteProvider::complete(const std::string& prompt) {
  return chat(config_, prompt);
}

}  // namespace toolret
