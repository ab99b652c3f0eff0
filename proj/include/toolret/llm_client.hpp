#pragma once

#include <string>

#include "toolret/provider.hpp"

namespace toolret {

// OpenAI-compatible chat-completion endpoint. The API key is read from the
// named environment variable at request time and is never written to logs,
// traces, or error messages. base_url may carry a path prefix (for example
// "https://api.openai.com/v1"); "/chat/completions" is appended to it.
struct RemoteProviderConfig {
  std::string base_url = "https://api.openai.com/v1";
  std::string model_name = "gpt-3.5-turbo-0125";
  std::string api_key_env = "OPENAI_API_KEY";
  double timeout_seconds = 30.0;
  int max_retries = 3;
  double temperature = 0.0;
  int backoff_initial_ms = 100;
};

// The exact request payload for config+prompt; byte-stable so requests are
// reproducible (auth travels in a header, never in the body).
std::string build_request_body(const RemoteProviderConfig& config,
                               const std::string& prompt);

// Single-turn completion. Non-2xx responses and transport failures are
// retried max_retries times with exponential backoff (a 429 Retry-After
// extends the wait); exhaustion raises ProviderError carrying the last
// status and a body excerpt.
std::string chat(const RemoteProviderConfig& config, const std::string& prompt);

class RemoteProvider : public FeedbackProvider {
 public:
  explicit RemoteProvider(RemoteProviderConfig config);

  std::string identity() const override;
  std::string complete(const std::string& prompt) override;

  const RemoteProviderConfig& config() const { return config_; }

 private:
  RemoteProviderConfig config_;
};

}  // namespace toolret
