#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <mutex>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

namespace toolret {

// The feedback LLM as a black box: prompt text in, completion text out.
// identity() names the provider for cache keying, so two providers that can
// answer differently must not share an identity.
class FeedbackProvider {
 public:
  virtual ~FeedbackProvider() = default;
  virtual std::string identity() const = 0;
  virtual std::string complete(const std::string& prompt) = 0;
};

// One substring rule of a scripted provider: fires when the prompt contains
// every `contains` needle and none of the `not_contains` needles.
struct ScriptedRule {
  std::vector<std::string> contains;
  std::vector<std::string> not_contains;
  std::string completion;
};

// Deterministic provider driven by an ordered rule list; the first matching
// rule wins and the default always applies. Used as the test oracle and for
// offline runs.
class ScriptedProvider : public FeedbackProvider {
 public:
  ScriptedProvider(std::vector<ScriptedRule> rules, std::string default_completion);
  ScriptedProvider(ScriptedProvider&& other) noexcept
      : rules_(std::move(other.rules_)),
        default_(std::move(other.default_)),
        identity_(std::move(other.identity_)),
        calls_(other.calls_.load()) {}
  static ScriptedProvider from_json_file(const std::string& path);

  std::string identity() const override { return identity_; }
  std::string complete(const std::string& prompt) override;

  size_t call_count() const { return calls_.load(); }

 private:
  friend std::string scripted_chat(const ScriptedProvider&, const std::string&);
  std::vector<ScriptedRule> rules_;
  std::string default_;
  std::string identity_;
  std::atomic<size_t> calls_{0};
};

// Pure rule evaluation, no call counting.
std::string scripted_chat(const ScriptedProvider& provider, const std::string& prompt);

// Append-only on-disk completion cache, JSON-lines of
// {key, prompt, completion, provider, timestamp}. Whole records become
// visible atomically to concurrent readers of the in-memory map.
class FeedbackCache {
 public:
  explicit FeedbackCache(std::string path);

  static std::string make_key(const std::string& identity, const std::string& prompt);

  std::optional<std::string> lookup(const std::string& key) const;
  void insert(const std::string& key, const std::string& prompt,
              const std::string& completion, const std::string& provider_id);

  size_t size() const;
  const std::string& path() const { return path_; }

 private:
  mutable std::mutex mu_;
  std::string path_;
  std::unordered_map<std::string, std::string> entries_;
};

// Serves repeated prompts from the cache so reruns are free and
// deterministic; misses go to the wrapped provider and are recorded.
class CachingProvider : public FeedbackProvider {
 public:
  CachingProvider(FeedbackProvider& inner, FeedbackCache& cache)
      : inner_(inner), cache_(cache) {}

  std::string identity() const override { return inner_.identity(); }
  std::string complete(const std::string& prompt) override;

 private:
  FeedbackProvider& inner_;
  FeedbackCache& cache_;
};

// Token bucket shared by concurrent per-query loops.
class RateLimiter {
 public:
  RateLimiter(double permits_per_second, double burst);
  void acquire();

 private:
  std::mutex mu_;
  double rate_;
  double burst_;
  double tokens_;
  std::chrono::steady_clock::time_point last_;
};

class RateLimitedProvider : public FeedbackProvider {
 public:
  RateLimitedProvider(FeedbackProvider& inner, RateLimiter& limiter)
      : inner_(inner), limiter_(limiter) {}

  std::string identity() const override { return inner_.identity(); }
  std::string complete(const std::string& prompt) override {
    limiter_.acquire();
    return inner_.complete(prompt);
  }

 private:
  FeedbackProvider& inner_;
  RateLimiter& limiter_;
};

}  // namespace toolret
