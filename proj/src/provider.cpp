#include "toolret/provider.hpp"

#include <chrono>
#include <fstream>
#include <stdexcept>
#include <thread>

#include <json.hpp>

#include "toolret/errors.hpp"
#include "toolret/hash.hpp"

namespace toolret {

namespace {

using ordered_json = nlohmann::ordered_json;

ordered_json script_to_json(const std::vector<ScriptedRule>& rules,
                            const std::string& default_completion) {
  ordered_json doc;
  doc["default"] = default_completion;
  doc["rules"] = ordered_json::array();
  for (const auto& r : rules) {
    ordered_json jr;
    jr["contains"] = r.contains;
    jr["not_contains"] = r.not_contains;
    jr["completion"] = r.completion;
    doc["rules"].push_back(std::move(jr));
  }
  return doc;
}

}  // namespace

ScriptedProvider::ScriptedProvider(std::vector<ScriptedRule> rules,
                                   std::string default_completion)
    : rules_(std::move(rules)), default_(std::move(default_completion)) {
  identity_ = "scripted-" + sha256_hex(script_to_json(rules_, default_).dump()).substr(0, 12);
}

ScriptedProvider ScriptedProvider::from_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open script file: " + path);
  ordered_json doc;
  try {
    doc = ordered_json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path + ": bad script JSON: " + e.what());
  }
  try {
    std::vector<ScriptedRule> rules;
    for (const auto& jr : doc.value("rules", ordered_json::array())) {
      ScriptedRule r;
      r.contains = jr.value("contains", std::vector<std::string>{});
      r.not_contains = jr.value("not_contains", std::vector<std::string>{});
      r.completion = jr.at("completion").get<std::string>();
      rules.push_back(std::move(r));
    }
    return ScriptedProvider(std::move(rules), doc.at("default").get<std::string>());
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path + ": bad script JSON: " + e.what());
  }
}

std::string scripted_chat(const ScriptedProvider& provider, const std::string& prompt) {
  for (const auto& rule : provider.rules_) {
    bool match = true;
    for (const auto& needle : rule.contains) {
      if (prompt.find(needle) == std::string::npos) {
        match = false;
        break;
      }
    }
    if (!match) continue;
    for (const auto& needle : rule.not_contains) {
      if (prompt.find(needle) != std::string::npos) {
        match = false;
        break;
      }
    }
    if (match) return rule.completion;
  }
  return provider.default_;
}

std::string ScriptedProvider::complete(const std::string& prompt) {
  calls_.fetch_add(1);
  return scripted_chat(*this, prompt);
}

std::string FeedbackCache::make_key(const std::string& identity,
                                    const std::string& prompt) {
  return sha256_hex(identity + "\n" + prompt);
}

FeedbackCache::FeedbackCache(std::string path) : path_(std::move(path)) {
  std::ifstream in(path_);
  if (!in) return;  // a fresh cache starts empty
  std::string line;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    ordered_json rec;
    try {
      rec = ordered_json::parse(line);
      entries_[rec.at("key").get<std::string>()] = rec.at("completion").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(path_ + ":" + std::to_string(lineno) + ": bad cache record: " + e.what());
    }
  }
}

std::optional<std::string> FeedbackCache::lookup(const std::string& key) const {
  std::lock_guard lock(mu_);
  auto it = entries_.find(key);
  if (it == entries_.end()) return std::nullopt;
  return it->second;
}

void FeedbackCache::insert(const std::string& key, const std::string& prompt,
                           const std::string& completion,
                           const std::string& provider_id) {
  std::lock_guard lock(mu_);
  if (entries_.count(key)) return;
  ordered_json rec;
  rec["key"] = key;
  rec["prompt"] = prompt;
  rec["completion"] = completion;
  rec["provider"] = provider_id;
  rec["timestamp"] = static_cast<int64_t>(
      std::chrono::duration_cast<std::chrono::seconds>(
          std::chrono::system_clock::now().time_since_epoch())
          .count());
  std::ofstream out(path_, std::ios::app);
  if (!out) throw IoError("cannot append to cache: " + path_);
  out << rec.dump() << '\n';
  out.flush();
  if (!out) throw IoError("cache write failed: " + path_);
  entries_[key] = completion;
}

size_t FeedbackCache::size() const {
  std::lock_guard lock(mu_);
  return entries_.size();
}

std::string CachingProvider::complete(const std::string& prompt) {
  const std::string key = FeedbackCache::make_key(inner_.identity(), prompt);
  if (auto hit = cache_.lookup(key)) return *hit;
  std::string completion = inner_.complete(prompt);
  cache_.insert(key, prompt, completion, inner_.identity());
  return completion;
}

RateLimiter::RateLimiter(double permits_per_second, double burst)
    : rate_(permits_per_second), burst_(burst), tokens_(burst),
      last_(std::chrono::steady_clock::now()) {
  if (rate_ <= 0.0 || burst_ < 1.0) {
    throw std::invalid_argument("rate limiter needs rate > 0 and burst >= 1");
  }
}

void RateLimiter::acquire() {
  while (true) {
    double wait_s = 0.0;
    {
      std::lock_guard lock(mu_);
      const auto now = std::chrono::steady_clock::now();
      tokens_ = std::min(burst_, tokens_ + rate_ * std::chrono::duration<double>(now - last_).count());
      last_ = now;
      if (tokens_ >= 1.0) {
        tokens_ -= 1.0;
        return;
      }
      wait_s = (1.0 - tokens_) / rate_;
    }
    std::this_thread::sleep_for(std::chrono::duration<double>(wait_s));
  }
}

}  // namespace toolret
