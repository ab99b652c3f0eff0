#include "toolret/config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "toolret/errors.hpp"
#include "toolret/strings.hpp"

namespace toolret {

const std::map<std::string, std::string>& ExperimentConfig::schema() {
  static const std::map<std::string, std::string> kSchema = {
      {"tools", "path to the tool catalog (JSON-lines)"},
      {"queries", "path to the test instructions (JSON-lines)"},
      {"qrels", "path to the test relevance judgments (TSV)"},
      {"train_queries", "path to the training instructions; defaults to queries"},
      {"train_qrels", "path to the training judgments; defaults to qrels"},
      {"rounds", "path to precomputed training rounds (JSON-lines)"},
      {"model", "path to an encoder model file to load"},
      {"method", "retriever: bm25 or dense (default dense)"},
      {"k", "top-K list size for retrieval and the loop (default 10)"},
      {"bm25_k1", "BM25 k1 (default 1.2)"},
      {"bm25_b", "BM25 b (default 0.75)"},
      {"dim", "encoder embedding dimension (default 64)"},
      {"normalize", "L2-normalize embeddings: true/false (default true)"},
      {"temperature", "contrastive softmax temperature (default 1.0)"},
      {"learning_rate", "SGD learning rate (default 0.05)"},
      {"batch_size", "contrastive batch size (default 64)"},
      {"epochs", "epochs per training stage (default 1)"},
      {"alpha", "iteration-loss decay weight (default 1.0)"},
      {"seed", "global RNG seed (default 42)"},
      {"hard_negatives_per_query", "mined hard negatives per query (default 1)"},
      {"iterations", "feedback iterations T (default 3)"},
      {"provider", "feedback provider: scripted or remote (default scripted)"},
      {"script", "path to the scripted-provider rules (JSON)"},
      {"base_url", "remote provider base URL"},
      {"model_name", "remote provider model name"},
      {"api_key_env", "environment variable holding the API key"},
      {"timeout_seconds", "remote provider request timeout (default 30)"},
      {"max_retries", "remote provider retries after the first attempt (default 3)"},
      {"provider_temperature", "remote provider sampling temperature (default 0)"},
      {"templates_dir", "directory with the three prompt template files"},
      {"template_hash_comprehension", "pinned sha256 of comprehension.txt"},
      {"template_hash_assessment", "pinned sha256 of assessment.txt"},
      {"template_hash_refinement", "pinned sha256 of refinement.txt"},
      {"max_refined_tokens", "refined-instruction length cap (default 512)"},
      {"parallelism", "concurrent per-query loops when building rounds (default 1)"},
      {"rate_limit_per_s", "provider calls per second, 0 = unlimited (default 0)"},
      {"cache", "path to the feedback completion cache (JSON-lines)"},
      {"cutoffs", "NDCG cutoffs, e.g. 1,3,5,10 (default 1,3,5,10)"},
      {"run_tag", "tag written into run files and reports (default run)"},
  };
  return kSchema;
}

ExperimentConfig ExperimentConfig::load_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open config file: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return from_text(buf.str(), path);
}

ExperimentConfig ExperimentConfig::from_text(const std::string& text,
                                             const std::string& origin) {
  ExperimentConfig config;
  config.raw_ = text;
  config.origin_ = origin;
  std::istringstream in(text);
  std::string line;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const std::string stripped = trim(line);
    if (stripped.empty() || stripped[0] == '#') continue;
    const std::string where = origin + ":" + std::to_string(lineno) + ": ";
    const auto eq = stripped.find('=');
    if (eq == std::string::npos) {
      throw ParseError(where + "expected key = value, got \"" + stripped + "\"");
    }
    const std::string key = trim(stripped.substr(0, eq));
    const std::string value = trim(stripped.substr(eq + 1));
    if (key.empty()) throw ParseError(where + "empty key");
    if (!schema().count(key)) throw ParseError(where + "unknown config key \"" + key + "\"");
    if (config.values_.count(key)) {
      throw ParseError(where + "duplicate config key \"" + key + "\"");
    }
    config.values_[key] = value;
  }
  return config;
}

void ExperimentConfig::override_value(const std::string& key, const std::string& value) {
  if (!schema().count(key)) {
    throw ParseError("unknown config key \"" + key + "\"");
  }
  values_[key] = value;
}

bool ExperimentConfig::has(const std::string& key) const { return values_.count(key) > 0; }

std::string ExperimentConfig::get_string(const std::string& key,
                                         const std::string& fallback) const {
  auto it = values_.find(key);
  return it == values_.end() ? fallback : it->second;
}

std::string ExperimentConfig::require_string(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end() || it->second.empty()) {
    throw ParseError("config is missing required key \"" + key + "\" (" +
                     schema().at(key) + ")");
  }
  return it->second;
}

long long ExperimentConfig::get_int(const std::string& key, long long fallback) const {
  auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  long long out = 0;
  if (!parse_int_strict(it->second, out)) {
    throw ParseError("config key \"" + key + "\" is not an integer: \"" + it->second + "\"");
  }
  return out;
}

double ExperimentConfig::get_double(const std::string& key, double fallback) const {
  auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  const std::string& s = it->second;
  double out = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  if (ec != std::errc{} || ptr != s.data() + s.size()) {
    throw ParseError("config key \"" + key + "\" is not a number: \"" + s + "\"");
  }
  return out;
}

bool ExperimentConfig::get_bool(const std::string& key, bool fallback) const {
  auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  if (it->second == "true" || it->second == "1") return true;
  if (it->second == "false" || it->second == "0") return false;
  throw ParseError("config key \"" + key + "\" is not a boolean: \"" + it->second + "\"");
}

std::vector<size_t> ExperimentConfig::get_cutoffs(const std::string& key,
                                                  std::vector<size_t> fallback) const {
  auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  std::vector<size_t> out;
  std::istringstream in(it->second);
  std::string part;
  while (std::getline(in, part, ',')) {
    long long m = 0;
    if (!parse_int_strict(trim(part), m) || m < 1) {
      throw ParseError("config key \"" + key + "\" has a bad cutoff: \"" + part + "\"");
    }
    out.push_back(static_cast<size_t>(m));
  }
  if (out.empty()) {
    throw ParseError("config key \"" + key + "\" lists no cutoffs");
  }
  return out;
}

}  // namespace toolret
