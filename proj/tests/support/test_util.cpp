#include "test_util.hpp"

#include <unistd.h>

#include <atomic>
#include <fstream>
#include <random>
#include <sstream>
#include <stdexcept>

namespace toolret::testing {

namespace fs = std::filesystem;

TempDir::TempDir() {
  static std::atomic<uint64_t> counter{0};
  std::random_device rd;
  const auto unique = counter.fetch_add(1);
  path_ = (fs::temp_directory_path() /
           ("toolret-test-" + std::to_string(::getpid()) + "-" + std::to_string(rd()) +
            "-" + std::to_string(unique)))
              .string();
  fs::create_directories(path_);
}

TempDir::~TempDir() {
  std::error_code ec;
  fs::remove_all(path_, ec);
}

WarningCapture::WarningCapture() {
  previous_ = set_warning_sink([this](const std::string& msg) { messages_.push_back(msg); });
}

WarningCapture::~WarningCapture() { set_warning_sink(previous_); }

bool WarningCapture::any_contains(const std::string& needle) const {
  for (const auto& msg : messages_) {
    if (msg.find(needle) != std::string::npos) return true;
  }
  return false;
}

void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("test: cannot write " + path);
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("test: cannot read " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

std::string coded_token(size_t i) {
  std::string s = "zz";
  for (int k = 0; k < 4; ++k) {
    s.push_back(static_cast<char>('a' + i % 26));
    i /= 26;
  }
  return s;
}

namespace {

const std::vector<std::string>& topic_words() {
  static const std::vector<std::string> kTopics = {
      "weather",  "forecast", "proxy",   "status",  "report",   "email",
      "send",     "message",  "stock",   "price",   "music",    "play",
      "calendar", "event",    "translate", "text",  "image",    "search",
      "file",     "upload",   "video",   "stream",  "map",      "route",
      "news",     "headline", "recipe",  "cook",    "flight",   "book",
      "hotel",    "rate",     "currency", "convert", "sports",  "score",
      "health",   "monitor",  "battery", "charge"};
  return kTopics;
}

const std::vector<std::string>& categories() {
  static const std::vector<std::string> kCategories = {"utility", "data", "media", "network"};
  return kCategories;
}

std::string pad_id(const char* prefix, size_t i) {
  std::string n = std::to_string(i);
  while (n.size() < 4) n.insert(n.begin(), '0');
  return prefix + n;
}

}  // namespace

std::string instruction_line_of(const std::string& prompt) {
  static const std::string kMarker = "User instruction:\n";
  const size_t at = prompt.find(kMarker);
  if (at == std::string::npos) {
    throw std::runtime_error("test oracle: prompt has no instruction section");
  }
  const size_t begin = at + kMarker.size();
  const size_t end = prompt.find('\n', begin);
  return prompt.substr(begin, end == std::string::npos ? std::string::npos : end - begin);
}

std::string KeywordOracleProvider::complete(const std::string& prompt) {
  if (prompt.find("## Refinement step") == std::string::npos) {
    return "noted";
  }
  refinement_calls_.fetch_add(1);
  const std::string tagged = instruction_line_of(prompt);
  auto parsed = parse_iteration_tag(tagged);
  if (!parsed) throw std::runtime_error("test oracle: instruction is not tagged: " + tagged);
  const std::string& text = parsed->text;

  auto contains_word = [&text](const std::string& word) {
    // Token-boundary check so e.g. "kw1" does not match inside "kw12".
    size_t from = 0;
    while (true) {
      const size_t at = text.find(word, from);
      if (at == std::string::npos) return false;
      const bool left_ok = at == 0 || text[at - 1] == ' ';
      const size_t after = at + word.size();
      const bool right_ok = after == text.size() || text[after] == ' ';
      if (left_ok && right_ok) return true;
      from = at + 1;
    }
  };

  for (const auto& [marker, keywords] : plans_) {
    if (!contains_word(marker)) continue;
    for (const auto& keyword : keywords) {
      if (!contains_word(keyword)) return text + " " + keyword;
    }
    return "N/A";
  }
  return "N/A";  // unplanned query: nothing to add
}

SyntheticWorld make_synthetic_world(const SyntheticSpec& spec) {
  const auto& topics = topic_words();
  if (spec.confusable_pairs * 2 > spec.tool_count) {
    throw std::invalid_argument("more confusable pair members than tools");
  }

  SyntheticWorld world;
  std::vector<Tool> tools(spec.tool_count);
  std::vector<std::vector<std::string>> tool_query_words(spec.tool_count);
  std::vector<bool> confusable(spec.tool_count, false);

  // First 2*confusable_pairs tools form twin pairs: shared context words,
  // one discriminative token each.
  for (size_t p = 0; p < spec.confusable_pairs; ++p) {
    std::vector<std::string> ctx;
    for (size_t j = 0; j < 6; ++j) ctx.push_back(topics[(p * 6 + j) % topics.size()]);
    for (size_t side = 0; side < 2; ++side) {
      const size_t i = 2 * p + side;
      const std::string disc = coded_token(spec.tool_count + i);
      const std::string alias = coded_token(2 * spec.tool_count + i);
      Tool& t = tools[i];
      t.tool_id = pad_id("t", i);
      t.name = disc + " " + ctx[0] + " service";
      t.category = categories()[i % categories().size()];
      std::string desc;
      for (const auto& w : ctx) desc += w + " ";
      desc += disc;
      t.description = desc;
      confusable[i] = true;
      // Queries mention a context subset plus a twin-breaking alias that
      // never appears in the documents: telling the twins apart requires
      // learning the alias -> discriminative-token association, not just
      // matching a shared token.
      tool_query_words[i] = {ctx[1], ctx[2], ctx[3], ctx[4], alias};
    }
  }

  for (size_t i = spec.confusable_pairs * 2; i < spec.tool_count; ++i) {
    const std::string key = coded_token(i);
    Tool& t = tools[i];
    t.tool_id = pad_id("t", i);
    t.name = key + " " + topics[(i * 3) % topics.size()];
    t.category = categories()[i % categories().size()];
    t.description = topics[(i * 3) % topics.size()] + " " +
                    topics[(i * 3 + 1) % topics.size()] + " " +
                    topics[(i * 3 + 2) % topics.size()] + " " + key;
    if (i % 3 == 0) {
      t.params.push_back({"query", "input", "the " + topics[(i * 3) % topics.size()] +
                                                " to look up"});
      t.params.push_back({"result", "output", "matching records"});
    }
    tool_query_words[i] = {topics[(i * 3) % topics.size()],
                           topics[(i * 3 + 1) % topics.size()], key};
  }

  world.tools = ToolSet::from_tools(std::move(tools));

  std::mt19937_64 rng(spec.seed);
  const std::vector<std::string> fillers = {"please", "get", "find", "show", "need"};
  for (size_t q = 0; q < spec.query_count; ++q) {
    const size_t gold = q % spec.tool_count;
    Instruction inst;
    inst.query_id = pad_id("q", q);
    std::string text = fillers[rng() % fillers.size()] + " " + fillers[rng() % fillers.size()];
    for (const auto& w : tool_query_words[gold]) text += " " + w;
    inst.text = text;
    world.queries.push_back(std::move(inst));
    world.qrels.set(pad_id("q", q), world.tools.at(gold).tool_id, 1);
    if (confusable[gold]) world.confusable_query_ids.push_back(pad_id("q", q));
  }
  return world;
}

}  // namespace toolret::testing
