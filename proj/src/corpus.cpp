#include "toolret/corpus.hpp"

#include <fstream>

#include <json.hpp>

#include "toolret/errors.hpp"
#include "toolret/log.hpp"
#include "toolret/strings.hpp"

namespace toolret {

namespace {

using ordered_json = nlohmann::ordered_json;

// Reads path line by line, stripping one trailing '\r' (CRLF input).
// Blank lines are skipped. fn sees (1-based line number, line).
template <typename Fn>
void for_each_line(const std::string& path, Fn&& fn) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open file: " + path);
  std::string line;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty()) continue;
    fn(lineno, line);
  }
}

ordered_json parse_json_line(const std::string& path, size_t lineno,
                             const std::string& line) {
  ordered_json j = ordered_json::parse(line, nullptr, false);
  if (j.is_discarded() || !j.is_object()) {
    throw ParseError(path + ":" + std::to_string(lineno) + ": malformed JSON object");
  }
  return j;
}

std::string require_string(const ordered_json& j, const char* field,
                           const std::string& path, size_t lineno) {
  auto it = j.find(field);
  if (it == j.end() || !it->is_string()) {
    throw ParseError(path + ":" + std::to_string(lineno) + ": missing string field \"" +
                     field + "\"");
  }
  return it->get<std::string>();
}

ordered_json tool_to_json(const Tool& t) {
  ordered_json j;
  j["tool_id"] = t.tool_id;
  j["name"] = t.name;
  j["category"] = t.category;
  j["description"] = t.description;
  ordered_json params = ordered_json::array();
  for (const auto& p : t.params) {
    ordered_json pj;
    pj["name"] = p.name;
    pj["direction"] = p.direction;
    pj["doc"] = p.doc;
    params.push_back(std::move(pj));
  }
  j["params"] = std::move(params);
  return j;
}

}  // namespace

std::string tool_document_text(const Tool& tool) {
  std::string out = tool.name;
  out += " ";
  out += tool.category;
  out += " ";
  out += tool.description;
  for (const auto& p : tool.params) {
    out += " ";
    out += p.name;
    out += " ";
    out += p.doc;
  }
  return out;
}

ToolSet ToolSet::from_tools(std::vector<Tool> tools) {
  ToolSet ts;
  ts.tools_ = std::move(tools);
  ts.by_id_.reserve(ts.tools_.size());
  for (size_t i = 0; i < ts.tools_.size(); ++i) {
    auto [it, inserted] = ts.by_id_.emplace(ts.tools_[i].tool_id, i);
    if (!inserted) {
      throw IntegrityError("duplicate tool_id \"" + ts.tools_[i].tool_id + "\"");
    }
  }
  return ts;
}

const Tool* ToolSet::find(const std::string& tool_id) const {
  auto it = by_id_.find(tool_id);
  return it == by_id_.end() ? nullptr : &tools_[it->second];
}

std::optional<size_t> ToolSet::ordinal_of(const std::string& tool_id) const {
  auto it = by_id_.find(tool_id);
  if (it == by_id_.end()) return std::nullopt;
  return it->second;
}

void RelevanceJudgments::set(const std::string& query_id,
                             const std::string& tool_id, int grade) {
  if (grade < 0) throw IntegrityError("relevance grade must be non-negative");
  by_query_[query_id][tool_id] = grade;
}

int RelevanceJudgments::grade(const std::string& query_id,
                              const std::string& tool_id) const {
  auto q = by_query_.find(query_id);
  if (q == by_query_.end()) return 0;
  auto t = q->second.find(tool_id);
  return t == q->second.end() ? 0 : t->second;
}

bool RelevanceJudgments::has_query(const std::string& query_id) const {
  return by_query_.count(query_id) > 0;
}

const std::map<std::string, int>* RelevanceJudgments::for_query(
    const std::string& query_id) const {
  auto q = by_query_.find(query_id);
  return q == by_query_.end() ? nullptr : &q->second;
}

std::vector<std::string> RelevanceJudgments::positive_tools(
    const std::string& query_id) const {
  std::vector<std::string> out;
  if (const auto* grades = for_query(query_id)) {
    for (const auto& [tool_id, g] : *grades) {
      if (g > 0) out.push_back(tool_id);
    }
  }
  return out;
}

size_t RelevanceJudgments::entry_count() const {
  size_t n = 0;
  for (const auto& [q, grades] : by_query_) n += grades.size();
  return n;
}

ToolSet load_tools(const std::string& path) {
  std::vector<Tool> tools;
  for_each_line(path, [&](size_t lineno, const std::string& line) {
    ordered_json j = parse_json_line(path, lineno, line);
    Tool t;
    t.tool_id = require_string(j, "tool_id", path, lineno);
    t.name = require_string(j, "name", path, lineno);
    t.category = require_string(j, "category", path, lineno);
    t.description = require_string(j, "description", path, lineno);
    if (t.description.empty()) {
      throw ParseError(path + ":" + std::to_string(lineno) +
                       ": tool description must be non-empty");
    }
    if (auto it = j.find("params"); it != j.end()) {
      if (!it->is_array()) {
        throw ParseError(path + ":" + std::to_string(lineno) + ": params must be an array");
      }
      for (const auto& pj : *it) {
        if (!pj.is_object()) {
          throw ParseError(path + ":" + std::to_string(lineno) + ": params entries must be objects");
        }
        ToolParam p;
        p.name = pj.value("name", "");
        p.direction = pj.value("direction", "input");
        p.doc = pj.value("doc", "");
        if (p.direction != "input" && p.direction != "output") {
          throw ParseError(path + ":" + std::to_string(lineno) +
                           ": param direction must be \"input\" or \"output\"");
        }
        t.params.push_back(std::move(p));
      }
    }
    tools.push_back(std::move(t));
  });
  return ToolSet::from_tools(std::move(tools));
}

void save_tools(const ToolSet& tools, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write file: " + path);
  for (const auto& t : tools) {
    out << tool_to_json(t).dump() << "\n";
  }
  if (!out) throw IoError("write failed: " + path);
}

std::vector<Instruction> load_queries(const std::string& path) {
  std::vector<Instruction> out;
  for_each_line(path, [&](size_t lineno, const std::string& line) {
    ordered_json j = parse_json_line(path, lineno, line);
    Instruction q;
    q.query_id = require_string(j, "query_id", path, lineno);
    q.text = require_string(j, "text", path, lineno);
    q.iteration = 0;
    out.push_back(std::move(q));
  });
  return out;
}

void save_queries(const std::vector<Instruction>& queries, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write file: " + path);
  for (const auto& q : queries) {
    ordered_json j;
    j["query_id"] = q.query_id;
    j["text"] = q.text;
    out << j.dump() << "\n";
  }
  if (!out) throw IoError("write failed: " + path);
}

RelevanceJudgments load_qrels(const std::string& path) {
  RelevanceJudgments qrels;
  for_each_line(path, [&](size_t lineno, const std::string& line) {
    auto fields = split_fields(line);
    if (fields.size() != 4) {
      throw ParseError(path + ":" + std::to_string(lineno) +
                       ": expected 4 fields (query_id 0 tool_id grade)");
    }
    long long grade = 0;
    if (!parse_int_strict(fields[3], grade)) {
      throw ParseError(path + ":" + std::to_string(lineno) + ": grade is not an integer");
    }
    if (grade < 0) {
      throw ParseError(path + ":" + std::to_string(lineno) + ": grade must be non-negative");
    }
    if (const auto* existing = qrels.for_query(fields[0]);
        existing && existing->count(fields[2])) {
      warn(path + ":" + std::to_string(lineno) + ": repeated judgment for (" + fields[0] +
           ", " + fields[2] + "); last grade wins");
    }
    qrels.set(fields[0], fields[2], static_cast<int>(grade));
  });
  for (const auto& [query_id, grades] : qrels.by_query()) {
    bool any_positive = false;
    for (const auto& [tool, g] : grades) any_positive |= g > 0;
    if (!any_positive) {
      warn(path + ": query \"" + query_id + "\" has no positive judgment");
    }
  }
  return qrels;
}

void save_qrels(const RelevanceJudgments& qrels, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write file: " + path);
  for (const auto& [query_id, grades] : qrels.by_query()) {
    for (const auto& [tool_id, grade] : grades) {
      out << query_id << "\t0\t" << tool_id << "\t" << grade << "\n";
    }
  }
  if (!out) throw IoError("write failed: " + path);
}

std::string tag_iteration(int iteration, const std::string& text) {
  return "Iteration " + std::to_string(iteration) + ": " + text;
}

std::string tag_iteration(const Instruction& instruction) {
  return tag_iteration(instruction.iteration, instruction.text);
}

std::optional<TaggedQuery> parse_iteration_tag(const std::string& tagged) {
  static const std::string kPrefix = "Iteration ";
  if (tagged.rfind(kPrefix, 0) != 0) return std::nullopt;
  size_t i = kPrefix.size();
  size_t digits_start = i;
  while (i < tagged.size() && tagged[i] >= '0' && tagged[i] <= '9') ++i;
  if (i == digits_start) return std::nullopt;
  if (i + 1 >= tagged.size() || tagged[i] != ':' || tagged[i + 1] != ' ') {
    return std::nullopt;
  }
  long long t = 0;
  if (!parse_int_strict(std::string_view(tagged).substr(digits_start, i - digits_start), t)) {
    return std::nullopt;
  }
  return TaggedQuery{static_cast<int>(t), tagged.substr(i + 2)};
}

}  // namespace toolret
