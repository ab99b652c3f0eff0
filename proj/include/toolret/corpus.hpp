#pragma once

#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

namespace toolret {

struct ToolParam {
  std::string name;
  std::string direction;  // "input" or "output"
  std::string doc;

  bool operator==(const ToolParam&) const = default;
};

// One retrievable unit of the catalog.
struct Tool {
  std::string tool_id;
  std::string name;
  std::string category;
  std::string description;
  std::vector<ToolParam> params;

  bool operator==(const Tool&) const = default;
};

// The text a retriever sees for a tool: name, category, description and
// parameter docs concatenated. Both the sparse index and the dense encoder
// consume this same view.
std::string tool_document_text(const Tool& tool);

class ToolSet {
 public:
  ToolSet() = default;

  // Preserves order; duplicate tool_id raises IntegrityError.
  static ToolSet from_tools(std::vector<Tool> tools);

  size_t size() const { return tools_.size(); }
  bool empty() const { return tools_.empty(); }
  const Tool& at(size_t ordinal) const { return tools_.at(ordinal); }
  const std::vector<Tool>& tools() const { return tools_; }

  const Tool* find(const std::string& tool_id) const;
  std::optional<size_t> ordinal_of(const std::string& tool_id) const;

  auto begin() const { return tools_.begin(); }
  auto end() const { return tools_.end(); }

 private:
  std::vector<Tool> tools_;
  std::unordered_map<std::string, size_t> by_id_;
};

// A user query; iteration > 0 marks a refinement of `parent`.
struct Instruction {
  std::string query_id;
  std::string text;
  int iteration = 0;
  std::optional<std::string> parent;

  bool operator==(const Instruction&) const = default;
};

// Graded (query, tool) relevance labels.
class RelevanceJudgments {
 public:
  void set(const std::string& query_id, const std::string& tool_id, int grade);
  int grade(const std::string& query_id, const std::string& tool_id) const;
  bool has_query(const std::string& query_id) const;
  // nullptr when the query was never judged.
  const std::map<std::string, int>* for_query(const std::string& query_id) const;
  std::vector<std::string> positive_tools(const std::string& query_id) const;

  size_t query_count() const { return by_query_.size(); }
  size_t entry_count() const;
  const std::map<std::string, std::map<std::string, int>>& by_query() const {
    return by_query_;
  }

 private:
  std::map<std::string, std::map<std::string, int>> by_query_;
};

// JSON-lines, one tool per line:
//   {"tool_id":..., "name":..., "category":..., "description":..., "params":[...]}
ToolSet load_tools(const std::string& path);
void save_tools(const ToolSet& tools, const std::string& path);

// JSON-lines, one query per line: {"query_id":..., "text":...}
std::vector<Instruction> load_queries(const std::string& path);
void save_queries(const std::vector<Instruction>& queries, const std::string& path);

// TREC-style: query_id <TAB> 0 <TAB> tool_id <TAB> grade.
// Repeated (query, tool) pairs: last grade wins, with a warning.
RelevanceJudgments load_qrels(const std::string& path);
void save_qrels(const RelevanceJudgments& qrels, const std::string& path);

// "Iteration {t}: {text}" — the iteration-aware prefix the encoder is
// trained to see.
std::string tag_iteration(int iteration, const std::string& text);
std::string tag_iteration(const Instruction& instruction);

struct TaggedQuery {
  int iteration;
  std::string text;

  bool operator==(const TaggedQuery&) const = default;
};
std::optional<TaggedQuery> parse_iteration_tag(const std::string& tagged);

}  // namespace toolret
