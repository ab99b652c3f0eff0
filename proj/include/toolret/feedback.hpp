#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "toolret/corpus.hpp"
#include "toolret/provider.hpp"
#include "toolret/ranked_list.hpp"
#include "toolret/train.hpp"

namespace toolret {

// The three prompts as data assets, one file per step, hash-pinned so an
// experiment records exactly what the provider saw. Slots: {{instruction}}
// and {{tools}} everywhere, {{comprehension}} in the assessment prompt,
// {{assessment}} in the refinement prompt.
struct PromptTemplates {
  std::string comprehension;
  std::string assessment;
  std::string refinement;
  std::string comprehension_hash;
  std::string assessment_hash;
  std::string refinement_hash;

  // Reads comprehension.txt / assessment.txt / refinement.txt from dir.
  static PromptTemplates load_dir(const std::string& dir);
};

// Substitutes {{slot}} occurrences; an unknown or unfilled slot is an
// IntegrityError (a prompt with a hole must never reach the provider).
std::string render_template(const std::string& tmpl,
                            const std::map<std::string, std::string>& slots);

// One block per tool: category, name, description, and input/output
// parameters, in catalog order.
std::string format_tool_records(const std::vector<const Tool*>& tools);

std::string generate_comprehension(FeedbackProvider& provider,
                                   const PromptTemplates& templates,
                                   const std::string& tagged_instruction,
                                   const std::vector<const Tool*>& tools);

std::string generate_assessment(FeedbackProvider& provider,
                                const PromptTemplates& templates,
                                const std::string& tagged_instruction,
                                const std::vector<const Tool*>& tools,
                                const std::string& comprehension);

struct Refinement {
  bool terminal = false;
  std::string text;  // empty when terminal

  bool operator==(const Refinement&) const = default;
};

// Trims the completion; "N/A" (any case, optionally quoted) means no
// further refinement. An empty completion is treated as terminal with a
// warning.
Refinement parse_refinement(const std::string& completion);

Refinement generate_refinement(FeedbackProvider& provider,
                               const PromptTemplates& templates,
                               const std::string& tagged_instruction,
                               const std::vector<const Tool*>& tools,
                               const std::string& assessment);

// One loop round: what was retrieved for the round's instruction and what
// the three feedback steps produced. The final round of a full-length loop
// carries only the retrieval; a provider failure is recorded in place of
// feedback, never thrown past the loop.
struct FeedbackTrace {
  std::string query_id;     // original query, stable across refinements
  int iteration = 0;
  std::string instruction;  // tagged text used for this round's retrieval
  RankedList retrieved;
  std::string comprehension;
  std::string assessment;
  bool terminal = false;
  std::string refinement;
  bool provider_failed = false;
  std::string failure;
  double elapsed_ms = 0.0;
};

using RetrieveFn = std::function<RankedList(const std::string& tagged_query, size_t k)>;

struct LoopOptions {
  size_t k = 10;
  int max_iterations = 3;          // T
  size_t max_refined_tokens = 512; // refined instructions are truncated here
};

struct LoopResult {
  RankedList final_list;
  std::vector<FeedbackTrace> rounds;
  Instruction final_instruction;
};

// Iterative retrieval: tag with "Iteration t", retrieve top-K, and unless
// this is round T, ask the provider to comprehend, assess, and refine.
// Terminal stops early; a provider failure keeps the current list and marks
// the trace. At most T+1 retrievals ever happen.
LoopResult run_inference_loop(const Instruction& q0, const RetrieveFn& retrieve,
                              FeedbackProvider& provider,
                              const PromptTemplates& templates,
                              const ToolSet& tools, const LoopOptions& options);

// JSON-lines export of loop traces for case-by-case inspection.
void save_traces(const std::vector<LoopResult>& results, const std::string& path);

// Seeded uniform sample of `count` tools from the ranking whose grade for
// this query is zero or absent; fewer available means all of them.
std::vector<std::string> mine_hard_negatives(const std::string& query_id,
                                             const RankedList& ranked,
                                             const RelevanceJudgments& qrels,
                                             size_t count, uint64_t seed);

struct RoundsOptions {
  size_t k = 10;
  int max_iterations = 3;
  size_t hard_negatives_per_query = 1;
  size_t max_refined_tokens = 512;
  uint64_t seed = 42;
  size_t parallelism = 1;
};

// Runs the loop offline for every training query and emits, per iteration
// reached, one triple per positive tool: (tagged instruction, positive tool
// document, mined hard-negative documents). Queries without a positive
// judgment are skipped with a warning; a provider failure limits a query to
// the iterations it completed. Output is independent of parallelism.
TrainingRounds build_training_rounds(const std::vector<Instruction>& train_queries,
                                     const RetrieveFn& retrieve,
                                     FeedbackProvider& provider,
                                     const PromptTemplates& templates,
                                     const ToolSet& tools,
                                     const RelevanceJudgments& qrels,
                                     const RoundsOptions& options);

}  // namespace toolret
