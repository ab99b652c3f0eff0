#include "toolret/feedback.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <chrono>
#include <fstream>
#include <random>
#include <set>
#include <sstream>
#include <stdexcept>
#include <thread>

#include <json.hpp>

#include "toolret/errors.hpp"
#include "toolret/hash.hpp"
#include "toolret/log.hpp"
#include "toolret/strings.hpp"

namespace toolret {

namespace {

using ordered_json = nlohmann::ordered_json;

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open template file: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

}  // namespace

PromptTemplates PromptTemplates::load_dir(const std::string& dir) {
  PromptTemplates t;
  t.comprehension = read_file(dir + "/comprehension.txt");
  t.assessment = read_file(dir + "/assessment.txt");
  t.refinement = read_file(dir + "/refinement.txt");
  t.comprehension_hash = sha256_hex(t.comprehension);
  t.assessment_hash = sha256_hex(t.assessment);
  t.refinement_hash = sha256_hex(t.refinement);
  return t;
}

std::string render_template(const std::string& tmpl,
                            const std::map<std::string, std::string>& slots) {
  std::string out;
  out.reserve(tmpl.size());
  size_t pos = 0;
  while (pos < tmpl.size()) {
    const size_t open = tmpl.find("{{", pos);
    if (open == std::string::npos) {
      out.append(tmpl, pos, std::string::npos);
      break;
    }
    out.append(tmpl, pos, open - pos);
    const size_t close = tmpl.find("}}", open + 2);
    if (close == std::string::npos) {
      throw IntegrityError("template has an unterminated slot at offset " +
                           std::to_string(open));
    }
    const std::string name = tmpl.substr(open + 2, close - open - 2);
    auto it = slots.find(name);
    if (it == slots.end()) {
      throw IntegrityError("template references unfilled slot {{" + name + "}}");
    }
    out += it->second;
    pos = close + 2;
  }
  if (out.find("{{") != std::string::npos) {
    throw IntegrityError("rendered prompt still contains a slot marker");
  }
  return out;
}

std::string format_tool_records(const std::vector<const Tool*>& tools) {
  if (tools.empty()) throw std::invalid_argument("no tools to format");
  std::ostringstream out;
  for (size_t i = 0; i < tools.size(); ++i) {
    const Tool& t = *tools[i];
    out << (i + 1) << ". name: " << t.name << "\n"
        << "   category: " << t.category << "\n"
        << "   description: " << t.description << "\n";
    std::string inputs, outputs;
    for (const auto& p : t.params) {
      std::string& dst = p.direction == "output" ? outputs : inputs;
      if (!dst.empty()) dst += "; ";
      dst += p.name;
      if (!p.doc.empty()) dst += " (" + p.doc + ")";
    }
    out << "   input parameters: " << (inputs.empty() ? "none" : inputs) << "\n"
        << "   output parameters: " << (outputs.empty() ? "none" : outputs) << "\n";
  }
  return out.str();
}

std::string generate_comprehension(FeedbackProvider& provider,
                                   const PromptTemplates& templates,
                                   const std::string& tagged_instruction,
                                   const std::vector<const Tool*>& tools) {
  const std::string prompt = render_template(
      templates.comprehension,
      {{"instruction", tagged_instruction}, {"tools", format_tool_records(tools)}});
  return provider.complete(prompt);
}

std::string generate_assessment(FeedbackProvider& provider,
                                const PromptTemplates& templates,
                                const std::string& tagged_instruction,
                                const std::vector<const Tool*>& tools,
                                const std::string& comprehension) {
  const std::string prompt = render_template(
      templates.assessment, {{"instruction", tagged_instruction},
                             {"tools", format_tool_records(tools)},
                             {"comprehension", comprehension}});
  return provider.complete(prompt);
}

Refinement parse_refinement(const std::string& completion) {
  std::string text = trim(completion);
  if (text.empty()) {
    warn("refinement completion was empty; treating as terminal");
    return {true, ""};
  }
  std::string probe = text;
  if (probe.size() >= 2 &&
      ((probe.front() == '"' && probe.back() == '"') ||
       (probe.front() == '\'' && probe.back() == '\''))) {
    probe = trim(probe.substr(1, probe.size() - 2));
  }
  std::string upper(probe);
  std::transform(upper.begin(), upper.end(), upper.begin(),
                 [](unsigned char c) { return static_cast<char>(std::toupper(c)); });
  if (upper == "N/A") return {true, ""};
  return {false, text};
}

Refinement generate_refinement(FeedbackProvider& provider,
                               const PromptTemplates& templates,
                               const std::string& tagged_instruction,
                               const std::vector<const Tool*>& tools,
                               const std::string& assessment) {
  const std::string prompt = render_template(
      templates.refinement, {{"instruction", tagged_instruction},
                             {"tools", format_tool_records(tools)},
                             {"assessment", assessment}});
  return parse_refinement(provider.complete(prompt));
}

namespace {

std::vector<const Tool*> lookup_tools(const ToolSet& tools, const RankedList& ranked) {
  std::vector<const Tool*> out;
  out.reserve(ranked.items.size());
  for (const auto& item : ranked.items) {
    const Tool* t = tools.find(item.tool_id);
    if (t == nullptr) {
      throw IntegrityError("retriever returned tool \"" + item.tool_id +
                           "\" that is not in the catalog");
    }
    out.push_back(t);
  }
  return out;
}

std::string truncate_tokens(const std::string& text, size_t max_tokens,
                            const std::string& query_id) {
  auto fields = split_fields(text);
  if (fields.size() <= max_tokens) return text;
  warn("refined instruction for \"" + query_id + "\" exceeds " +
       std::to_string(max_tokens) + " tokens; truncating");
  std::string out;
  for (size_t i = 0; i < max_tokens; ++i) {
    if (i) out += ' ';
    out += fields[i];
  }
  return out;
}

double ms_since(const std::chrono::steady_clock::time_point& start) {
  return std::chrono::duration<double, std::milli>(
             std::chrono::steady_clock::now() - start)
      .count();
}

}  // namespace

LoopResult run_inference_loop(const Instruction& q0, const RetrieveFn& retrieve,
                              FeedbackProvider& provider,
                              const PromptTemplates& templates,
                              const ToolSet& tools, const LoopOptions& options) {
  if (options.k < 1) throw std::invalid_argument("K must be >= 1");
  if (options.max_iterations < 0) throw std::invalid_argument("T must be >= 0");
  if (q0.iteration != 0) {
    throw std::invalid_argument("the loop starts from an iteration-0 instruction");
  }

  LoopResult result;
  Instruction current = q0;
  const int T = options.max_iterations;

  for (int t = 0; t <= T; ++t) {
    const auto start = std::chrono::steady_clock::now();
    FeedbackTrace round;
    round.query_id = q0.query_id;
    round.iteration = t;
    round.instruction = tag_iteration(t, current.text);
    round.retrieved = retrieve(round.instruction, options.k);
    round.retrieved.query_id = q0.query_id;

    if (t == T) {
      round.elapsed_ms = ms_since(start);
      result.rounds.push_back(std::move(round));
      break;
    }
    if (round.retrieved.items.empty()) {
      // Nothing to show the provider, so there is nothing to refine.
      warn("nothing retrieved for \"" + q0.query_id + "\" at iteration " +
           std::to_string(t) + "; stopping the loop");
      round.terminal = true;
      round.elapsed_ms = ms_since(start);
      result.rounds.push_back(std::move(round));
      break;
    }

    Refinement refinement;
    try {
      auto top = lookup_tools(tools, round.retrieved);
      round.comprehension =
          generate_comprehension(provider, templates, round.instruction, top);
      round.assessment = generate_assessment(provider, templates, round.instruction,
                                             top, round.comprehension);
      refinement = generate_refinement(provider, templates, round.instruction, top,
                                       round.assessment);
    } catch (const ProviderError& e) {
      round.provider_failed = true;
      round.failure = e.what();
      round.elapsed_ms = ms_since(start);
      warn("feedback provider failed for \"" + q0.query_id +
           "\" at iteration " + std::to_string(t) + "; keeping the current list");
      result.rounds.push_back(std::move(round));
      break;
    }

    if (refinement.terminal) {
      round.terminal = true;
      round.elapsed_ms = ms_since(start);
      result.rounds.push_back(std::move(round));
      break;
    }

    round.refinement =
        truncate_tokens(refinement.text, options.max_refined_tokens, q0.query_id);
    Instruction next;
    next.query_id = q0.query_id + "#" + std::to_string(t + 1);
    next.text = round.refinement;
    next.iteration = t + 1;
    next.parent = current.query_id;
    round.elapsed_ms = ms_since(start);
    result.rounds.push_back(std::move(round));
    current = std::move(next);
  }

  result.final_list = result.rounds.back().retrieved;
  result.final_instruction = std::move(current);
  return result;
}

void save_traces(const std::vector<LoopResult>& results, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write trace file: " + path);
  for (const auto& res : results) {
    for (const auto& round : res.rounds) {
      ordered_json rec;
      rec["query_id"] = round.query_id;
      rec["iteration"] = round.iteration;
      rec["instruction"] = round.instruction;
      rec["retrieved"] = ordered_json::array();
      for (const auto& item : round.retrieved.items) {
        ordered_json ji;
        ji["tool_id"] = item.tool_id;
        ji["score"] = item.score;
        rec["retrieved"].push_back(std::move(ji));
      }
      rec["comprehension"] = round.comprehension;
      rec["assessment"] = round.assessment;
      rec["terminal"] = round.terminal;
      rec["refinement"] = round.refinement;
      rec["provider_failed"] = round.provider_failed;
      rec["failure"] = round.failure;
      rec["elapsed_ms"] = round.elapsed_ms;
      out << rec.dump() << '\n';
    }
  }
  if (!out) throw IoError("write failed: " + path);
}

std::vector<std::string> mine_hard_negatives(const std::string& query_id,
                                             const RankedList& ranked,
                                             const RelevanceJudgments& qrels,
                                             size_t count, uint64_t seed) {
  if (ranked.items.empty()) throw std::invalid_argument("cannot mine from an empty ranking");
  std::vector<std::string> candidates;
  for (const auto& item : ranked.items) {
    if (qrels.grade(query_id, item.tool_id) <= 0) candidates.push_back(item.tool_id);
  }
  if (candidates.size() <= count) return candidates;
  std::mt19937_64 rng(seed ^ fnv1a64(query_id));
  std::vector<std::string> picked;
  picked.reserve(count);
  std::sample(candidates.begin(), candidates.end(), std::back_inserter(picked), count, rng);
  return picked;
}

TrainingRounds build_training_rounds(const std::vector<Instruction>& train_queries,
                                     const RetrieveFn& retrieve,
                                     FeedbackProvider& provider,
                                     const PromptTemplates& templates,
                                     const ToolSet& tools,
                                     const RelevanceJudgments& qrels,
                                     const RoundsOptions& options) {
  if (options.parallelism < 1) throw std::invalid_argument("parallelism must be >= 1");

  // Queries that can supervise anything.
  std::vector<const Instruction*> usable;
  for (const auto& q : train_queries) {
    if (qrels.positive_tools(q.query_id).empty()) {
      warn("build_training_rounds: query \"" + q.query_id +
           "\" has no positive judgment; skipped");
      continue;
    }
    usable.push_back(&q);
  }

  LoopOptions loop_options;
  loop_options.k = options.k;
  loop_options.max_iterations = options.max_iterations;
  loop_options.max_refined_tokens = options.max_refined_tokens;

  std::vector<LoopResult> results(usable.size());
  auto run_one = [&](size_t i) {
    results[i] = run_inference_loop(*usable[i], retrieve, provider, templates,
                                    tools, loop_options);
  };

  if (options.parallelism == 1 || usable.size() < 2) {
    for (size_t i = 0; i < usable.size(); ++i) run_one(i);
  } else {
    std::atomic<size_t> next{0};
    auto worker = [&] {
      for (size_t i = next.fetch_add(1); i < usable.size(); i = next.fetch_add(1)) {
        run_one(i);
      }
    };
    std::vector<std::thread> threads;
    const size_t n = std::min(options.parallelism, usable.size());
    threads.reserve(n);
    for (size_t i = 0; i < n; ++i) threads.emplace_back(worker);
    for (auto& th : threads) th.join();
  }

  TrainingRounds rounds;
  for (size_t i = 0; i < usable.size(); ++i) {
    const std::string& qid = usable[i]->query_id;
    const auto positives = qrels.positive_tools(qid);
    for (const auto& round : results[i].rounds) {
      std::vector<std::string> negative_docs;
      if (options.hard_negatives_per_query > 0 && !round.retrieved.items.empty()) {
        for (const auto& neg_id :
             mine_hard_negatives(qid, round.retrieved, qrels,
                                 options.hard_negatives_per_query,
                                 options.seed + static_cast<uint64_t>(round.iteration))) {
          const Tool* neg = tools.find(neg_id);
          if (neg == nullptr) {
            throw IntegrityError("mined tool \"" + neg_id + "\" is not in the catalog");
          }
          negative_docs.push_back(tool_document_text(*neg));
        }
      }
      for (const auto& pos_id : positives) {
        const Tool* pos = tools.find(pos_id);
        if (pos == nullptr) {
          warn("query \"" + qid + "\" judges tool \"" + pos_id +
               "\" that is not in the catalog; skipped");
          continue;
        }
        TrainTriple triple;
        triple.query = round.instruction;
        triple.positive = tool_document_text(*pos);
        triple.hard_negatives = negative_docs;
        rounds[round.iteration].push_back(std::move(triple));
      }
    }
  }
  return rounds;
}

}  // namespace toolret
