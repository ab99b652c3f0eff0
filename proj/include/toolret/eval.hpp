#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "toolret/corpus.hpp"
#include "toolret/ranked_list.hpp"

namespace toolret {

// A tagged set of per-query rankings, one RankedList per query, item order
// giving the ranks (contiguous from 1). Serialized as TREC-style TSV lines
// "query_id 0 tool_id rank score run_tag".
struct RunFile {
  std::string tag;
  std::vector<RankedList> entries;
};

RunFile load_run(const std::string& path);
void save_run(const RunFile& run, const std::string& path);

// Adds one query's ranking; rejects a duplicate query_id.
void append_ranked(RunFile& run, RankedList ranked);

struct MetricsReport {
  std::string tag;
  std::vector<size_t> cutoffs;                          // configured order
  std::map<size_t, double> mean;                        // cutoff -> mean NDCG
  std::map<std::string, std::map<size_t, double>> per_query;
  size_t evaluated = 0;  // queries contributing to the means
  size_t excluded = 0;   // judged-all-zero queries skipped

  bool operator==(const MetricsReport&) const = default;
};

// DCG@m = sum_{i=1..m} (2^rel_i - 1)/log2(i+1) over the ranking; IDCG@m is
// the same sum over the query's judged grades sorted descending. Unjudged
// tools count as grade 0. Returns nothing when IDCG is zero (no positive
// judgment exists), which callers must exclude rather than score.
std::optional<double> ndcg_at_m(const RankedList& ranked,
                                const RelevanceJudgments& qrels, size_t m);

// Macro-averages per-query NDCG at each cutoff. A query with no judgments
// at all is an error (all offending ids listed); a judged query whose
// grades are all zero is skipped with a warning and counted in `excluded`.
MetricsReport evaluate_run(const RunFile& run, const RelevanceJudgments& qrels,
                           const std::vector<size_t>& cutoffs);

// (ours - baseline)/baseline * 100. Not applicable when baseline <= 0.
std::optional<double> relative_improvement(double ours, double baseline);

// Plain-text table: one row per run, one N@m column per configured cutoff,
// full-precision values. With `baseline` set (index into reports), appends
// a row with the last run's relative improvement over that baseline.
std::string render_report_text(const std::vector<MetricsReport>& reports,
                               std::optional<size_t> baseline = std::nullopt);

// Versioned JSON carrying the same data plus per-query breakdowns;
// parse_report_json inverts it exactly.
std::string render_report_json(const std::vector<MetricsReport>& reports,
                               std::optional<size_t> baseline = std::nullopt);
std::vector<MetricsReport> parse_report_json(const std::string& text);

}  // namespace toolret
