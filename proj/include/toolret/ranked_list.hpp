#pragma once

#include <string>
#include <vector>

namespace toolret {

struct ScoredTool {
  std::string tool_id;
  double score;

  bool operator==(const ScoredTool&) const = default;
};

// Top-K retrieval result. Items are sorted by score descending, ties broken
// by ascending tool_id, so identical corpora give identical rankings.
struct RankedList {
  std::string query_id;
  std::vector<ScoredTool> items;
  size_t cutoff = 0;

  bool operator==(const RankedList&) const = default;
};

// score desc, then tool_id asc.
bool ranked_before(const ScoredTool& a, const ScoredTool& b);

// Sorts, enforces uniqueness of tool_id, truncates to K.
RankedList make_ranked_list(std::string query_id, std::vector<ScoredTool> items,
                            size_t k);

}  // namespace toolret
