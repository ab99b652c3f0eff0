#include "toolret/ranked_list.hpp"

#include <algorithm>
#include <unordered_set>

#include "toolret/errors.hpp"

namespace toolret {

bool ranked_before(const ScoredTool& a, const ScoredTool& b) {
  if (a.score != b.score) return a.score > b.score;
  return a.tool_id < b.tool_id;
}

RankedList make_ranked_list(std::string query_id, std::vector<ScoredTool> items,
                            size_t k) {
  std::unordered_set<std::string> seen;
  seen.reserve(items.size());
  for (const auto& it : items) {
    if (!seen.insert(it.tool_id).second) {
      throw IntegrityError("duplicate tool_id in ranked list: " + it.tool_id);
    }
  }
  if (items.size() > k) {
    std::partial_sort(items.begin(), items.begin() + static_cast<long>(k),
                      items.end(), ranked_before);
    items.resize(k);
  } else {
    std::sort(items.begin(), items.end(), ranked_before);
  }
  return RankedList{std::move(query_id), std::move(items), k};
}

}  // namespace toolret
