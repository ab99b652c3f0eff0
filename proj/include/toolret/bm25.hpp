#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "toolret/corpus.hpp"
#include "toolret/ranked_list.hpp"

namespace toolret {

// Lowercased tokens, split on any non-alphanumeric codepoint. Bytes >= 0x80
// are kept as token characters (non-ASCII letters do not split); only ASCII
// is case-folded.
std::vector<std::string> tokenize(std::string_view text);

struct Posting {
  uint32_t ordinal;  // position of the tool in its ToolSet
  uint32_t tf;
};

// Okapi BM25 index over tool_document_text(). Immutable after build.
class InvertedIndex {
 public:
  static InvertedIndex build(const ToolSet& tools);

  size_t doc_count() const { return doc_lengths_.size(); }
  double avg_doc_length() const { return avgdl_; }
  uint32_t doc_length(size_t ordinal) const { return doc_lengths_.at(ordinal); }
  const std::string& tool_id(size_t ordinal) const { return tool_ids_.at(ordinal); }
  size_t term_count() const { return postings_.size(); }
  // nullptr when the term does not occur; postings are sorted by ordinal.
  const std::vector<Posting>* postings(const std::string& term) const;
  // df of one term (0 when absent).
  size_t doc_frequency(const std::string& term) const;

  void save(const std::string& path) const;
  static InvertedIndex load(const std::string& path);

 private:
  std::map<std::string, std::vector<Posting>> postings_;
  std::vector<uint32_t> doc_lengths_;
  std::vector<std::string> tool_ids_;
  double avgdl_ = 0.0;
};

// score(q,d) = sum over query token occurrences of
//   IDF(t) * tf*(k1+1) / (tf + k1*(1 - b + b*len_d/avgdl))
// with IDF(t) = ln(1 + (N - df + 0.5)/(df + 0.5)).
// Zero-score documents are excluded; an empty query yields an empty list.
RankedList bm25_retrieve(const InvertedIndex& index, const std::string& query,
                         size_t k, double k1 = 1.2, double b = 0.75);

}  // namespace toolret
