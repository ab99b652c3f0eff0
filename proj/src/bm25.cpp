#include "toolret/bm25.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "toolret/errors.hpp"

namespace toolret {

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> tokens;
  std::string cur;
  for (unsigned char c : text) {
    bool keep = (c >= 'a' && c <= 'z') || (c >= '0' && c <= '9') || c >= 0x80;
    if (c >= 'A' && c <= 'Z') {
      cur.push_back(static_cast<char>(c - 'A' + 'a'));
    } else if (keep) {
      cur.push_back(static_cast<char>(c));
    } else if (!cur.empty()) {
      tokens.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) tokens.push_back(std::move(cur));
  return tokens;
}

InvertedIndex InvertedIndex::build(const ToolSet& tools) {
  if (tools.empty()) throw std::invalid_argument("cannot index an empty tool set");
  InvertedIndex idx;
  idx.doc_lengths_.reserve(tools.size());
  idx.tool_ids_.reserve(tools.size());
  uint64_t total_len = 0;
  for (size_t ord = 0; ord < tools.size(); ++ord) {
    const Tool& tool = tools.at(ord);
    auto tokens = tokenize(tool_document_text(tool));
    idx.doc_lengths_.push_back(static_cast<uint32_t>(tokens.size()));
    idx.tool_ids_.push_back(tool.tool_id);
    total_len += tokens.size();
    std::map<std::string, uint32_t> tf;
    for (auto& t : tokens) ++tf[t];
    for (auto& [term, count] : tf) {
      idx.postings_[term].push_back({static_cast<uint32_t>(ord), count});
    }
  }
  idx.avgdl_ = static_cast<double>(total_len) / static_cast<double>(tools.size());
  return idx;
}

const std::vector<Posting>* InvertedIndex::postings(const std::string& term) const {
  auto it = postings_.find(term);
  return it == postings_.end() ? nullptr : &it->second;
}

size_t InvertedIndex::doc_frequency(const std::string& term) const {
  const auto* p = postings(term);
  return p ? p->size() : 0;
}

namespace {

constexpr char kIndexMagic[8] = {'T', 'R', 'I', 'D', 'X', '0', '0', '1'};

template <typename T>
void write_pod(std::ofstream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
void read_pod(std::ifstream& in, T& v, const std::string& path) {
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw IoError("truncated index file: " + path);
}

void write_string(std::ofstream& out, const std::string& s) {
  write_pod(out, static_cast<uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string read_string(std::ifstream& in, const std::string& path) {
  uint32_t len = 0;
  read_pod(in, len, path);
  std::string s(len, '\0');
  in.read(s.data(), len);
  if (!in) throw IoError("truncated index file: " + path);
  return s;
}

}  // namespace

void InvertedIndex::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write index file: " + path);
  out.write(kIndexMagic, sizeof(kIndexMagic));
  write_pod(out, static_cast<uint64_t>(doc_lengths_.size()));
  write_pod(out, avgdl_);
  for (uint32_t len : doc_lengths_) write_pod(out, len);
  for (const auto& id : tool_ids_) write_string(out, id);
  write_pod(out, static_cast<uint64_t>(postings_.size()));
  for (const auto& [term, plist] : postings_) {
    write_string(out, term);
    write_pod(out, static_cast<uint64_t>(plist.size()));
    for (const auto& p : plist) {
      write_pod(out, p.ordinal);
      write_pod(out, p.tf);
    }
  }
  if (!out) throw IoError("write failed: " + path);
}

InvertedIndex InvertedIndex::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open index file: " + path);
  char magic[sizeof(kIndexMagic)];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kIndexMagic, sizeof(kIndexMagic)) != 0) {
    throw IoError("not a recognized index file (bad magic): " + path);
  }
  InvertedIndex idx;
  uint64_t n = 0;
  read_pod(in, n, path);
  read_pod(in, idx.avgdl_, path);
  idx.doc_lengths_.resize(n);
  for (auto& len : idx.doc_lengths_) read_pod(in, len, path);
  idx.tool_ids_.reserve(n);
  for (uint64_t i = 0; i < n; ++i) idx.tool_ids_.push_back(read_string(in, path));
  uint64_t terms = 0;
  read_pod(in, terms, path);
  for (uint64_t i = 0; i < terms; ++i) {
    std::string term = read_string(in, path);
    uint64_t plen = 0;
    read_pod(in, plen, path);
    std::vector<Posting> plist(plen);
    for (auto& p : plist) {
      read_pod(in, p.ordinal, path);
      read_pod(in, p.tf, path);
    }
    idx.postings_.emplace(std::move(term), std::move(plist));
  }
  return idx;
}

RankedList bm25_retrieve(const InvertedIndex& index, const std::string& query,
                         size_t k, double k1, double b) {
  if (k < 1) throw std::invalid_argument("K must be >= 1");
  if (!(k1 > 0)) throw std::invalid_argument("k1 must be > 0");
  if (!(b >= 0.0 && b <= 1.0)) throw std::invalid_argument("b must be in [0, 1]");

  auto terms = tokenize(query);
  const double n_docs = static_cast<double>(index.doc_count());
  std::vector<double> scores(index.doc_count(), 0.0);
  for (const auto& term : terms) {
    const auto* plist = index.postings(term);
    if (!plist) continue;
    const double df = static_cast<double>(plist->size());
    const double idf = std::log(1.0 + (n_docs - df + 0.5) / (df + 0.5));
    for (const auto& p : *plist) {
      const double tf = static_cast<double>(p.tf);
      const double len_norm =
          1.0 - b + b * static_cast<double>(index.doc_length(p.ordinal)) /
                        index.avg_doc_length();
      scores[p.ordinal] += idf * tf * (k1 + 1.0) / (tf + k1 * len_norm);
    }
  }

  std::vector<ScoredTool> items;
  for (size_t ord = 0; ord < scores.size(); ++ord) {
    if (scores[ord] > 0.0) items.push_back({index.tool_id(ord), scores[ord]});
  }
  return make_ranked_list("", std::move(items), k);
}

}  // namespace toolret
