#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "toolret/corpus.hpp"
#include "toolret/ranked_list.hpp"

namespace toolret {

using Embedding = std::vector<double>;

// Batch text-to-vector contract. Any encoder (the built-in one or an
// external service adapter) plugs in behind this.
class EmbeddingProvider {
 public:
  virtual ~EmbeddingProvider() = default;
  virtual size_t dim() const = 0;
  virtual std::vector<Embedding> embed_batch(const std::vector<std::string>& texts) = 0;
  Embedding embed_one(const std::string& text);
};

// Trainable token-embedding table with mean pooling and optional L2
// normalization. tokens[r] names row r of table (row-major, rows x dim).
struct EncoderModel {
  std::vector<std::string> tokens;
  std::unordered_map<std::string, size_t> vocab;
  std::vector<double> table;
  size_t dim = 0;
  bool normalize = true;

  size_t rows() const { return tokens.size(); }
  double* row(size_t r) { return table.data() + r * dim; }
  const double* row(size_t r) const { return table.data() + r * dim; }
};

// Sorted unique tokens of all tool documents plus extra_texts, plus the
// iteration-tag tokens the feedback loop prepends.
std::vector<std::string> build_vocab(const ToolSet& tools,
                                     const std::vector<std::string>& extra_texts = {});

// Rows drawn uniformly from [-1/sqrt(dim), 1/sqrt(dim)], seeded.
EncoderModel init_encoder(const std::vector<std::string>& vocab_tokens, size_t dim,
                          bool normalize, uint64_t seed);

// Mean of token rows over in-vocab occurrences, then L2-normalized when the
// model says so. Out-of-vocab tokens are skipped; no in-vocab tokens gives
// the zero vector (which normalization leaves unchanged).
Embedding embed(const EncoderModel& model, const std::string& text);

// Inner product; dimensions must match.
double similarity(const Embedding& eq, const Embedding& ed);

class EncoderProvider : public EmbeddingProvider {
 public:
  explicit EncoderProvider(const EncoderModel& model) : model_(&model) {}
  size_t dim() const override { return model_->dim; }
  std::vector<Embedding> embed_batch(const std::vector<std::string>& texts) override;

 private:
  const EncoderModel* model_;
};

// Versioned binary model file; load rejects wrong magic/version and
// truncated files.
void save_model(const EncoderModel& model, const std::string& path);
EncoderModel load_model(const std::string& path);

// Precomputed tool embeddings laid out contiguously for the flat scan.
class EmbeddingStore {
 public:
  static EmbeddingStore build(const EncoderModel& model, const ToolSet& tools);
  static EmbeddingStore build(EmbeddingProvider& provider, const ToolSet& tools);

  size_t size() const { return ids_.size(); }
  size_t dim() const { return dim_; }
  const std::string& tool_id(size_t i) const { return ids_.at(i); }
  const double* vec(size_t i) const { return data_.data() + i * dim_; }

  void save(const std::string& path) const;
  static EmbeddingStore load(const std::string& path);

 private:
  std::vector<std::string> ids_;
  std::vector<double> data_;
  size_t dim_ = 0;
};

// Exhaustive flat scan; ties broken by ascending tool_id.
RankedList dense_retrieve(const EncoderModel& model, const ToolSet& tools,
                          const std::string& query, size_t k);
RankedList dense_retrieve(const EncoderModel& model, const EmbeddingStore& store,
                          const std::string& query, size_t k);
RankedList dense_retrieve(const Embedding& query_embedding,
                          const EmbeddingStore& store, size_t k);

}  // namespace toolret
