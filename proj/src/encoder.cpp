#include "toolret/encoder.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <random>
#include <set>
#include <stdexcept>

#include "toolret/bm25.hpp"
#include "toolret/errors.hpp"

namespace toolret {

Embedding EmbeddingProvider::embed_one(const std::string& text) {
  auto batch = embed_batch({text});
  if (batch.size() != 1) throw IntegrityError("embedding provider returned wrong batch size");
  return std::move(batch[0]);
}

std::vector<std::string> build_vocab(const ToolSet& tools,
                                     const std::vector<std::string>& extra_texts) {
  std::set<std::string> vocab;
  for (const auto& tool : tools) {
    for (auto& t : tokenize(tool_document_text(tool))) vocab.insert(std::move(t));
  }
  for (const auto& text : extra_texts) {
    for (auto& t : tokenize(text)) vocab.insert(std::move(t));
  }
  // Iteration-tag tokens are always representable.
  vocab.insert("iteration");
  for (int d = 0; d <= 9; ++d) vocab.insert(std::to_string(d));
  return {vocab.begin(), vocab.end()};
}

EncoderModel init_encoder(const std::vector<std::string>& vocab_tokens, size_t dim,
                          bool normalize, uint64_t seed) {
  if (dim == 0) throw std::invalid_argument("embedding dim must be >= 1");
  EncoderModel m;
  m.dim = dim;
  m.normalize = normalize;
  m.tokens = vocab_tokens;
  m.vocab.reserve(m.tokens.size());
  for (size_t i = 0; i < m.tokens.size(); ++i) {
    auto [it, inserted] = m.vocab.emplace(m.tokens[i], i);
    if (!inserted) throw std::invalid_argument("duplicate vocab token: " + m.tokens[i]);
  }
  std::mt19937_64 rng(seed);
  const double scale = 1.0 / std::sqrt(static_cast<double>(dim));
  std::uniform_real_distribution<double> dist(-scale, scale);
  m.table.resize(m.tokens.size() * dim);
  for (auto& v : m.table) v = dist(rng);
  return m;
}

Embedding embed(const EncoderModel& model, const std::string& text) {
  Embedding out(model.dim, 0.0);
  size_t n = 0;
  for (const auto& tok : tokenize(text)) {
    auto it = model.vocab.find(tok);
    if (it == model.vocab.end()) continue;
    const double* r = model.row(it->second);
    for (size_t k = 0; k < model.dim; ++k) out[k] += r[k];
    ++n;
  }
  if (n == 0) return out;
  for (auto& v : out) v /= static_cast<double>(n);
  if (model.normalize) {
    double norm2 = 0.0;
    for (double v : out) norm2 += v * v;
    if (norm2 > 0.0) {
      const double inv = 1.0 / std::sqrt(norm2);
      for (auto& v : out) v *= inv;
    }
  }
  return out;
}

double similarity(const Embedding& eq, const Embedding& ed) {
  if (eq.size() != ed.size()) {
    throw std::invalid_argument("embedding dimension mismatch: " +
                                std::to_string(eq.size()) + " vs " +
                                std::to_string(ed.size()));
  }
  double s = 0.0;
  for (size_t i = 0; i < eq.size(); ++i) s += eq[i] * ed[i];
  return s;
}

std::vector<Embedding> EncoderProvider::embed_batch(const std::vector<std::string>& texts) {
  std::vector<Embedding> out;
  out.reserve(texts.size());
  for (const auto& t : texts) out.push_back(embed(*model_, t));
  return out;
}

namespace {

constexpr char kModelMagic[8] = {'T', 'R', 'E', 'N', 'C', '0', '0', '1'};
constexpr char kStoreMagic[8] = {'T', 'R', 'S', 'T', 'R', '0', '0', '1'};

template <typename T>
void write_pod(std::ofstream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
void read_pod(std::ifstream& in, T& v, const std::string& path) {
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw IoError("truncated model file: " + path);
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
  if (!in) throw IoError("truncated model file: " + path);
  return s;
}

void check_magic(std::ifstream& in, const char* expected, const std::string& path) {
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in) throw IoError("truncated model file: " + path);
  if (std::memcmp(magic, expected, 5) != 0) {
    throw IoError("not a recognized model file (bad magic): " + path);
  }
  if (std::memcmp(magic, expected, 8) != 0) {
    throw IoError("unsupported model file version: " + path);
  }
}

}  // namespace

void save_model(const EncoderModel& model, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write model file: " + path);
  out.write(kModelMagic, sizeof(kModelMagic));
  write_pod(out, static_cast<uint8_t>(model.normalize ? 1 : 0));
  write_pod(out, static_cast<uint32_t>(model.dim));
  write_pod(out, static_cast<uint64_t>(model.tokens.size()));
  for (const auto& t : model.tokens) write_string(out, t);
  out.write(reinterpret_cast<const char*>(model.table.data()),
            static_cast<std::streamsize>(model.table.size() * sizeof(double)));
  if (!out) throw IoError("write failed: " + path);
}

EncoderModel load_model(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open model file: " + path);
  check_magic(in, kModelMagic, path);
  uint8_t normalize = 0;
  uint32_t dim = 0;
  uint64_t rows = 0;
  read_pod(in, normalize, path);
  read_pod(in, dim, path);
  read_pod(in, rows, path);
  EncoderModel m;
  m.normalize = normalize != 0;
  m.dim = dim;
  m.tokens.reserve(rows);
  for (uint64_t i = 0; i < rows; ++i) m.tokens.push_back(read_string(in, path));
  m.vocab.reserve(rows);
  for (size_t i = 0; i < m.tokens.size(); ++i) m.vocab.emplace(m.tokens[i], i);
  m.table.resize(rows * dim);
  in.read(reinterpret_cast<char*>(m.table.data()),
          static_cast<std::streamsize>(m.table.size() * sizeof(double)));
  if (!in) throw IoError("truncated model file: " + path);
  return m;
}

EmbeddingStore EmbeddingStore::build(const EncoderModel& model, const ToolSet& tools) {
  EmbeddingStore store;
  store.dim_ = model.dim;
  store.ids_.reserve(tools.size());
  store.data_.reserve(tools.size() * model.dim);
  for (const auto& tool : tools) {
    store.ids_.push_back(tool.tool_id);
    Embedding e = embed(model, tool_document_text(tool));
    store.data_.insert(store.data_.end(), e.begin(), e.end());
  }
  return store;
}

EmbeddingStore EmbeddingStore::build(EmbeddingProvider& provider, const ToolSet& tools) {
  EmbeddingStore store;
  store.dim_ = provider.dim();
  std::vector<std::string> texts;
  texts.reserve(tools.size());
  for (const auto& tool : tools) {
    store.ids_.push_back(tool.tool_id);
    texts.push_back(tool_document_text(tool));
  }
  auto vecs = provider.embed_batch(texts);
  if (vecs.size() != texts.size()) {
    throw IntegrityError("embedding provider returned wrong batch size");
  }
  store.data_.reserve(tools.size() * store.dim_);
  for (const auto& v : vecs) {
    if (v.size() != store.dim_) {
      throw IntegrityError("embedding provider returned wrong dimension");
    }
    store.data_.insert(store.data_.end(), v.begin(), v.end());
  }
  return store;
}

void EmbeddingStore::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write embedding store: " + path);
  out.write(kStoreMagic, sizeof(kStoreMagic));
  write_pod(out, static_cast<uint32_t>(dim_));
  write_pod(out, static_cast<uint64_t>(ids_.size()));
  for (const auto& id : ids_) write_string(out, id);
  out.write(reinterpret_cast<const char*>(data_.data()),
            static_cast<std::streamsize>(data_.size() * sizeof(double)));
  if (!out) throw IoError("write failed: " + path);
}

EmbeddingStore EmbeddingStore::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open embedding store: " + path);
  check_magic(in, kStoreMagic, path);
  uint32_t dim = 0;
  uint64_t count = 0;
  read_pod(in, dim, path);
  read_pod(in, count, path);
  EmbeddingStore store;
  store.dim_ = dim;
  store.ids_.reserve(count);
  for (uint64_t i = 0; i < count; ++i) store.ids_.push_back(read_string(in, path));
  store.data_.resize(count * dim);
  in.read(reinterpret_cast<char*>(store.data_.data()),
          static_cast<std::streamsize>(store.data_.size() * sizeof(double)));
  if (!in) throw IoError("truncated embedding store: " + path);
  return store;
}

RankedList dense_retrieve(const Embedding& query_embedding,
                          const EmbeddingStore& store, size_t k) {
  if (k < 1) throw std::invalid_argument("K must be >= 1");
  if (query_embedding.size() != store.dim()) {
    throw std::invalid_argument("query embedding dimension mismatch");
  }
  std::vector<ScoredTool> items;
  items.reserve(store.size());
  const size_t dim = store.dim();
  for (size_t i = 0; i < store.size(); ++i) {
    const double* v = store.vec(i);
    double s = 0.0;
    for (size_t d = 0; d < dim; ++d) s += query_embedding[d] * v[d];
    items.push_back({store.tool_id(i), s});
  }
  return make_ranked_list("", std::move(items), k);
}

RankedList dense_retrieve(const EncoderModel& model, const EmbeddingStore& store,
                          const std::string& query, size_t k) {
  return dense_retrieve(embed(model, query), store, k);
}

RankedList dense_retrieve(const EncoderModel& model, const ToolSet& tools,
                          const std::string& query, size_t k) {
  if (k < 1) throw std::invalid_argument("K must be >= 1");
  Embedding q = embed(model, query);
  std::vector<ScoredTool> items;
  items.reserve(tools.size());
  for (const auto& tool : tools) {
    items.push_back({tool.tool_id, similarity(q, embed(model, tool_document_text(tool)))});
  }
  return make_ranked_list("", std::move(items), k);
}

}  // namespace toolret
