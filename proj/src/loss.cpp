#include "toolret/loss.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "toolret/bm25.hpp"
#include "toolret/errors.hpp"
#include "toolret/log.hpp"

namespace toolret {

namespace {

// Forward pass of the encoder on one text, keeping what backprop needs:
// the in-vocab token rows (with multiplicity) and the pre-normalization
// norm of the mean-pooled vector.
struct EmbedNode {
  std::vector<size_t> rows;
  Embedding value;
  double prenorm = 0.0;
};

EmbedNode make_node(const EncoderModel& model, const std::string& text) {
  EmbedNode node;
  node.value.assign(model.dim, 0.0);
  for (const auto& tok : tokenize(text)) {
    auto it = model.vocab.find(tok);
    if (it == model.vocab.end()) continue;
    node.rows.push_back(it->second);
    const double* r = model.row(it->second);
    for (size_t k = 0; k < model.dim; ++k) node.value[k] += r[k];
  }
  if (node.rows.empty()) return node;
  const double n = static_cast<double>(node.rows.size());
  for (auto& v : node.value) v /= n;
  double norm2 = 0.0;
  for (double v : node.value) norm2 += v * v;
  node.prenorm = std::sqrt(norm2);
  if (model.normalize && norm2 > 0.0) {
    const double inv = 1.0 / std::sqrt(norm2);
    for (auto& v : node.value) v *= inv;
  }
  return node;
}

// Chain rule through L2 normalization (e = u/||u||) and mean pooling.
void backprop(const EncoderModel& model, const EmbedNode& node,
              Embedding grad_out, Gradients& grads) {
  if (node.rows.empty()) return;
  if (model.normalize && node.prenorm > 0.0) {
    double ge = 0.0;
    for (size_t k = 0; k < model.dim; ++k) ge += grad_out[k] * node.value[k];
    for (size_t k = 0; k < model.dim; ++k) {
      grad_out[k] = (grad_out[k] - ge * node.value[k]) / node.prenorm;
    }
  }
  const double inv_n = 1.0 / static_cast<double>(node.rows.size());
  for (size_t row : node.rows) {
    auto [it, inserted] = grads.try_emplace(row, model.dim, 0.0);
    auto& dst = it->second;
    for (size_t k = 0; k < model.dim; ++k) dst[k] += grad_out[k] * inv_n;
  }
}

const std::vector<std::vector<std::string>> kNoHardNegatives;

LossResult core_loss(const EncoderModel& model, const TrainBatch& batch,
                     const std::vector<std::vector<std::string>>& hard_negatives,
                     double temperature) {
  const size_t B = batch.queries.size();
  if (B == 0) throw std::invalid_argument("empty training batch");
  if (batch.positives.size() != B) {
    throw std::invalid_argument("batch queries/positives size mismatch");
  }
  if (!hard_negatives.empty() && hard_negatives.size() != B) {
    throw std::invalid_argument("hard_negatives must be empty or one entry per query");
  }
  if (!(temperature > 0.0)) throw std::invalid_argument("temperature must be > 0");

  std::vector<EmbedNode> q_nodes, d_nodes;
  q_nodes.reserve(B);
  d_nodes.reserve(B);
  for (size_t i = 0; i < B; ++i) {
    q_nodes.push_back(make_node(model, batch.queries[i]));
    d_nodes.push_back(make_node(model, batch.positives[i]));
  }
  std::vector<std::vector<EmbedNode>> h_nodes(B);
  if (!hard_negatives.empty()) {
    for (size_t i = 0; i < B; ++i) {
      h_nodes[i].reserve(hard_negatives[i].size());
      for (const auto& text : hard_negatives[i]) {
        h_nodes[i].push_back(make_node(model, text));
      }
    }
  }

  LossResult result;
  result.per_query.resize(B);
  const double inv_B = 1.0 / static_cast<double>(B);
  std::vector<Embedding> q_grads(B, Embedding(model.dim, 0.0));
  std::vector<Embedding> d_grads(B, Embedding(model.dim, 0.0));

  for (size_t i = 0; i < B; ++i) {
    const size_t extra = h_nodes[i].size();
    std::vector<double> z(B + extra);
    for (size_t j = 0; j < B; ++j) {
      z[j] = similarity(q_nodes[i].value, d_nodes[j].value) / temperature;
    }
    for (size_t h = 0; h < extra; ++h) {
      z[B + h] = similarity(q_nodes[i].value, h_nodes[i][h].value) / temperature;
    }
    const double zmax = *std::max_element(z.begin(), z.end());
    double sum = 0.0;
    for (double v : z) sum += std::exp(v - zmax);
    const double lse = zmax + std::log(sum);
    result.per_query[i] = lse - z[i];

    for (size_t c = 0; c < z.size(); ++c) {
      const double p = std::exp(z[c] - lse);
      const double coef = (p - (c == i ? 1.0 : 0.0)) * inv_B / temperature;
      if (coef == 0.0) continue;
      const Embedding& doc = c < B ? d_nodes[c].value : h_nodes[i][c - B].value;
      for (size_t k = 0; k < model.dim; ++k) q_grads[i][k] += coef * doc[k];
      if (c < B) {
        for (size_t k = 0; k < model.dim; ++k) {
          d_grads[c][k] += coef * q_nodes[i].value[k];
        }
      } else {
        Embedding hg(model.dim);
        for (size_t k = 0; k < model.dim; ++k) hg[k] = coef * q_nodes[i].value[k];
        backprop(model, h_nodes[i][c - B], std::move(hg), result.grads);
      }
    }
  }

  double total = 0.0;
  for (double l : result.per_query) total += l;
  result.loss = total * inv_B;
  for (size_t i = 0; i < B; ++i) {
    backprop(model, q_nodes[i], std::move(q_grads[i]), result.grads);
  }
  for (size_t j = 0; j < B; ++j) {
    backprop(model, d_nodes[j], std::move(d_grads[j]), result.grads);
  }
  return result;
}

}  // namespace

LossResult contrastive_loss(const EncoderModel& model, const TrainBatch& batch,
                            double temperature) {
  return core_loss(model, batch, kNoHardNegatives, temperature);
}

LossResult loss_with_hard_negatives(const EncoderModel& model,
                                    const TrainBatch& batch,
                                    double temperature) {
  return core_loss(model, batch, batch.hard_negatives, temperature);
}

FeedbackLossResult feedback_loss(const EncoderModel& model,
                                 const std::map<int, TrainBatch>& batches,
                                 int max_iteration, double alpha,
                                 double temperature) {
  if (max_iteration < 1) throw std::invalid_argument("max_iteration must be >= 1");
  for (const auto& [t, batch] : batches) {
    (void)batch;
    if (t < 1 || t > max_iteration) {
      throw std::invalid_argument("iteration key out of range: " + std::to_string(t));
    }
  }
  FeedbackLossResult result;
  for (int t = 1; t <= max_iteration; ++t) {
    auto it = batches.find(t);
    if (it == batches.end()) {
      warn("feedback loss: no batch for iteration " + std::to_string(t) +
           "; it contributes zero");
      continue;
    }
    LossResult lt = loss_with_hard_negatives(model, it->second, temperature);
    result.per_iteration[t] = lt.loss;
    const double w = std::pow(alpha, static_cast<double>(t));
    result.loss += w * lt.loss;
    accumulate(result.grads, lt.grads, w);
  }
  return result;
}

void accumulate(Gradients& into, const Gradients& from, double scale) {
  for (const auto& [row, g] : from) {
    auto [it, inserted] = into.try_emplace(row, g.size(), 0.0);
    auto& dst = it->second;
    if (dst.size() != g.size()) throw IntegrityError("gradient dimension mismatch");
    for (size_t k = 0; k < g.size(); ++k) dst[k] += scale * g[k];
  }
}

void apply_sgd_step(EncoderModel& model, const Gradients& grads,
                    double learning_rate) {
  for (const auto& [row, g] : grads) {
    if (row >= model.rows()) throw IntegrityError("gradient row out of range");
    if (g.size() != model.dim) throw IntegrityError("gradient dimension mismatch");
    double* dst = model.row(row);
    for (size_t k = 0; k < model.dim; ++k) dst[k] -= learning_rate * g[k];
  }
}

}  // namespace toolret
