#pragma once

#include <map>
#include <string>
#include <vector>

#include "toolret/encoder.hpp"

namespace toolret {

// One training batch of (query, positive tool document) pairs. All other
// positives in the batch act as in-batch negatives for each query. When
// hard_negatives is non-empty it must have one entry per query (possibly
// empty); those documents are added to that query's softmax denominator
// only, and receive gradient like any other negative.
struct TrainBatch {
  std::vector<std::string> queries;
  std::vector<std::string> positives;
  std::vector<std::vector<std::string>> hard_negatives;

  size_t size() const { return queries.size(); }
};

// Sparse gradient of a loss with respect to the token-embedding table:
// row index -> d(loss)/d(row). Ordered so iteration is deterministic.
using Gradients = std::map<size_t, std::vector<double>>;

struct LossResult {
  double loss = 0.0;               // mean over queries in the batch
  std::vector<double> per_query;   // unaveraged per-query losses
  Gradients grads;                 // d(loss)/d(table rows)
};

// In-batch contrastive loss:
//   L = -(1/B) sum_i log( exp(R(q_i,d_i)/tau) / sum_j exp(R(q_i,d_j)/tau) )
// Any hard_negatives on the batch are ignored.
LossResult contrastive_loss(const EncoderModel& model, const TrainBatch& batch,
                            double temperature);

// Same loss with each query's hard-negative documents added to its
// denominator. With no hard negatives attached this computes exactly the
// same value (and gradients) as contrastive_loss.
LossResult loss_with_hard_negatives(const EncoderModel& model,
                                    const TrainBatch& batch,
                                    double temperature);

struct FeedbackLossResult {
  double loss = 0.0;                 // sum_t alpha^t * L_t
  std::map<int, double> per_iteration;  // unweighted L_t per iteration
  Gradients grads;
};

// Feedback-composed loss over refined-instruction batches keyed by
// iteration t in [1, max_iteration]. A key outside that range is an error;
// a missing iteration contributes zero with a warning. Each per-iteration
// batch may carry hard negatives.
FeedbackLossResult feedback_loss(const EncoderModel& model,
                                 const std::map<int, TrainBatch>& batches,
                                 int max_iteration, double alpha,
                                 double temperature);

// into += scale * from, creating rows as needed.
void accumulate(Gradients& into, const Gradients& from, double scale = 1.0);

// table[row] -= learning_rate * grad for every row in grads.
void apply_sgd_step(EncoderModel& model, const Gradients& grads,
                    double learning_rate);

}  // namespace toolret
