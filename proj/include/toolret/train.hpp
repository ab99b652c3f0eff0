#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "toolret/encoder.hpp"
#include "toolret/loss.hpp"

namespace toolret {

// One supervised example: an instruction (already iteration-tagged), the
// document text of a relevant tool, and optional mined hard-negative
// document texts.
struct TrainTriple {
  std::string query;
  std::string positive;
  std::vector<std::string> hard_negatives;
};

// Triples grouped by feedback iteration. Round 0 holds the original
// instructions (warm-up data); rounds 1..T hold refined instructions.
using TrainingRounds = std::map<int, std::vector<TrainTriple>>;

struct TrainConfig {
  double learning_rate = 0.05;
  size_t batch_size = 64;
  size_t epochs = 1;        // per stage
  double alpha = 1.0;       // iteration-loss decay weight
  double temperature = 1.0;
  uint64_t seed = 42;
};

struct TrainStats {
  std::vector<double> warmup_epoch_loss;    // mean per-query loss per epoch
  std::vector<double> feedback_epoch_loss;  // sum_t alpha^t * mean L_t per epoch
  size_t steps = 0;
};

// Two-stage SGD on the token-embedding table. Stage one fits round 0 with
// the in-batch contrastive loss (hard negatives honored when attached);
// stage two fits rounds 1..T with each batch's loss weighted by alpha^t.
// Batches are reshuffled every epoch from the config seed; size-1 leftover
// batches are dropped with a warning so every step has in-batch negatives.
// Throws TrainingDiverged when the loss stops being finite.
TrainStats train(EncoderModel& model, const TrainingRounds& rounds,
                 const TrainConfig& config);

// JSON-lines, one triple per line:
//   {"iteration":t, "query":..., "positive":..., "hard_negatives":[...]}
void save_rounds(const TrainingRounds& rounds, const std::string& path);
TrainingRounds load_rounds(const std::string& path);

}  // namespace toolret
