#include "toolret/train.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <stdexcept>

#include <json.hpp>

#include "toolret/errors.hpp"
#include "toolret/hash.hpp"
#include "toolret/log.hpp"

namespace toolret {

namespace {

std::mt19937_64 seeded_rng(uint64_t seed, const std::string& tag) {
  return std::mt19937_64(seed ^ fnv1a64(tag));
}

TrainBatch make_batch(const std::vector<TrainTriple>& triples,
                      const std::vector<size_t>& order, size_t begin, size_t end) {
  TrainBatch batch;
  bool any_hard = false;
  for (size_t i = begin; i < end; ++i) {
    if (!triples[order[i]].hard_negatives.empty()) any_hard = true;
  }
  for (size_t i = begin; i < end; ++i) {
    const auto& t = triples[order[i]];
    batch.queries.push_back(t.query);
    batch.positives.push_back(t.positive);
    if (any_hard) batch.hard_negatives.push_back(t.hard_negatives);
  }
  return batch;
}

// Shuffle a round and cut it into batches; a trailing batch of one pair has
// no in-batch negatives, so it is dropped.
std::vector<std::pair<size_t, size_t>> batch_ranges(size_t count, size_t batch_size,
                                                    int round) {
  std::vector<std::pair<size_t, size_t>> ranges;
  for (size_t begin = 0; begin < count; begin += batch_size) {
    const size_t end = std::min(begin + batch_size, count);
    if (end - begin < 2) {
      warn("training: dropping size-1 leftover batch in round " + std::to_string(round));
      continue;
    }
    ranges.emplace_back(begin, end);
  }
  return ranges;
}

void check_finite(double loss, size_t step) {
  if (!std::isfinite(loss) || std::abs(loss) > 1e6) {
    throw TrainingDiverged("training diverged at step " + std::to_string(step) +
                           " (loss=" + std::to_string(loss) + ")");
  }
}

}  // namespace

TrainStats train(EncoderModel& model, const TrainingRounds& rounds,
                 const TrainConfig& config) {
  if (config.learning_rate <= 0.0) throw std::invalid_argument("learning_rate must be > 0");
  if (config.batch_size < 2) throw std::invalid_argument("batch_size must be >= 2");
  if (!(config.temperature > 0.0)) throw std::invalid_argument("temperature must be > 0");
  if (rounds.empty()) throw std::invalid_argument("no training rounds given");
  for (const auto& [t, triples] : rounds) {
    (void)triples;
    if (t < 0) throw std::invalid_argument("negative training round: " + std::to_string(t));
  }

  TrainStats stats;

  // Stage one: warm-up on the original (round 0) instructions.
  auto warm = rounds.find(0);
  if (warm == rounds.end() || warm->second.empty()) {
    warn("training: no warm-up round; skipping stage one");
  } else {
    const auto& triples = warm->second;
    std::vector<size_t> order(triples.size());
    for (size_t epoch = 0; epoch < config.epochs; ++epoch) {
      std::iota(order.begin(), order.end(), size_t{0});
      auto rng = seeded_rng(config.seed, "warmup/" + std::to_string(epoch));
      std::shuffle(order.begin(), order.end(), rng);
      double loss_sum = 0.0;
      size_t pair_count = 0;
      for (auto [begin, end] : batch_ranges(triples.size(), config.batch_size, 0)) {
        TrainBatch batch = make_batch(triples, order, begin, end);
        LossResult res = loss_with_hard_negatives(model, batch, config.temperature);
        check_finite(res.loss, stats.steps);
        apply_sgd_step(model, res.grads, config.learning_rate);
        ++stats.steps;
        loss_sum += res.loss * static_cast<double>(end - begin);
        pair_count += end - begin;
      }
      stats.warmup_epoch_loss.push_back(pair_count ? loss_sum / pair_count : 0.0);
    }
  }

  // Stage two: refined instructions, each round's loss weighted by alpha^t.
  const int max_t = rounds.rbegin()->first;
  std::vector<int> feedback_rounds;
  for (const auto& [t, triples] : rounds) {
    if (t >= 1 && !triples.empty()) feedback_rounds.push_back(t);
  }
  if (feedback_rounds.empty()) return stats;

  for (size_t epoch = 0; epoch < config.epochs; ++epoch) {
    // Batch each round independently, then interleave the steps in a
    // shuffled order so no single iteration dominates late updates.
    struct Step {
      int round;
      TrainBatch batch;
    };
    std::vector<Step> steps;
    for (int t : feedback_rounds) {
      const auto& triples = rounds.at(t);
      std::vector<size_t> order(triples.size());
      std::iota(order.begin(), order.end(), size_t{0});
      auto rng = seeded_rng(config.seed,
                            "feedback/" + std::to_string(epoch) + "/" + std::to_string(t));
      std::shuffle(order.begin(), order.end(), rng);
      for (auto [begin, end] : batch_ranges(triples.size(), config.batch_size, t)) {
        steps.push_back({t, make_batch(triples, order, begin, end)});
      }
    }
    auto rng = seeded_rng(config.seed, "feedback-order/" + std::to_string(epoch));
    std::shuffle(steps.begin(), steps.end(), rng);

    std::map<int, std::pair<double, size_t>> per_round;  // loss-sum, pair count
    for (const auto& step : steps) {
      LossResult res = loss_with_hard_negatives(model, step.batch, config.temperature);
      check_finite(res.loss, stats.steps);
      const double w = std::pow(config.alpha, static_cast<double>(step.round));
      apply_sgd_step(model, res.grads, config.learning_rate * w);
      ++stats.steps;
      auto& [sum, count] = per_round[step.round];
      sum += res.loss * static_cast<double>(step.batch.size());
      count += step.batch.size();
    }
    double epoch_loss = 0.0;
    for (int t = 1; t <= max_t; ++t) {
      auto it = per_round.find(t);
      if (it == per_round.end()) continue;
      epoch_loss += std::pow(config.alpha, static_cast<double>(t)) *
                    (it->second.first / static_cast<double>(it->second.second));
    }
    stats.feedback_epoch_loss.push_back(epoch_loss);
  }
  return stats;
}

void save_rounds(const TrainingRounds& rounds, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write rounds file: " + path);
  for (const auto& [t, triples] : rounds) {
    for (const auto& triple : triples) {
      nlohmann::ordered_json rec;
      rec["iteration"] = t;
      rec["query"] = triple.query;
      rec["positive"] = triple.positive;
      rec["hard_negatives"] = triple.hard_negatives;
      out << rec.dump() << '\n';
    }
  }
  if (!out) throw IoError("write failed: " + path);
}

TrainingRounds load_rounds(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open rounds file: " + path);
  TrainingRounds rounds;
  std::string line;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    try {
      auto rec = nlohmann::ordered_json::parse(line);
      TrainTriple triple;
      const int t = rec.at("iteration").get<int>();
      if (t < 0) {
        throw ParseError(path + ":" + std::to_string(lineno) + ": negative iteration");
      }
      triple.query = rec.at("query").get<std::string>();
      triple.positive = rec.at("positive").get<std::string>();
      triple.hard_negatives = rec.value("hard_negatives", std::vector<std::string>{});
      rounds[t].push_back(std::move(triple));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(path + ":" + std::to_string(lineno) + ": bad rounds record: " + e.what());
    }
  }
  return rounds;
}

}  // namespace toolret
