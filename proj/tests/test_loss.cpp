#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "test_util.hpp"
#include "toolret/errors.hpp"
#include "toolret/loss.hpp"

using namespace toolret;
using namespace toolret::testing;

namespace {

EncoderModel manual_model(size_t dim, bool normalize,
                          const std::vector<std::pair<std::string, Embedding>>& rows) {
  std::vector<std::string> tokens;
  for (const auto& [tok, vec] : rows) tokens.push_back(tok);
  EncoderModel m = init_encoder(tokens, dim, normalize, 1);
  for (size_t r = 0; r < rows.size(); ++r) {
    for (size_t c = 0; c < dim; ++c) m.row(r)[c] = rows[r].second[c];
  }
  return m;
}

double rel_err(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-6});
}

// Central finite difference of `loss_at` with respect to table entry (r, c).
template <typename LossFn>
double fd_grad(const EncoderModel& model, size_t r, size_t c, LossFn&& loss_at) {
  const double eps = 1e-5;
  EncoderModel plus = model;
  plus.row(r)[c] += eps;
  EncoderModel minus = model;
  minus.row(r)[c] -= eps;
  return (loss_at(plus) - loss_at(minus)) / (2.0 * eps);
}

// Checks every table entry of the model against finite differences.
template <typename LossFn>
void check_gradients(const EncoderModel& model, const Gradients& grads,
                     LossFn&& loss_at) {
  for (size_t r = 0; r < model.rows(); ++r) {
    auto it = grads.find(r);
    for (size_t c = 0; c < model.dim; ++c) {
      const double analytic = it == grads.end() ? 0.0 : it->second[c];
      const double numeric = fd_grad(model, r, c, loss_at);
      REQUIRE_MESSAGE(rel_err(analytic, numeric) < 1e-4,
                      "row " << r << " col " << c << ": analytic " << analytic
                             << " vs numeric " << numeric);
    }
  }
}

// Independent scalar reference: direct softmax quotient, no log-sum-exp.
double reference_loss(const EncoderModel& model, const TrainBatch& batch,
                      double temperature, bool use_hard_negatives) {
  const size_t B = batch.size();
  std::vector<Embedding> q(B), d(B);
  for (size_t i = 0; i < B; ++i) {
    q[i] = embed(model, batch.queries[i]);
    d[i] = embed(model, batch.positives[i]);
  }
  double total = 0.0;
  for (size_t i = 0; i < B; ++i) {
    double denom = 0.0;
    for (size_t j = 0; j < B; ++j) denom += std::exp(similarity(q[i], d[j]) / temperature);
    if (use_hard_negatives && !batch.hard_negatives.empty()) {
      for (const auto& text : batch.hard_negatives[i]) {
        denom += std::exp(similarity(q[i], embed(model, text)) / temperature);
      }
    }
    total += -std::log(std::exp(similarity(q[i], d[i]) / temperature) / denom);
  }
  return total / static_cast<double>(B);
}

// Random model + batch fixtures for the finite-difference sweeps.
struct RandomCase {
  EncoderModel model;
  TrainBatch batch;
  double temperature;
};

RandomCase make_random_case(std::mt19937_64& rng, bool with_hard_negatives) {
  const size_t vocab_size = 6 + rng() % 15;  // <= 20
  const size_t dim = 2 + rng() % 7;          // <= 8
  std::vector<std::string> vocab;
  for (size_t i = 0; i < vocab_size; ++i) vocab.push_back("w" + std::to_string(i));
  RandomCase rc{init_encoder(vocab, dim, rng() % 2 == 0, rng()), {}, 0.0};

  auto random_text = [&](size_t min_len) {
    const size_t len = min_len + rng() % 4;
    std::string text;
    for (size_t i = 0; i < len; ++i) {
      if (i) text += " ";
      // One in eight tokens is out-of-vocab to exercise skipping.
      text += (rng() % 8 == 0) ? "oov" : vocab[rng() % vocab.size()];
    }
    return text;
  };

  const size_t B = 2 + rng() % 2;  // 2 or 3
  for (size_t i = 0; i < B; ++i) {
    rc.batch.queries.push_back(random_text(1));
    rc.batch.positives.push_back(random_text(1));
  }
  if (with_hard_negatives) {
    for (size_t i = 0; i < B; ++i) {
      std::vector<std::string> hn;
      const size_t n = rng() % 3;  // 0..2 per query
      for (size_t h = 0; h < n; ++h) hn.push_back(random_text(1));
      rc.batch.hard_negatives.push_back(std::move(hn));
    }
  }
  const double temps[] = {0.07, 0.5, 1.0};
  rc.temperature = temps[rng() % 3];
  return rc;
}

}  // namespace

TEST_CASE("uniform scores give exactly ln B") {
  // Mutually orthogonal, unnormalized embeddings: every similarity is zero,
  // so each query's loss is -log(1/2) = ln 2.
  EncoderModel m = manual_model(4, false,
                                {{"qa", {1, 0, 0, 0}},
                                 {"da", {0, 1, 0, 0}},
                                 {"qb", {0, 0, 1, 0}},
                                 {"db", {0, 0, 0, 1}}});
  TrainBatch batch{{"qa", "qb"}, {"da", "db"}, {}};
  LossResult r = contrastive_loss(m, batch, 1.0);
  CHECK(std::abs(r.loss - 0.69314718055994531) <= 1e-12);
  REQUIRE(r.per_query.size() == 2);
  CHECK(std::abs(r.per_query[0] - 0.69314718055994531) <= 1e-12);
  CHECK(std::abs(r.per_query[1] - 0.69314718055994531) <= 1e-12);
}

TEST_CASE("the two-pair hand case matches log(e+1) - 1") {
  // R(q1,d1)=1, R(q1,d2)=0 at tau=1: the first query's loss is
  // -log(e / (e + 1)) = log(e + 1) - 1 = 0.31326...
  EncoderModel m = manual_model(2, false,
                                {{"q1", {1, 0}}, {"d1", {1, 0}},
                                 {"q2", {0, 1}}, {"d2", {0, 1}}});
  TrainBatch batch{{"q1", "q2"}, {"d1", "d2"}, {}};
  LossResult r = contrastive_loss(m, batch, 1.0);
  const double oracle = std::log(std::exp(1.0) + 1.0) - 1.0;
  REQUIRE(r.per_query.size() == 2);
  CHECK(std::abs(r.per_query[0] - oracle) <= 1e-12);
  CHECK(std::abs(r.per_query[0] - 0.3133) <= 1e-4);
  // The second pair is symmetric, so the batch mean equals the hand value.
  CHECK(std::abs(r.loss - oracle) <= 1e-12);
}

TEST_CASE("temperature sharpens the softmax") {
  EncoderModel m = manual_model(2, false,
                                {{"q1", {1, 0}}, {"d1", {1, 0}},
                                 {"q2", {0, 1}}, {"d2", {0, 1}}});
  TrainBatch batch{{"q1", "q2"}, {"d1", "d2"}, {}};
  // z = 1/tau vs 0: loss = log(1 + exp(-1/tau)), falling as tau shrinks.
  LossResult sharp = contrastive_loss(m, batch, 0.1);
  LossResult soft = contrastive_loss(m, batch, 2.0);
  CHECK(std::abs(sharp.loss - std::log(1.0 + std::exp(-10.0))) <= 1e-12);
  CHECK(std::abs(soft.loss - std::log(1.0 + std::exp(-0.5))) <= 1e-12);
  CHECK(sharp.loss < soft.loss);
  CHECK_THROWS_AS(contrastive_loss(m, batch, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(contrastive_loss(m, batch, -1.0), std::invalid_argument);
}

TEST_CASE("three-pair batch with hard negatives matches the direct formula") {
  EncoderModel m = manual_model(
      3, false,
      {{"q1", {0.9, 0.1, 0.0}}, {"d1", {1.0, 0.0, 0.2}},
       {"q2", {0.0, 0.8, 0.3}}, {"d2", {0.1, 1.0, 0.0}},
       {"q3", {0.2, 0.0, 1.0}}, {"d3", {0.0, 0.3, 0.9}},
       {"h1", {0.7, 0.2, 0.1}}, {"h2", {0.1, 0.1, 0.8}}});
  TrainBatch batch{{"q1", "q2", "q3"},
                   {"d1", "d2", "d3"},
                   {{"h1"}, {}, {"h1", "h2"}}};
  const double tau = 0.5;
  LossResult r = loss_with_hard_negatives(m, batch, tau);
  const double oracle = reference_loss(m, batch, tau, true);
  CHECK(std::abs(r.loss - oracle) <= 1e-12);

  // Hard negatives can only grow the denominator, so the loss rises.
  LossResult plain = contrastive_loss(m, batch, tau);
  CHECK(std::abs(plain.loss - reference_loss(m, batch, tau, false)) <= 1e-12);
  CHECK(r.loss > plain.loss);
}

TEST_CASE("with no hard negatives both losses are bitwise identical") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 10; ++trial) {
    RandomCase rc = make_random_case(rng, false);
    LossResult a = contrastive_loss(rc.model, rc.batch, rc.temperature);
    LossResult b = loss_with_hard_negatives(rc.model, rc.batch, rc.temperature);
    CHECK(a.loss == b.loss);  // exact: same arithmetic path
    CHECK(a.per_query == b.per_query);
    CHECK(a.grads == b.grads);

    // Attached-but-empty lists are the same case.
    TrainBatch with_empty = rc.batch;
    with_empty.hard_negatives.assign(rc.batch.size(), {});
    LossResult c = loss_with_hard_negatives(rc.model, with_empty, rc.temperature);
    CHECK(a.loss == c.loss);
    CHECK(a.grads == c.grads);

    // contrastive_loss ignores hard negatives outright.
    TrainBatch with_hn = rc.batch;
    with_hn.hard_negatives.assign(rc.batch.size(), {"w0 w1"});
    LossResult d = contrastive_loss(rc.model, with_hn, rc.temperature);
    CHECK(a.loss == d.loss);
  }
}

TEST_CASE("batch validation") {
  EncoderModel m = manual_model(2, false, {{"q1", {1, 0}}, {"d1", {0, 1}}});
  CHECK_THROWS_AS(contrastive_loss(m, TrainBatch{{}, {}, {}}, 1.0), std::invalid_argument);
  CHECK_THROWS_AS(contrastive_loss(m, TrainBatch{{"q1"}, {"d1", "d1"}, {}}, 1.0),
                  std::invalid_argument);
  // hard_negatives, when attached, must have one entry per query.
  CHECK_THROWS_AS(
      loss_with_hard_negatives(m, TrainBatch{{"q1", "q1"}, {"d1", "d1"}, {{}}}, 1.0),
      std::invalid_argument);
}

TEST_CASE("analytic gradients match central finite differences") {
  std::mt19937_64 rng(20250815);
  int trials = 0;
  for (int t = 0; t < 25; ++t) {
    RandomCase rc = make_random_case(rng, t % 2 == 1);
    LossResult r = loss_with_hard_negatives(rc.model, rc.batch, rc.temperature);
    check_gradients(rc.model, r.grads, [&](const EncoderModel& m) {
      return loss_with_hard_negatives(m, rc.batch, rc.temperature).loss;
    });
    ++trials;
  }
  CHECK(trials == 25);
}

TEST_CASE("feedback-loss gradients match central finite differences") {
  std::mt19937_64 rng(77);
  for (int t = 0; t < 5; ++t) {
    RandomCase rc1 = make_random_case(rng, true);
    RandomCase rc2 = make_random_case(rng, false);
    // Reuse rc1's model; rc2 only donates a batch, re-tokenized against
    // rc1's vocabulary (token names overlap by construction).
    std::map<int, TrainBatch> batches{{1, rc1.batch}, {2, rc2.batch}};
    const double alpha = 0.6;
    FeedbackLossResult r = feedback_loss(rc1.model, batches, 2, alpha, rc1.temperature);
    check_gradients(rc1.model, r.grads, [&](const EncoderModel& m) {
      return feedback_loss(m, batches, 2, alpha, rc1.temperature).loss;
    });
  }
}

TEST_CASE("loss and gradients are invariant to pair order") {
  std::mt19937_64 rng(5);
  RandomCase rc = make_random_case(rng, true);
  while (rc.batch.size() < 3) rc = make_random_case(rng, true);

  TrainBatch permuted;
  const std::vector<size_t> order = {2, 0, 1};
  for (size_t i : order) {
    permuted.queries.push_back(rc.batch.queries[i]);
    permuted.positives.push_back(rc.batch.positives[i]);
    permuted.hard_negatives.push_back(rc.batch.hard_negatives[i]);
  }
  LossResult a = loss_with_hard_negatives(rc.model, rc.batch, rc.temperature);
  LossResult b = loss_with_hard_negatives(rc.model, permuted, rc.temperature);
  CHECK(std::abs(a.loss - b.loss) <= 1e-12);
  for (size_t i = 0; i < order.size(); ++i) {
    CHECK(std::abs(b.per_query[i] - a.per_query[order[i]]) <= 1e-12);
  }
  REQUIRE(a.grads.size() == b.grads.size());
  for (const auto& [row, g] : a.grads) {
    REQUIRE(b.grads.count(row) == 1);
    const auto& g2 = b.grads.at(row);
    for (size_t k = 0; k < g.size(); ++k) CHECK(std::abs(g[k] - g2[k]) <= 1e-12);
  }
}

TEST_CASE("one sgd step along the gradient reduces the loss") {
  std::mt19937_64 rng(31);
  for (int t = 0; t < 5; ++t) {
    RandomCase rc = make_random_case(rng, t % 2 == 0);
    LossResult before = loss_with_hard_negatives(rc.model, rc.batch, rc.temperature);
    if (before.grads.empty()) continue;  // degenerate all-OOV batch
    EncoderModel stepped = rc.model;
    apply_sgd_step(stepped, before.grads, 0.01);
    LossResult after = loss_with_hard_negatives(stepped, rc.batch, rc.temperature);
    CHECK(after.loss < before.loss);
  }
}

TEST_CASE("feedback loss composes alpha-weighted iteration losses") {
  EncoderModel m = manual_model(
      3, false,
      {{"q1", {0.9, 0.1, 0.0}}, {"d1", {1.0, 0.0, 0.2}},
       {"q2", {0.0, 0.8, 0.3}}, {"d2", {0.1, 1.0, 0.0}},
       {"h1", {0.7, 0.2, 0.1}}});
  TrainBatch b1{{"q1", "q2"}, {"d1", "d2"}, {}};
  TrainBatch b2{{"q2", "q1"}, {"d2", "d1"}, {{"h1"}, {}}};
  const double alpha = 0.5, tau = 0.8;

  LossResult l1 = loss_with_hard_negatives(m, b1, tau);
  LossResult l2 = loss_with_hard_negatives(m, b2, tau);
  FeedbackLossResult fb = feedback_loss(m, {{1, b1}, {2, b2}}, 2, alpha, tau);

  CHECK(std::abs(fb.loss - (alpha * l1.loss + alpha * alpha * l2.loss)) <= 1e-12);
  REQUIRE(fb.per_iteration.size() == 2);
  CHECK(fb.per_iteration.at(1) == l1.loss);  // unweighted
  CHECK(fb.per_iteration.at(2) == l2.loss);

  // Gradients are the alpha-weighted sum of the per-iteration gradients.
  Gradients expected;
  accumulate(expected, l1.grads, alpha);
  accumulate(expected, l2.grads, alpha * alpha);
  REQUIRE(fb.grads.size() == expected.size());
  for (const auto& [row, g] : expected) {
    const auto& got = fb.grads.at(row);
    for (size_t k = 0; k < g.size(); ++k) CHECK(std::abs(got[k] - g[k]) <= 1e-12);
  }

  SUBCASE("alpha = 1 reduces to a plain sum") {
    FeedbackLossResult flat = feedback_loss(m, {{1, b1}, {2, b2}}, 2, 1.0, tau);
    CHECK(std::abs(flat.loss - (l1.loss + l2.loss)) <= 1e-12);
  }
  SUBCASE("missing iterations warn and contribute zero") {
    WarningCapture warnings;
    FeedbackLossResult sparse = feedback_loss(m, {{2, b2}}, 3, alpha, tau);
    CHECK(std::abs(sparse.loss - alpha * alpha * l2.loss) <= 1e-12);
    CHECK(sparse.per_iteration.count(1) == 0);
    CHECK(sparse.per_iteration.count(2) == 1);
    CHECK(warnings.any_contains("iteration 1"));
    CHECK(warnings.any_contains("iteration 3"));
  }
  SUBCASE("iteration keys outside [1, T] are rejected") {
    CHECK_THROWS_AS(feedback_loss(m, {{0, b1}}, 2, alpha, tau), std::invalid_argument);
    CHECK_THROWS_AS(feedback_loss(m, {{3, b1}}, 2, alpha, tau), std::invalid_argument);
    CHECK_THROWS_AS(feedback_loss(m, {{1, b1}}, 0, alpha, tau), std::invalid_argument);
  }
}

TEST_CASE("accumulate scales and apply_sgd_step descends rows") {
  Gradients into{{0, {1.0, 2.0}}};
  Gradients from{{0, {10.0, 0.0}}, {3, {1.0, 1.0}}};
  accumulate(into, from, 0.5);
  CHECK(into.at(0) == std::vector<double>{6.0, 2.0});
  CHECK(into.at(3) == std::vector<double>{0.5, 0.5});

  EncoderModel m = manual_model(2, false, {{"a", {1.0, 1.0}}, {"b", {2.0, 2.0}}});
  apply_sgd_step(m, Gradients{{1, {1.0, -1.0}}}, 0.5);
  CHECK(m.row(0)[0] == 1.0);
  CHECK(m.row(1)[0] == 1.5);
  CHECK(m.row(1)[1] == 2.5);
  CHECK_THROWS_AS(apply_sgd_step(m, Gradients{{5, {1.0, 1.0}}}, 0.1), IntegrityError);
  CHECK_THROWS_AS(apply_sgd_step(m, Gradients{{0, {1.0}}}, 0.1), IntegrityError);
}
