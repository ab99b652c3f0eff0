#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "test_util.hpp"
#include "toolret/errors.hpp"
#include "toolret/eval.hpp"

using namespace toolret;
using namespace toolret::testing;

namespace {

RankedList ranking(const std::string& qid, const std::vector<std::string>& tool_ids) {
  RankedList r;
  r.query_id = qid;
  double score = static_cast<double>(tool_ids.size());
  for (const auto& id : tool_ids) r.items.push_back({id, score--});
  r.cutoff = r.items.size();
  return r;
}

// Independent NDCG reference built from first principles: pow/log instead
// of exp2/log2, explicit top-m truncation.
double reference_ndcg(const std::vector<int>& ranked_grades,
                      std::vector<int> judged_grades, size_t m) {
  auto dcg = [&](const std::vector<int>& grades) {
    double total = 0.0;
    for (size_t i = 0; i < grades.size() && i < m; ++i) {
      total += (std::pow(2.0, grades[i]) - 1.0) * std::log(2.0) /
               std::log(static_cast<double>(i) + 2.0);
    }
    return total;
  };
  std::sort(judged_grades.begin(), judged_grades.end(), std::greater<>());
  return dcg(ranked_grades) / dcg(judged_grades);
}

}  // namespace

TEST_CASE("ndcg matches the worked example") {
  // Judged: three grade-1 tools. Retrieved at m=3: an irrelevant tool, then
  // two of the relevant ones.
  //   DCG  = 0 + 1/log2(3) + 1/log2(4)          = 1.1309297535714575
  //   IDCG = 1 + 1/log2(3) + 1/log2(4)          = 2.1309297535714578
  //   NDCG = 0.53072127397724345
  RelevanceJudgments qrels;
  qrels.set("q1", "t1", 1);
  qrels.set("q1", "t2", 1);
  qrels.set("q1", "t3", 1);
  auto v = ndcg_at_m(ranking("q1", {"t9", "t1", "t2"}), qrels, 3);
  REQUIRE(v.has_value());
  CHECK(std::abs(*v - 0.53072127397724345) <= 1e-12);
  CHECK(*v == doctest::Approx(0.5307).epsilon(1e-3));
}

TEST_CASE("ndcg trivial cases") {
  RelevanceJudgments qrels;
  qrels.set("q1", "gold", 2);
  qrels.set("q1", "meh", 1);
  qrels.set("q1", "dud", 0);

  SUBCASE("perfect ranking scores one") {
    auto v = ndcg_at_m(ranking("q1", {"gold", "meh"}), qrels, 10);
    REQUIRE(v.has_value());
    CHECK(*v == doctest::Approx(1.0).epsilon(1e-15));
  }
  SUBCASE("empty ranking scores zero") {
    auto v = ndcg_at_m(ranking("q1", {}), qrels, 10);
    REQUIRE(v.has_value());
    CHECK(*v == 0.0);
  }
  SUBCASE("only irrelevant retrieved scores zero") {
    auto v = ndcg_at_m(ranking("q1", {"dud", "other"}), qrels, 10);
    REQUIRE(v.has_value());
    CHECK(*v == 0.0);
  }
  SUBCASE("cutoff truncates the reward") {
    auto at1 = ndcg_at_m(ranking("q1", {"meh", "gold"}), qrels, 1);
    REQUIRE(at1.has_value());
    // DCG@1 = (2^1-1)/1 = 1; IDCG@1 = (2^2-1)/1 = 3.
    CHECK(*at1 == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
  }
  SUBCASE("unjudged or all-zero queries have no defined value") {
    CHECK_FALSE(ndcg_at_m(ranking("ghost", {"gold"}), qrels, 5).has_value());
    RelevanceJudgments zeros;
    zeros.set("qz", "a", 0);
    zeros.set("qz", "b", 0);
    CHECK_FALSE(ndcg_at_m(ranking("qz", {"a"}), zeros, 5).has_value());
  }
  SUBCASE("m must be positive") {
    CHECK_THROWS_AS(ndcg_at_m(ranking("q1", {"gold"}), qrels, 0), std::invalid_argument);
  }
}

TEST_CASE("no permutation of the ideal ranking beats it") {
  // IDCG really is the maximum: enumerate every ordering of the judged
  // tools and check none scores above 1.
  RelevanceJudgments qrels;
  std::vector<std::string> ids = {"a", "b", "c", "d", "e"};
  const std::vector<int> grades = {3, 2, 2, 1, 0};
  for (size_t i = 0; i < ids.size(); ++i) qrels.set("q", ids[i], grades[i]);

  std::vector<std::string> perm = ids;
  std::sort(perm.begin(), perm.end());
  double best = 0.0;
  do {
    auto v = ndcg_at_m(ranking("q", perm), qrels, 5);
    REQUIRE(v.has_value());
    CHECK(*v <= 1.0 + 1e-12);
    best = std::max(best, *v);
  } while (std::next_permutation(perm.begin(), perm.end()));
  CHECK(best == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("ndcg agrees with an independent reference on random cases") {
  std::mt19937_64 rng(424242);
  for (int trial = 0; trial < 200; ++trial) {
    const size_t judged_count = 2 + rng() % 12;
    RelevanceJudgments qrels;
    std::vector<std::string> judged_ids;
    std::vector<int> judged_grades;
    bool any_positive = false;
    for (size_t i = 0; i < judged_count; ++i) {
      const int grade = static_cast<int>(rng() % 4);
      any_positive |= grade > 0;
      judged_ids.push_back("t" + std::to_string(i));
      judged_grades.push_back(grade);
      qrels.set("q", judged_ids.back(), grade);
    }
    if (!any_positive) {
      qrels.set("q", judged_ids[0], 1);
      judged_grades[0] = 1;
    }

    // Ranking: a shuffled mix of judged and unjudged tools.
    std::vector<std::string> pool = judged_ids;
    for (size_t i = 0; i < 4; ++i) pool.push_back("x" + std::to_string(i));
    std::shuffle(pool.begin(), pool.end(), rng);
    pool.resize(1 + rng() % pool.size());
    const size_t m = 1 + rng() % 15;

    std::vector<int> ranked_grades;
    for (const auto& id : pool) ranked_grades.push_back(qrels.grade("q", id));
    std::vector<int> positives;
    for (int g : judged_grades) {
      if (g > 0) positives.push_back(g);
    }

    auto got = ndcg_at_m(ranking("q", pool), qrels, m);
    REQUIRE(got.has_value());
    const double want = reference_ndcg(ranked_grades, positives, m);
    REQUIRE_MESSAGE(std::abs(*got - want) <= 1e-9,
                    "trial " << trial << ": got " << *got << " want " << want);
  }
}

TEST_CASE("run files round trip exactly") {
  TempDir dir;
  RunFile run;
  run.tag = "bm25-base";
  append_ranked(run, ranking("q1", {"t3", "t1"}));
  append_ranked(run, ranking("q2", {"t2"}));
  run.entries[0].items[0].score = 1.0 / 3.0;  // full-precision survives
  const std::string path = dir.file("run.tsv");
  save_run(run, path);

  RunFile loaded = load_run(path);
  CHECK(loaded.tag == "bm25-base");
  REQUIRE(loaded.entries.size() == 2);
  CHECK(loaded.entries[0].query_id == "q1");
  CHECK(loaded.entries[0].items[0].tool_id == "t3");
  CHECK(loaded.entries[0].items[0].score == 1.0 / 3.0);
  CHECK(loaded.entries[1].items[0].tool_id == "t2");

  SUBCASE("duplicate query append is rejected") {
    CHECK_THROWS_AS(append_ranked(run, ranking("q1", {"t9"})), IntegrityError);
  }
  SUBCASE("rank order in the file is what counts, not line order") {
    write_file(path,
               "q1\t0\tsecond\t2\t0.5\trun\n"
               "q1\t0\tfirst\t1\t0.9\trun\n");
    RunFile reordered = load_run(path);
    REQUIRE(reordered.entries.size() == 1);
    CHECK(reordered.entries[0].items[0].tool_id == "first");
    CHECK(reordered.entries[0].items[1].tool_id == "second");
  }
}

TEST_CASE("run loader rejects malformed and inconsistent files") {
  TempDir dir;
  const std::string path = dir.file("run.tsv");
  SUBCASE("wrong field count") {
    write_file(path, "q1\t0\tt1\t1\t0.5\n");
    CHECK_THROWS_WITH_AS(load_run(path), doctest::Contains(":1:"), ParseError);
  }
  SUBCASE("bad rank") {
    write_file(path, "q1\t0\tt1\tzero\t0.5\trun\n");
    CHECK_THROWS_AS(load_run(path), ParseError);
  }
  SUBCASE("rank zero") {
    write_file(path, "q1\t0\tt1\t0\t0.5\trun\n");
    CHECK_THROWS_AS(load_run(path), ParseError);
  }
  SUBCASE("bad score") {
    write_file(path, "q1\t0\tt1\t1\tbest\trun\n");
    CHECK_THROWS_AS(load_run(path), ParseError);
  }
  SUBCASE("mixed tags") {
    write_file(path, "q1\t0\tt1\t1\t0.5\ta\nq2\t0\tt1\t1\t0.5\tb\n");
    CHECK_THROWS_WITH_AS(load_run(path), doctest::Contains("tag"), ParseError);
  }
  SUBCASE("non-contiguous ranks") {
    write_file(path, "q1\t0\tt1\t1\t0.9\trun\nq1\t0\tt2\t3\t0.5\trun\n");
    CHECK_THROWS_WITH_AS(load_run(path), doctest::Contains("contiguous"), IntegrityError);
  }
  SUBCASE("duplicate tool in one ranking") {
    write_file(path, "q1\t0\tt1\t1\t0.9\trun\nq1\t0\tt1\t2\t0.5\trun\n");
    CHECK_THROWS_WITH_AS(load_run(path), doctest::Contains("duplicate"), IntegrityError);
  }
  SUBCASE("missing file") {
    CHECK_THROWS_AS(load_run(dir.file("none.tsv")), IoError);
  }
}

TEST_CASE("evaluate_run macro-averages and excludes all-zero queries") {
  RelevanceJudgments qrels;
  qrels.set("q1", "t1", 1);          // q1: gold at rank 1 -> 1.0
  qrels.set("q2", "t2", 1);          // q2: gold at rank 2
  qrels.set("qz", "t1", 0);          // judged, no positive -> excluded

  RunFile run;
  run.tag = "demo";
  append_ranked(run, ranking("q1", {"t1", "t9"}));
  append_ranked(run, ranking("q2", {"t9", "t2"}));
  append_ranked(run, ranking("qz", {"t1"}));

  WarningCapture warnings;
  MetricsReport report = evaluate_run(run, qrels, {1, 5});
  CHECK(report.tag == "demo");
  CHECK(report.evaluated == 2);
  CHECK(report.excluded == 1);
  CHECK(warnings.any_contains("qz"));
  CHECK(report.mean.at(1) == doctest::Approx(0.5).epsilon(1e-12));
  const double q2_at5 = 1.0 / std::log2(3.0);
  CHECK(report.mean.at(5) == doctest::Approx((1.0 + q2_at5) / 2.0).epsilon(1e-12));
  CHECK(report.per_query.at("q2").at(5) == doctest::Approx(q2_at5).epsilon(1e-12));
  CHECK(report.per_query.count("qz") == 0);

  SUBCASE("unknown queries are an integrity error listing every id") {
    append_ranked(run, ranking("ghost1", {"t1"}));
    append_ranked(run, ranking("ghost2", {"t1"}));
    CHECK_THROWS_WITH_AS(evaluate_run(run, qrels, {5}),
                         doctest::Contains("ghost2"), IntegrityError);
  }
  SUBCASE("cutoff validation") {
    CHECK_THROWS_AS(evaluate_run(run, qrels, {}), std::invalid_argument);
    CHECK_THROWS_AS(evaluate_run(run, qrels, {0}), std::invalid_argument);
    CHECK_THROWS_AS(evaluate_run(run, qrels, {5, 5}), std::invalid_argument);
  }
}

TEST_CASE("relative improvement matches the reported deltas") {
  auto a = relative_improvement(89.01, 68.24);
  REQUIRE(a.has_value());
  CHECK(std::abs(*a - 30.44) <= 0.01);
  auto b = relative_improvement(84.45, 82.10);
  REQUIRE(b.has_value());
  CHECK(std::abs(*b - 2.86) <= 0.01);
  CHECK(*relative_improvement(50.0, 100.0) == doctest::Approx(-50.0).epsilon(1e-12));
  CHECK_FALSE(relative_improvement(10.0, 0.0).has_value());
  CHECK_FALSE(relative_improvement(10.0, -1.0).has_value());
}

TEST_CASE("reports render to text and json and parse back") {
  RelevanceJudgments qrels;
  qrels.set("q1", "t1", 1);
  qrels.set("q2", "t2", 2);

  RunFile base;
  base.tag = "baseline";
  append_ranked(base, ranking("q1", {"t9", "t1"}));
  append_ranked(base, ranking("q2", {"t2"}));
  RunFile ours;
  ours.tag = "ours";
  append_ranked(ours, ranking("q1", {"t1"}));
  append_ranked(ours, ranking("q2", {"t2"}));

  std::vector<MetricsReport> reports = {evaluate_run(base, qrels, {1, 5}),
                                        evaluate_run(ours, qrels, {1, 5})};

  const std::string text = render_report_text(reports, 0);
  CHECK(text.find("baseline") != std::string::npos);
  CHECK(text.find("ours") != std::string::npos);
  CHECK(text.find("N@1") != std::string::npos);
  CHECK(text.find("N@5") != std::string::npos);
  CHECK(text.find("improvement% vs baseline") != std::string::npos);

  const std::string json_text = render_report_json(reports, 0);
  std::vector<MetricsReport> parsed = parse_report_json(json_text);
  REQUIRE(parsed.size() == 2);
  CHECK(parsed[0] == reports[0]);
  CHECK(parsed[1] == reports[1]);

  SUBCASE("text and json agree on the numbers") {
    // Every mean rendered in the table appears verbatim in the JSON floats'
    // round-trip: compare through the parsed reports instead of strings.
    for (size_t r = 0; r < reports.size(); ++r) {
      for (size_t m : reports[r].cutoffs) {
        CHECK(parsed[r].mean.at(m) == reports[r].mean.at(m));
      }
    }
  }
  SUBCASE("mismatched cutoffs cannot be rendered together") {
    std::vector<MetricsReport> bad = reports;
    bad[1].cutoffs = {3};
    CHECK_THROWS_AS(render_report_text(bad, std::nullopt), std::invalid_argument);
  }
  SUBCASE("baseline index is validated") {
    CHECK_THROWS_AS(render_report_text(reports, 7), std::invalid_argument);
  }
  SUBCASE("malformed json is a parse error") {
    CHECK_THROWS_AS(parse_report_json("not json"), ParseError);
    CHECK_THROWS_AS(parse_report_json("{\"schema\":\"other/9\",\"runs\":[]}"), ParseError);
  }
}
