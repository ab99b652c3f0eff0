#include "toolret/eval.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "toolret/errors.hpp"
#include "toolret/log.hpp"
#include "toolret/strings.hpp"

namespace toolret {

namespace {

using ordered_json = nlohmann::ordered_json;

bool parse_double_strict(const std::string& s, double& out) {
  const char* begin = s.data();
  const char* end = begin + s.size();
  auto [ptr, ec] = std::from_chars(begin, end, out);
  return ec == std::errc{} && ptr == end;
}

}  // namespace

RunFile load_run(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open run file: " + path);

  struct Row {
    std::string tool_id;
    long long rank;
    double score;
  };
  std::vector<std::string> query_order;
  std::map<std::string, std::vector<Row>> rows;
  RunFile run;
  bool tag_seen = false;

  std::string line;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty()) continue;
    auto fields = split_fields(line);
    const std::string where = path + ":" + std::to_string(lineno) + ": ";
    if (fields.size() != 6) {
      throw ParseError(where + "expected 6 fields (query_id 0 tool_id rank score tag), got " +
                       std::to_string(fields.size()));
    }
    long long rank = 0;
    if (!parse_int_strict(fields[3], rank) || rank < 1) {
      throw ParseError(where + "bad rank \"" + fields[3] + "\"");
    }
    double score = 0.0;
    if (!parse_double_strict(fields[4], score)) {
      throw ParseError(where + "bad score \"" + fields[4] + "\"");
    }
    if (!tag_seen) {
      run.tag = fields[5];
      tag_seen = true;
    } else if (fields[5] != run.tag) {
      throw ParseError(where + "run tag \"" + fields[5] + "\" differs from \"" + run.tag + "\"");
    }
    if (!rows.count(fields[0])) query_order.push_back(fields[0]);
    rows[fields[0]].push_back({fields[2], rank, score});
  }

  for (const auto& qid : query_order) {
    auto& qrows = rows[qid];
    std::sort(qrows.begin(), qrows.end(),
              [](const Row& a, const Row& b) { return a.rank < b.rank; });
    RankedList ranked;
    ranked.query_id = qid;
    std::set<std::string> seen;
    for (size_t i = 0; i < qrows.size(); ++i) {
      if (qrows[i].rank != static_cast<long long>(i + 1)) {
        throw IntegrityError(path + ": query \"" + qid + "\": ranks are not contiguous from 1");
      }
      if (!seen.insert(qrows[i].tool_id).second) {
        throw IntegrityError(path + ": query \"" + qid + "\": duplicate tool_id \"" +
                             qrows[i].tool_id + "\"");
      }
      ranked.items.push_back({qrows[i].tool_id, qrows[i].score});
    }
    ranked.cutoff = ranked.items.size();
    run.entries.push_back(std::move(ranked));
  }
  return run;
}

void save_run(const RunFile& run, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write run file: " + path);
  const std::string tag = run.tag.empty() ? "run" : run.tag;
  for (const auto& entry : run.entries) {
    for (size_t i = 0; i < entry.items.size(); ++i) {
      out << entry.query_id << '\t' << 0 << '\t' << entry.items[i].tool_id << '\t'
          << (i + 1) << '\t' << fmt_double(entry.items[i].score) << '\t' << tag << '\n';
    }
  }
  if (!out) throw IoError("write failed: " + path);
}

void append_ranked(RunFile& run, RankedList ranked) {
  for (const auto& entry : run.entries) {
    if (entry.query_id == ranked.query_id) {
      throw IntegrityError("run already has an entry for query \"" + ranked.query_id + "\"");
    }
  }
  run.entries.push_back(std::move(ranked));
}

std::optional<double> ndcg_at_m(const RankedList& ranked,
                                const RelevanceJudgments& qrels, size_t m) {
  if (m < 1) throw std::invalid_argument("cutoff m must be >= 1");
  const auto* judged = qrels.for_query(ranked.query_id);
  if (judged == nullptr) return std::nullopt;

  std::vector<int> grades;
  grades.reserve(judged->size());
  for (const auto& [tool_id, grade] : *judged) {
    if (grade > 0) grades.push_back(grade);
  }
  if (grades.empty()) return std::nullopt;
  std::sort(grades.begin(), grades.end(), std::greater<>());

  double idcg = 0.0;
  for (size_t i = 0; i < std::min(m, grades.size()); ++i) {
    idcg += (std::exp2(static_cast<double>(grades[i])) - 1.0) /
            std::log2(static_cast<double>(i) + 2.0);
  }

  double dcg = 0.0;
  for (size_t i = 0; i < std::min(m, ranked.items.size()); ++i) {
    const int rel = qrels.grade(ranked.query_id, ranked.items[i].tool_id);
    if (rel > 0) {
      dcg += (std::exp2(static_cast<double>(rel)) - 1.0) /
             std::log2(static_cast<double>(i) + 2.0);
    }
  }
  return dcg / idcg;
}

MetricsReport evaluate_run(const RunFile& run, const RelevanceJudgments& qrels,
                           const std::vector<size_t>& cutoffs) {
  if (cutoffs.empty()) throw std::invalid_argument("cutoffs must be non-empty");
  std::set<size_t> unique_cutoffs;
  for (size_t m : cutoffs) {
    if (m < 1) throw std::invalid_argument("cutoff m must be >= 1");
    if (!unique_cutoffs.insert(m).second) {
      throw std::invalid_argument("duplicate cutoff " + std::to_string(m));
    }
  }

  std::vector<std::string> unknown;
  for (const auto& entry : run.entries) {
    if (!qrels.has_query(entry.query_id)) unknown.push_back(entry.query_id);
  }
  if (!unknown.empty()) {
    std::string msg = "run references queries with no judgments:";
    for (const auto& qid : unknown) msg += " \"" + qid + "\"";
    throw IntegrityError(msg);
  }

  MetricsReport report;
  report.tag = run.tag;
  report.cutoffs = cutoffs;
  std::map<size_t, double> sums;
  for (const auto& entry : run.entries) {
    std::map<size_t, double> per_cutoff;
    bool skipped = false;
    for (size_t m : cutoffs) {
      auto v = ndcg_at_m(entry, qrels, m);
      if (!v) {
        skipped = true;
        break;
      }
      per_cutoff[m] = *v;
    }
    if (skipped) {
      warn("evaluate_run: query \"" + entry.query_id +
           "\" has no positive judgment; excluded from means");
      ++report.excluded;
      continue;
    }
    for (const auto& [m, v] : per_cutoff) sums[m] += v;
    report.per_query[entry.query_id] = std::move(per_cutoff);
    ++report.evaluated;
  }
  for (size_t m : cutoffs) {
    report.mean[m] = report.evaluated ? sums[m] / static_cast<double>(report.evaluated) : 0.0;
  }
  return report;
}

std::optional<double> relative_improvement(double ours, double baseline) {
  if (!(baseline > 0.0)) return std::nullopt;
  return (ours - baseline) / baseline * 100.0;
}

namespace {

void check_same_cutoffs(const std::vector<MetricsReport>& reports) {
  for (size_t i = 1; i < reports.size(); ++i) {
    if (reports[i].cutoffs != reports[0].cutoffs) {
      throw std::invalid_argument("reports disagree on cutoffs; cannot render side by side");
    }
  }
}

void check_baseline(const std::vector<MetricsReport>& reports,
                    std::optional<size_t> baseline) {
  if (baseline && *baseline >= reports.size()) {
    throw std::invalid_argument("baseline index out of range");
  }
}

}  // namespace

std::string render_report_text(const std::vector<MetricsReport>& reports,
                               std::optional<size_t> baseline) {
  if (reports.empty()) throw std::invalid_argument("no reports to render");
  check_same_cutoffs(reports);
  check_baseline(reports, baseline);
  const auto& cutoffs = reports[0].cutoffs;

  std::vector<std::vector<std::string>> grid;
  std::vector<std::string> header{"run"};
  for (size_t m : cutoffs) header.push_back("N@" + std::to_string(m));
  header.push_back("queries");
  header.push_back("excluded");
  grid.push_back(std::move(header));

  for (const auto& r : reports) {
    std::vector<std::string> row{r.tag};
    for (size_t m : cutoffs) row.push_back(fmt_double(r.mean.at(m)));
    row.push_back(std::to_string(r.evaluated));
    row.push_back(std::to_string(r.excluded));
    grid.push_back(std::move(row));
  }
  if (baseline) {
    const auto& base = reports[*baseline];
    const auto& last = reports.back();
    std::vector<std::string> row{"improvement% vs " + base.tag};
    for (size_t m : cutoffs) {
      auto imp = relative_improvement(last.mean.at(m), base.mean.at(m));
      row.push_back(imp ? fmt_double(*imp) : "n/a");
    }
    row.push_back("");
    row.push_back("");
    grid.push_back(std::move(row));
  }

  std::vector<size_t> widths(grid[0].size(), 0);
  for (const auto& row : grid) {
    for (size_t c = 0; c < row.size(); ++c) widths[c] = std::max(widths[c], row[c].size());
  }
  std::ostringstream out;
  for (const auto& row : grid) {
    for (size_t c = 0; c < row.size(); ++c) {
      if (c) out << "  ";
      out << row[c];
      if (c + 1 < row.size()) out << std::string(widths[c] - row[c].size(), ' ');
    }
    out << '\n';
  }
  return out.str();
}

std::string render_report_json(const std::vector<MetricsReport>& reports,
                               std::optional<size_t> baseline) {
  if (reports.empty()) throw std::invalid_argument("no reports to render");
  check_same_cutoffs(reports);
  check_baseline(reports, baseline);

  ordered_json doc;
  doc["schema"] = "toolret-report/1";
  doc["runs"] = ordered_json::array();
  for (const auto& r : reports) {
    ordered_json jr;
    jr["tag"] = r.tag;
    jr["cutoffs"] = r.cutoffs;
    ordered_json means = ordered_json::object();
    for (size_t m : r.cutoffs) means[std::to_string(m)] = r.mean.at(m);
    jr["mean_ndcg"] = std::move(means);
    ordered_json per_query = ordered_json::object();
    for (const auto& [qid, by_cutoff] : r.per_query) {
      ordered_json jq = ordered_json::object();
      for (const auto& [m, v] : by_cutoff) jq[std::to_string(m)] = v;
      per_query[qid] = std::move(jq);
    }
    jr["per_query"] = std::move(per_query);
    jr["evaluated"] = r.evaluated;
    jr["excluded"] = r.excluded;
    doc["runs"].push_back(std::move(jr));
  }
  if (baseline) {
    const auto& base = reports[*baseline];
    const auto& last = reports.back();
    ordered_json imp;
    imp["baseline"] = base.tag;
    imp["run"] = last.tag;
    ordered_json values = ordered_json::object();
    for (size_t m : base.cutoffs) {
      auto v = relative_improvement(last.mean.at(m), base.mean.at(m));
      if (v) {
        values[std::to_string(m)] = *v;
      } else {
        values[std::to_string(m)] = nullptr;
      }
    }
    imp["percent"] = std::move(values);
    doc["improvement"] = std::move(imp);
  } else {
    doc["improvement"] = nullptr;
  }
  return doc.dump(2) + "\n";
}

std::vector<MetricsReport> parse_report_json(const std::string& text) {
  ordered_json doc;
  try {
    doc = ordered_json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("bad report JSON: ") + e.what());
  }
  if (!doc.is_object() || doc.value("schema", "") != "toolret-report/1") {
    throw ParseError("not a toolret-report/1 document");
  }
  std::vector<MetricsReport> reports;
  try {
    for (const auto& jr : doc.at("runs")) {
      MetricsReport r;
      r.tag = jr.at("tag").get<std::string>();
      r.cutoffs = jr.at("cutoffs").get<std::vector<size_t>>();
      for (const auto& [key, value] : jr.at("mean_ndcg").items()) {
        r.mean[std::stoull(key)] = value.get<double>();
      }
      for (const auto& [qid, by_cutoff] : jr.at("per_query").items()) {
        for (const auto& [key, value] : by_cutoff.items()) {
          r.per_query[qid][std::stoull(key)] = value.get<double>();
        }
      }
      r.evaluated = jr.at("evaluated").get<size_t>();
      r.excluded = jr.at("excluded").get<size_t>();
      reports.push_back(std::move(r));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("bad report JSON: ") + e.what());
  }
  return reports;
}

}  // namespace toolret
