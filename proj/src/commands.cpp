#include "toolret/commands.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "toolret/bm25.hpp"
#include "toolret/corpus.hpp"
#include "toolret/encoder.hpp"
#include "toolret/errors.hpp"
#include "toolret/eval.hpp"
#include "toolret/feedback.hpp"
#include "toolret/hash.hpp"
#include "toolret/llm_client.hpp"
#include "toolret/log.hpp"
#include "toolret/provider.hpp"
#include "toolret/strings.hpp"
#include "toolret/train.hpp"

namespace toolret {

namespace {

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create output directory " + dir + ": " + ec.message());
}

void write_text(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
  if (!out) throw IoError("write failed: " + path);
}

// Tracks every artifact a command produces and freezes their hashes.
class Manifest {
 public:
  explicit Manifest(std::string out_dir) : out_dir_(std::move(out_dir)) {}

  void add(const std::string& name, const std::string& path) {
    artifacts_[name] = path;
  }

  void write() const {
    ordered_json doc;
    doc["schema"] = "toolret-manifest/1";
    doc["artifacts"] = ordered_json::object();
    for (const auto& [name, path] : artifacts_) {
      ordered_json entry;
      entry["path"] = fs::path(path).filename().string();
      entry["sha256"] = sha256_file_hex(path);
      doc["artifacts"][name] = std::move(entry);
    }
    write_text(out_dir_ + "/manifest.json", doc.dump(2) + "\n");
  }

 private:
  std::string out_dir_;
  std::map<std::string, std::string> artifacts_;
};

void write_snapshot(const ExperimentConfig& config, const std::string& out_dir) {
  write_text(out_dir + "/config.snapshot", config.raw());
}

ToolSet load_catalog(const ExperimentConfig& config) {
  return load_tools(config.require_string("tools"));
}

TrainConfig train_config_from(const ExperimentConfig& config) {
  TrainConfig tc;
  tc.learning_rate = config.get_double("learning_rate", 0.05);
  tc.batch_size = static_cast<size_t>(config.get_int("batch_size", 64));
  tc.epochs = static_cast<size_t>(config.get_int("epochs", 1));
  tc.alpha = config.get_double("alpha", 1.0);
  tc.temperature = config.get_double("temperature", 1.0);
  tc.seed = static_cast<uint64_t>(config.get_int("seed", 42));
  return tc;
}

EncoderModel init_model_from(const ExperimentConfig& config, const ToolSet& tools,
                             const std::vector<std::string>& extra_texts) {
  const auto dim = static_cast<size_t>(config.get_int("dim", 64));
  const bool normalize = config.get_bool("normalize", true);
  const auto seed = static_cast<uint64_t>(config.get_int("seed", 42));
  return init_encoder(build_vocab(tools, extra_texts), dim, normalize, seed);
}

// Round 0: the original instructions paired with each judged-positive tool.
std::vector<TrainTriple> make_warmup_round(const std::vector<Instruction>& queries,
                                           const RelevanceJudgments& qrels,
                                           const ToolSet& tools) {
  std::vector<TrainTriple> triples;
  for (const auto& q : queries) {
    const auto positives = qrels.positive_tools(q.query_id);
    if (positives.empty()) {
      warn("query \"" + q.query_id + "\" has no positive judgment; skipped");
      continue;
    }
    for (const auto& tool_id : positives) {
      const Tool* tool = tools.find(tool_id);
      if (tool == nullptr) {
        warn("query \"" + q.query_id + "\" judges tool \"" + tool_id +
             "\" that is not in the catalog; skipped");
        continue;
      }
      triples.push_back({tag_iteration(0, q.text), tool_document_text(*tool), {}});
    }
  }
  return triples;
}

std::vector<std::string> query_texts(const std::vector<Instruction>& queries) {
  std::vector<std::string> texts;
  texts.reserve(queries.size());
  for (const auto& q : queries) texts.push_back(q.text);
  return texts;
}

PromptTemplates load_templates(const ExperimentConfig& config) {
  PromptTemplates templates =
      PromptTemplates::load_dir(config.get_string("templates_dir", "assets/templates"));
  const std::pair<const char*, const std::string*> pins[] = {
      {"template_hash_comprehension", &templates.comprehension_hash},
      {"template_hash_assessment", &templates.assessment_hash},
      {"template_hash_refinement", &templates.refinement_hash},
  };
  for (const auto& [key, actual] : pins) {
    if (!config.has(key)) continue;
    const std::string pinned = config.get_string(key, "");
    if (pinned != *actual) {
      throw IntegrityError(std::string("config pins ") + key + " = " + pinned +
                           " but the template file hashes to " + *actual);
    }
  }
  return templates;
}

// Owns whatever provider stack the config asks for; `top` is what callers use.
struct ProviderStack {
  std::unique_ptr<ScriptedProvider> scripted;
  std::unique_ptr<RemoteProvider> remote;
  std::unique_ptr<RateLimiter> limiter;
  std::unique_ptr<RateLimitedProvider> limited;
  std::unique_ptr<FeedbackCache> cache;
  std::unique_ptr<CachingProvider> caching;
  FeedbackProvider* top = nullptr;
};

ProviderStack make_provider(const ExperimentConfig& config, const std::string& out_dir) {
  ProviderStack stack;
  const std::string kind = config.get_string("provider", "scripted");
  if (kind == "scripted") {
    stack.scripted = std::make_unique<ScriptedProvider>(
        ScriptedProvider::from_json_file(config.require_string("script")));
    stack.top = stack.scripted.get();
  } else if (kind == "remote") {
    RemoteProviderConfig rc;
    rc.base_url = config.get_string("base_url", rc.base_url);
    rc.model_name = config.get_string("model_name", rc.model_name);
    rc.api_key_env = config.get_string("api_key_env", rc.api_key_env);
    rc.timeout_seconds = config.get_double("timeout_seconds", rc.timeout_seconds);
    rc.max_retries = static_cast<int>(config.get_int("max_retries", rc.max_retries));
    rc.temperature = config.get_double("provider_temperature", rc.temperature);
    stack.remote = std::make_unique<RemoteProvider>(rc);
    stack.top = stack.remote.get();
  } else {
    throw ParseError("config key \"provider\" must be scripted or remote, got \"" + kind + "\"");
  }
  const double rate = config.get_double("rate_limit_per_s", 0.0);
  if (rate > 0.0) {
    stack.limiter = std::make_unique<RateLimiter>(rate, std::max(1.0, rate));
    stack.limited = std::make_unique<RateLimitedProvider>(*stack.top, *stack.limiter);
    stack.top = stack.limited.get();
  }
  stack.cache = std::make_unique<FeedbackCache>(
      config.get_string("cache", out_dir + "/feedback_cache.jsonl"));
  stack.caching = std::make_unique<CachingProvider>(*stack.top, *stack.cache);
  stack.top = stack.caching.get();
  return stack;
}

std::string method_from(const ExperimentConfig& config) {
  const std::string method = config.get_string("method", "dense");
  if (method != "bm25" && method != "dense") {
    throw ParseError("config key \"method\" must be bm25 or dense, got \"" + method + "\"");
  }
  return method;
}

void log_train_stats(const TrainStats& stats, std::ostringstream& log) {
  for (size_t i = 0; i < stats.warmup_epoch_loss.size(); ++i) {
    log << "warmup epoch " << i << " loss " << fmt_double(stats.warmup_epoch_loss[i]) << "\n";
  }
  for (size_t i = 0; i < stats.feedback_epoch_loss.size(); ++i) {
    log << "feedback epoch " << i << " loss " << fmt_double(stats.feedback_epoch_loss[i]) << "\n";
  }
  log << "steps " << stats.steps << "\n";
}

struct LoopArtifacts {
  std::vector<LoopResult> results;
  RunFile final_run;
  RunFile initial_run;  // the iteration-0 lists, for baseline comparison
  size_t failures = 0;
};

LoopArtifacts run_loop_over(const std::vector<Instruction>& queries,
                            const RetrieveFn& retrieve, FeedbackProvider& provider,
                            const PromptTemplates& templates, const ToolSet& tools,
                            const LoopOptions& options, const std::string& tag) {
  LoopArtifacts artifacts;
  artifacts.final_run.tag = tag;
  artifacts.initial_run.tag = tag + "-iteration0";
  for (const auto& q : queries) {
    LoopResult result = run_inference_loop(q, retrieve, provider, templates, tools, options);
    append_ranked(artifacts.final_run, result.final_list);
    append_ranked(artifacts.initial_run, result.rounds.front().retrieved);
    for (const auto& round : result.rounds) {
      if (round.provider_failed) {
        ++artifacts.failures;
        break;
      }
    }
    artifacts.results.push_back(std::move(result));
  }
  if (artifacts.failures > 0) {
    warn(std::to_string(artifacts.failures) + " of " + std::to_string(queries.size()) +
         " queries were degraded by provider failures (see the trace)");
  }
  return artifacts;
}

std::string timing_summary(const std::vector<LoopResult>& results) {
  std::map<int, std::pair<double, size_t>> by_iteration;
  for (const auto& res : results) {
    for (const auto& round : res.rounds) {
      auto& [sum, count] = by_iteration[round.iteration];
      sum += round.elapsed_ms;
      ++count;
    }
  }
  std::ostringstream out;
  for (const auto& [t, agg] : by_iteration) {
    out << "iteration " << t << ": " << agg.second << " rounds, mean "
        << fmt_double(agg.first / static_cast<double>(agg.second)) << " ms\n";
  }
  return out.str();
}

}  // namespace

int cmd_index(const ExperimentConfig& config, const std::string& out_dir) {
  ensure_dir(out_dir);
  write_snapshot(config, out_dir);
  Manifest manifest(out_dir);
  const ToolSet tools = load_catalog(config);
  const std::string method = method_from(config);

  if (method == "bm25") {
    InvertedIndex index = InvertedIndex::build(tools);
    const std::string path = out_dir + "/bm25.idx";
    index.save(path);
    manifest.add("bm25_index", path);
  } else {
    EncoderModel model;
    if (config.has("model")) {
      model = load_model(config.require_string("model"));
    } else {
      warn("no model given; indexing with a freshly initialized encoder");
      model = init_model_from(config, tools, {});
      const std::string model_path = out_dir + "/model.bin";
      save_model(model, model_path);
      manifest.add("model", model_path);
    }
    EmbeddingStore store = EmbeddingStore::build(model, tools);
    const std::string path = out_dir + "/embeddings.bin";
    store.save(path);
    manifest.add("embedding_store", path);
  }
  manifest.write();
  return 0;
}

int cmd_train(const ExperimentConfig& config, const std::string& out_dir) {
  ensure_dir(out_dir);
  write_snapshot(config, out_dir);
  Manifest manifest(out_dir);
  const ToolSet tools = load_catalog(config);
  const RelevanceJudgments qrels =
      load_qrels(config.get_string("train_qrels", config.require_string("qrels")));

  TrainingRounds rounds;
  if (config.has("rounds")) {
    rounds = load_rounds(config.require_string("rounds"));
  } else {
    const auto queries =
        load_queries(config.get_string("train_queries", config.require_string("queries")));
    rounds[0] = make_warmup_round(queries, qrels, tools);
  }
  std::vector<std::string> extra_texts;
  for (const auto& [t, triples] : rounds) {
    (void)t;
    for (const auto& triple : triples) extra_texts.push_back(triple.query);
  }

  EncoderModel model = config.has("model")
                           ? load_model(config.require_string("model"))
                           : init_model_from(config, tools, extra_texts);
  const TrainStats stats = train(model, rounds, train_config_from(config));

  std::ostringstream log;
  log_train_stats(stats, log);
  write_text(out_dir + "/train_log.txt", log.str());
  const std::string model_path = out_dir + "/model.bin";
  save_model(model, model_path);
  manifest.add("model", model_path);
  manifest.add("train_log", out_dir + "/train_log.txt");
  manifest.write();
  return 0;
}

int cmd_loop(const ExperimentConfig& config, const std::string& out_dir) {
  ensure_dir(out_dir);
  write_snapshot(config, out_dir);
  Manifest manifest(out_dir);
  const ToolSet tools = load_catalog(config);
  const auto queries = load_queries(config.require_string("queries"));
  const std::string method = method_from(config);

  LoopOptions options;
  options.k = static_cast<size_t>(config.get_int("k", 10));
  options.max_iterations = static_cast<int>(config.get_int("iterations", 3));
  options.max_refined_tokens = static_cast<size_t>(config.get_int("max_refined_tokens", 512));

  InvertedIndex index;
  EncoderModel model;
  EmbeddingStore store;
  RetrieveFn retrieve;
  if (method == "bm25") {
    const double k1 = config.get_double("bm25_k1", 1.2);
    const double b = config.get_double("bm25_b", 0.75);
    index = InvertedIndex::build(tools);
    retrieve = [&index, k1, b](const std::string& q, size_t k) {
      return bm25_retrieve(index, q, k, k1, b);
    };
  } else {
    model = load_model(config.require_string("model"));
    store = EmbeddingStore::build(model, tools);
    retrieve = [&model, &store](const std::string& q, size_t k) {
      return dense_retrieve(model, store, q, k);
    };
  }

  const PromptTemplates templates = load_templates(config);
  ProviderStack provider = make_provider(config, out_dir);
  const std::string tag = config.get_string("run_tag", "loop");

  LoopArtifacts artifacts = run_loop_over(queries, retrieve, *provider.top, templates,
                                          tools, options, tag);
  save_run(artifacts.final_run, out_dir + "/run.tsv");
  save_traces(artifacts.results, out_dir + "/trace.jsonl");
  write_text(out_dir + "/timing.txt", timing_summary(artifacts.results));
  manifest.add("run", out_dir + "/run.tsv");
  manifest.add("trace", out_dir + "/trace.jsonl");
  manifest.write();
  return 0;
}

int cmd_eval(const ExperimentConfig& config, const std::string& run_path,
             const std::optional<std::string>& baseline_path,
             const std::string& out_dir) {
  ensure_dir(out_dir);
  write_snapshot(config, out_dir);
  Manifest manifest(out_dir);
  const RelevanceJudgments qrels = load_qrels(config.require_string("qrels"));
  const std::vector<size_t> cutoffs = config.get_cutoffs("cutoffs", {1, 3, 5, 10});

  std::vector<MetricsReport> reports;
  std::optional<size_t> baseline;
  if (baseline_path) {
    reports.push_back(evaluate_run(load_run(*baseline_path), qrels, cutoffs));
    baseline = 0;
  }
  reports.push_back(evaluate_run(load_run(run_path), qrels, cutoffs));

  const std::string text = render_report_text(reports, baseline);
  std::cout << text;
  write_text(out_dir + "/report.txt", text);
  write_text(out_dir + "/report.json", render_report_json(reports, baseline));
  manifest.add("report_text", out_dir + "/report.txt");
  manifest.add("report_json", out_dir + "/report.json");
  manifest.write();
  return 0;
}

namespace {

template <typename Fn>
void run_stage(const std::string& name, Fn&& fn) {
  std::cerr << "[toolret] bench stage: " << name << "\n";
  try {
    fn();
  } catch (const std::exception& e) {
    std::cerr << "[toolret] bench stage \"" << name << "\" failed: " << e.what() << "\n";
    throw;
  }
}

}  // namespace

int cmd_bench(const ExperimentConfig& config, const std::string& out_dir) {
  ensure_dir(out_dir);
  write_snapshot(config, out_dir);
  Manifest manifest(out_dir);

  ToolSet tools;
  std::vector<Instruction> test_queries;
  std::vector<Instruction> train_queries;
  RelevanceJudgments qrels;
  RelevanceJudgments train_qrels;
  run_stage("load", [&] {
    tools = load_catalog(config);
    test_queries = load_queries(config.require_string("queries"));
    qrels = load_qrels(config.require_string("qrels"));
    train_queries = config.has("train_queries")
                        ? load_queries(config.require_string("train_queries"))
                        : test_queries;
    train_qrels = config.has("train_qrels")
                      ? load_qrels(config.require_string("train_qrels"))
                      : qrels;
  });

  const std::string method = method_from(config);
  const TrainConfig tc = train_config_from(config);

  LoopOptions loop_options;
  loop_options.k = static_cast<size_t>(config.get_int("k", 10));
  loop_options.max_iterations = static_cast<int>(config.get_int("iterations", 3));
  loop_options.max_refined_tokens =
      static_cast<size_t>(config.get_int("max_refined_tokens", 512));

  PromptTemplates templates;
  run_stage("templates", [&] { templates = load_templates(config); });
  ProviderStack provider = make_provider(config, out_dir);

  InvertedIndex index;
  EncoderModel warm_model, final_model;
  EmbeddingStore warm_store, final_store;
  RetrieveFn retrieve;

  if (method == "bm25") {
    run_stage("index", [&] {
      const double k1 = config.get_double("bm25_k1", 1.2);
      const double b = config.get_double("bm25_b", 0.75);
      index = InvertedIndex::build(tools);
      index.save(out_dir + "/bm25.idx");
      manifest.add("bm25_index", out_dir + "/bm25.idx");
      retrieve = [&index, k1, b](const std::string& q, size_t k) {
        return bm25_retrieve(index, q, k, k1, b);
      };
    });
  } else {
    std::vector<std::string> extra_texts = query_texts(train_queries);
    for (const auto& text : query_texts(test_queries)) extra_texts.push_back(text);

    run_stage("warm-up", [&] {
      warm_model = init_model_from(config, tools, extra_texts);
      TrainingRounds warmup;
      warmup[0] = make_warmup_round(train_queries, train_qrels, tools);
      const TrainStats stats = train(warm_model, warmup, tc);
      std::ostringstream log;
      log_train_stats(stats, log);
      write_text(out_dir + "/warmup_log.txt", log.str());
      save_model(warm_model, out_dir + "/model_warm.bin");
      manifest.add("model_warm", out_dir + "/model_warm.bin");
    });

    TrainingRounds rounds;
    run_stage("rounds", [&] {
      warm_store = EmbeddingStore::build(warm_model, tools);
      RetrieveFn warm_retrieve = [&warm_model, &warm_store](const std::string& q, size_t k) {
        return dense_retrieve(warm_model, warm_store, q, k);
      };
      RoundsOptions ro;
      ro.k = loop_options.k;
      ro.max_iterations = loop_options.max_iterations;
      ro.hard_negatives_per_query =
          static_cast<size_t>(config.get_int("hard_negatives_per_query", 1));
      ro.max_refined_tokens = loop_options.max_refined_tokens;
      ro.seed = tc.seed;
      ro.parallelism = static_cast<size_t>(config.get_int("parallelism", 1));
      rounds = build_training_rounds(train_queries, warm_retrieve, *provider.top,
                                     templates, tools, train_qrels, ro);
      save_rounds(rounds, out_dir + "/rounds.jsonl");
      manifest.add("rounds", out_dir + "/rounds.jsonl");
    });

    run_stage("train", [&] {
      // The warm model existed to drive mining and refinement; the shipped
      // model is trained from the same initialization on the full rounds.
      final_model = init_model_from(config, tools, extra_texts);
      const TrainStats stats = train(final_model, rounds, tc);
      std::ostringstream log;
      log_train_stats(stats, log);
      write_text(out_dir + "/train_log.txt", log.str());
      save_model(final_model, out_dir + "/model.bin");
      manifest.add("model", out_dir + "/model.bin");
      final_store = EmbeddingStore::build(final_model, tools);
      final_store.save(out_dir + "/embeddings.bin");
      manifest.add("embedding_store", out_dir + "/embeddings.bin");
      retrieve = [&final_model, &final_store](const std::string& q, size_t k) {
        return dense_retrieve(final_model, final_store, q, k);
      };
    });
  }

  LoopArtifacts artifacts;
  const std::string tag = config.get_string("run_tag", "bench");
  run_stage("loop", [&] {
    artifacts = run_loop_over(test_queries, retrieve, *provider.top, templates,
                              tools, loop_options, tag);
    save_run(artifacts.final_run, out_dir + "/run.tsv");
    save_run(artifacts.initial_run, out_dir + "/run_iteration0.tsv");
    save_traces(artifacts.results, out_dir + "/trace.jsonl");
    write_text(out_dir + "/timing.txt", timing_summary(artifacts.results));
    manifest.add("run", out_dir + "/run.tsv");
    manifest.add("run_iteration0", out_dir + "/run_iteration0.tsv");
    manifest.add("trace", out_dir + "/trace.jsonl");
  });

  run_stage("eval", [&] {
    const std::vector<size_t> cutoffs = config.get_cutoffs("cutoffs", {1, 3, 5, 10});
    std::vector<MetricsReport> reports;
    reports.push_back(evaluate_run(artifacts.initial_run, qrels, cutoffs));
    reports.push_back(evaluate_run(artifacts.final_run, qrels, cutoffs));
    const std::string text = render_report_text(reports, 0);
    std::cout << text;
    write_text(out_dir + "/report.txt", text);
    write_text(out_dir + "/report.json", render_report_json(reports, 0));
    manifest.add("report_text", out_dir + "/report.txt");
    manifest.add("report_json", out_dir + "/report.json");
  });

  manifest.write();
  return 0;
}

int dispatch_command(const std::function<int()>& fn) {
  try {
    return fn();
  } catch (const ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const IntegrityError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return 2;
  }
}

}  // namespace toolret
