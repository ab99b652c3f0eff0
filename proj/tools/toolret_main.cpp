#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "toolret/commands.hpp"
#include "toolret/config.hpp"
#include "toolret/errors.hpp"

namespace {

struct CommonArgs {
  std::string config_path;
  std::string out_dir = "experiment";
  std::vector<std::string> overrides;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("--config", args.config_path, "experiment config file")->required();
  cmd->add_option("--out", args.out_dir, "output directory (default: experiment)");
  cmd->add_option("--set", args.overrides,
                  "override a config value, key=value (repeatable)");
}

toolret::ExperimentConfig load_config(const CommonArgs& args) {
  auto config = toolret::ExperimentConfig::load_file(args.config_path);
  for (const auto& kv : args.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) {
      throw toolret::ParseError("--set needs key=value, got \"" + kv + "\"");
    }
    config.override_value(kv.substr(0, eq), kv.substr(eq + 1));
  }
  return config;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"tool retrieval experiments: index, train, loop, eval, bench"};
  app.require_subcommand(1);

  CommonArgs index_args, train_args, loop_args, eval_args, bench_args;
  std::string eval_run;
  std::string eval_baseline;

  auto* index_cmd = app.add_subcommand("index", "build retrieval artifacts");
  add_common(index_cmd, index_args);
  auto* train_cmd = app.add_subcommand("train", "train the dense encoder");
  add_common(train_cmd, train_args);
  auto* loop_cmd = app.add_subcommand("loop", "run the feedback retrieval loop");
  add_common(loop_cmd, loop_args);
  auto* eval_cmd = app.add_subcommand("eval", "score a run file against qrels");
  add_common(eval_cmd, eval_args);
  eval_cmd->add_option("--run", eval_run, "run file to score")->required();
  eval_cmd->add_option("--baseline", eval_baseline,
                       "baseline run file; adds the improvement row");
  auto* bench_cmd = app.add_subcommand("bench", "full pipeline under one config");
  add_common(bench_cmd, bench_args);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  using toolret::dispatch_command;
  if (index_cmd->parsed()) {
    return dispatch_command(
        [&] { return toolret::cmd_index(load_config(index_args), index_args.out_dir); });
  }
  if (train_cmd->parsed()) {
    return dispatch_command(
        [&] { return toolret::cmd_train(load_config(train_args), train_args.out_dir); });
  }
  if (loop_cmd->parsed()) {
    return dispatch_command(
        [&] { return toolret::cmd_loop(load_config(loop_args), loop_args.out_dir); });
  }
  if (eval_cmd->parsed()) {
    return dispatch_command([&] {
      std::optional<std::string> baseline;
      if (!eval_baseline.empty()) baseline = eval_baseline;
      return toolret::cmd_eval(load_config(eval_args), eval_run, baseline,
                               eval_args.out_dir);
    });
  }
  return dispatch_command(
      [&] { return toolret::cmd_bench(load_config(bench_args), bench_args.out_dir); });
}
