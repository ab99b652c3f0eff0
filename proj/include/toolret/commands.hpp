#pragma once

#include <functional>
#include <optional>
#include <string>

#include "toolret/config.hpp"

namespace toolret {

// Each command materializes its artifacts under out_dir (created if
// missing) next to a byte-exact config snapshot and a manifest of content
// hashes. All return 0; failures are reported by throwing, which
// dispatch_command maps onto the exit-code discipline:
//   0 success, 1 user error (bad config/paths/input files),
//   2 internal or runtime failure (divergence, provider exhaustion, bugs).
int cmd_index(const ExperimentConfig& config, const std::string& out_dir);
int cmd_train(const ExperimentConfig& config, const std::string& out_dir);
int cmd_loop(const ExperimentConfig& config, const std::string& out_dir);
int cmd_eval(const ExperimentConfig& config, const std::string& run_path,
             const std::optional<std::string>& baseline_path,
             const std::string& out_dir);
int cmd_bench(const ExperimentConfig& config, const std::string& out_dir);

int dispatch_command(const std::function<int()>& fn);

}  // namespace toolret
