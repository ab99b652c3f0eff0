#pragma once

#include <functional>
#include <string>

namespace toolret {

using WarningSink = std::function<void(const std::string&)>;

// Non-fatal diagnostics (last-wins qrels rows, skipped queries, truncated
// refinements). Default sink writes to stderr; tests install their own.
void warn(const std::string& message);
WarningSink set_warning_sink(WarningSink sink);

}  // namespace toolret
