#pragma once

#include <filesystem>

#include "bilevel/config.hpp"

namespace bilevel {

// Exit codes shared by the CLI and the experiment drivers.
inline constexpr int kExitOk = 0;
inline constexpr int kExitCheckFailure = 1;
inline constexpr int kExitConfigError = 2;
inline constexpr int kExitDivergence = 3;

/// Sweep of the inner horizon T on the linear feature-map problem:
/// momentum-GD outer runs per T plus an exact-hypergradient run, with
/// curves.csv, times.csv and a runtime-linearity verdict.
int cmd_effect_of_t(const RunConfig& cfg, const std::filesystem::path& out);

/// Diagonal-Tikhonov ridge study on the seeded 90x30 synthetic set:
/// hypergradient descent on lambda in R^30 per T plus an exact run,
/// reporting validation/test MAPE (table.csv).
int cmd_ridge_diag(const RunConfig& cfg, const std::filesystem::path& out);

/// Hyper-representation training on synthetic episodes: T meta-validation
/// sweep and the hypergradient-mode comparison table.
int cmd_meta(const RunConfig& cfg, const std::filesystem::path& out);

/// Self-check suites (gradient checks, mode agreement, certificates,
/// convergence studies); JSON summary, nonzero exit naming any failing
/// suite. `inject_fault` forces the named suite to fail (test fixture).
int cmd_check(const RunConfig& cfg, const std::filesystem::path& out,
              const std::string& inject_fault = "");

}  // namespace bilevel
