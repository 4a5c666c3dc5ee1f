#include <filesystem>
#include <iostream>

#include <CLI11.hpp>

#include "bilevel/config.hpp"
#include "bilevel/experiments.hpp"
#include "bilevel/types.hpp"

namespace {

struct CommonOpts {
  std::string config_path;
  std::string out_dir = "out";
  std::uint64_t seed = 0;
  bool seed_set = false;
  int threads = 1;
  bool deterministic = false;
};

void add_common(CLI::App* cmd, CommonOpts& opts) {
  cmd->add_option("--config", opts.config_path, "Config file (INI-style)");
  cmd->add_option("--out", opts.out_dir, "Output directory");
  cmd->add_option("--seed", opts.seed, "Random seed override")
      ->each([&](const std::string&) { opts.seed_set = true; });
  cmd->add_option("--threads", opts.threads,
                  "Worker threads (1 = fully deterministic)");
  cmd->add_flag("--deterministic", opts.deterministic,
                "Force single-threaded deterministic execution");
}

bilevel::RunConfig build_config(const CommonOpts& opts) {
  bilevel::RunConfig cfg;
  if (!opts.config_path.empty())
    cfg = bilevel::RunConfig::load(opts.config_path);
  if (opts.seed_set) cfg.set("seed", std::to_string(opts.seed));
  cfg.set("threads",
          std::to_string(opts.deterministic ? 1 : opts.threads));
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Bilevel hypergradient experiments"};
  app.require_subcommand(1);

  CommonOpts effect_opts, ridge_opts, meta_opts, check_opts;
  std::string inject_fault;

  auto* effect = app.add_subcommand(
      "effect-of-t", "Inner-horizon sweep on the linear feature-map problem");
  add_common(effect, effect_opts);
  auto* ridge = app.add_subcommand(
      "ridge-diag", "Diagonal Tikhonov ridge study on synthetic data");
  add_common(ridge, ridge_opts);
  auto* meta = app.add_subcommand(
      "meta", "Hyper-representation training on synthetic episodes");
  add_common(meta, meta_opts);
  auto* check = app.add_subcommand("check", "Run the numeric self-checks");
  add_common(check, check_opts);
  check->add_option("--inject-fault", inject_fault,
                    "Force the named suite to fail (testing hook)")
      ->group("");  // hidden

  CLI11_PARSE(app, argc, argv);

  try {
    if (effect->parsed())
      return bilevel::cmd_effect_of_t(build_config(effect_opts),
                                      effect_opts.out_dir);
    if (ridge->parsed())
      return bilevel::cmd_ridge_diag(build_config(ridge_opts),
                                     ridge_opts.out_dir);
    if (meta->parsed())
      return bilevel::cmd_meta(build_config(meta_opts), meta_opts.out_dir);
    if (check->parsed())
      return bilevel::cmd_check(build_config(check_opts), check_opts.out_dir,
                                inject_fault);
  } catch (const bilevel::DivergenceError& e) {
    std::cerr << "numerical divergence: " << e.what() << "\n";
    return bilevel::kExitDivergence;
  } catch (const std::exception& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return bilevel::kExitConfigError;
  }
  return bilevel::kExitConfigError;
}
