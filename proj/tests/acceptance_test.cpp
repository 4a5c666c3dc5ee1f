// End-to-end acceptance suite. Each test case checks one release
// criterion and prints a single PASS/FAIL line; all tolerances are pinned
// here on purpose.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <memory>
#include <sstream>
#include <vector>

#include "bilevel/config.hpp"
#include "bilevel/exact.hpp"
#include "bilevel/experiments.hpp"
#include "bilevel/hypergrad.hpp"
#include "bilevel/meta.hpp"
#include "bilevel/numcheck.hpp"
#include "bilevel/outer_loop.hpp"
#include "test_support.hpp"

using namespace bilevel;
using testsupport::gaussian_matrix;
using testsupport::gaussian_vector;
using testsupport::random_regression;
namespace fs = std::filesystem;

namespace {

void report(int criterion, bool ok, const std::string& detail) {
  std::printf("[criterion %d] %s: %s\n", criterion, ok ? "PASS" : "FAIL",
              detail.c_str());
  std::fflush(stdout);
  CHECK_MESSAGE(ok, "criterion ", criterion, ": ", detail);
}

fs::path fresh_dir(const std::string& name) {
  fs::path p = fs::temp_directory_path() / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

}  // namespace

TEST_CASE("criterion 1: reverse-mode hypergradients vs oracles") {
  std::mt19937_64 rng(101);
  constexpr double kFdTol = 1e-5;
  constexpr double kCrossTol = 1e-9;
  double worst_fd = 0.0, worst_cross = 0.0;
  int instances = 0;

  auto run_one = [&](const InnerObjective& obj, const OuterObjective& E,
                     const HyperParams& lam, const DynamicsSpec& spec, int T) {
    auto rev = reverse_hg(obj, E, lam, spec, T);
    auto fwd = forward_hg(obj, E, lam, spec, T);
    worst_fd = std::max(worst_fd,
                        rel_err(rev.grad, fd_hypergrad(obj, E, lam, spec, T)));
    worst_cross = std::max(worst_cross, rel_err(rev.grad, fwd.grad));
    ++instances;
  };

  for (int rep = 0; rep < 36; ++rep) {
    Eigen::Index d = 2 + rep % 3;  // d in {2,3,4}; m up to 12 for H maps
    int T = 5 + rep % 16;          // T in [5, 20]
    Dataset train = random_regression(rng, 2 * d + 4, d);
    Dataset val = random_regression(rng, d + 4, d);

    {
      FeatureMapRidge obj(train, 0.4 + 0.02 * rep);
      FeatureMapValLoss E(val);
      HyperParams lam = HyperParams::matrix(
          Matrix::Identity(d, d) + 0.2 * gaussian_matrix(rng, d, d));
      run_one(obj, E, lam, DynamicsSpec::gd_constant(0.02, T), T);
    }
    {
      DiagTikhonovRidge obj(train);
      ValidationSquareLoss E(val);
      HyperParams lam = HyperParams::flat(gaussian_vector(rng, d, 0.4));
      run_one(obj, E, lam, DynamicsSpec::gd_constant(0.05, T), T);
    }
    {
      SharedOffsetLinear obj(train, 0.5);
      SharedOffsetValLoss E(val);
      HyperParams lam = HyperParams::flat(gaussian_vector(rng, d, 0.5));
      DynamicsSpec spec = DynamicsSpec::gd_constant(0.02, T);
      spec.init = InitKind::copy_lambda;
      run_one(obj, E, lam, spec, T);
    }
  }

  std::ostringstream msg;
  msg << instances << " random instances; max rel. err vs finite differences "
      << worst_fd << " (tol " << kFdTol << "), reverse vs forward "
      << worst_cross << " (tol " << kCrossTol << ")";
  report(1, instances >= 100 && worst_fd <= kFdTol && worst_cross <= kCrossTol,
         msg.str());
}

TEST_CASE("criterion 2: long unrolls agree with implicit differentiation") {
  std::mt19937_64 rng(102);
  constexpr double kTol = 1e-5;
  constexpr int kT = 4096;
  double worst = 0.0;
  for (int rep = 0; rep < 20; ++rep) {
    Dataset train = random_regression(rng, 12, 4);
    Dataset val = random_regression(rng, 8, 4);
    FeatureMapRidge obj(train, 0.5);
    FeatureMapValLoss E(val);
    HyperParams lam = HyperParams::matrix(
        Matrix::Identity(4, 4) + 0.2 * gaussian_matrix(rng, 4, 4));
    double eta = 1.0 / certificate(obj, lam, 1.0).nu;
    Vector exact = implicit_hg(obj, E, lam);
    auto rev = reverse_hg(obj, E, lam, DynamicsSpec::gd_constant(eta, kT), kT);
    worst = std::max(worst, (rev.grad - exact).norm() / exact.norm());
  }
  std::ostringstream msg;
  msg << "20 instances, T=" << kT << ", eta=1/nu; max relative gap " << worst
      << " (tol " << kTol << ")";
  report(2, worst <= kTol, msg.str());
}

TEST_CASE("criterion 3: uniform convergence within the certificate bound") {
  std::mt19937_64 rng(103);
  Dataset train = random_regression(rng, 12, 3);
  Dataset val = random_regression(rng, 8, 3);
  DiagTikhonovRidge obj(train, /*scalar_lambda=*/true);
  ValidationSquareLoss E(val);

  std::vector<HyperParams> grid;
  for (int i = 0; i < 50; ++i)
    grid.push_back(HyperParams::flat(Vector::Constant(1, -2.0 + 4.0 * i / 49)));

  double eta = 1e9;
  for (const auto& lam : grid)
    eta = std::min(eta, 1.0 / certificate(obj, lam, 1.0).nu);

  auto table = uniform_convergence_study(obj, E, grid, {4, 16, 64, 256}, eta);
  bool ok = table.q_bar < 1.0;
  double worst_margin = 0.0;
  for (const auto& row : table.rows) {
    double bound = table.c_bound * std::pow(table.q_bar, row.T);
    ok = ok && row.sup_w_err <= bound + 1e-12;
    ok = ok && row.sup_f_err <= table.nu_E_hat * row.sup_w_err + 1e-12;
    worst_margin = std::max(worst_margin, row.sup_w_err - bound);
  }
  std::ostringstream msg;
  msg << "50-point grid, T in {4,16,64,256}: sup-errors within C*q^T "
      << "(q_bar=" << table.q_bar << ", C=" << table.c_bound
      << ") and outer-Lipschitz bound";
  report(3, ok, msg.str());
}

TEST_CASE("criterion 4: grid argmin of f_T converges to the exact argmin") {
  std::mt19937_64 rng(104);
  Dataset train = random_regression(rng, 12, 3);
  Dataset val = random_regression(rng, 8, 3);
  DiagTikhonovRidge obj(train, /*scalar_lambda=*/true);
  ValidationSquareLoss E(val);

  std::vector<HyperParams> grid;
  for (int i = 0; i < 50; ++i)
    grid.push_back(HyperParams::flat(Vector::Constant(1, -3.0 + 6.0 * i / 49)));
  double eta = 1e9;
  for (const auto& lam : grid)
    eta = std::min(eta, 1.0 / certificate(obj, lam, 1.0).nu);

  auto table = argmin_convergence_study(obj, E, grid, {4, 16, 64, 256}, eta);
  const auto& last = table.rows.back();
  double gap = std::abs(last.inf_fT - table.inf_f);
  bool ok = std::abs(last.argmin_index - table.exact_argmin_index) <= 1 &&
            gap <= 1e-6;
  std::ostringstream msg;
  msg << "T=256 argmin at grid index " << last.argmin_index << " vs exact "
      << table.exact_argmin_index << "; |min f_T - min f| = " << gap
      << " (tol 1e-6)";
  report(4, ok, msg.str());
}

TEST_CASE("criterion 5: ridge study MAPE decreases with T, exact run wins") {
  auto dir = fresh_dir("bilevel_acc_ridge");
  RunConfig cfg;
  cfg.set("seed", "7");
  int code = cmd_ridge_diag(cfg, dir);

  std::ifstream is(dir / "table.csv");
  std::string line;
  std::getline(is, line);  // header
  std::vector<double> val_mapes;
  double exact_val = 0.0;
  while (std::getline(is, line)) {
    auto c1 = line.find(','), c2 = line.rfind(',');
    std::string tcol = line.substr(0, c1);
    double v = std::stod(line.substr(c1 + 1, c2 - c1 - 1));
    if (tcol == "Exact")
      exact_val = v;
    else
      val_mapes.push_back(v);
  }
  bool decreasing = val_mapes.size() == 4;
  for (std::size_t i = 1; i < val_mapes.size(); ++i)
    decreasing = decreasing && val_mapes[i] < val_mapes[i - 1];
  double best = *std::min_element(val_mapes.begin(), val_mapes.end());
  bool ok = code == kExitOk && decreasing && exact_val <= best;
  std::ostringstream msg;
  msg << "val MAPE over T in {10,50,100,250}: ";
  for (double v : val_mapes) msg << v << " ";
  msg << "(strictly decreasing), exact run " << exact_val
      << " <= best unrolled " << best;
  report(5, ok, msg.str());
}

TEST_CASE("criterion 6: reverse-mode runtime is linear in T") {
  std::mt19937_64 rng(106);
  Dataset train = random_regression(rng, 300, 40);
  Dataset val = random_regression(rng, 100, 40);
  DiagTikhonovRidge obj(train);
  ValidationSquareLoss E(val);
  HyperParams lam = HyperParams::flat(Vector::Zero(40));

  std::vector<double> t_axis, times;
  for (int T : {1, 4, 16, 64, 256}) {
    auto spec = DynamicsSpec::gd_constant(1e-4, T);
    double best = 1e300;
    for (int rep = 0; rep < 3; ++rep) {  // best-of-3 to damp scheduler noise
      auto start = std::chrono::steady_clock::now();
      reverse_hg(obj, E, lam, spec, T);
      best = std::min(best, std::chrono::duration<double>(
                                std::chrono::steady_clock::now() - start)
                                .count());
    }
    t_axis.push_back(T);
    times.push_back(best);
  }
  double r2 = r_squared(t_axis, times);
  std::ostringstream msg;
  msg << "wall time over T in {1,4,16,64,256}: R^2 = " << r2 << " (>= 0.95)";
  report(6, r2 >= 0.95, msg.str());
}

TEST_CASE("criterion 7: episodic batch gradients decompose correctly") {
  EpisodeSampler sampler;
  sampler.n_way = 3;
  sampler.k_shot = 2;
  sampler.n_val_per_class = 4;
  sampler.feature_dim = 4;
  sampler.seed = {107};
  HyperReprProblem problem{2, 4};
  auto batch = sample_batch(sampler, 4);
  std::mt19937_64 rng(107);
  HyperParams lam = HyperParams::flat(gaussian_vector(rng, 8, 0.4));
  lam.shape_hint = {2, 4};
  auto spec = DynamicsSpec::gd_constant(0.05, 10);

  auto total = meta_hypergrad(problem, batch, lam, spec, 10, MetaMode::full,
                              /*keep_per_episode=*/true);
  Vector sum = Vector::Zero(8);
  for (const auto& g : *total.per_episode) sum += g;
  bool sum_exact = (total.grad - sum).norm() == 0.0;

  Vector explicit_partial = Vector::Zero(8);
  for (const auto& ep : batch) {
    auto inner = problem.inner_for(ep.train);
    auto outer = problem.outer_for(ep.val);
    explicit_partial +=
        outer.grad_lambda(unroll(inner, lam, spec, 10).final_iterate(), lam);
  }
  auto approx = meta_hypergrad(problem, batch, lam, spec, 10, MetaMode::approx);
  bool approx_exact = (approx.grad - explicit_partial).norm() <= 1e-14;

  auto full = meta_hypergrad(problem, batch, lam, spec, 10, MetaMode::full);
  auto btr =
      meta_hypergrad(problem, batch, lam, spec, 10, MetaMode::bilevel_train);
  double sep = (full.grad - btr.grad).norm();

  std::ostringstream msg;
  msg << "batch = sum of episodes (exact), approx = explicit partial, "
      << "||full - bilevel_train|| = " << sep << " (> 1e-8)";
  report(7, sum_exact && approx_exact && sep > 1e-8, msg.str());
}

TEST_CASE("criterion 8: end-to-end episodic training improves meta-validation") {
  // Deterministic full-batch variant of the episodic driver: 50 outer
  // iterations, meta-validation accuracy checkpointed every 10.
  EpisodeSampler sampler;
  sampler.n_way = 5;
  sampler.k_shot = 4;
  sampler.n_val_per_class = 6;
  sampler.feature_dim = 8;
  sampler.distortion = 100.0;  // identity features start far from useful
  sampler.seed = {8};
  HyperReprProblem problem{8, 8};
  auto train_batch = sample_batch(sampler, 16, 0, MetaPool::train);
  EpisodeSampler val_sampler = sampler;
  val_sampler.n_val_per_class = 12;  // larger pool smooths the metric
  auto val_batch = sample_batch(val_sampler, 32, 0, MetaPool::val);

  const int T = 8;
  DynamicsSpec spec = DynamicsSpec::gd_constant(0.05, T);
  auto state = OuterOptState::adam(
      HyperParams::matrix(Matrix::Identity(8, 8)), 3e-2, 1e-5);

  std::vector<double> checkpoints;
  checkpoints.push_back(meta_accuracy(problem, val_batch, state.lam, spec, T));
  for (int it = 1; it <= 50; ++it) {
    auto rep = meta_hypergrad(problem, train_batch, state.lam, spec, T,
                              MetaMode::full, false, 4);
    state = adam_step(state, rep.grad);
    if (it % 10 == 0)
      checkpoints.push_back(
          meta_accuracy(problem, val_batch, state.lam, spec, T));
  }
  bool monotone = true;
  for (std::size_t i = 1; i < checkpoints.size(); ++i)
    monotone = monotone && checkpoints[i] >= checkpoints[i - 1];
  bool improved = checkpoints.back() > checkpoints.front();

  // And the packaged driver must complete end to end.
  auto dir = fresh_dir("bilevel_acc_meta");
  RunConfig cfg;
  cfg.set("seed", "8");
  cfg.set("hyper_iters", "15");
  cfg.set("T_sweep", "3,5");
  cfg.set("classic_steps", "60");
  int code = cmd_meta(cfg, dir);
  bool artifacts = fs::exists(dir / "tval_curve.csv") &&
                   fs::exists(dir / "modes.csv") &&
                   fs::exists(dir / "run_manifest.json");

  std::ostringstream msg;
  msg << "meta-val accuracy checkpoints (every 10 of 50 iters): ";
  for (double a : checkpoints) msg << a << " ";
  msg << "monotone non-decreasing, end > start; cmd_meta exit " << code;
  report(8, monotone && improved && code == kExitOk && artifacts, msg.str());
}

TEST_CASE("criterion 9: k-fold objective gradient and estimator consistency") {
  std::mt19937_64 rng(109);
  Dataset d = random_regression(rng, 12, 4);
  HyperParams lam = HyperParams::flat(gaussian_vector(rng, 4, 0.4));
  auto spec = DynamicsSpec::gd_constant(0.04, 20);
  InnerFactory inner = [](const Dataset& tr) {
    return std::unique_ptr<InnerObjective>(new DiagTikhonovRidge(tr));
  };
  OuterFactory outer = [](const Dataset& va) {
    return std::unique_ptr<OuterObjective>(new ValidationSquareLoss(va));
  };

  bool ok = true;
  double worst_fd = 0.0;
  for (int K : {3, 12}) {
    auto folds = FoldSpec::contiguous(12, K);
    auto full = kfold_outer(d, folds, inner, outer, lam, spec, 20);
    HyperParams probe = lam;
    Vector fd = central_diff(
        [&](const Vector& v) {
          probe.values = v;
          return kfold_outer(d, folds, inner, outer, probe, spec, 20).error;
        },
        lam.values, 1e-6);
    worst_fd = std::max(worst_fd, rel_err(full.report.grad, fd));

    Vector avg = Vector::Zero(4);
    for (int j = 0; j < K; ++j)
      avg += kfold_single_fold(d, folds, j, inner, outer, lam, spec, 20)
                 .report.grad;
    avg /= K;
    ok = ok && (full.report.grad - avg).norm() == 0.0;
  }
  std::ostringstream msg;
  msg << "n=12, d=4, K in {3, 12}: max rel. err vs finite differences "
      << worst_fd << " (tol 1e-5); fold-enumeration average exact";
  report(9, ok && worst_fd <= 1e-5, msg.str());
}
