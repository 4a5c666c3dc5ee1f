#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "bilevel/hypergrad.hpp"
#include "bilevel/types.hpp"

namespace bilevel {

enum class OuterOptKind { adam, momentum_gd };

/// State of the outer optimizer acting on lambda.
struct OuterOptState {
  HyperParams lam;
  OuterOptKind kind = OuterOptKind::adam;
  Vector first_moment;
  Vector second_moment;
  Vector velocity;
  int step_count = 0;
  double lr = 1e-3;
  double lr_decay = 0.0;  // effective lr = lr / (1 + lr_decay * step_count)
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double momentum = 0.9;  // only for momentum_gd

  double effective_lr() const { return lr / (1.0 + lr_decay * step_count); }

  static OuterOptState adam(HyperParams lam, double lr, double lr_decay = 0.0);
  static OuterOptState momentum_gd(HyperParams lam, double lr, double mu);
};

/// One Adam update with bias correction; projects onto the box domain
/// when bounds are present. Throws on non-finite gradients.
OuterOptState adam_step(const OuterOptState& state, const Vector& grad);

/// One heavy-ball update on lambda, same projection contract.
OuterOptState momentum_gd_step(const OuterOptState& state, const Vector& grad);

/// Dispatch on state.kind.
OuterOptState outer_step(const OuterOptState& state, const Vector& grad);

enum class StopMetric { meta_val_accuracy, meta_val_loss };

struct StopPolicy {
  int patience = 10;
  StopMetric metric = StopMetric::meta_val_loss;
  int eval_every = 1;
};

struct RunRecord {
  int iter = 0;
  double fT = 0.0;
  double grad_norm = 0.0;
  std::optional<double> metric;
  double lr_effective = 0.0;
  double wall_time_s = 0.0;
};

struct RunLog {
  std::vector<RunRecord> records;
  HyperParams final_lam;
  std::string stop_reason;
  int iterations = 0;

  void save_jsonl(const std::filesystem::path& path) const;
};

/// Per-iteration hypergradient provider; receives the hyperiteration
/// index so stochastic batchers can reseed deterministically.
using HypergradFn = std::function<HypergradReport(const HyperParams&, int)>;
/// Meta-validation metric (higher is better for accuracy, lower for loss).
using MetricFn = std::function<double(const HyperParams&)>;

/// The outer training loop: sample/compute hypergradient, optimizer step,
/// periodic meta-validation, early stop on the policy or max_iters.
RunLog hyper_iterate(OuterOptState state, const HypergradFn& grad_fn,
                     const MetricFn& metric_fn, const StopPolicy& stop,
                     int max_iters);

}  // namespace bilevel
