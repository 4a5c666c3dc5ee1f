#include "bilevel/outer_loop.hpp"

#include <chrono>
#include <cmath>
#include <fstream>

#include <nlohmann/json.hpp>

namespace bilevel {

OuterOptState OuterOptState::adam(HyperParams lam, double lr, double lr_decay) {
  OuterOptState s;
  s.kind = OuterOptKind::adam;
  s.first_moment = Vector::Zero(lam.size());
  s.second_moment = Vector::Zero(lam.size());
  s.lam = std::move(lam);
  s.lr = lr;
  s.lr_decay = lr_decay;
  return s;
}

OuterOptState OuterOptState::momentum_gd(HyperParams lam, double lr, double mu) {
  OuterOptState s;
  s.kind = OuterOptKind::momentum_gd;
  s.velocity = Vector::Zero(lam.size());
  s.lam = std::move(lam);
  s.lr = lr;
  s.momentum = mu;
  return s;
}

namespace {

void project(HyperParams& lam) {
  if (!lam.bounds) return;
  const auto& [lo, hi] = *lam.bounds;
  lam.values = lam.values.cwiseMax(lo).cwiseMin(hi);
}

}  // namespace

OuterOptState adam_step(const OuterOptState& state, const Vector& grad) {
  if (!grad.allFinite())
    throw std::invalid_argument("adam_step: non-finite gradient");
  if (grad.size() != state.lam.size())
    throw std::invalid_argument("adam_step: gradient dimension mismatch");
  OuterOptState s = state;
  const double lr_eff = s.effective_lr();
  s.step_count += 1;
  s.first_moment = s.beta1 * s.first_moment + (1.0 - s.beta1) * grad;
  s.second_moment = s.beta2 * s.second_moment.array().matrix() +
                    (1.0 - s.beta2) * grad.cwiseProduct(grad);
  const double c1 = 1.0 - std::pow(s.beta1, s.step_count);
  const double c2 = 1.0 - std::pow(s.beta2, s.step_count);
  Vector m_hat = s.first_moment / c1;
  Vector v_hat = s.second_moment / c2;
  s.lam.values -=
      lr_eff * (m_hat.array() / (v_hat.array().sqrt() + s.eps)).matrix();
  project(s.lam);
  return s;
}

OuterOptState momentum_gd_step(const OuterOptState& state, const Vector& grad) {
  if (!grad.allFinite())
    throw std::invalid_argument("momentum_gd_step: non-finite gradient");
  if (grad.size() != state.lam.size())
    throw std::invalid_argument("momentum_gd_step: gradient dimension mismatch");
  OuterOptState s = state;
  const double lr_eff = s.effective_lr();
  s.step_count += 1;
  s.velocity = s.momentum * s.velocity + grad;
  s.lam.values -= lr_eff * s.velocity;
  project(s.lam);
  return s;
}

OuterOptState outer_step(const OuterOptState& state, const Vector& grad) {
  return state.kind == OuterOptKind::adam ? adam_step(state, grad)
                                          : momentum_gd_step(state, grad);
}

void RunLog::save_jsonl(const std::filesystem::path& path) const {
  std::ofstream os(path);
  for (const auto& r : records) {
    nlohmann::json j = {{"iter", r.iter},
                        {"fT", r.fT},
                        {"grad_norm", r.grad_norm},
                        {"lr_effective", r.lr_effective},
                        {"wall_time_s", r.wall_time_s}};
    if (r.metric) j["metric"] = *r.metric;
    os << j.dump() << "\n";
  }
}

RunLog hyper_iterate(OuterOptState state, const HypergradFn& grad_fn,
                     const MetricFn& metric_fn, const StopPolicy& stop,
                     int max_iters) {
  using Clock = std::chrono::steady_clock;
  auto start = Clock::now();
  RunLog log;

  double best_metric = 0.0;
  bool have_best = false;
  int evals_without_improvement = 0;
  const bool maximize = stop.metric == StopMetric::meta_val_accuracy;

  auto improved = [&](double m) {
    return !have_best || (maximize ? m > best_metric : m < best_metric);
  };

  // Initial evaluation (also the entire output when max_iters == 0).
  {
    RunRecord rec;
    rec.iter = 0;
    auto rep = grad_fn(state.lam, 0);
    rec.fT = rep.f_value;
    rec.grad_norm = rep.grad.norm();
    rec.lr_effective = state.effective_lr();
    if (metric_fn) rec.metric = metric_fn(state.lam);
    rec.wall_time_s =
        std::chrono::duration<double>(Clock::now() - start).count();
    log.records.push_back(rec);
    if (rec.metric) {
      best_metric = *rec.metric;
      have_best = true;
    }
    if (max_iters > 0) state = outer_step(state, rep.grad);
  }

  log.stop_reason = max_iters == 0 ? "max_iters" : "";
  for (int iter = 1; iter <= max_iters && log.stop_reason.empty(); ++iter) {
    auto rep = grad_fn(state.lam, iter);
    RunRecord rec;
    rec.iter = iter;
    rec.fT = rep.f_value;
    rec.grad_norm = rep.grad.norm();
    rec.lr_effective = state.effective_lr();
    if (metric_fn && stop.eval_every > 0 && iter % stop.eval_every == 0) {
      double m = metric_fn(state.lam);
      rec.metric = m;
      if (improved(m)) {
        best_metric = m;
        have_best = true;
        evals_without_improvement = 0;
      } else if (++evals_without_improvement >= stop.patience) {
        log.stop_reason = "early_stop";
      }
    }
    rec.wall_time_s =
        std::chrono::duration<double>(Clock::now() - start).count();
    log.records.push_back(rec);
    log.iterations = iter;
    if (log.stop_reason.empty() && iter < max_iters)
      state = outer_step(state, rep.grad);
  }
  if (log.stop_reason.empty()) log.stop_reason = "max_iters";
  log.final_lam = state.lam;
  return log;
}

}  // namespace bilevel
