#pragma once

#include <optional>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "bilevel/dynamics.hpp"
#include "bilevel/objectives.hpp"

namespace bilevel {

/// Hypergradient of f_T(lambda) = E(w_{T,lambda}, lambda) plus run
/// diagnostics.
struct HypergradReport {
  Vector grad;
  double f_value = 0.0;
  int T = 0;
  double wall_time_s = 0.0;
  std::optional<std::vector<Vector>> per_episode;
};

void to_json(nlohmann::json& j, const HypergradReport& r);

/// Adjoint (reverse-mode) hypergradient: one forward unroll, then the
/// backward recursion over the tape using Hessian- and mixed-partial
/// vector products only.
HypergradReport reverse_hg(const InnerObjective& obj, const OuterObjective& E,
                           const HyperParams& lam, const DynamicsSpec& spec,
                           int T);

/// Same as reverse_hg but reusing an existing tape (must match spec/T).
HypergradReport reverse_hg_from_tape(const InnerObjective& obj,
                                     const OuterObjective& E,
                                     const HyperParams& lam,
                                     const DynamicsSpec& spec,
                                     const TrajectoryTape& tape);

/// Forward propagation of the trajectory Jacobian Z_t = dw_t/dlambda
/// (materializes a d x m matrix; intended for small m cross-checks).
HypergradReport forward_hg(const InnerObjective& obj, const OuterObjective& E,
                           const HyperParams& lam, const DynamicsSpec& spec,
                           int T);

/// Unrolls to w_T and returns only the explicit partial grad_lambda E,
/// discarding the optimization dynamics.
HypergradReport approx_hg(const InnerObjective& obj, const OuterObjective& E,
                          const HyperParams& lam, const DynamicsSpec& spec,
                          int T);

/// Exact hypergradient via the implicit function theorem at the
/// closed-form inner minimizer. Requires a quadratic inner objective with
/// a positive-definite Hessian; throws on condition estimate > 1e12.
Vector implicit_hg(const InnerObjective& obj, const OuterObjective& E,
                   const HyperParams& lam);

}  // namespace bilevel
