#pragma once

#include "bilevel/objectives.hpp"
#include "bilevel/types.hpp"

namespace bilevel {

enum class DynamicsKind { gd, gd_momentum };
enum class InitKind { zeros, copy_lambda, explicit_vector };

/// The unrolled optimization map: which update rule, its step schedule,
/// and the initialization mapping Phi_0.
struct DynamicsSpec {
  DynamicsKind kind = DynamicsKind::gd;
  StepSchedule schedule;
  InitKind init = InitKind::zeros;
  Vector init_vector;  // used when init == explicit_vector

  static DynamicsSpec gd_constant(double eta, int horizon) {
    DynamicsSpec s;
    s.schedule = StepSchedule::constant(eta, horizon);
    return s;
  }
  static DynamicsSpec momentum_constant(double eta, int horizon, double mu) {
    DynamicsSpec s;
    s.kind = DynamicsKind::gd_momentum;
    s.schedule = StepSchedule::constant(eta, horizon, mu);
    return s;
  }

  Vector initial_point(const HyperParams& lam, Eigen::Index d) const;
};

/// Runs T inner steps and records the full trajectory (and velocities
/// under momentum). Throws DivergenceError on non-finite iterates.
TrajectoryTape unroll(const InnerObjective& obj, const HyperParams& lam,
                      const DynamicsSpec& spec, int T);

/// q = max(|1 - eta*mu|, |1 - eta*nu|), the linear contraction factor of
/// gradient descent on a quadratic with Hessian spectrum in [mu, nu].
double contraction_rate(double mu, double nu, double eta);

}  // namespace bilevel
