#pragma once

#include <functional>

#include "bilevel/dynamics.hpp"
#include "bilevel/objectives.hpp"

namespace bilevel {

/// Central finite-difference gradient of a scalar function.
Vector central_diff(const std::function<double(const Vector&)>& f,
                    const Vector& x, double h);

/// ||a - b|| / max(||b||, floor)
double rel_err(const Vector& a, const Vector& b, double floor = 1e-12);

/// Finite-difference hypergradient of f_T(lambda) = E(w_{T,lambda}, lambda),
/// the independent oracle for the algorithmic-differentiation engines.
/// Default step h = 1e-6 * max(1, ||lambda||_inf).
Vector fd_hypergrad(const InnerObjective& obj, const OuterObjective& E,
                    const HyperParams& lam, const DynamicsSpec& spec, int T,
                    double h = 0.0);

/// f_T itself (forward unroll only), exposed for oracles.
double eval_f_T(const InnerObjective& obj, const OuterObjective& E,
                const HyperParams& lam, const DynamicsSpec& spec, int T);

/// Coefficient of determination of the least-squares line through (x, y).
double r_squared(const std::vector<double>& x, const std::vector<double>& y);

}  // namespace bilevel
