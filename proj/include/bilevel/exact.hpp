#pragma once

#include <filesystem>
#include <vector>

#include "bilevel/dynamics.hpp"
#include "bilevel/objectives.hpp"

namespace bilevel {

/// Spectral bounds of the inner Hessian at lambda and the induced linear
/// contraction factor for a given step size.
struct ConvexityCertificate {
  double mu = 0.0;    // strong-convexity modulus (smallest eigenvalue)
  double nu = 0.0;    // gradient Lipschitz constant (largest eigenvalue)
  double rate = 0.0;  // contraction_rate(mu, nu, eta)
};

/// w_H = [(XH)^T XH + rho I]^{-1} (XH)^T y via an SPD factorization.
Vector ridge_closed_form(const Matrix& X, const Vector& y, const Matrix& H,
                         double rho);

/// Minimizer of any quadratic inner objective: solves the SPD system
/// Hessian * w = -grad_w L(0).
Vector closed_form_minimizer(const InnerObjective& obj, const HyperParams& lam);

/// f(lambda) = E(w_lambda, lambda) at the exact inner minimizer.
double eval_f_exact(const InnerObjective& obj, const OuterObjective& E,
                    const HyperParams& lam);

/// Extreme Hessian eigenvalues by power iteration (nu) and inverse
/// iteration (mu), to relative tolerance 1e-8; throws if either fails to
/// converge.
ConvexityCertificate certificate(const InnerObjective& obj,
                                 const HyperParams& lam, double eta);

struct ConvergenceRow {
  int T = 0;
  double sup_w_err = 0.0;
  double sup_f_err = 0.0;
};

struct UniformConvergenceTable {
  std::vector<ConvergenceRow> rows;
  double q_bar = 0.0;      // max contraction rate over the grid
  double c_bound = 0.0;    // max ||w_0 - w_lambda|| over the grid
  double nu_E_hat = 0.0;   // empirical outer Lipschitz estimate
};

/// For each T: sup over the lambda grid of ||w_{T,lambda} - w_lambda||
/// and of |f_T(lambda) - f(lambda)|.
UniformConvergenceTable uniform_convergence_study(
    const InnerObjective& obj, const OuterObjective& E,
    const std::vector<HyperParams>& lambda_grid, const std::vector<int>& T_list,
    double eta);

struct ArgminRow {
  int T = 0;
  Eigen::Index argmin_index = 0;
  Vector argmin_lambda;
  double inf_fT = 0.0;
};

struct ArgminConvergenceTable {
  std::vector<ArgminRow> rows;
  Eigen::Index exact_argmin_index = 0;
  Vector exact_argmin_lambda;
  double inf_f = 0.0;
};

/// Grid argmin of f_T per horizon against the grid argmin of the exact f.
/// Ties break toward the lowest linear index.
ArgminConvergenceTable argmin_convergence_study(
    const InnerObjective& obj, const OuterObjective& E,
    const std::vector<HyperParams>& lambda_grid, const std::vector<int>& T_list,
    double eta);

void save_study_csv(const UniformConvergenceTable& t,
                    const std::filesystem::path& path);
void save_study_csv(const ArgminConvergenceTable& t,
                    const std::filesystem::path& path);

}  // namespace bilevel
