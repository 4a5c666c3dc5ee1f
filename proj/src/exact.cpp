#include "bilevel/exact.hpp"

#include <cmath>
#include <fstream>
#include <limits>

#include <Eigen/Cholesky>
#include <Eigen/Dense>

namespace bilevel {

Vector ridge_closed_form(const Matrix& X, const Vector& y, const Matrix& H,
                         double rho) {
  if (!(rho > 0)) throw std::invalid_argument("ridge_closed_form: rho must be > 0");
  if (!X.allFinite() || !y.allFinite() || !H.allFinite())
    throw std::invalid_argument("ridge_closed_form: non-finite inputs");
  Matrix A = X * H;
  Matrix M = A.transpose() * A;
  M.diagonal().array() += rho;
  return M.llt().solve(A.transpose() * y);
}

Vector closed_form_minimizer(const InnerObjective& obj,
                             const HyperParams& lam) {
  if (!obj.quadratic_in_w())
    throw std::invalid_argument("closed_form_minimizer: objective not quadratic");
  Vector zero = Vector::Zero(obj.dim_w());
  Vector b = -obj.grad_w(zero, lam);
  Matrix A = obj.hessian_w(zero, lam);
  return A.ldlt().solve(b);
}

double eval_f_exact(const InnerObjective& obj, const OuterObjective& E,
                    const HyperParams& lam) {
  return E.loss(closed_form_minimizer(obj, lam), lam);
}

namespace {

// Largest eigenvalue of a symmetric PSD matrix A by power iteration.
// Stops when the eigenpair residual ||Ab - lambda b|| <= rel_tol * scale,
// which for symmetric A bounds the eigenvalue error by the same amount.
double power_iteration(const Matrix& A, double rel_tol, int max_iters) {
  const Eigen::Index n = A.rows();
  Vector b = Vector::Ones(n);
  b[0] += 0.5;  // break symmetry against unlucky orthogonal starts
  b.normalize();
  for (int it = 0; it < max_iters; ++it) {
    Vector Ab = A * b;
    double lambda = b.dot(Ab);
    double norm = Ab.norm();
    if (norm == 0.0) return 0.0;
    if ((Ab - lambda * b).norm() <= rel_tol * std::abs(lambda)) return lambda;
    b = Ab / norm;
  }
  throw std::runtime_error("power iteration did not converge");
}

// Smallest eigenvalue of a symmetric positive-definite A by inverse
// iteration (one LDLT factorization, one solve per sweep). The residual
// is measured on the scale of ||A|| so clustered low ends still pass.
double inverse_iteration_min(const Matrix& A, double scale, double rel_tol,
                             int max_iters) {
  const Eigen::Index n = A.rows();
  Eigen::LDLT<Matrix> ldlt(A);
  if (ldlt.info() != Eigen::Success)
    throw std::runtime_error("inverse iteration: factorization failed");
  Vector b = Vector::Ones(n);
  b[0] += 0.5;
  b.normalize();
  for (int it = 0; it < max_iters; ++it) {
    Vector Ab = A * b;
    double lambda = b.dot(Ab);
    if ((Ab - lambda * b).norm() <= rel_tol * scale) return lambda;
    b = ldlt.solve(b);
    b.normalize();
  }
  throw std::runtime_error("inverse iteration did not converge");
}

}  // namespace

ConvexityCertificate certificate(const InnerObjective& obj,
                                 const HyperParams& lam, double eta) {
  if (!obj.quadratic_in_w())
    throw std::invalid_argument("certificate: objective not quadratic");
  Matrix A = obj.hessian_w(Vector::Zero(obj.dim_w()), lam);
  constexpr double tol = 1e-8;
  constexpr int max_iters = 100000;
  double nu = power_iteration(A, tol, max_iters);
  double mu = inverse_iteration_min(A, nu, tol, max_iters);
  ConvexityCertificate cert;
  cert.mu = mu;
  cert.nu = nu;
  cert.rate = contraction_rate(mu, nu, eta);
  return cert;
}

UniformConvergenceTable uniform_convergence_study(
    const InnerObjective& obj, const OuterObjective& E,
    const std::vector<HyperParams>& lambda_grid,
    const std::vector<int>& T_list, double eta) {
  if (lambda_grid.empty())
    throw std::invalid_argument("uniform_convergence_study: empty grid");
  UniformConvergenceTable table;

  std::vector<Vector> w_stars;
  w_stars.reserve(lambda_grid.size());
  for (const auto& lam : lambda_grid) {
    w_stars.push_back(closed_form_minimizer(obj, lam));
    auto cert = certificate(obj, lam, eta);
    table.q_bar = std::max(table.q_bar, cert.rate);
  }

  DynamicsSpec spec;
  spec.init = InitKind::zeros;
  for (std::size_t i = 0; i < lambda_grid.size(); ++i)
    table.c_bound = std::max(table.c_bound, w_stars[i].norm());  // w_0 = 0

  for (int T : T_list) {
    spec.schedule = StepSchedule::constant(eta, T);
    ConvergenceRow row;
    row.T = T;
    for (std::size_t i = 0; i < lambda_grid.size(); ++i) {
      const auto& lam = lambda_grid[i];
      TrajectoryTape tape = unroll(obj, lam, spec, T);
      const Vector& wT = tape.final_iterate();
      double w_err = (wT - w_stars[i]).norm();
      double f_err = std::abs(E.loss(wT, lam) - E.loss(w_stars[i], lam));
      row.sup_w_err = std::max(row.sup_w_err, w_err);
      row.sup_f_err = std::max(row.sup_f_err, f_err);
      // E here is convex in w, so its gradient norm on the segment
      // [w_T, w_lambda] peaks at an endpoint.
      double lip = std::max(E.grad_w(wT, lam).norm(),
                            E.grad_w(w_stars[i], lam).norm());
      table.nu_E_hat = std::max(table.nu_E_hat, lip);
    }
    table.rows.push_back(row);
  }
  return table;
}

ArgminConvergenceTable argmin_convergence_study(
    const InnerObjective& obj, const OuterObjective& E,
    const std::vector<HyperParams>& lambda_grid,
    const std::vector<int>& T_list, double eta) {
  if (lambda_grid.empty())
    throw std::invalid_argument("argmin_convergence_study: empty grid");
  ArgminConvergenceTable table;

  double best_f = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < lambda_grid.size(); ++i) {
    double f = eval_f_exact(obj, E, lambda_grid[i]);
    if (f < best_f) {  // strict: ties keep the lowest index
      best_f = f;
      table.exact_argmin_index = static_cast<Eigen::Index>(i);
    }
  }
  table.inf_f = best_f;
  table.exact_argmin_lambda =
      lambda_grid[static_cast<std::size_t>(table.exact_argmin_index)].values;

  DynamicsSpec spec;
  spec.init = InitKind::zeros;
  for (int T : T_list) {
    spec.schedule = StepSchedule::constant(eta, T);
    ArgminRow row;
    row.T = T;
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < lambda_grid.size(); ++i) {
      const auto& lam = lambda_grid[i];
      TrajectoryTape tape = unroll(obj, lam, spec, T);
      double fT = E.loss(tape.final_iterate(), lam);
      if (fT < best) {
        best = fT;
        row.argmin_index = static_cast<Eigen::Index>(i);
      }
    }
    row.inf_fT = best;
    row.argmin_lambda =
        lambda_grid[static_cast<std::size_t>(row.argmin_index)].values;
    table.rows.push_back(row);
  }
  return table;
}

void save_study_csv(const UniformConvergenceTable& t,
                    const std::filesystem::path& path) {
  std::ofstream os(path);
  os.precision(17);
  os << "T,sup_w_err,sup_f_err\n";
  for (const auto& r : t.rows)
    os << r.T << "," << r.sup_w_err << "," << r.sup_f_err << "\n";
}

void save_study_csv(const ArgminConvergenceTable& t,
                    const std::filesystem::path& path) {
  std::ofstream os(path);
  os.precision(17);
  os << "T";
  for (Eigen::Index j = 0; j < t.exact_argmin_lambda.size(); ++j)
    os << ",argmin_lambda" << j;
  os << ",inf_fT,inf_f\n";
  for (const auto& r : t.rows) {
    os << r.T;
    for (Eigen::Index j = 0; j < r.argmin_lambda.size(); ++j)
      os << "," << r.argmin_lambda[j];
    os << "," << r.inf_fT << "," << t.inf_f << "\n";
  }
}

}  // namespace bilevel
