#include "bilevel/hypergrad.hpp"

#include <chrono>

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "bilevel/exact.hpp"

namespace bilevel {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

}  // namespace

void to_json(nlohmann::json& j, const HypergradReport& r) {
  j = {{"grad", std::vector<double>(r.grad.data(), r.grad.data() + r.grad.size())},
       {"f_value", r.f_value},
       {"T", r.T},
       {"wall_time_s", r.wall_time_s}};
  if (r.per_episode) {
    nlohmann::json pe = nlohmann::json::array();
    for (const auto& p : *r.per_episode)
      pe.push_back(std::vector<double>(p.data(), p.data() + p.size()));
    j["per_episode"] = pe;
  }
}

HypergradReport reverse_hg_from_tape(const InnerObjective& obj,
                                     const OuterObjective& E,
                                     const HyperParams& lam,
                                     const DynamicsSpec& spec,
                                     const TrajectoryTape& tape) {
  auto start = Clock::now();
  const int T = tape.horizon();
  const bool momentum = spec.kind == DynamicsKind::gd_momentum;
  const double mu = spec.schedule.momentum;

  const Vector& wT = tape.final_iterate();
  Vector alpha = E.grad_w(wT, lam);
  Vector p = E.grad_lambda(wT, lam);
  Vector alpha_v = Vector::Zero(alpha.size());  // adjoint of the velocity

  for (int t = T; t >= 1; --t) {
    const double eta = tape.schedule.etas[static_cast<std::size_t>(t - 1)];
    const Vector& w_prev = tape.iterates[static_cast<std::size_t>(t - 1)];
    if (momentum) {
      // w_t = w_{t-1} - eta (mu v_{t-1} + g), v_t = mu v_{t-1} + g;
      // both see the gradient through u.
      Vector u = alpha_v - eta * alpha;
      p += obj.cross_jvp(w_prev, lam, u);
      alpha += obj.hvp_w(w_prev, lam, u);
      alpha_v = mu * u;
    } else {
      p -= eta * obj.cross_jvp(w_prev, lam, alpha);
      alpha -= eta * obj.hvp_w(w_prev, lam, alpha);
    }
  }
  if (spec.init == InitKind::copy_lambda) p += alpha;

  HypergradReport rep;
  rep.grad = std::move(p);
  rep.f_value = E.loss(wT, lam);
  rep.T = T;
  rep.wall_time_s = seconds_since(start);
  return rep;
}

HypergradReport reverse_hg(const InnerObjective& obj, const OuterObjective& E,
                           const HyperParams& lam, const DynamicsSpec& spec,
                           int T) {
  auto start = Clock::now();
  TrajectoryTape tape = unroll(obj, lam, spec, T);
  auto rep = reverse_hg_from_tape(obj, E, lam, spec, tape);
  rep.wall_time_s = seconds_since(start);
  return rep;
}

HypergradReport forward_hg(const InnerObjective& obj, const OuterObjective& E,
                           const HyperParams& lam, const DynamicsSpec& spec,
                           int T) {
  auto start = Clock::now();
  const Eigen::Index d = obj.dim_w();
  const Eigen::Index m = lam.size();
  TrajectoryTape tape = unroll(obj, lam, spec, T);
  const bool momentum = spec.kind == DynamicsKind::gd_momentum;
  const double mu = spec.schedule.momentum;

  Matrix Zw = Matrix::Zero(d, m);
  if (spec.init == InitKind::copy_lambda) Zw = Matrix::Identity(d, m);
  Matrix Zv = Matrix::Zero(d, m);
  for (int t = 1; t <= T; ++t) {
    const double eta = tape.schedule.etas[static_cast<std::size_t>(t - 1)];
    const Vector& w_prev = tape.iterates[static_cast<std::size_t>(t - 1)];
    Matrix dG(d, m);  // (grad^2_w L) Zw + C, the tangent of grad_w L
    Matrix C = obj.cross_matrix(w_prev, lam);
    for (Eigen::Index j = 0; j < m; ++j)
      dG.col(j) = obj.hvp_w(w_prev, lam, Zw.col(j));
    dG += C;
    if (momentum) {
      Zv = mu * Zv + dG;
      Zw -= eta * Zv;
    } else {
      Zw -= eta * dG;
    }
  }
  const Vector& wT = tape.final_iterate();
  HypergradReport rep;
  rep.grad = Zw.transpose() * E.grad_w(wT, lam) + E.grad_lambda(wT, lam);
  rep.f_value = E.loss(wT, lam);
  rep.T = T;
  rep.wall_time_s = seconds_since(start);
  return rep;
}

HypergradReport approx_hg(const InnerObjective& obj, const OuterObjective& E,
                          const HyperParams& lam, const DynamicsSpec& spec,
                          int T) {
  auto start = Clock::now();
  TrajectoryTape tape = unroll(obj, lam, spec, T);
  const Vector& wT = tape.final_iterate();
  HypergradReport rep;
  rep.grad = E.grad_lambda(wT, lam);
  rep.f_value = E.loss(wT, lam);
  rep.T = T;
  rep.wall_time_s = seconds_since(start);
  return rep;
}

Vector implicit_hg(const InnerObjective& obj, const OuterObjective& E,
                   const HyperParams& lam) {
  if (!obj.quadratic_in_w())
    throw std::invalid_argument("implicit_hg: inner objective must be quadratic");
  Vector w_star = closed_form_minimizer(obj, lam);
  Matrix A = obj.hessian_w(w_star, lam);

  Eigen::SelfAdjointEigenSolver<Matrix> es(A);
  double lo = es.eigenvalues().minCoeff();
  double hi = es.eigenvalues().maxCoeff();
  if (!(lo > 0) || hi / lo > 1e12)
    throw std::runtime_error("implicit_hg: Hessian singular or ill-conditioned");

  Vector s = A.ldlt().solve(E.grad_w(w_star, lam));
  return E.grad_lambda(w_star, lam) - obj.cross_jvp(w_star, lam, s);
}

}  // namespace bilevel
