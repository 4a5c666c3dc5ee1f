#include "bilevel/numcheck.hpp"

#include <cmath>

namespace bilevel {

Vector central_diff(const std::function<double(const Vector&)>& f,
                    const Vector& x, double h) {
  Vector g(x.size());
  Vector xp = x;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    xp[i] = x[i] + h;
    double fp = f(xp);
    xp[i] = x[i] - h;
    double fm = f(xp);
    xp[i] = x[i];
    g[i] = (fp - fm) / (2.0 * h);
  }
  return g;
}

double rel_err(const Vector& a, const Vector& b, double floor) {
  return (a - b).norm() / std::max(b.norm(), floor);
}

double eval_f_T(const InnerObjective& obj, const OuterObjective& E,
                const HyperParams& lam, const DynamicsSpec& spec, int T) {
  TrajectoryTape tape = unroll(obj, lam, spec, T);
  return E.loss(tape.final_iterate(), lam);
}

Vector fd_hypergrad(const InnerObjective& obj, const OuterObjective& E,
                    const HyperParams& lam, const DynamicsSpec& spec, int T,
                    double h) {
  if (h <= 0.0)
    h = 1e-6 * std::max(1.0, lam.values.cwiseAbs().maxCoeff());
  HyperParams probe = lam;
  return central_diff(
      [&](const Vector& v) {
        probe.values = v;
        return eval_f_T(obj, E, probe, spec, T);
      },
      lam.values, h);
}

double r_squared(const std::vector<double>& x, const std::vector<double>& y) {
  const auto n = static_cast<double>(x.size());
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sx += x[i];
    sy += y[i];
    sxx += x[i] * x[i];
    sxy += x[i] * y[i];
  }
  double slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
  double intercept = (sy - slope * sx) / n;
  double ss_res = 0, ss_tot = 0;
  double mean_y = sy / n;
  for (std::size_t i = 0; i < x.size(); ++i) {
    double fit = intercept + slope * x[i];
    ss_res += (y[i] - fit) * (y[i] - fit);
    ss_tot += (y[i] - mean_y) * (y[i] - mean_y);
  }
  return ss_tot == 0.0 ? 1.0 : 1.0 - ss_res / ss_tot;
}

}  // namespace bilevel
