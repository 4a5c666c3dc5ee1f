#include "bilevel/dynamics.hpp"

#include <cmath>

namespace bilevel {

namespace {

constexpr double kDivergenceThreshold = 1e100;

bool blown_up(const Vector& w) {
  return !w.allFinite() || w.cwiseAbs().maxCoeff() > kDivergenceThreshold;
}

}  // namespace

Vector DynamicsSpec::initial_point(const HyperParams& lam,
                                   Eigen::Index d) const {
  switch (init) {
    case InitKind::zeros:
      return Vector::Zero(d);
    case InitKind::copy_lambda:
      if (lam.size() != d)
        throw std::invalid_argument("copy_lambda init requires m == d");
      return lam.values;
    case InitKind::explicit_vector:
      if (init_vector.size() != d)
        throw std::invalid_argument("explicit init vector has wrong size");
      return init_vector;
  }
  throw std::logic_error("unreachable");
}

TrajectoryTape unroll(const InnerObjective& obj, const HyperParams& lam,
                      const DynamicsSpec& spec, int T) {
  if (T < 0) throw std::invalid_argument("unroll: T must be >= 0");
  if (spec.schedule.horizon() < T)
    throw std::invalid_argument("unroll: schedule shorter than T");
  spec.schedule.validate();

  const bool momentum = spec.kind == DynamicsKind::gd_momentum;
  TrajectoryTape tape;
  tape.schedule = spec.schedule;
  tape.schedule.etas.resize(static_cast<std::size_t>(T));
  tape.iterates.reserve(static_cast<std::size_t>(T) + 1);

  Vector w = spec.initial_point(lam, obj.dim_w());
  tape.iterates.push_back(w);
  Vector v;
  if (momentum) {
    v = Vector::Zero(obj.dim_w());
    tape.aux.push_back(v);
  }

  for (int t = 1; t <= T; ++t) {
    const double eta = spec.schedule.etas[static_cast<std::size_t>(t - 1)];
    Vector g = obj.grad_w(w, lam);
    if (momentum) {
      v = spec.schedule.momentum * v + g;
      w -= eta * v;
      tape.aux.push_back(v);
    } else {
      w -= eta * g;
    }
    if (blown_up(w))
      throw DivergenceError(t, "divergence at step " + std::to_string(t));
    tape.iterates.push_back(w);
  }
  return tape;
}

double contraction_rate(double mu, double nu, double eta) {
  if (!(mu > 0) || !(nu >= mu))
    throw std::invalid_argument("contraction_rate: need 0 < mu <= nu");
  if (!(eta > 0)) throw std::invalid_argument("contraction_rate: eta must be > 0");
  return std::max(std::abs(1.0 - eta * mu), std::abs(1.0 - eta * nu));
}

}  // namespace bilevel
