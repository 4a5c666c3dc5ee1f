#include "bilevel/types.hpp"

#include <cmath>

namespace bilevel {

void Dataset::validate() const {
  if (X.rows() != y.size())
    throw std::invalid_argument("Dataset: row counts of X and y differ");
  if (!X.allFinite() || !y.allFinite())
    throw std::invalid_argument("Dataset: non-finite entries");
  if (num_classes > 0) {
    for (Eigen::Index i = 0; i < y.size(); ++i) {
      double c = y[i];
      if (c != std::floor(c) || c < 0 || c >= num_classes)
        throw std::invalid_argument("Dataset: class index out of range");
    }
  }
}

Matrix HyperParams::as_matrix() const {
  if (!shape_hint) throw std::logic_error("HyperParams: no shape_hint");
  auto [r, c] = *shape_hint;
  if (r * c != values.size())
    throw std::logic_error("HyperParams: shape_hint does not match size");
  return Eigen::Map<const Matrix>(values.data(), r, c);
}

void HyperParams::validate() const {
  if (shape_hint && shape_hint->first * shape_hint->second != values.size())
    throw std::invalid_argument("HyperParams: shape_hint mismatch");
  if (bounds) {
    const auto& [lo, hi] = *bounds;
    if (lo.size() != values.size() || hi.size() != values.size())
      throw std::invalid_argument("HyperParams: bounds dimension mismatch");
    for (Eigen::Index i = 0; i < values.size(); ++i)
      if (values[i] < lo[i] || values[i] > hi[i])
        throw std::invalid_argument("HyperParams: value outside bounds");
  }
}

StepSchedule StepSchedule::constant(double eta, int horizon, double momentum) {
  StepSchedule s;
  s.etas.assign(static_cast<std::size_t>(horizon), eta);
  s.momentum = momentum;
  s.validate();
  return s;
}

void StepSchedule::validate() const {
  for (double eta : etas)
    if (!(eta > 0)) throw std::invalid_argument("StepSchedule: eta must be > 0");
  if (momentum < 0 || momentum >= 1)
    throw std::invalid_argument("StepSchedule: momentum must be in [0,1)");
}

}  // namespace bilevel
