#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace bilevel {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Thrown when an inner unroll produces a non-finite (or absurdly large)
/// iterate. Carries the step index at which the blow-up was detected.
class DivergenceError : public std::runtime_error {
 public:
  DivergenceError(int step, const std::string& what)
      : std::runtime_error(what), step_(step) {}
  int step() const { return step_; }

 private:
  int step_;
};

struct RngSeed {
  std::uint64_t value = 0;
};

/// A dense supervised dataset. Targets are stored in `y`; for
/// classification problems `num_classes > 0` and `y` holds integral class
/// indices in [0, num_classes).
struct Dataset {
  Matrix X;
  Vector y;
  int num_classes = 0;  // 0 => regression
  std::string name;

  bool is_classification() const { return num_classes > 0; }
  Eigen::Index n() const { return X.rows(); }
  Eigen::Index dim() const { return X.cols(); }

  int class_of(Eigen::Index i) const { return static_cast<int>(y[i]); }

  /// Throws if row counts mismatch, entries are non-finite, or class
  /// indices fall outside [0, num_classes).
  void validate() const;
};

/// The outer variable. A flat vector, optionally viewable as a matrix H
/// via shape_hint, optionally box-constrained (the domain Lambda).
struct HyperParams {
  Vector values;
  std::optional<std::pair<Eigen::Index, Eigen::Index>> shape_hint;
  std::optional<std::pair<Vector, Vector>> bounds;  // (lower, upper)

  Eigen::Index size() const { return values.size(); }

  /// Matrix view H; requires shape_hint with rows*cols == size().
  Matrix as_matrix() const;

  void validate() const;

  static HyperParams flat(Vector v) { return HyperParams{std::move(v), {}, {}}; }
  static HyperParams matrix(const Matrix& H) {
    HyperParams hp;
    hp.values = Eigen::Map<const Vector>(H.data(), H.size());
    hp.shape_hint = {H.rows(), H.cols()};
    return hp;
  }
};

/// Step-size schedule for one inner unroll of horizon T = etas.size().
struct StepSchedule {
  std::vector<double> etas;
  double momentum = 0.0;  // heavy-ball factor in [0, 1); 0 disables

  static StepSchedule constant(double eta, int horizon, double momentum = 0.0);
  void validate() const;
  int horizon() const { return static_cast<int>(etas.size()); }
};

/// Stored iterates w_0..w_T of one inner unroll. When momentum is active,
/// aux holds the velocity sequence v_0..v_T.
struct TrajectoryTape {
  std::vector<Vector> iterates;
  StepSchedule schedule;
  std::vector<Vector> aux;

  int horizon() const { return static_cast<int>(iterates.size()) - 1; }
  const Vector& final_iterate() const { return iterates.back(); }
};

/// One task's train/validation split.
struct Episode {
  Dataset train;
  Dataset val;
  int task_id = 0;
  bool disjoint = true;  // sampler's promise that train and val rows differ
};

}  // namespace bilevel
