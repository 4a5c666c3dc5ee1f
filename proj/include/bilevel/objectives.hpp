#pragma once

#include <memory>

#include "bilevel/types.hpp"

namespace bilevel {

/// Inner training objective L_lambda(w) on a data slot S, with the
/// analytic first- and second-order oracles the hypergradient recursions
/// need. All oracles are pure functions of (w, lambda, S).
class InnerObjective {
 public:
  virtual ~InnerObjective() = default;

  virtual Eigen::Index dim_w() const = 0;
  virtual Eigen::Index dim_lambda() const = 0;
  virtual const Dataset& data() const = 0;

  virtual double loss(const Vector& w, const HyperParams& lam) const = 0;
  virtual Vector grad_w(const Vector& w, const HyperParams& lam) const = 0;

  /// Hessian(-in-w)-vector product: (grad^2_w L) v. Symmetric, so it is
  /// also v^T grad^2_w L.
  virtual Vector hvp_w(const Vector& w, const HyperParams& lam,
                       const Vector& v) const = 0;

  /// v^T grad_lambda grad_w L, a length-m vector. This is the row-vector
  /// Jacobian product used in the adjoint recursion.
  virtual Vector cross_jvp(const Vector& w, const HyperParams& lam,
                           const Vector& v) const = 0;

  /// Mixed-partial matrix C = d(grad_w L)/d(lambda), d x m. The default
  /// assembles it from cross_jvp one w-coordinate at a time; quadratics
  /// override with the closed form where it is cheaper.
  virtual Matrix cross_matrix(const Vector& w, const HyperParams& lam) const;

  /// True when L is quadratic in w (Hessian independent of w), enabling
  /// closed-form minimizers and exact bilevel oracles.
  virtual bool quadratic_in_w() const { return false; }

  /// Dense Hessian in w; default assembled from hvp_w columns.
  virtual Matrix hessian_w(const Vector& w, const HyperParams& lam) const;

  void check_dims(const Vector& w, const HyperParams& lam) const;
};

/// Outer (validation / meta-training) objective E(w, lambda) on a fixed
/// validation slot.
class OuterObjective {
 public:
  virtual ~OuterObjective() = default;

  virtual double loss(const Vector& w, const HyperParams& lam) const = 0;
  virtual Vector grad_w(const Vector& w, const HyperParams& lam) const = 0;
  /// Explicit partial in lambda; zero when E has no direct lambda path.
  virtual Vector grad_lambda(const Vector& w, const HyperParams& lam) const = 0;
};

/// L_H(w) = ||y - X H w||^2 + rho ||w||^2, hyperparameter H = reshaped
/// lambda (d_in x d_in by default). Strongly convex with Hessian
/// 2((XH)^T XH + rho I).
class FeatureMapRidge : public InnerObjective {
 public:
  FeatureMapRidge(Dataset data, double rho);

  Eigen::Index dim_w() const override { return data_.dim(); }
  Eigen::Index dim_lambda() const override { return data_.dim() * data_.dim(); }
  const Dataset& data() const override { return data_; }
  double rho() const { return rho_; }

  double loss(const Vector& w, const HyperParams& lam) const override;
  Vector grad_w(const Vector& w, const HyperParams& lam) const override;
  Vector hvp_w(const Vector& w, const HyperParams& lam,
               const Vector& v) const override;
  Vector cross_jvp(const Vector& w, const HyperParams& lam,
                   const Vector& v) const override;
  Matrix cross_matrix(const Vector& w, const HyperParams& lam) const override;
  bool quadratic_in_w() const override { return true; }
  Matrix hessian_w(const Vector& w, const HyperParams& lam) const override;

 private:
  Dataset data_;
  double rho_;
};

/// L_lambda(w) = ||X w - y||^2 + sum_i e^{lambda_i} w_i^2. With a scalar
/// lambda (m = 1) the single coefficient is shared by all coordinates.
class DiagTikhonovRidge : public InnerObjective {
 public:
  DiagTikhonovRidge(Dataset data, bool scalar_lambda = false);

  Eigen::Index dim_w() const override { return data_.dim(); }
  Eigen::Index dim_lambda() const override {
    return scalar_ ? 1 : data_.dim();
  }
  const Dataset& data() const override { return data_; }

  double loss(const Vector& w, const HyperParams& lam) const override;
  Vector grad_w(const Vector& w, const HyperParams& lam) const override;
  Vector hvp_w(const Vector& w, const HyperParams& lam,
               const Vector& v) const override;
  Vector cross_jvp(const Vector& w, const HyperParams& lam,
                   const Vector& v) const override;
  Matrix cross_matrix(const Vector& w, const HyperParams& lam) const override;
  bool quadratic_in_w() const override { return true; }
  Matrix hessian_w(const Vector& w, const HyperParams& lam) const override;

 private:
  Vector penalties(const HyperParams& lam) const;  // e^{lambda}, length d
  Dataset data_;
  bool scalar_;
};

/// g(x) = <w + lambda, x> with square loss plus rho ||w||^2; lambda is a
/// common model around which task-specific weights are found.
class SharedOffsetLinear : public InnerObjective {
 public:
  SharedOffsetLinear(Dataset data, double rho);

  Eigen::Index dim_w() const override { return data_.dim(); }
  Eigen::Index dim_lambda() const override { return data_.dim(); }
  const Dataset& data() const override { return data_; }

  double loss(const Vector& w, const HyperParams& lam) const override;
  Vector grad_w(const Vector& w, const HyperParams& lam) const override;
  Vector hvp_w(const Vector& w, const HyperParams& lam,
               const Vector& v) const override;
  Vector cross_jvp(const Vector& w, const HyperParams& lam,
                   const Vector& v) const override;
  Matrix cross_matrix(const Vector& w, const HyperParams& lam) const override;
  bool quadratic_in_w() const override { return true; }
  Matrix hessian_w(const Vector& w, const HyperParams& lam) const override;

 private:
  Dataset data_;
  double rho_;
};

/// Multinomial logistic regression on features phi(x), where phi is the
/// identity or the linear map H x (H = reshaped lambda, k x d_in). The
/// weight matrix W (k x C) is stored flattened column-major in w. An L2
/// term l2 ||w||^2 keeps the problem strictly convex.
class SoftmaxRegression : public InnerObjective {
 public:
  /// repr_rows == 0 selects the identity representation (no lambda path).
  SoftmaxRegression(Dataset data, Eigen::Index repr_rows, double l2 = 1e-2);

  Eigen::Index dim_w() const override { return k_ * data_.num_classes; }
  Eigen::Index dim_lambda() const override {
    return identity_ ? 0 : k_ * data_.dim();
  }
  const Dataset& data() const override { return data_; }
  double l2() const { return l2_; }
  Eigen::Index repr_dim() const { return k_; }

  double loss(const Vector& w, const HyperParams& lam) const override;
  Vector grad_w(const Vector& w, const HyperParams& lam) const override;
  Vector hvp_w(const Vector& w, const HyperParams& lam,
               const Vector& v) const override;
  Vector cross_jvp(const Vector& w, const HyperParams& lam,
                   const Vector& v) const override;
  Vector grad_lambda(const Vector& w, const HyperParams& lam) const;

  /// Fraction of examples whose argmax logit matches the label.
  double accuracy(const Vector& w, const HyperParams& lam) const;

 private:
  Matrix features(const HyperParams& lam) const;  // n x k
  Dataset data_;
  Eigen::Index k_;
  bool identity_;
  double l2_;
};

// ---- Outer objectives ----

/// E(w) = ||X_val w - y_val||^2 for the linear model <w, x>; no explicit
/// lambda dependence.
class ValidationSquareLoss : public OuterObjective {
 public:
  explicit ValidationSquareLoss(Dataset val) : val_(std::move(val)) {}
  double loss(const Vector& w, const HyperParams& lam) const override;
  Vector grad_w(const Vector& w, const HyperParams& lam) const override;
  Vector grad_lambda(const Vector& w, const HyperParams& lam) const override;
  const Dataset& val() const { return val_; }

 private:
  Dataset val_;
};

/// E(w, H) = ||y_val - X_val H w||^2: validation error of the linear
/// feature-map model, with an explicit lambda path through H.
class FeatureMapValLoss : public OuterObjective {
 public:
  explicit FeatureMapValLoss(Dataset val) : val_(std::move(val)) {}
  double loss(const Vector& w, const HyperParams& lam) const override;
  Vector grad_w(const Vector& w, const HyperParams& lam) const override;
  Vector grad_lambda(const Vector& w, const HyperParams& lam) const override;

 private:
  Dataset val_;
};

/// E(w, lambda) = ||X_val (w + lambda) - y_val||^2 for the shared-offset
/// model.
class SharedOffsetValLoss : public OuterObjective {
 public:
  explicit SharedOffsetValLoss(Dataset val) : val_(std::move(val)) {}
  double loss(const Vector& w, const HyperParams& lam) const override;
  Vector grad_w(const Vector& w, const HyperParams& lam) const override;
  Vector grad_lambda(const Vector& w, const HyperParams& lam) const override;

 private:
  Dataset val_;
};

/// Cross-entropy of a softmax head on a validation set, sharing the
/// representation contract of SoftmaxRegression.
class SoftmaxValLoss : public OuterObjective {
 public:
  SoftmaxValLoss(Dataset val, Eigen::Index repr_rows, double l2 = 0.0)
      : inner_(std::move(val), repr_rows, l2) {}
  double loss(const Vector& w, const HyperParams& lam) const override;
  Vector grad_w(const Vector& w, const HyperParams& lam) const override;
  Vector grad_lambda(const Vector& w, const HyperParams& lam) const override;
  double accuracy(const Vector& w, const HyperParams& lam) const {
    return inner_.accuracy(w, lam);
  }

 private:
  SoftmaxRegression inner_;
};

}  // namespace bilevel
