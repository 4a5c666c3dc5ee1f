#include "bilevel/objectives.hpp"

#include <cmath>

namespace bilevel {

void InnerObjective::check_dims(const Vector& w, const HyperParams& lam) const {
  if (w.size() != dim_w())
    throw std::invalid_argument("inner objective: w dimension mismatch");
  if (dim_lambda() > 0 && lam.size() != dim_lambda())
    throw std::invalid_argument("inner objective: lambda dimension mismatch");
}

Matrix InnerObjective::cross_matrix(const Vector& w,
                                    const HyperParams& lam) const {
  Matrix C(dim_w(), lam.size());
  Vector e = Vector::Zero(dim_w());
  for (Eigen::Index i = 0; i < dim_w(); ++i) {
    e[i] = 1.0;
    C.row(i) = cross_jvp(w, lam, e).transpose();
    e[i] = 0.0;
  }
  return C;
}

Matrix InnerObjective::hessian_w(const Vector& w, const HyperParams& lam) const {
  Matrix A(dim_w(), dim_w());
  Vector e = Vector::Zero(dim_w());
  for (Eigen::Index i = 0; i < dim_w(); ++i) {
    e[i] = 1.0;
    A.col(i) = hvp_w(w, lam, e);
    e[i] = 0.0;
  }
  return A;
}

namespace {

Matrix reshape(const HyperParams& lam, Eigen::Index rows, Eigen::Index cols) {
  if (lam.shape_hint) return lam.as_matrix();
  if (lam.size() != rows * cols)
    throw std::invalid_argument("hyperparameter size does not match map shape");
  return Eigen::Map<const Matrix>(lam.values.data(), rows, cols);
}

Vector flatten(const Matrix& M) {
  return Eigen::Map<const Vector>(M.data(), M.size());
}

}  // namespace

// ---- FeatureMapRidge ----

FeatureMapRidge::FeatureMapRidge(Dataset data, double rho)
    : data_(std::move(data)), rho_(rho) {
  if (!(rho > 0)) throw std::invalid_argument("FeatureMapRidge: rho must be > 0");
  data_.validate();
}

double FeatureMapRidge::loss(const Vector& w, const HyperParams& lam) const {
  check_dims(w, lam);
  Matrix H = reshape(lam, data_.dim(), data_.dim());
  Vector r = data_.X * (H * w) - data_.y;
  return r.squaredNorm() + rho_ * w.squaredNorm();
}

Vector FeatureMapRidge::grad_w(const Vector& w, const HyperParams& lam) const {
  check_dims(w, lam);
  Matrix H = reshape(lam, data_.dim(), data_.dim());
  Matrix A = data_.X * H;
  return 2.0 * (A.transpose() * (A * w - data_.y)) + 2.0 * rho_ * w;
}

Vector FeatureMapRidge::hvp_w(const Vector& w, const HyperParams& lam,
                              const Vector& v) const {
  check_dims(w, lam);
  Matrix H = reshape(lam, data_.dim(), data_.dim());
  Matrix A = data_.X * H;
  return 2.0 * (A.transpose() * (A * v)) + 2.0 * rho_ * v;
}

Vector FeatureMapRidge::cross_jvp(const Vector& w, const HyperParams& lam,
                                  const Vector& v) const {
  check_dims(w, lam);
  Matrix H = reshape(lam, data_.dim(), data_.dim());
  Matrix A = data_.X * H;
  Vector q = data_.X.transpose() * (A * w - data_.y);
  Vector s = data_.X.transpose() * (A * v);
  // d(grad_w L)/dH contracted with v: 2 (q v^T + s w^T), flattened.
  Matrix G = 2.0 * (q * v.transpose() + s * w.transpose());
  return flatten(G);
}

Matrix FeatureMapRidge::cross_matrix(const Vector& w,
                                     const HyperParams& lam) const {
  check_dims(w, lam);
  const Eigen::Index d = data_.dim();
  Matrix H = reshape(lam, d, d);
  Matrix XtX = data_.X.transpose() * data_.X;
  Vector q = data_.X.transpose() * (data_.X * (H * w) - data_.y);
  Matrix M = H.transpose() * XtX;  // column a below reads M.col(a)
  Matrix C(d, d * d);
  for (Eigen::Index b = 0; b < d; ++b)
    for (Eigen::Index a = 0; a < d; ++a) {
      Vector col = 2.0 * w[b] * M.col(a);
      col[b] += 2.0 * q[a];
      C.col(a + b * d) = col;
    }
  return C;
}

Matrix FeatureMapRidge::hessian_w(const Vector&, const HyperParams& lam) const {
  Matrix H = reshape(lam, data_.dim(), data_.dim());
  Matrix A = data_.X * H;
  return 2.0 * (A.transpose() * A +
                rho_ * Matrix::Identity(data_.dim(), data_.dim()));
}

// ---- DiagTikhonovRidge ----

DiagTikhonovRidge::DiagTikhonovRidge(Dataset data, bool scalar_lambda)
    : data_(std::move(data)), scalar_(scalar_lambda) {
  data_.validate();
}

Vector DiagTikhonovRidge::penalties(const HyperParams& lam) const {
  if (scalar_) {
    if (lam.size() != 1)
      throw std::invalid_argument("DiagTikhonovRidge: expected scalar lambda");
    return Vector::Constant(data_.dim(), std::exp(lam.values[0]));
  }
  if (lam.size() != data_.dim())
    throw std::invalid_argument("DiagTikhonovRidge: lambda dimension mismatch");
  return lam.values.array().exp();
}

double DiagTikhonovRidge::loss(const Vector& w, const HyperParams& lam) const {
  check_dims(w, lam);
  Vector r = data_.X * w - data_.y;
  return r.squaredNorm() + (penalties(lam).array() * w.array().square()).sum();
}

Vector DiagTikhonovRidge::grad_w(const Vector& w, const HyperParams& lam) const {
  check_dims(w, lam);
  return 2.0 * (data_.X.transpose() * (data_.X * w - data_.y)) +
         2.0 * (penalties(lam).array() * w.array()).matrix();
}

Vector DiagTikhonovRidge::hvp_w(const Vector& w, const HyperParams& lam,
                                const Vector& v) const {
  check_dims(w, lam);
  return 2.0 * (data_.X.transpose() * (data_.X * v)) +
         2.0 * (penalties(lam).array() * v.array()).matrix();
}

Vector DiagTikhonovRidge::cross_jvp(const Vector& w, const HyperParams& lam,
                                    const Vector& v) const {
  check_dims(w, lam);
  Vector per = 2.0 * (penalties(lam).array() * w.array() * v.array()).matrix();
  if (!scalar_) return per;
  Vector out(1);
  out[0] = per.sum();
  return out;
}

Matrix DiagTikhonovRidge::cross_matrix(const Vector& w,
                                       const HyperParams& lam) const {
  Vector col = 2.0 * (penalties(lam).array() * w.array()).matrix();
  if (scalar_) return col;
  return col.asDiagonal();
}

Matrix DiagTikhonovRidge::hessian_w(const Vector&, const HyperParams& lam) const {
  Matrix A = 2.0 * (data_.X.transpose() * data_.X);
  A.diagonal() += 2.0 * penalties(lam);
  return A;
}

// ---- SharedOffsetLinear ----

SharedOffsetLinear::SharedOffsetLinear(Dataset data, double rho)
    : data_(std::move(data)), rho_(rho) {
  if (!(rho > 0))
    throw std::invalid_argument("SharedOffsetLinear: rho must be > 0");
  data_.validate();
}

double SharedOffsetLinear::loss(const Vector& w, const HyperParams& lam) const {
  check_dims(w, lam);
  Vector r = data_.X * (w + lam.values) - data_.y;
  return r.squaredNorm() + rho_ * w.squaredNorm();
}

Vector SharedOffsetLinear::grad_w(const Vector& w,
                                  const HyperParams& lam) const {
  check_dims(w, lam);
  return 2.0 * (data_.X.transpose() * (data_.X * (w + lam.values) - data_.y)) +
         2.0 * rho_ * w;
}

Vector SharedOffsetLinear::hvp_w(const Vector&, const HyperParams&,
                                 const Vector& v) const {
  return 2.0 * (data_.X.transpose() * (data_.X * v)) + 2.0 * rho_ * v;
}

Vector SharedOffsetLinear::cross_jvp(const Vector&, const HyperParams&,
                                     const Vector& v) const {
  return 2.0 * (data_.X.transpose() * (data_.X * v));
}

Matrix SharedOffsetLinear::cross_matrix(const Vector&,
                                        const HyperParams&) const {
  return 2.0 * (data_.X.transpose() * data_.X);
}

Matrix SharedOffsetLinear::hessian_w(const Vector&, const HyperParams&) const {
  return 2.0 * (data_.X.transpose() * data_.X) +
         2.0 * rho_ * Matrix::Identity(data_.dim(), data_.dim());
}

// ---- SoftmaxRegression ----

SoftmaxRegression::SoftmaxRegression(Dataset data, Eigen::Index repr_rows,
                                     double l2)
    : data_(std::move(data)),
      k_(repr_rows > 0 ? repr_rows : 0),
      identity_(repr_rows == 0),
      l2_(l2) {
  data_.validate();
  if (!data_.is_classification())
    throw std::invalid_argument("SoftmaxRegression: needs a classification set");
  if (identity_) k_ = data_.dim();
}

Matrix SoftmaxRegression::features(const HyperParams& lam) const {
  if (identity_) return data_.X;
  Matrix H = reshape(lam, k_, data_.dim());
  return data_.X * H.transpose();  // rows are H x_i
}

namespace {

// Row-stable softmax of a logit vector.
Vector softmax(const Vector& z) {
  Vector p = (z.array() - z.maxCoeff()).exp();
  return p / p.sum();
}

double logsumexp(const Vector& z) {
  double m = z.maxCoeff();
  return m + std::log((z.array() - m).exp().sum());
}

}  // namespace

double SoftmaxRegression::loss(const Vector& w, const HyperParams& lam) const {
  check_dims(w, lam);
  const int C = data_.num_classes;
  Matrix W = Eigen::Map<const Matrix>(w.data(), k_, C);
  Matrix Phi = features(lam);
  double total = 0.0;
  for (Eigen::Index i = 0; i < data_.n(); ++i) {
    Vector z = W.transpose() * Phi.row(i).transpose();
    total += logsumexp(z) - z[data_.class_of(i)];
  }
  return total + l2_ * w.squaredNorm();
}

Vector SoftmaxRegression::grad_w(const Vector& w, const HyperParams& lam) const {
  check_dims(w, lam);
  const int C = data_.num_classes;
  Matrix W = Eigen::Map<const Matrix>(w.data(), k_, C);
  Matrix Phi = features(lam);
  Matrix G = Matrix::Zero(k_, C);
  for (Eigen::Index i = 0; i < data_.n(); ++i) {
    Vector phi = Phi.row(i).transpose();
    Vector p = softmax(W.transpose() * phi);
    p[data_.class_of(i)] -= 1.0;
    G.noalias() += phi * p.transpose();
  }
  G += 2.0 * l2_ * W;
  return flatten(G);
}

Vector SoftmaxRegression::hvp_w(const Vector& w, const HyperParams& lam,
                                const Vector& v) const {
  check_dims(w, lam);
  const int C = data_.num_classes;
  Matrix W = Eigen::Map<const Matrix>(w.data(), k_, C);
  Matrix V = Eigen::Map<const Matrix>(v.data(), k_, C);
  Matrix Phi = features(lam);
  Matrix Hv = Matrix::Zero(k_, C);
  for (Eigen::Index i = 0; i < data_.n(); ++i) {
    Vector phi = Phi.row(i).transpose();
    Vector p = softmax(W.transpose() * phi);
    Vector dz = V.transpose() * phi;
    Vector jdz = p.array() * dz.array();
    jdz -= p * p.dot(dz);
    Hv.noalias() += phi * jdz.transpose();
  }
  Hv += 2.0 * l2_ * V;
  return flatten(Hv);
}

Vector SoftmaxRegression::cross_jvp(const Vector& w, const HyperParams& lam,
                                    const Vector& v) const {
  check_dims(w, lam);
  if (identity_) return Vector::Zero(lam.size());
  const int C = data_.num_classes;
  Matrix W = Eigen::Map<const Matrix>(w.data(), k_, C);
  Matrix V = Eigen::Map<const Matrix>(v.data(), k_, C);
  Matrix Phi = features(lam);
  Matrix G = Matrix::Zero(k_, data_.dim());
  for (Eigen::Index i = 0; i < data_.n(); ++i) {
    Vector phi = Phi.row(i).transpose();
    Vector p = softmax(W.transpose() * phi);
    Vector perr = p;
    perr[data_.class_of(i)] -= 1.0;
    Vector dz = V.transpose() * phi;
    Vector jdz = p.array() * dz.array();
    jdz -= p * p.dot(dz);
    // gradient in phi of <V, per-example grad_w>, then outer with x_i
    Vector s = V * perr + W * jdz;
    G.noalias() += s * data_.X.row(i);
  }
  return flatten(G);
}

Vector SoftmaxRegression::grad_lambda(const Vector& w,
                                      const HyperParams& lam) const {
  check_dims(w, lam);
  if (identity_) return Vector::Zero(lam.size());
  const int C = data_.num_classes;
  Matrix W = Eigen::Map<const Matrix>(w.data(), k_, C);
  Matrix Phi = features(lam);
  Matrix G = Matrix::Zero(k_, data_.dim());
  for (Eigen::Index i = 0; i < data_.n(); ++i) {
    Vector phi = Phi.row(i).transpose();
    Vector p = softmax(W.transpose() * phi);
    p[data_.class_of(i)] -= 1.0;
    G.noalias() += (W * p) * data_.X.row(i);
  }
  return flatten(G);
}

double SoftmaxRegression::accuracy(const Vector& w,
                                   const HyperParams& lam) const {
  check_dims(w, lam);
  const int C = data_.num_classes;
  Matrix W = Eigen::Map<const Matrix>(w.data(), k_, C);
  Matrix Phi = features(lam);
  Eigen::Index hits = 0;
  for (Eigen::Index i = 0; i < data_.n(); ++i) {
    Vector z = W.transpose() * Phi.row(i).transpose();
    Eigen::Index best;
    z.maxCoeff(&best);
    if (static_cast<int>(best) == data_.class_of(i)) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(data_.n());
}

// ---- Outer objectives ----

double ValidationSquareLoss::loss(const Vector& w, const HyperParams&) const {
  return (val_.X * w - val_.y).squaredNorm();
}

Vector ValidationSquareLoss::grad_w(const Vector& w, const HyperParams&) const {
  return 2.0 * (val_.X.transpose() * (val_.X * w - val_.y));
}

Vector ValidationSquareLoss::grad_lambda(const Vector&,
                                         const HyperParams& lam) const {
  return Vector::Zero(lam.size());
}

double FeatureMapValLoss::loss(const Vector& w, const HyperParams& lam) const {
  Matrix H = reshape(lam, val_.dim(), val_.dim());
  return (val_.X * (H * w) - val_.y).squaredNorm();
}

Vector FeatureMapValLoss::grad_w(const Vector& w, const HyperParams& lam) const {
  Matrix H = reshape(lam, val_.dim(), val_.dim());
  Matrix A = val_.X * H;
  return 2.0 * (A.transpose() * (A * w - val_.y));
}

Vector FeatureMapValLoss::grad_lambda(const Vector& w,
                                      const HyperParams& lam) const {
  Matrix H = reshape(lam, val_.dim(), val_.dim());
  Vector r = val_.X * (H * w) - val_.y;
  Matrix G = 2.0 * (val_.X.transpose() * r) * w.transpose();
  return flatten(G);
}

double SharedOffsetValLoss::loss(const Vector& w, const HyperParams& lam) const {
  return (val_.X * (w + lam.values) - val_.y).squaredNorm();
}

Vector SharedOffsetValLoss::grad_w(const Vector& w,
                                   const HyperParams& lam) const {
  return 2.0 * (val_.X.transpose() * (val_.X * (w + lam.values) - val_.y));
}

Vector SharedOffsetValLoss::grad_lambda(const Vector& w,
                                        const HyperParams& lam) const {
  return grad_w(w, lam);
}

double SoftmaxValLoss::loss(const Vector& w, const HyperParams& lam) const {
  return inner_.loss(w, lam);
}

Vector SoftmaxValLoss::grad_w(const Vector& w, const HyperParams& lam) const {
  return inner_.grad_w(w, lam);
}

Vector SoftmaxValLoss::grad_lambda(const Vector& w,
                                   const HyperParams& lam) const {
  return inner_.grad_lambda(w, lam);
}

}  // namespace bilevel
