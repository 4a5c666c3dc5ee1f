#pragma once

#include <random>

#include "bilevel/types.hpp"

namespace testsupport {

using bilevel::Dataset;
using bilevel::HyperParams;
using bilevel::Matrix;
using bilevel::Vector;

inline Vector gaussian_vector(std::mt19937_64& rng, Eigen::Index n,
                              double scale = 1.0) {
  std::normal_distribution<double> normal(0.0, scale);
  Vector v(n);
  for (Eigen::Index i = 0; i < n; ++i) v[i] = normal(rng);
  return v;
}

inline Matrix gaussian_matrix(std::mt19937_64& rng, Eigen::Index r,
                              Eigen::Index c, double scale = 1.0) {
  std::normal_distribution<double> normal(0.0, scale);
  Matrix M(r, c);
  for (Eigen::Index j = 0; j < c; ++j)
    for (Eigen::Index i = 0; i < r; ++i) M(i, j) = normal(rng);
  return M;
}

inline Dataset random_regression(std::mt19937_64& rng, Eigen::Index n,
                                 Eigen::Index d) {
  Dataset s;
  s.X = gaussian_matrix(rng, n, d);
  s.y = gaussian_vector(rng, n);
  s.name = "random";
  return s;
}

inline Dataset random_classification(std::mt19937_64& rng, Eigen::Index n,
                                     Eigen::Index d, int classes) {
  Dataset s;
  s.X = gaussian_matrix(rng, n, d);
  s.y.resize(n);
  std::uniform_int_distribution<int> cls(0, classes - 1);
  for (Eigen::Index i = 0; i < n; ++i) s.y[i] = cls(rng);
  s.num_classes = classes;
  s.name = "random-cls";
  return s;
}

}  // namespace testsupport
