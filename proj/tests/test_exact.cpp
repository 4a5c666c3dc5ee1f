#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "bilevel/exact.hpp"
#include "bilevel/numcheck.hpp"
#include "bilevel/objectives.hpp"
#include "test_support.hpp"

using namespace bilevel;
using testsupport::gaussian_matrix;
using testsupport::gaussian_vector;
using testsupport::random_regression;

namespace {

// ||Xw - y||^2 with a possibly rank-deficient X: the argmin is a whole
// affine set, used below to show why a strong-convexity certificate is
// needed before trusting "the" minimizer.
class RankDeficientLsq : public InnerObjective {
 public:
  explicit RankDeficientLsq(Dataset data) : data_(std::move(data)) {}
  Eigen::Index dim_w() const override { return data_.dim(); }
  Eigen::Index dim_lambda() const override { return 0; }
  const Dataset& data() const override { return data_; }
  double loss(const Vector& w, const HyperParams&) const override {
    return (data_.X * w - data_.y).squaredNorm();
  }
  Vector grad_w(const Vector& w, const HyperParams&) const override {
    return 2.0 * data_.X.transpose() * (data_.X * w - data_.y);
  }
  Vector hvp_w(const Vector&, const HyperParams&,
               const Vector& v) const override {
    return 2.0 * data_.X.transpose() * (data_.X * v);
  }
  Vector cross_jvp(const Vector&, const HyperParams&,
                   const Vector&) const override {
    return Vector(0);
  }
  bool quadratic_in_w() const override { return true; }

 private:
  Dataset data_;
};

}  // namespace

TEST_CASE("ridge_closed_form hand values") {
  // X = I, H = I, rho = 1: w = y / 2.
  Matrix I3 = Matrix::Identity(3, 3);
  Vector y(3);
  y << 2, -4, 6;
  Vector w = ridge_closed_form(I3, y, I3, 1.0);
  CHECK((w - 0.5 * y).norm() <= 1e-14);
  CHECK_THROWS_AS(ridge_closed_form(I3, y, I3, 0.0), std::invalid_argument);
}

TEST_CASE("ridge_closed_form zeroes the gradient on random instances") {
  std::mt19937_64 rng(61);
  for (int rep = 0; rep < 50; ++rep) {
    Dataset data = random_regression(rng, 7, 4);
    double rho = 0.1 + 0.05 * rep;
    Matrix H = gaussian_matrix(rng, 4, 4);
    Vector w = ridge_closed_form(data.X, data.y, H, rho);
    FeatureMapRidge obj(data, rho);
    CHECK(obj.grad_w(w, HyperParams::matrix(H)).norm() <= 1e-8);
  }
}

TEST_CASE("closed_form_minimizer agrees with ridge_closed_form") {
  std::mt19937_64 rng(62);
  Dataset data = random_regression(rng, 7, 4);
  FeatureMapRidge obj(data, 0.4);
  HyperParams H = HyperParams::matrix(gaussian_matrix(rng, 4, 4));
  Vector a = closed_form_minimizer(obj, H);
  Vector b = ridge_closed_form(data.X, data.y, H.as_matrix(), 0.4);
  CHECK((a - b).norm() <= 1e-10);
}

TEST_CASE("eval_f_exact is zero under a constructed perfect fit") {
  std::mt19937_64 rng(63);
  Dataset train = random_regression(rng, 8, 3);
  DiagTikhonovRidge obj(train);
  HyperParams lam = HyperParams::flat(gaussian_vector(rng, 3));
  Vector wstar = closed_form_minimizer(obj, lam);
  Dataset val;
  val.X = gaussian_matrix(rng, 5, 3);
  val.y = val.X * wstar;
  ValidationSquareLoss E(val);
  CHECK(eval_f_exact(obj, E, lam) <= 1e-20);
}

TEST_CASE("certificate: X = 0 gives mu = nu = 2 rho and zero rate at eta = 1/nu") {
  Dataset data;
  data.X = Matrix::Zero(5, 3);
  data.y = Vector::Zero(5);
  FeatureMapRidge obj(data, 1.25);
  HyperParams H = HyperParams::matrix(Matrix::Identity(3, 3));
  auto cert = certificate(obj, H, 1.0 / 2.5);
  CHECK(cert.nu == doctest::Approx(2.5).epsilon(1e-10));
  CHECK(cert.mu == doctest::Approx(2.5).epsilon(1e-10));
  CHECK(cert.rate == doctest::Approx(0.0).epsilon(1e-8));
}

TEST_CASE("certificate matches a dense eigensolver on random instances") {
  std::mt19937_64 rng(64);
  for (int rep = 0; rep < 30; ++rep) {
    Dataset data = random_regression(rng, 8, 4);
    FeatureMapRidge obj(data, 0.3);
    HyperParams H = HyperParams::matrix(gaussian_matrix(rng, 4, 4));
    auto cert = certificate(obj, H, 0.1);
    Matrix A = obj.hessian_w(Vector::Zero(4), H);
    Eigen::SelfAdjointEigenSolver<Matrix> es(A);
    double mu_ref = es.eigenvalues().minCoeff();
    double nu_ref = es.eigenvalues().maxCoeff();
    CHECK(std::abs(cert.nu - nu_ref) <= 1e-6 * nu_ref);
    CHECK(std::abs(cert.mu - mu_ref) <= 1e-6 * nu_ref);
    // Rayleigh quotients must be sandwiched by the certificate.
    for (int k = 0; k < 5; ++k) {
      Vector v = gaussian_vector(rng, 4);
      double rq = v.dot(A * v) / v.squaredNorm();
      CHECK(rq >= cert.mu - 1e-6 * nu_ref);
      CHECK(rq <= cert.nu + 1e-6 * nu_ref);
    }
  }
}

TEST_CASE("uniform convergence study: decay, bounds, and csv") {
  std::mt19937_64 rng(65);
  Dataset train = random_regression(rng, 10, 3);
  Dataset val = random_regression(rng, 8, 3);
  DiagTikhonovRidge obj(train, /*scalar_lambda=*/true);
  ValidationSquareLoss E(val);

  std::vector<HyperParams> grid;
  for (int i = 0; i < 25; ++i)
    grid.push_back(HyperParams::flat(Vector::Constant(1, -2.0 + 4.0 * i / 24)));

  // One safe step size for the whole grid.
  double eta = 1e9;
  for (const auto& lam : grid)
    eta = std::min(eta, 1.0 / certificate(obj, lam, 1.0).nu);

  std::vector<int> T_list = {4, 16, 64, 256};
  auto table = uniform_convergence_study(obj, E, grid, T_list, eta);

  REQUIRE(table.rows.size() == T_list.size());
  CHECK(table.q_bar < 1.0);
  for (std::size_t i = 1; i < table.rows.size(); ++i)
    CHECK(table.rows[i].sup_w_err <= table.rows[i - 1].sup_w_err + 1e-15);
  for (const auto& row : table.rows) {
    CHECK(row.sup_w_err <=
          table.c_bound * std::pow(table.q_bar, row.T) + 1e-12);
    CHECK(row.sup_f_err <= table.nu_E_hat * row.sup_w_err + 1e-12);
  }

  auto path = std::filesystem::temp_directory_path() / "uc_study.csv";
  save_study_csv(table, path);
  std::ifstream is(path);
  std::string header;
  std::getline(is, header);
  CHECK(header == "T,sup_w_err,sup_f_err");
  int lines = 0;
  for (std::string line; std::getline(is, line);) ++lines;
  CHECK(lines == static_cast<int>(T_list.size()));
}

TEST_CASE("argmin study: grid minimizer of f_T settles on the exact one") {
  std::mt19937_64 rng(66);
  Dataset train = random_regression(rng, 10, 3);
  Dataset val = random_regression(rng, 8, 3);
  DiagTikhonovRidge obj(train, /*scalar_lambda=*/true);
  ValidationSquareLoss E(val);

  std::vector<HyperParams> grid;
  for (int i = 0; i < 50; ++i)
    grid.push_back(HyperParams::flat(Vector::Constant(1, -3.0 + 6.0 * i / 49)));

  double eta = 1e9;
  for (const auto& lam : grid)
    eta = std::min(eta, 1.0 / certificate(obj, lam, 1.0).nu);

  auto table = argmin_convergence_study(obj, E, grid, {4, 64, 512}, eta);

  // Brute-force the exact grid argmin independently.
  Eigen::Index best = 0;
  double best_f = eval_f_exact(obj, E, grid[0]);
  for (std::size_t i = 1; i < grid.size(); ++i) {
    double f = eval_f_exact(obj, E, grid[i]);
    if (f < best_f) {
      best_f = f;
      best = static_cast<Eigen::Index>(i);
    }
  }
  CHECK(table.exact_argmin_index == best);
  CHECK(table.inf_f == doctest::Approx(best_f));

  const auto& last = table.rows.back();
  CHECK(std::abs(last.argmin_index - table.exact_argmin_index) <= 1);
  CHECK(std::abs(last.inf_fT - table.inf_f) <= 1e-6);
}

TEST_CASE("rank-deficient least squares has no unique minimizer") {
  // Two columns are identical, so w and w + t(e0 - e1) fit equally well;
  // gradient descent from different inits reaches different "minimizers"
  // with different outer losses. certificate() must refuse to bless this.
  Dataset data;
  data.X.resize(4, 3);
  data.X << 1, 1, 0, 1, 1, 1, 0, 0, 1, 1, 1, 2;
  data.y.resize(4);
  data.y << 1, 2, 1, 3;
  RankDeficientLsq obj(data);
  HyperParams none = HyperParams::flat(Vector(0));

  DynamicsSpec a = DynamicsSpec::gd_constant(0.05, 4000);
  a.init = InitKind::explicit_vector;
  a.init_vector = Vector::Zero(3);
  DynamicsSpec b = a;
  b.init_vector = Vector(3);
  b.init_vector << 5, -5, 0;  // differs along the null direction e0 - e1

  Vector wa = unroll(obj, none, a, 4000).final_iterate();
  Vector wb = unroll(obj, none, b, 4000).final_iterate();
  CHECK(obj.loss(wa, none) == doctest::Approx(obj.loss(wb, none)).epsilon(1e-8));
  CHECK((wa - wb).norm() > 1.0);

  Dataset val;
  val.X = Matrix::Identity(3, 3);
  val.y = Vector::Zero(3);
  ValidationSquareLoss E(val);
  CHECK(std::abs(E.loss(wa, none) - E.loss(wb, none)) > 1e-2);

  // The spectrum certificate rejects it: mu is (numerically) zero.
  CHECK_THROWS(contraction_rate(0.0, 2.0, 0.1));
}
