#include "bilevel/meta.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <fstream>
#include <future>
#include <numeric>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

namespace bilevel {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t mix(std::uint64_t a, std::uint64_t b, std::uint64_t c = 0,
                  std::uint64_t d = 0) {
  return splitmix64(splitmix64(splitmix64(splitmix64(a) ^ b) ^ c) ^ d);
}

Vector gaussian_vector(Rng& rng, Eigen::Index n) {
  std::normal_distribution<double> normal;
  Vector v(n);
  for (Eigen::Index i = 0; i < n; ++i) v[i] = normal(rng);
  return v;
}

Matrix gaussian_matrix(Rng& rng, Eigen::Index r, Eigen::Index c) {
  std::normal_distribution<double> normal;
  Matrix M(r, c);
  for (Eigen::Index j = 0; j < c; ++j)
    for (Eigen::Index i = 0; i < r; ++i) M(i, j) = normal(rng);
  return M;
}

/// Planted distortion: rotation times a log-spaced diagonal with the
/// requested condition number. Depends only on the sampler seed.
Matrix planted_map(const EpisodeSampler& s) {
  Rng rng(mix(s.seed.value, 0x9d7));
  Matrix G = gaussian_matrix(rng, s.feature_dim, s.feature_dim);
  Eigen::HouseholderQR<Matrix> qr(G);
  Matrix Q = qr.householderQ();
  Vector diag(s.feature_dim);
  for (Eigen::Index i = 0; i < s.feature_dim; ++i) {
    double t = s.feature_dim > 1
                   ? static_cast<double>(i) / (s.feature_dim - 1)
                   : 0.0;
    diag[i] = std::pow(s.distortion, -t);
  }
  return Q * diag.asDiagonal();
}

Vector class_mean(const EpisodeSampler& s, int class_id) {
  Rng rng(mix(s.seed.value, 0xc1a55, static_cast<std::uint64_t>(class_id)));
  Vector z = gaussian_vector(rng, s.feature_dim);
  return z / z.norm();
}

std::pair<int, int> pool_range(const EpisodeSampler& s, MetaPool pool) {
  int half = s.n_classes_total / 2;
  int three_quarters = half + (s.n_classes_total - half) / 2;
  switch (pool) {
    case MetaPool::train:
      return {0, half};
    case MetaPool::val:
      return {half, three_quarters};
    case MetaPool::test:
      return {three_quarters, s.n_classes_total};
  }
  throw std::logic_error("unreachable");
}

}  // namespace

std::vector<Episode> sample_batch(const EpisodeSampler& s, int B,
                                  int batch_index, MetaPool pool) {
  if (B < 1) throw std::invalid_argument("sample_batch: B must be >= 1");
  std::vector<Episode> batch;
  batch.reserve(static_cast<std::size_t>(B));

  if (s.kind == EpisodeSampler::Kind::synthetic_classes) {
    auto [lo, hi] = pool_range(s, pool);
    if (hi - lo < s.n_way)
      throw std::invalid_argument("sample_batch: insufficient classes in pool");
    Matrix G = planted_map(s);
    for (int j = 0; j < B; ++j) {
      Rng rng(mix(s.seed.value, static_cast<std::uint64_t>(batch_index),
                  static_cast<std::uint64_t>(pool),
                  static_cast<std::uint64_t>(j)));
      std::vector<int> classes(static_cast<std::size_t>(hi - lo));
      std::iota(classes.begin(), classes.end(), lo);
      std::shuffle(classes.begin(), classes.end(), rng);
      classes.resize(static_cast<std::size_t>(s.n_way));

      auto draw = [&](Dataset& d, int per_class) {
        d.X.resize(static_cast<Eigen::Index>(s.n_way) * per_class,
                   s.feature_dim);
        d.y.resize(d.X.rows());
        d.num_classes = s.n_way;
        Eigen::Index row = 0;
        for (int c = 0; c < s.n_way; ++c) {
          Vector mu = class_mean(s, classes[static_cast<std::size_t>(c)]);
          for (int i = 0; i < per_class; ++i) {
            Vector z = mu + s.noise_scale * gaussian_vector(rng, s.feature_dim);
            d.X.row(row) = (G * z).transpose();
            d.y[row] = c;
            ++row;
          }
        }
      };
      Episode ep;
      ep.task_id = batch_index * B + j;
      draw(ep.train, s.k_shot);
      draw(ep.val, s.n_val_per_class);
      ep.train.name = "episode" + std::to_string(ep.task_id) + "/train";
      ep.val.name = "episode" + std::to_string(ep.task_id) + "/val";
      batch.push_back(std::move(ep));
    }
    return batch;
  }

  // synthetic_regression: tasks are linear models scattered around a
  // shared base weight vector.
  Rng base_rng(mix(s.seed.value, 0xba5e));
  Vector base = gaussian_vector(base_rng, s.feature_dim);
  for (int j = 0; j < B; ++j) {
    Rng rng(mix(s.seed.value, static_cast<std::uint64_t>(batch_index),
                static_cast<std::uint64_t>(pool),
                static_cast<std::uint64_t>(j) | 0x100));
    Vector u = base + 0.5 * gaussian_vector(rng, s.feature_dim);
    auto draw = [&](Dataset& d, Eigen::Index n) {
      d.X = gaussian_matrix(rng, n, s.feature_dim);
      d.y = d.X * u + s.noise_scale * gaussian_vector(rng, n);
      d.num_classes = 0;
    };
    Episode ep;
    ep.task_id = batch_index * B + j;
    draw(ep.train, static_cast<Eigen::Index>(s.n_way) * s.k_shot);
    draw(ep.val, static_cast<Eigen::Index>(s.n_way) * s.n_val_per_class);
    batch.push_back(std::move(ep));
  }
  return batch;
}

void save_episode_manifest(const std::vector<Episode>& batch,
                           const std::filesystem::path& path) {
  nlohmann::json j = nlohmann::json::array();
  for (const auto& ep : batch) j.push_back(ep);
  std::ofstream os(path);
  os << j.dump() << "\n";
}

std::vector<Episode> load_episode_manifest(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  nlohmann::json j;
  is >> j;
  std::vector<Episode> batch;
  for (const auto& e : j) batch.push_back(e.get<Episode>());
  return batch;
}

double meta_fT(const HyperReprProblem& problem,
               const std::vector<Episode>& batch, const HyperParams& lam,
               const DynamicsSpec& spec, int T) {
  double total = 0.0;
  for (const auto& ep : batch) {
    auto inner = problem.inner_for(ep.train);
    auto outer = problem.outer_for(ep.val);
    TrajectoryTape tape = unroll(inner, lam, spec, T);
    total += outer.loss(tape.final_iterate(), lam);
  }
  return total;
}

namespace {

HypergradReport episode_hypergrad(const HyperReprProblem& problem,
                                  const Episode& ep, const HyperParams& lam,
                                  const DynamicsSpec& spec, int T,
                                  MetaMode mode) {
  auto inner = problem.inner_for(ep.train);
  switch (mode) {
    case MetaMode::full: {
      auto outer = problem.outer_for(ep.val);
      return reverse_hg(inner, outer, lam, spec, T);
    }
    case MetaMode::bilevel_train: {
      auto outer = problem.outer_for(ep.train);
      return reverse_hg(inner, outer, lam, spec, T);
    }
    case MetaMode::approx: {
      auto outer = problem.outer_for(ep.val);
      return approx_hg(inner, outer, lam, spec, T);
    }
    case MetaMode::approx_train: {
      auto outer = problem.outer_for(ep.train);
      return approx_hg(inner, outer, lam, spec, T);
    }
    case MetaMode::classic: {
      TrajectoryTape tape = unroll(inner, lam, spec, T);
      HypergradReport rep;
      rep.grad = inner.grad_lambda(tape.final_iterate(), lam);
      rep.f_value = inner.loss(tape.final_iterate(), lam);
      rep.T = T;
      return rep;
    }
  }
  throw std::logic_error("unreachable");
}

}  // namespace

HypergradReport meta_hypergrad(const HyperReprProblem& problem,
                               const std::vector<Episode>& batch,
                               const HyperParams& lam, const DynamicsSpec& spec,
                               int T, MetaMode mode, bool keep_per_episode,
                               int n_threads) {
  auto start = std::chrono::steady_clock::now();
  std::vector<HypergradReport> parts(batch.size());

  if (n_threads > 1 && batch.size() > 1) {
    std::vector<std::future<void>> futures;
    std::atomic<std::size_t> next{0};
    for (int t = 0; t < n_threads; ++t)
      futures.push_back(std::async(std::launch::async, [&] {
        for (std::size_t i = next.fetch_add(1); i < batch.size();
             i = next.fetch_add(1))
          parts[i] = episode_hypergrad(problem, batch[i], lam, spec, T, mode);
      }));
    for (auto& f : futures) f.get();
  } else {
    for (std::size_t i = 0; i < batch.size(); ++i)
      parts[i] = episode_hypergrad(problem, batch[i], lam, spec, T, mode);
  }

  HypergradReport total;
  total.grad = Vector::Zero(lam.size());
  total.T = T;
  if (keep_per_episode) total.per_episode.emplace();
  for (const auto& p : parts) {  // fixed episode order
    total.grad += p.grad;
    total.f_value += p.f_value;
    if (keep_per_episode) total.per_episode->push_back(p.grad);
  }
  total.wall_time_s =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
          .count();
  return total;
}

double meta_accuracy(const HyperReprProblem& problem,
                     const std::vector<Episode>& batch, const HyperParams& lam,
                     const DynamicsSpec& spec, int T) {
  double total = 0.0;
  for (const auto& ep : batch) {
    auto inner = problem.inner_for(ep.train);
    TrajectoryTape tape = unroll(inner, lam, spec, T);
    SoftmaxRegression val_head(ep.val, problem.repr_rows, 0.0);
    total += val_head.accuracy(tape.final_iterate(), lam);
  }
  return total / static_cast<double>(batch.size());
}

Vector classic_lambda_grad(const HyperReprProblem& problem,
                           const std::vector<Episode>& batch,
                           const HyperParams& lam,
                           const std::vector<Vector>& joint_w) {
  if (joint_w.size() != batch.size())
    throw std::invalid_argument("classic_lambda_grad: joint state size mismatch");
  Vector g = Vector::Zero(lam.size());
  for (std::size_t j = 0; j < batch.size(); ++j) {
    auto inner = problem.inner_for(batch[j].train);
    g += inner.grad_lambda(joint_w[j], lam);
  }
  return g;
}

HyperParams run_classic_training(const HyperReprProblem& problem,
                                 const EpisodeSampler& sampler,
                                 HyperParams lam, double lr_lambda, double lr_w,
                                 int steps, int batch_size,
                                 int resample_every) {
  std::vector<Episode> batch;
  std::vector<Vector> ws;
  int batch_index = 0;
  for (int step = 0; step < steps; ++step) {
    if (step % resample_every == 0) {
      batch = sample_batch(sampler, batch_size, batch_index++);
      ws.assign(batch.size(), Vector());
      for (std::size_t j = 0; j < batch.size(); ++j) {
        auto inner = problem.inner_for(batch[j].train);
        ws[j] = Vector::Zero(inner.dim_w());
      }
    }
    Vector glam = Vector::Zero(lam.size());
    for (std::size_t j = 0; j < batch.size(); ++j) {
      auto inner = problem.inner_for(batch[j].train);
      glam += inner.grad_lambda(ws[j], lam);
      ws[j] -= lr_w * inner.grad_w(ws[j], lam);
    }
    lam.values -= lr_lambda * glam;
  }
  return lam;
}

// ---- K-fold ----

FoldSpec FoldSpec::contiguous(Eigen::Index n, int K) {
  FoldSpec f;
  f.K = K;
  f.assignment.resize(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i)
    f.assignment[static_cast<std::size_t>(i)] =
        static_cast<int>((i * K) / n);
  f.validate();
  return f;
}

FoldSpec FoldSpec::shuffled(Eigen::Index n, int K, RngSeed seed) {
  FoldSpec f = contiguous(n, K);
  Rng rng(seed.value);
  std::shuffle(f.assignment.begin(), f.assignment.end(), rng);
  return f;
}

void FoldSpec::validate() const {
  if (K < 2) throw std::invalid_argument("FoldSpec: K must be >= 2");
  std::vector<int> counts(static_cast<std::size_t>(K), 0);
  for (int a : assignment) {
    if (a < 0 || a >= K) throw std::invalid_argument("FoldSpec: bad fold id");
    ++counts[static_cast<std::size_t>(a)];
  }
  for (int c : counts)
    if (c == 0) throw std::invalid_argument("FoldSpec: empty fold");
}

std::vector<Eigen::Index> FoldSpec::fold_rows(int j) const {
  std::vector<Eigen::Index> rows;
  for (std::size_t i = 0; i < assignment.size(); ++i)
    if (assignment[i] == j) rows.push_back(static_cast<Eigen::Index>(i));
  return rows;
}

std::vector<Eigen::Index> FoldSpec::complement_rows(int j) const {
  std::vector<Eigen::Index> rows;
  for (std::size_t i = 0; i < assignment.size(); ++i)
    if (assignment[i] != j) rows.push_back(static_cast<Eigen::Index>(i));
  return rows;
}

KfoldResult kfold_single_fold(const Dataset& d, const FoldSpec& folds, int j,
                              const InnerFactory& inner_factory,
                              const OuterFactory& outer_factory,
                              const HyperParams& lam, const DynamicsSpec& spec,
                              int T) {
  folds.validate();
  Dataset train = take_rows(d, folds.complement_rows(j));
  Dataset val = take_rows(d, folds.fold_rows(j));
  if (train.n() == 0 || val.n() == 0)
    throw std::invalid_argument("kfold: empty fold");
  auto inner = inner_factory(train);
  auto outer = outer_factory(val);
  KfoldResult res;
  res.report = reverse_hg(*inner, *outer, lam, spec, T);
  res.error = res.report.f_value;
  return res;
}

KfoldResult kfold_outer(const Dataset& d, const FoldSpec& folds,
                        const InnerFactory& inner_factory,
                        const OuterFactory& outer_factory,
                        const HyperParams& lam, const DynamicsSpec& spec,
                        int T) {
  folds.validate();
  KfoldResult total;
  total.report.grad = Vector::Zero(lam.size());
  total.report.T = T;
  for (int j = 0; j < folds.K; ++j) {
    auto single = kfold_single_fold(d, folds, j, inner_factory, outer_factory,
                                    lam, spec, T);
    total.error += single.error;
    total.report.grad += single.report.grad;
  }
  total.error /= folds.K;
  total.report.grad /= folds.K;
  total.report.f_value = total.error;
  return total;
}

// ---- Sparse synthetic regression ----

Vector sparse_regression_weights(RngSeed seed) {
  constexpr Eigen::Index d = 30;
  constexpr int informative = 5;
  Rng rng(mix(seed.value, 0xa99c));
  std::vector<Eigen::Index> idx(d);
  std::iota(idx.begin(), idx.end(), Eigen::Index{0});
  std::shuffle(idx.begin(), idx.end(), rng);
  std::uniform_real_distribution<double> mag(0.5, 2.0);
  std::bernoulli_distribution sign(0.5);
  Vector w = Vector::Zero(d);
  for (int i = 0; i < informative; ++i)
    w[idx[static_cast<std::size_t>(i)]] = (sign(rng) ? 1.0 : -1.0) * mag(rng);
  return w;
}

Dataset gen_sparse_regression(RngSeed seed, double noise_scale) {
  constexpr Eigen::Index n = 90;
  constexpr Eigen::Index d = 30;
  Vector w_star = sparse_regression_weights(seed);
  Rng rng(mix(seed.value, 0xdada));
  Dataset ds;
  ds.X = gaussian_matrix(rng, n, d);
  ds.y = ds.X * w_star + noise_scale * gaussian_vector(rng, n);
  ds.name = "synthetic-sparse-ridge";
  return ds;
}

double mape(const Vector& pred, const Vector& target) {
  if (pred.size() != target.size())
    throw std::invalid_argument("mape: size mismatch");
  double total = 0.0;
  for (Eigen::Index i = 0; i < target.size(); ++i) {
    if (target[i] == 0.0) throw std::invalid_argument("MAPE undefined");
    total += std::abs(pred[i] - target[i]) / std::abs(target[i]);
  }
  return 100.0 * total / static_cast<double>(target.size());
}

}  // namespace bilevel
