#pragma once

#include <filesystem>
#include <functional>
#include <memory>
#include <vector>

#include "bilevel/data_io.hpp"
#include "bilevel/hypergrad.hpp"
#include "bilevel/objectives.hpp"

namespace bilevel {

enum class MetaPool { train, val, test };

/// Generator of synthetic episodes. Class pools for the three meta-splits
/// are disjoint. Classes are Gaussian blobs whose means live on the unit
/// sphere of a latent space; a fixed ill-conditioned linear map distorts
/// the observations so that a learned linear representation pays off.
struct EpisodeSampler {
  enum class Kind { synthetic_classes, synthetic_regression };
  Kind kind = Kind::synthetic_classes;
  int n_classes_total = 32;
  int n_way = 5;
  int k_shot = 1;
  int n_val_per_class = 15;
  int feature_dim = 8;
  double noise_scale = 0.25;
  double distortion = 8.0;  // condition number of the planted map
  RngSeed seed;
};

/// B episodes, deterministic under (sampler.seed, batch_index, pool).
std::vector<Episode> sample_batch(const EpisodeSampler& sampler, int B,
                                  int batch_index = 0,
                                  MetaPool pool = MetaPool::train);

void save_episode_manifest(const std::vector<Episode>& batch,
                           const std::filesystem::path& path);
std::vector<Episode> load_episode_manifest(const std::filesystem::path& path);

/// Hyper-representation meta-problem: a linear map h(x) = H x shared by
/// all episodes, per-episode softmax heads trained on the mapped
/// features, outer loss summed over episode validation sets.
struct HyperReprProblem {
  Eigen::Index repr_rows;   // k, rows of H
  Eigen::Index feature_dim; // columns of H
  double inner_l2 = 1e-2;

  Eigen::Index dim_lambda() const { return repr_rows * feature_dim; }
  SoftmaxRegression inner_for(const Dataset& train) const {
    return SoftmaxRegression(train, repr_rows, inner_l2);
  }
  SoftmaxValLoss outer_for(const Dataset& val) const {
    return SoftmaxValLoss(val, repr_rows);
  }
};

enum class MetaMode { full, approx, bilevel_train, approx_train, classic };

/// f_T(lambda) = sum_j E^j(w^j_T, lambda), each w^j unrolled
/// independently from zero.
double meta_fT(const HyperReprProblem& problem,
               const std::vector<Episode>& batch, const HyperParams& lam,
               const DynamicsSpec& spec, int T);

/// Batch hypergradient under the chosen variant. `full` is the adjoint
/// recursion summed over episodes; `approx` keeps only the explicit
/// lambda-partial at w_T; the *_train variants substitute training sets
/// for validation sets; `classic` is the explicit lambda-gradient of the
/// joint multitask training loss at the unrolled ground weights.
/// n_threads > 1 evaluates episodes concurrently (results are still
/// reduced in episode order).
HypergradReport meta_hypergrad(const HyperReprProblem& problem,
                               const std::vector<Episode>& batch,
                               const HyperParams& lam, const DynamicsSpec& spec,
                               int T, MetaMode mode, bool keep_per_episode = false,
                               int n_threads = 1);

/// Mean validation accuracy of freshly trained heads over a batch of
/// episodes (the meta-validation metric).
double meta_accuracy(const HyperReprProblem& problem,
                     const std::vector<Episode>& batch, const HyperParams& lam,
                     const DynamicsSpec& spec, int T);

/// Explicit lambda-gradient of sum_j L^j(w^j, lambda, D^j_tr) at a given
/// joint state (the `classic` objective).
Vector classic_lambda_grad(const HyperReprProblem& problem,
                           const std::vector<Episode>& batch,
                           const HyperParams& lam,
                           const std::vector<Vector>& joint_w);

/// Joint multitask training of (lambda, w^1..w^B): plain gradient descent
/// on both levels at once, resampling the episode mini-batch every
/// `resample_every` steps.
HyperParams run_classic_training(const HyperReprProblem& problem,
                                 const EpisodeSampler& sampler,
                                 HyperParams lam, double lr_lambda,
                                 double lr_w, int steps, int batch_size = 4,
                                 int resample_every = 5);

// ---- K-fold cross-validation ----

struct FoldSpec {
  int K = 2;
  std::vector<int> assignment;  // fold id per data index, values in [0, K)

  static FoldSpec contiguous(Eigen::Index n, int K);
  static FoldSpec shuffled(Eigen::Index n, int K, RngSeed seed);
  void validate() const;
  std::vector<Eigen::Index> fold_rows(int j) const;
  std::vector<Eigen::Index> complement_rows(int j) const;
};

using InnerFactory =
    std::function<std::unique_ptr<InnerObjective>(const Dataset&)>;
using OuterFactory =
    std::function<std::unique_ptr<OuterObjective>(const Dataset&)>;

struct KfoldResult {
  double error = 0.0;  // (1/K) sum of fold validation errors
  HypergradReport report;
};

/// Full-K CV outer objective: K unrolls on fold complements, evaluated on
/// the held-out folds; hypergradient is the mean of per-fold reverse-mode
/// runs (deterministic fold order).
KfoldResult kfold_outer(const Dataset& d, const FoldSpec& folds,
                        const InnerFactory& inner_factory,
                        const OuterFactory& outer_factory,
                        const HyperParams& lam, const DynamicsSpec& spec, int T);

/// Stochastic single-fold estimate (fold j only).
KfoldResult kfold_single_fold(const Dataset& d, const FoldSpec& folds, int j,
                              const InnerFactory& inner_factory,
                              const OuterFactory& outer_factory,
                              const HyperParams& lam, const DynamicsSpec& spec,
                              int T);

// ---- Synthetic regression data ----

/// n=90 points with 30 features of which 5 are informative; targets are
/// a sparse linear model plus Gaussian noise.
Dataset gen_sparse_regression(RngSeed seed, double noise_scale = 1.0);

/// Ground-truth weights used by gen_sparse_regression (exposed for tests).
Vector sparse_regression_weights(RngSeed seed);

/// Mean absolute percentage error, in percent. Throws on a zero target.
double mape(const Vector& pred, const Vector& target);

}  // namespace bilevel
