#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Dense>

namespace rodeo::attack {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Scores per column (higher = more outlier-like); writes dO/dx when the
/// second argument is non-null.
using ScoreFn = std::function<Vector(const Matrix&, Matrix*)>;

struct AttackConfig {
  double epsilon = 8.0 / 255.0;
  int steps = 200;
  int restarts = 3;
  std::uint64_t seed = 0;

  double alpha() const { return 2.5 * epsilon / steps; }
  void validate() const;
};

/// Per column: maximizes y * O(x) with y = +1 (inlier, push score up) or
/// y = -1 (outlier, push score down) over the l_inf ball intersected with
/// [0,1]. Keeps the most adversarial iterate over all steps and restarts.
Matrix pgd_score_attack(const ScoreFn& score, const Matrix& x, std::span<const int> y, const AttackConfig& config);

/// P(random outlier score > random inlier score), ties count 1/2.
double auroc(std::span<const double> scores_inlier, std::span<const double> scores_outlier);

struct EvalReport {
  double clean_auroc = 0.0;
  double robust_auroc = 0.0;
  Vector clean_in, clean_out, adv_in, adv_out;
};

/// Robust AUROC uses pgd_score_attack outputs (y=+1 inliers, y=-1
/// outliers); without an attack config robust equals clean.
EvalReport evaluate(const ScoreFn& score, const Matrix& inliers, const Matrix& outliers,
                    const std::optional<AttackConfig>& attack);

/// Class-conditional Gaussian fit with a pooled covariance, plus a fit to
/// all data.
struct ClassStats {
  std::vector<Vector> means;  // mu_k, k = 1..K
  Matrix cov;                 // pooled Sigma
  Vector mean0;               // mu_0
  Matrix cov0;                // Sigma_0
  Matrix precision;           // regularized inverses
  Matrix precision0;
};

/// `features` is d x n, labels 1..K with at least two samples each.
ClassStats fit_class_stats(const Matrix& features, std::span<const int> labels);

struct MdScores {
  Vector md;   // -min_k MD_k
  Vector rmd;  // -min_k (MD_k - MD_0)
};
MdScores md_rmd_scores(const ClassStats& stats, const Matrix& features);

/// Adds 1e-6 tr(S)/d to the diagonal and inverts; throws ErrorCode::numeric
/// when the result is still singular.
Matrix regularized_inverse(const Matrix& cov);

}  // namespace rodeo::attack
