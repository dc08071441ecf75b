#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <variant>
#include <vector>

#include <Eigen/Dense>

namespace rodeo::theory {

using Vector = Eigen::VectorXd;

/// Inliers ~ N(0, sigma^2 I), test outliers ~ N(a, sigma^2 I), exposure
/// ~ N(a_prime, sigma^2 I); the adversary has an l2 budget epsilon.
struct GaussianSetup {
  Vector a;
  Vector a_prime;
  double sigma = 1.0;
  double epsilon = 0.0;

  void validate() const;
  int dim() const { return static_cast<int>(a.size()); }
  /// Angle between a and a_prime in [0, pi].
  double theta() const;
  /// ||a'|| - ||a|| cos(theta)
  double c() const;
};

/// f(x) = w.x - b; positive means "outlier". f(x) == 0 counts as inlier.
struct LinearThresholdClassifier {
  Vector w;
  double b = 0.0;

  double decision(const Eigen::Ref<const Vector>& x) const { return w.dot(x) - b; }
  bool is_outlier(const Eigen::Ref<const Vector>& x) const { return decision(x) > 0.0; }
};

/// Predicts outlier iff ||x|| > radius.
struct SphereClassifier {
  double radius = 1.0;

  bool is_outlier(const Eigen::Ref<const Vector>& x) const { return x.norm() > radius; }
};

using Classifier = std::variant<LinearThresholdClassifier, SphereClassifier>;

/// Closed-form entries carry n_samples == 0 and std_error == 0.
struct RiskEstimate {
  double value = 0.0;
  double std_error = 0.0;
  std::int64_t n_samples = 0;
  std::uint64_t seed = 0;
};

double normal_cdf(double x);
/// 1 - Phi(x), accurate in the upper tail.
double normal_sf(double x);

LinearThresholdClassifier optimal_robust_classifier(const Vector& a_prime);

/// Sum of the two per-class tail errors of the optimal robust classifier
/// (no 1/2 prior weight). Requires sigma == 1 and ||a'|| >= ||a|| > 0.
double adversarial_error_closed_form(const GaussianSetup& setup);
/// Half of adversarial_error_closed_form: the equal-prior error rate.
double balanced_adversarial_error(const GaussianSetup& setup);

/// Monte-Carlo estimate of the same error sum for any linear classifier, with
/// each sample moved epsilon along -/+ w toward the wrong side.
RiskEstimate mc_adversarial_error(const GaussianSetup& setup, const LinearThresholdClassifier& classifier,
                                  std::int64_t n_samples, std::uint64_t seed);

struct ScanPoint {
  double a_prime_norm = 0.0;
  double error = 0.0;
};

/// Closed-form error along a grid of ||a'|| at fixed a, theta, eps. Grids that
/// leave the region where the error is provably increasing are rejected with
/// ErrorCode::precondition.
std::vector<ScanPoint> theorem1_monotonicity_scan(const Vector& a, double theta, double eps,
                                                  std::span<const double> a_prime_norm_grid);

/// Vector of norm `norm` at angle `theta` from `a` (in the plane of a and the
/// first coordinate axis not parallel to it).
Vector rotate_toward(const Vector& a, double theta, double norm);

/// Sup over outlier means on the sphere of radius alpha of the balanced
/// (equal-prior) clean error. Candidates: n_directions uniform directions,
/// plus -alpha * w for linear classifiers.
RiskEstimate worst_case_risk(const Classifier& classifier, double alpha, double sigma, int n_directions,
                             std::int64_t n_samples, std::uint64_t seed, int dim = 2);

/// n x d samples of the hypersphere-mixture exposure distribution.
Eigen::MatrixXd mixture_oe_sample(double alpha, double sigma, int n, int d, std::uint64_t seed);

struct SweepGrid {
  int dim = 2;
  std::vector<double> a_norms{1, 2, 4};
  std::vector<double> ratios{1, 1.5, 2};
  std::vector<double> thetas{0.0, 0.5235987755982988, 1.0471975511965976};
  std::vector<double> epsilons{0, 0.1, 0.2, 0.3};
  std::int64_t n_samples = 1'000'000;
  std::uint64_t seed = 0;
};

struct SweepRow {
  int dim = 0;
  double a_norm = 0, a_prime_norm = 0, theta = 0, eps = 0;
  double closed_form = 0, mc_mean = 0, mc_stderr = 0;
  std::int64_t n_samples = 0;
  std::uint64_t seed = 0;
};

std::vector<SweepRow> closed_form_vs_mc_sweep(const SweepGrid& grid);
void write_sweep_csv(std::ostream& out, std::span<const SweepRow> rows);

}  // namespace rodeo::theory
