#pragma once

#include <string>

#include <Eigen/Dense>

namespace rodeo::metrics {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// n x d_f features, one sample per row.
struct FeatureSet {
  Matrix features;
  std::string extractor_id;

  void validate() const;
};

struct Moments {
  Vector mean;
  Matrix cov;  // unbiased (n - 1)
};

Moments moments(const FeatureSet& f);

/// |mu_a - mu_b|^2 + Tr(S_a + S_b - 2 (S_a S_b)^(1/2)), with the square root
/// taken as S_a^(1/2) S_b S_a^(1/2) through symmetric eigendecompositions.
double frechet_distance(const Moments& a, const Moments& b);
double frechet_distance(const FeatureSet& a, const FeatureSet& b);

/// Distance from each real sample to its k-th nearest real neighbour
/// (itself excluded).
Vector knn_radii(const Matrix& real, int k);

/// Balls are inclusive. `real` is X_s (N rows), `fake` is X_t (M rows).
double density(const Matrix& real, const Matrix& fake, int k);
double coverage(const Matrix& real, const Matrix& fake, int k);

/// ln(1 + density * coverage / fid * 1e4).
double fdc(double fid, double density, double coverage);

struct MetricsReport {
  double fid = 0.0;
  double density = 0.0;
  double coverage = 0.0;
  double fdc = 0.0;
  int k = 5;
  int n_real = 0;
  int n_gen = 0;
};

MetricsReport evaluate(const FeatureSet& real, const FeatureSet& gen, int k = 5);

}  // namespace rodeo::metrics
