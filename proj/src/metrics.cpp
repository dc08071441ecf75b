#include "rodeo/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "rodeo/error.hpp"

namespace rodeo::metrics {

void FeatureSet::validate() const {
  require(features.rows() >= 2, ErrorCode::invalid_input, "feature set needs at least two samples");
  require(features.allFinite(), ErrorCode::invalid_input, "non-finite feature");
}

Moments moments(const FeatureSet& f) {
  f.validate();
  Moments m;
  m.mean = f.features.colwise().mean().transpose();
  const Matrix c = f.features.rowwise() - m.mean.transpose();
  m.cov = c.transpose() * c / static_cast<double>(f.features.rows() - 1);
  return m;
}

namespace {

Matrix sqrt_psd(const Matrix& s) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(0.5 * (s + s.transpose()));
  if (es.info() != Eigen::Success) fail(ErrorCode::numeric, "eigendecomposition did not converge");
  Vector ev = es.eigenvalues();
  for (Eigen::Index i = 0; i < ev.size(); ++i) {
    if (ev[i] < -1e-8 * std::max(1.0, ev.cwiseAbs().maxCoeff())) {
      fail(ErrorCode::numeric, "covariance has a significantly negative eigenvalue");
    }
    ev[i] = std::sqrt(std::max(ev[i], 0.0));
  }
  return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

Matrix distances(const Matrix& a, const Matrix& b) {
  Matrix d(a.rows(), b.rows());
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    d.row(i) = (b.rowwise() - a.row(i)).rowwise().norm().transpose();
  }
  return d;
}

void check_sets(const Matrix& real, const Matrix& fake, int k) {
  require(k >= 1, ErrorCode::invalid_input, "k must be at least 1");
  require(real.rows() > k, ErrorCode::invalid_input, "need more than k real samples");
  require(fake.rows() >= 1, ErrorCode::invalid_input, "need at least one generated sample");
  require(real.cols() == fake.cols(), ErrorCode::invalid_input, "feature dimension mismatch");
}

}  // namespace

double frechet_distance(const Moments& a, const Moments& b) {
  require(a.mean.size() == b.mean.size() && a.cov.rows() == a.mean.size() && b.cov.rows() == b.mean.size(),
          ErrorCode::invalid_input, "moment dimensions differ");
  const Matrix ra = sqrt_psd(a.cov);
  const Matrix inner = sqrt_psd(ra * b.cov * ra);
  const double d = (a.mean - b.mean).squaredNorm() + a.cov.trace() + b.cov.trace() - 2.0 * inner.trace();
  return std::max(d, 0.0);
}

double frechet_distance(const FeatureSet& a, const FeatureSet& b) {
  require(a.features.cols() == b.features.cols(), ErrorCode::invalid_input, "feature dimension mismatch");
  return frechet_distance(moments(a), moments(b));
}

Vector knn_radii(const Matrix& real, int k) {
  require(k >= 1 && real.rows() > k, ErrorCode::invalid_input, "need more than k real samples");
  const Matrix d = distances(real, real);
  Vector r(real.rows());
  std::vector<double> row;
  for (Eigen::Index i = 0; i < d.rows(); ++i) {
    row.clear();
    for (Eigen::Index j = 0; j < d.cols(); ++j) {
      if (j != i) row.push_back(d(i, j));
    }
    std::nth_element(row.begin(), row.begin() + (k - 1), row.end());
    r[i] = row[static_cast<std::size_t>(k - 1)];
  }
  return r;
}

double density(const Matrix& real, const Matrix& fake, int k) {
  check_sets(real, fake, k);
  const Vector r = knn_radii(real, k);
  const Matrix d = distances(real, fake);
  long hits = 0;
  for (Eigen::Index i = 0; i < d.rows(); ++i) {
    for (Eigen::Index j = 0; j < d.cols(); ++j) hits += d(i, j) <= r[i];
  }
  return static_cast<double>(hits) / (static_cast<double>(k) * static_cast<double>(fake.rows()));
}

double coverage(const Matrix& real, const Matrix& fake, int k) {
  check_sets(real, fake, k);
  const Vector r = knn_radii(real, k);
  const Matrix d = distances(real, fake);
  long covered = 0;
  for (Eigen::Index i = 0; i < d.rows(); ++i) {
    for (Eigen::Index j = 0; j < d.cols(); ++j) {
      if (d(i, j) <= r[i]) {
        ++covered;
        break;
      }
    }
  }
  return static_cast<double>(covered) / static_cast<double>(real.rows());
}

double fdc(double fid, double density, double coverage) {
  require(std::isfinite(fid) && fid >= 0.0, ErrorCode::invalid_input, "fid must be non-negative");
  if (fid == 0.0) fail(ErrorCode::degenerate, "fid is zero (identical feature sets); FDC undefined");
  require(density >= 0.0 && coverage >= 0.0, ErrorCode::invalid_input, "density and coverage must be non-negative");
  return std::log(1.0 + density * coverage / fid * 1e4);
}

MetricsReport evaluate(const FeatureSet& real, const FeatureSet& gen, int k) {
  MetricsReport r;
  r.k = k;
  r.n_real = static_cast<int>(real.features.rows());
  r.n_gen = static_cast<int>(gen.features.rows());
  r.fid = frechet_distance(real, gen);
  r.density = density(real.features, gen.features, k);
  r.coverage = coverage(real.features, gen.features, k);
  r.fdc = fdc(r.fid, r.density, r.coverage);
  return r;
}

}  // namespace rodeo::metrics
