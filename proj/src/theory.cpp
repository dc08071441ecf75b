#include "rodeo/theory.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <ostream>
#include <sstream>

#include "rodeo/error.hpp"
#include "rodeo/random.hpp"

namespace rodeo::theory {

namespace {

constexpr std::int64_t kShard = 1 << 16;

double binomial_var(double p, double n) { return p * (1.0 - p) / n; }

}  // namespace

void GaussianSetup::validate() const {
  require(a.size() >= 1, ErrorCode::invalid_input, "dimension must be at least 1");
  require(a.size() == a_prime.size(), ErrorCode::invalid_input, "a and a_prime differ in dimension");
  require(sigma > 0.0, ErrorCode::invalid_input, "sigma must be positive");
  require(epsilon >= 0.0, ErrorCode::invalid_input, "epsilon must be non-negative");
  require(a.allFinite() && a_prime.allFinite(), ErrorCode::invalid_input, "non-finite mean");
}

double GaussianSetup::theta() const {
  const double na = a.norm(), np = a_prime.norm();
  if (na == 0.0 || np == 0.0) return 0.0;
  return std::acos(std::clamp(a.dot(a_prime) / (na * np), -1.0, 1.0));
}

double GaussianSetup::c() const { return a_prime.norm() - a.norm() * std::cos(theta()); }

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }
double normal_sf(double x) { return 0.5 * std::erfc(x / std::numbers::sqrt2); }

LinearThresholdClassifier optimal_robust_classifier(const Vector& a_prime) {
  const double n = a_prime.norm();
  require(n > 0.0 && std::isfinite(n), ErrorCode::invalid_input, "a_prime must have positive finite norm");
  return {a_prime / n, n / 2.0};
}

double adversarial_error_closed_form(const GaussianSetup& setup) {
  setup.validate();
  require(setup.sigma == 1.0, ErrorCode::precondition, "closed form assumes sigma == 1");
  const double na = setup.a.norm(), np = setup.a_prime.norm();
  require(na > 0.0, ErrorCode::precondition, "||a|| must be positive");
  require(np >= na, ErrorCode::precondition, "closed form assumes ||a'|| >= ||a||");
  const double half = np / 2.0;
  return normal_sf(half - setup.epsilon) + normal_sf(half - setup.c() - setup.epsilon);
}

double balanced_adversarial_error(const GaussianSetup& setup) { return 0.5 * adversarial_error_closed_form(setup); }

RiskEstimate mc_adversarial_error(const GaussianSetup& setup, const LinearThresholdClassifier& classifier,
                                  std::int64_t n_samples, std::uint64_t seed) {
  setup.validate();
  require(n_samples >= 1000, ErrorCode::invalid_input, "need at least 1000 samples");
  require(classifier.w.size() == setup.a.size(), ErrorCode::invalid_input, "classifier dimension mismatch");
  const int d = setup.dim();
  const double eps = setup.epsilon, sigma = setup.sigma;
  // Only the projection onto w decides the outcome, but the full d-dim draw
  // keeps this estimator independent of the closed-form derivation.
  std::int64_t inlier_errors = 0, outlier_errors = 0;
  // f(x + eps*w) = w.x + eps*||w||^2 - b, evaluated without temporaries.
  const double shift = eps * classifier.w.squaredNorm();
  Vector x(d);
  for (std::int64_t start = 0, shard = 0; start < n_samples; start += kShard, ++shard) {
    const std::int64_t count = std::min(kShard, n_samples - start);
    Rng rng = make_stream(seed, static_cast<std::uint64_t>(shard));
    std::normal_distribution<double> normal(0.0, 1.0);
    for (std::int64_t i = 0; i < count; ++i) {
      for (int k = 0; k < d; ++k) x[k] = sigma * normal(rng);
      if (classifier.decision(x) + shift > 0.0) ++inlier_errors;
      for (int k = 0; k < d; ++k) x[k] = setup.a[k] + sigma * normal(rng);
      if (classifier.decision(x) - shift <= 0.0) ++outlier_errors;
    }
  }
  const double n = static_cast<double>(n_samples);
  const double p_in = inlier_errors / n, p_out = outlier_errors / n;
  return {p_in + p_out, std::sqrt(binomial_var(p_in, n) + binomial_var(p_out, n)), n_samples, seed};
}

Vector rotate_toward(const Vector& a, double theta, double norm) {
  const double na = a.norm();
  require(na > 0.0, ErrorCode::invalid_input, "reference vector must be nonzero");
  require(a.size() >= 2 || std::sin(theta) == 0.0, ErrorCode::invalid_input, "rotation needs d >= 2");
  const Vector u = a / na;
  if (a.size() < 2) return u * norm * std::cos(theta);
  Vector v = Vector::Zero(a.size());
  for (Eigen::Index k = 0; k < a.size(); ++k) {
    v.setZero();
    v[k] = 1.0;
    v -= v.dot(u) * u;
    if (v.norm() > 1e-6) break;
  }
  v.normalize();
  return norm * (std::cos(theta) * u + std::sin(theta) * v);
}

std::vector<ScanPoint> theorem1_monotonicity_scan(const Vector& a, double theta, double eps,
                                                  std::span<const double> grid) {
  const double na = a.norm();
  require(na > 0.0, ErrorCode::invalid_input, "||a|| must be positive");
  require(eps >= 0.0, ErrorCode::invalid_input, "eps must be non-negative");
  require(!grid.empty(), ErrorCode::invalid_input, "empty ||a'|| grid");
  const double projection = na * std::cos(theta);
  // d(error)/d||a'|| > 0  <=>  2 eps < ||a|| cos(theta) < ||a'||.
  if (!(2.0 * eps < projection - 1e-12)) {
    std::ostringstream os;
    os << "2*eps < ||a||cos(theta) fails (eps=" << eps << ", ||a||cos(theta)=" << projection << ")";
    fail(ErrorCode::precondition, os.str());
  }
  std::vector<ScanPoint> out;
  for (double np : grid) {
    if (!(np >= na)) {
      std::ostringstream os;
      os << "||a'|| >= ||a|| fails (||a'||=" << np << ", ||a||=" << na << ")";
      fail(ErrorCode::precondition, os.str());
    }
    GaussianSetup s{a, rotate_toward(a, theta, np), 1.0, eps};
    out.push_back({np, adversarial_error_closed_form(s)});
  }
  return out;
}

RiskEstimate worst_case_risk(const Classifier& classifier, double alpha, double sigma, int n_directions,
                             std::int64_t n_samples, std::uint64_t seed, int dim) {
  require(alpha > 0.0, ErrorCode::invalid_input, "alpha must be positive");
  require(sigma >= 0.0, ErrorCode::invalid_input, "sigma must be non-negative");
  require(n_samples >= 1 && n_directions >= 0, ErrorCode::invalid_input, "bad sample counts");
  if (const auto* lin = std::get_if<LinearThresholdClassifier>(&classifier)) dim = static_cast<int>(lin->w.size());
  require(dim >= 1, ErrorCode::invalid_input, "dimension must be positive");

  auto outlier_call = [&](const Vector& x) {
    return std::visit([&](const auto& f) { return f.is_outlier(x); }, classifier);
  };

  std::vector<Vector> candidates;
  if (const auto* lin = std::get_if<LinearThresholdClassifier>(&classifier)) candidates.push_back(-alpha * lin->w);
  {
    Rng rng = make_stream(seed, 0);
    for (int i = 0; i < n_directions; ++i) {
      Vector u = normal_vector(rng, dim);
      candidates.push_back(alpha * u / u.norm());
    }
  }
  require(!candidates.empty(), ErrorCode::invalid_input, "no candidate directions");

  const double n = static_cast<double>(n_samples);
  std::int64_t inlier_errors = 0;
  {
    Rng rng = make_stream(seed, 1);
    for (std::int64_t i = 0; i < n_samples; ++i) {
      if (outlier_call(sigma * normal_vector(rng, dim))) ++inlier_errors;
    }
  }
  const double p_in = inlier_errors / n;

  RiskEstimate best{-1.0, 0.0, n_samples, seed};
  for (std::size_t c = 0; c < candidates.size(); ++c) {
    Rng rng = make_stream(seed, 2 + c);
    std::int64_t outlier_errors = 0;
    for (std::int64_t i = 0; i < n_samples; ++i) {
      if (!outlier_call(candidates[c] + sigma * normal_vector(rng, dim))) ++outlier_errors;
    }
    const double p_out = outlier_errors / n;
    const double risk = 0.5 * (p_in + p_out);
    if (risk > best.value) {
      best.value = risk;
      best.std_error = 0.5 * std::sqrt(binomial_var(p_in, n) + binomial_var(p_out, n));
    }
  }
  return best;
}

Eigen::MatrixXd mixture_oe_sample(double alpha, double sigma, int n, int d, std::uint64_t seed) {
  require(n >= 1, ErrorCode::invalid_input, "n must be at least 1");
  require(d >= 2, ErrorCode::invalid_input, "d must be at least 2");
  require(alpha >= 0.0 && sigma >= 0.0, ErrorCode::invalid_input, "alpha and sigma must be non-negative");
  Eigen::MatrixXd out(n, d);
  for (int start = 0, shard = 0; start < n; start += static_cast<int>(kShard), ++shard) {
    Rng rng = make_stream(seed, static_cast<std::uint64_t>(shard));
    const int count = std::min(static_cast<int>(kShard), n - start);
    for (int i = 0; i < count; ++i) {
      Vector center = normal_vector(rng, d);
      center *= alpha / center.norm();
      out.row(start + i) = (center + sigma * normal_vector(rng, d)).transpose();
    }
  }
  return out;
}

std::vector<SweepRow> closed_form_vs_mc_sweep(const SweepGrid& grid) {
  require(grid.dim >= 2, ErrorCode::invalid_input, "sweep needs d >= 2");
  std::vector<SweepRow> rows;
  std::uint64_t index = 0;
  for (double na : grid.a_norms) {
    for (double ratio : grid.ratios) {
      for (double theta : grid.thetas) {
        for (double eps : grid.epsilons) {
          Vector a = Vector::Zero(grid.dim);
          a[0] = na;
          GaussianSetup s{a, rotate_toward(a, theta, na * ratio), 1.0, eps};
          const auto clf = optimal_robust_classifier(s.a_prime);
          const std::uint64_t seed = derive_seed(grid.seed, index++);
          const auto mc = mc_adversarial_error(s, clf, grid.n_samples, seed);
          rows.push_back({grid.dim, na, na * ratio, theta, eps, adversarial_error_closed_form(s), mc.value,
                          mc.std_error, grid.n_samples, seed});
        }
      }
    }
  }
  return rows;
}

void write_sweep_csv(std::ostream& out, std::span<const SweepRow> rows) {
  out << "d,a_norm,a_prime_norm,theta,eps,closed_form,mc_mean,mc_stderr,n_samples,seed\n";
  out.precision(10);
  for (const auto& r : rows) {
    out << r.dim << ',' << r.a_norm << ',' << r.a_prime_norm << ',' << r.theta << ',' << r.eps << ','
        << r.closed_form << ',' << r.mc_mean << ',' << r.mc_stderr << ',' << r.n_samples << ',' << r.seed << '\n';
  }
}

}  // namespace rodeo::theory
