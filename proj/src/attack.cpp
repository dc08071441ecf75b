#include "rodeo/attack.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "rodeo/error.hpp"
#include "rodeo/imaging.hpp"
#include "rodeo/random.hpp"

namespace rodeo::attack {

void AttackConfig::validate() const {
  require(epsilon >= 0.0 && std::isfinite(epsilon), ErrorCode::config, "attack epsilon must be non-negative");
  require(steps >= 1 && restarts >= 1, ErrorCode::config, "attack needs at least one step and one restart");
}

namespace {

Matrix signum(const Matrix& m) {
  return m.unaryExpr([](double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); });
}

}  // namespace

Matrix pgd_score_attack(const ScoreFn& score, const Matrix& x, std::span<const int> y, const AttackConfig& config) {
  config.validate();
  require(static_cast<std::size_t>(x.cols()) == y.size(), ErrorCode::invalid_input, "one direction per column");
  Vector dir(x.cols());
  for (std::size_t j = 0; j < y.size(); ++j) {
    require(y[j] == 1 || y[j] == -1, ErrorCode::invalid_input, "attack direction must be +1 or -1");
    dir[static_cast<Eigen::Index>(j)] = y[j];
  }
  if (config.epsilon == 0.0 || x.cols() == 0) return x;
  const double eps = config.epsilon, alpha = config.alpha();
  Matrix best = x;
  Vector best_val = Vector::Constant(x.cols(), -std::numeric_limits<double>::infinity());

  for (int r = 0; r < config.restarts; ++r) {
    Rng rng = make_stream(config.seed, 0xA77 + static_cast<std::uint64_t>(r));
    Matrix cur = project_linf_box(x + uniform_matrix(rng, x.rows(), x.cols(), -eps, eps), x, eps);
    for (int step = 0; step <= config.steps; ++step) {
      const bool last = step == config.steps;
      Matrix g;
      const Vector s = score(cur, last ? nullptr : &g);
      for (Eigen::Index j = 0; j < x.cols(); ++j) {
        const double v = dir[j] * s[j];
        if (v > best_val[j]) {
          best_val[j] = v;
          best.col(j) = cur.col(j);
        }
      }
      if (last) break;
      if (!g.allFinite()) fail(ErrorCode::numeric, "non-finite score gradient in attack");
      cur = project_linf_box(cur + alpha * (signum(g).array().rowwise() * dir.transpose().array()).matrix(), x, eps);
    }
  }
  return best;
}

double auroc(std::span<const double> in, std::span<const double> out) {
  require(!in.empty() && !out.empty(), ErrorCode::invalid_input, "auroc needs non-empty inputs");
  // Mann-Whitney U with mid-ranks.
  std::vector<std::pair<double, int>> all;
  all.reserve(in.size() + out.size());
  for (double v : in) all.emplace_back(v, 0);
  for (double v : out) all.emplace_back(v, 1);
  for (const auto& p : all) require(!std::isnan(p.first), ErrorCode::invalid_input, "NaN score");
  std::sort(all.begin(), all.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  double rank_sum = 0.0;
  std::size_t i = 0;
  while (i < all.size()) {
    std::size_t j = i;
    while (j < all.size() && all[j].first == all[i].first) ++j;
    const double mid = (static_cast<double>(i) + static_cast<double>(j - 1)) / 2.0 + 1.0;
    for (std::size_t k = i; k < j; ++k) {
      if (all[k].second == 1) rank_sum += mid;
    }
    i = j;
  }
  const auto n_out = static_cast<double>(out.size()), n_in = static_cast<double>(in.size());
  return (rank_sum - n_out * (n_out + 1.0) / 2.0) / (n_out * n_in);
}

EvalReport evaluate(const ScoreFn& score, const Matrix& inliers, const Matrix& outliers,
                    const std::optional<AttackConfig>& attack) {
  require(inliers.cols() > 0 && outliers.cols() > 0, ErrorCode::invalid_input, "empty test set");
  EvalReport r;
  r.clean_in = score(inliers, nullptr);
  r.clean_out = score(outliers, nullptr);
  r.clean_auroc = auroc(std::span<const double>(r.clean_in.data(), r.clean_in.size()),
                        std::span<const double>(r.clean_out.data(), r.clean_out.size()));
  if (!attack) {
    r.adv_in = r.clean_in;
    r.adv_out = r.clean_out;
    r.robust_auroc = r.clean_auroc;
    return r;
  }
  const std::vector<int> up(static_cast<std::size_t>(inliers.cols()), 1);
  const std::vector<int> down(static_cast<std::size_t>(outliers.cols()), -1);
  AttackConfig in_cfg = *attack, out_cfg = *attack;
  out_cfg.seed = derive_seed(attack->seed, 1);
  r.adv_in = score(pgd_score_attack(score, inliers, up, in_cfg), nullptr);
  r.adv_out = score(pgd_score_attack(score, outliers, down, out_cfg), nullptr);
  r.robust_auroc = auroc(std::span<const double>(r.adv_in.data(), r.adv_in.size()),
                         std::span<const double>(r.adv_out.data(), r.adv_out.size()));
  return r;
}

Matrix regularized_inverse(const Matrix& cov) {
  require(cov.rows() == cov.cols() && cov.rows() > 0, ErrorCode::invalid_input, "covariance must be square");
  Matrix c = 0.5 * (cov + cov.transpose());
  const double d = static_cast<double>(c.rows());
  double reg = 1e-6 * c.trace() / d;
  if (!(reg > 0.0)) reg = 1e-12;
  c.diagonal().array() += reg;
  Eigen::LDLT<Matrix> ldlt(c);
  if (ldlt.info() != Eigen::Success || !ldlt.isPositive() || ldlt.vectorD().minCoeff() <= 0.0) {
    fail(ErrorCode::numeric, "covariance is singular after regularization");
  }
  Matrix inv = ldlt.solve(Matrix::Identity(c.rows(), c.cols()));
  if (!inv.allFinite()) fail(ErrorCode::numeric, "covariance is singular after regularization");
  return inv;
}

ClassStats fit_class_stats(const Matrix& features, std::span<const int> labels) {
  require(static_cast<std::size_t>(features.cols()) == labels.size(), ErrorCode::invalid_input,
          "one label per feature column");
  require(features.allFinite(), ErrorCode::invalid_input, "non-finite features");
  const int k = labels.empty() ? 0 : *std::max_element(labels.begin(), labels.end());
  require(k >= 1, ErrorCode::invalid_input, "labels must be 1..K");
  const Eigen::Index d = features.rows();
  std::vector<int> count(static_cast<std::size_t>(k), 0);
  ClassStats s;
  s.means.assign(static_cast<std::size_t>(k), Vector::Zero(d));
  for (std::size_t i = 0; i < labels.size(); ++i) {
    require(labels[i] >= 1, ErrorCode::invalid_input, "labels must be 1..K");
    s.means[static_cast<std::size_t>(labels[i] - 1)] += features.col(static_cast<Eigen::Index>(i));
    ++count[static_cast<std::size_t>(labels[i] - 1)];
  }
  for (int c = 0; c < k; ++c) {
    require(count[static_cast<std::size_t>(c)] >= 2, ErrorCode::invalid_input,
            "class " + std::to_string(c + 1) + " needs at least two samples");
    s.means[static_cast<std::size_t>(c)] /= count[static_cast<std::size_t>(c)];
  }
  const auto n = static_cast<double>(labels.size());
  s.cov = Matrix::Zero(d, d);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const Vector r = features.col(static_cast<Eigen::Index>(i)) - s.means[static_cast<std::size_t>(labels[i] - 1)];
    s.cov.noalias() += r * r.transpose();
  }
  s.cov /= n;
  s.mean0 = features.rowwise().mean();
  const Matrix centered = features.colwise() - s.mean0;
  s.cov0 = centered * centered.transpose() / n;
  s.precision = regularized_inverse(s.cov);
  s.precision0 = regularized_inverse(s.cov0);
  return s;
}

MdScores md_rmd_scores(const ClassStats& s, const Matrix& features) {
  require(features.rows() == s.mean0.size(), ErrorCode::invalid_input, "feature dimension mismatch");
  MdScores out;
  out.md.resize(features.cols());
  out.rmd.resize(features.cols());
  for (Eigen::Index j = 0; j < features.cols(); ++j) {
    const Vector r0 = features.col(j) - s.mean0;
    const double md0 = r0.dot(s.precision0 * r0);
    double best_md = std::numeric_limits<double>::infinity(), best_rmd = best_md;
    for (const auto& mu : s.means) {
      const Vector r = features.col(j) - mu;
      const double md = r.dot(s.precision * r);
      best_md = std::min(best_md, md);
      best_rmd = std::min(best_rmd, md - md0);
    }
    out.md[j] = -best_md;
    out.rmd[j] = -best_rmd;
  }
  return out;
}

}  // namespace rodeo::attack
