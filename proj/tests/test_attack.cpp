#include <cmath>
#include <vector>

#include "doctest.h"
#include "oracles.hpp"
#include "rodeo/attack.hpp"
#include "rodeo/error.hpp"
#include "rodeo/random.hpp"

using namespace rodeo;
using namespace rodeo::attack;

namespace {

ScoreFn linear_score(Vector w) {
  return [w](const Matrix& x, Matrix* g) {
    if (g) *g = w.replicate(1, x.cols());
    return Vector(x.transpose() * w);
  };
}

// Smooth nonlinear score: sum of tanh of a random projection.
ScoreFn tanh_score(Matrix p) {
  return [p](const Matrix& x, Matrix* g) {
    const Matrix z = p * x;
    const Matrix t = z.array().tanh().matrix();
    if (g) *g = p.transpose() * (1.0 - t.array().square()).matrix();
    return Vector(t.colwise().sum().transpose());
  };
}

}  // namespace

TEST_SUITE("attack") {
  TEST_CASE("config alpha") {
    AttackConfig c;
    CHECK(c.alpha() * c.steps == doctest::Approx(2.5 * c.epsilon).epsilon(1e-15));
  }

  TEST_CASE("auroc basics") {
    const std::vector<double> in{0.1, 0.2}, out{0.8, 0.9};
    CHECK(auroc(in, out) == 1.0);
    CHECK(auroc(out, in) == 0.0);
    const std::vector<double> a{0.5}, b{0.5};
    CHECK(auroc(a, b) == 0.5);
    const std::vector<double> same{0.1, 0.4, 0.4, 0.9};
    CHECK(auroc(same, same) == 0.5);
    const std::vector<double> none;
    CHECK_THROWS_AS(auroc(none, in), Error);
  }

  TEST_CASE("auroc equals pairwise counting") {
    Rng rng = make_stream(1, 0);
    for (int trial = 0; trial < 30; ++trial) {
      const int n = 1 + static_cast<int>(uniform_index(rng, 200));
      const int m = 1 + static_cast<int>(uniform_index(rng, 200));
      std::vector<double> in(n), out(m);
      // coarse grid forces ties
      for (auto& v : in) v = std::round(uniform(rng, 0, 10));
      for (auto& v : out) v = std::round(uniform(rng, 2, 12));
      CHECK(auroc(in, out) == oracle::auroc(in, out));
      std::vector<double> nin(n), nout(m);
      for (int i = 0; i < n; ++i) nin[i] = -in[i];
      for (int i = 0; i < m; ++i) nout[i] = -out[i];
      CHECK(auroc(in, out) + auroc(out, in) == doctest::Approx(1.0).epsilon(1e-12));
      CHECK(auroc(nout, nin) == doctest::Approx(auroc(in, out)).epsilon(1e-12));
    }
  }

  TEST_CASE("linear score attack saturates the ball") {
    Vector w(3);
    w << 1.0, -2.0, 0.5;
    Matrix x(3, 1);
    x << 0.5, 0.5, 0.99;
    AttackConfig c;
    c.epsilon = 0.05;
    c.steps = 20;
    c.restarts = 1;
    const std::vector<int> up{+1};
    const Matrix adv = pgd_score_attack(linear_score(w), x, up, c);
    CHECK(adv(0, 0) == doctest::Approx(0.55));
    CHECK(adv(1, 0) == doctest::Approx(0.45));
    CHECK(adv(2, 0) == doctest::Approx(1.0));
    const std::vector<int> down{-1};
    const Matrix adv2 = pgd_score_attack(linear_score(w), x, down, c);
    CHECK(adv2(0, 0) == doctest::Approx(0.45));
    CHECK(adv2(1, 0) == doctest::Approx(0.55));
  }

  TEST_CASE("zero budget leaves inputs unchanged") {
    Rng rng = make_stream(2, 0);
    const Matrix x = uniform_matrix(rng, 5, 4, 0, 1);
    AttackConfig c;
    c.epsilon = 0.0;
    c.steps = 5;
    c.restarts = 2;
    const std::vector<int> y{1, -1, 1, -1};
    CHECK(pgd_score_attack(linear_score(Vector::Ones(5)), x, y, c) == x);
  }

  TEST_CASE("zero gradient keeps the random start inside the ball") {
    Rng rng = make_stream(3, 0);
    const Matrix x = uniform_matrix(rng, 6, 3, 0.2, 0.8);
    AttackConfig c;
    c.epsilon = 0.03;
    c.steps = 10;
    c.restarts = 2;
    const std::vector<int> y{1, 1, -1};
    const Matrix adv = pgd_score_attack(linear_score(Vector::Zero(6)), x, y, c);
    CHECK((adv - x).cwiseAbs().maxCoeff() < c.epsilon);
  }

  TEST_CASE("attack stays feasible and hurts") {
    Rng rng = make_stream(4, 0);
    const Matrix p = normal_matrix(rng, 4, 16);
    const auto score = tanh_score(p);
    const Matrix in = uniform_matrix(rng, 16, 40, 0, 1);
    const Matrix out = uniform_matrix(rng, 16, 40, 0, 1);
    AttackConfig c;
    c.epsilon = 8.0 / 255.0;
    c.steps = 20;
    c.restarts = 2;
    const std::vector<int> up(40, 1);
    const Matrix adv = pgd_score_attack(score, in, up, c);
    CHECK((adv - in).cwiseAbs().maxCoeff() <= c.epsilon + 1e-7);
    CHECK(adv.minCoeff() >= 0.0);
    CHECK(adv.maxCoeff() <= 1.0);
    CHECK((score(adv, nullptr) - score(in, nullptr)).minCoeff() >= -1e-12);

    const auto rep = evaluate(score, in, out, c);
    CHECK(rep.robust_auroc <= rep.clean_auroc + 0.02);
    AttackConfig zero = c;
    zero.epsilon = 0.0;
    const auto same = evaluate(score, in, out, zero);
    CHECK(same.robust_auroc == same.clean_auroc);
    const auto none = evaluate(score, in, out, std::nullopt);
    CHECK(none.robust_auroc == none.clean_auroc);

    AttackConfig longer = c;
    longer.steps = 200;
    AttackConfig shorter = c;
    shorter.steps = 20;
    CHECK(evaluate(score, in, out, longer).robust_auroc <= evaluate(score, in, out, shorter).robust_auroc + 0.03);
  }

  TEST_CASE("mahalanobis hand example") {
    Matrix f(2, 6);
    f << -1, 1, 0, 3, 5, 4,  //
        0, 0, 0, 0, 0, 0;
    const std::vector<int> lab{1, 1, 1, 2, 2, 2};
    auto stats = fit_class_stats(f, lab);
    CHECK(stats.means[0].isApprox(Vector::Zero(2)));
    CHECK(stats.means[1][0] == doctest::Approx(4.0));
    // force the hand-example geometry: identity covariance
    stats.precision = Matrix::Identity(2, 2);
    Matrix z(2, 2);
    z << 10, 0, 0, 0;
    const auto s = md_rmd_scores(stats, z);
    CHECK(s.md[0] == doctest::Approx(-36.0));
    CHECK(s.md[1] == doctest::Approx(0.0));
  }

  TEST_CASE("regularized inverse") {
    Matrix s = Matrix::Zero(3, 3);
    s(0, 0) = 1.0;
    const Matrix inv = regularized_inverse(s);
    CHECK(inv.allFinite());
    CHECK(inv(1, 1) > 1e5);
  }

  TEST_CASE("md separates a far cluster") {
    Rng rng = make_stream(5, 0);
    const int n = 500;
    Matrix f(2, 2 * n);
    std::vector<int> lab;
    for (int i = 0; i < n; ++i) {
      f.col(i) = normal_vector(rng, 2);
      f.col(n + i) = normal_vector(rng, 2) + Vector::Constant(2, 6.0);
      lab.push_back(1);
    }
    for (int i = 0; i < n; ++i) lab.push_back(2);
    const auto stats = fit_class_stats(f, lab);
    Matrix test_in(2, n), test_out(2, n);
    for (int i = 0; i < n; ++i) {
      test_in.col(i) = normal_vector(rng, 2);
      test_out.col(i) = normal_vector(rng, 2) + Vector(Eigen::Vector2d(-8, 10));
    }
    const auto si = md_rmd_scores(stats, test_in), so = md_rmd_scores(stats, test_out);
    std::vector<double> a(n), b(n);
    for (int i = 0; i < n; ++i) {
      a[i] = -si.md[i];
      b[i] = -so.md[i];
    }
    CHECK(auroc(a, b) >= 0.95);
  }
}
