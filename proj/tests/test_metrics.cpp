#include <cmath>

#include "doctest.h"
#include "oracles.hpp"
#include "rodeo/error.hpp"
#include "rodeo/metrics.hpp"
#include "rodeo/random.hpp"

using namespace rodeo;
using namespace rodeo::metrics;

namespace {

FeatureSet fs(Eigen::MatrixXd m) { return {std::move(m), "test"}; }

Eigen::MatrixXd col(std::initializer_list<double> xs) {
  Eigen::MatrixXd m(static_cast<Eigen::Index>(xs.size()), 1);
  Eigen::Index i = 0;
  for (double x : xs) m(i++, 0) = x;
  return m;
}

}  // namespace

TEST_SUITE("metrics") {
  TEST_CASE("fdc golden values") {
    CHECK(std::abs(fdc(145, 0.87, 0.64) - 3.674) <= 0.001);
    CHECK(std::abs(fdc(133, 0.75, 0.86) - 3.902) <= 0.001);
    CHECK(fdc(50, 0.0, 0.7) == 0.0);
    CHECK_THROWS_AS(fdc(0, 1, 1), Error);
  }

  TEST_CASE("fdc is monotone") {
    for (double f : {10.0, 50.0, 200.0}) {
      for (double d : {0.1, 0.5, 1.2}) {
        for (double c : {0.1, 0.5, 0.9}) {
          CHECK(fdc(f, d + 0.05, c) > fdc(f, d, c));
          CHECK(fdc(f, d, c + 0.05) > fdc(f, d, c));
          CHECK(fdc(f + 5, d, c) < fdc(f, d, c));
        }
      }
    }
  }

  TEST_CASE("frechet distance") {
    Rng rng = make_stream(2, 0);
    const auto a = fs(normal_matrix(rng, 200, 6));
    CHECK(frechet_distance(a, a) < 1e-6);

    Moments m0{Eigen::VectorXd::Zero(1), Eigen::MatrixXd::Identity(1, 1)};
    Moments m3{Eigen::VectorXd::Constant(1, 3.0), Eigen::MatrixXd::Identity(1, 1)};
    CHECK(frechet_distance(m0, m3) == doctest::Approx(9.0));
    Moments m4{Eigen::VectorXd::Zero(1), Eigen::MatrixXd::Constant(1, 1, 4.0)};
    CHECK(frechet_distance(m0, m4) == doctest::Approx(1.0));

    for (int trial = 0; trial < 5; ++trial) {
      const auto x = fs(normal_matrix(rng, 80, 4));
      auto ym = normal_matrix(rng, 90, 4);
      ym.col(0) *= 2.0;
      ym.array() += 0.3;
      const auto y = fs(ym);
      const double xy = frechet_distance(x, y), yx = frechet_distance(y, x);
      CHECK(xy == doctest::Approx(yx).epsilon(1e-9));
      CHECK(xy >= 0.0);
    }
  }

  TEST_CASE("density and coverage hand example") {
    const auto real = col({0, 1});
    const auto fake = col({0});
    CHECK(density(real, fake, 1) == 2.0);
    CHECK(coverage(real, fake, 1) == 1.0);
    CHECK(density(real, col({50}), 1) == 0.0);
    CHECK(coverage(real, col({50}), 1) == 0.0);
    CHECK_THROWS_AS(density(real, fake, 2), Error);
  }

  TEST_CASE("identical sets are fully covered") {
    Rng rng = make_stream(4, 0);
    const auto x = normal_matrix(rng, 30, 3);
    CHECK(coverage(x, x, 1) == 1.0);
  }

  TEST_CASE("density and coverage equal brute force") {
    Rng rng = make_stream(6, 0);
    for (int trial = 0; trial < 20; ++trial) {
      const int n = 6 + trial * 2, m = 1 + trial * 2;
      const int k = 1 + trial % 5;
      const auto real = normal_matrix(rng, n, 3);
      Eigen::MatrixXd fake = normal_matrix(rng, m, 3) * 1.3;
      // exact ties on the ball boundary
      if (m > 2) fake.row(0) = real.row(1);
      CHECK(density(real, fake, k) == oracle::density(real, fake, k));
      const double c = coverage(real, fake, k);
      CHECK(c == oracle::coverage(real, fake, k));
      CHECK(c >= 0.0);
      CHECK(c <= 1.0);
    }
  }

  TEST_CASE("evaluate packs a report") {
    Rng rng = make_stream(8, 0);
    const auto r = fs(normal_matrix(rng, 60, 3));
    const auto g = fs(normal_matrix(rng, 40, 3));
    const auto rep = evaluate(r, g, 5);
    CHECK(rep.n_real == 60);
    CHECK(rep.n_gen == 40);
    CHECK(rep.k == 5);
    CHECK(rep.fdc == doctest::Approx(fdc(rep.fid, rep.density, rep.coverage)));
  }
}
