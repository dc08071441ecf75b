#include <cmath>
#include <filesystem>
#include <map>

#include "doctest.h"
#include "fixtures.hpp"
#include "oracles.hpp"
#include "rodeo/detector.hpp"
#include "rodeo/error.hpp"
#include "rodeo/random.hpp"

using namespace rodeo;
using namespace rodeo::detect;

namespace {

const nn::Shape3 kShape{1, fixture::kSide, fixture::kSide};

data::Dataset two_class_inliers() { return fixture::tiny_world().select_classes({1, 2}, true); }

Matrix noise_exposures(int n, std::uint64_t seed) {
  return data::gaussian_noise_images(n, kShape, seed).images;
}

TrainConfig quick(int epochs, bool adversarial) {
  TrainConfig c;
  c.epochs = epochs;
  c.inner_steps = 3;
  c.batch = 32;
  c.adversarial = adversarial;
  c.lr = 3e-3;
  c.seed = 9;
  return c;
}

}  // namespace

TEST_SUITE("detector") {
  TEST_CASE("training set assembly") {
    const auto one = fixture::tiny_world().select_classes({3}, true);
    const auto small = one.subset({0, 1, 2, 3, 4, 5, 6, 7, 8, 9});
    const auto set = build_training_set(small, noise_exposures(10, 1), 5);
    CHECK(set.size() == 20);
    CHECK(set.k == 1);
    std::map<int, int> hist;
    for (int l : set.labels) ++hist[l];
    CHECK(hist == std::map<int, int>{{1, 10}, {2, 10}});
    CHECK_THROWS_AS(build_training_set(small, Matrix(64, 0), 5), Error);

    const auto two = two_class_inliers();
    const auto full = build_training_set(two, noise_exposures(30, 2), 6);
    std::map<int, int> h2;
    for (int l : full.labels) ++h2[l];
    CHECK(h2[1] == 120);
    CHECK(h2[2] == 120);
    CHECK(h2[3] == 30);
  }

  TEST_CASE("inner maximisation stays feasible") {
    const Detector det(kShape, 2, 3);
    const auto& w = fixture::tiny_world();
    const Matrix x = w.images.leftCols(6);
    const std::vector<int> y{1, 1, 2, 2, 3, 3};
    Rng rng = make_stream(1, 0);
    TrainConfig zero = quick(1, true);
    zero.epsilon = 0.0;
    CHECK(pgd_inner_max(det, x, y, zero, rng) == x);
    const TrainConfig c = quick(1, true);
    const Matrix adv = pgd_inner_max(det, x, y, c, rng);
    CHECK((adv - x).cwiseAbs().maxCoeff() <= c.epsilon + 1e-12);
    CHECK(adv.minCoeff() >= 0.0);
    CHECK(adv.maxCoeff() <= 1.0);
    CHECK(det.loss(adv, y) >= det.loss(x, y) - 1e-9);
  }

  TEST_CASE("zero epochs leave parameters untouched") {
    Detector det(kShape, 2, 3);
    const auto before = det.id();
    const auto set = build_training_set(two_class_inliers(), noise_exposures(40, 3), 1);
    CHECK(adversarial_train(det, set, quick(0, false)).epoch_loss.empty());
    auto bad = quick(1, false);
    bad.epochs = -1;
    CHECK_THROWS_AS(adversarial_train(det, set, bad), Error);
    CHECK(det.id() == before);
  }

  TEST_CASE("adversarial training lowers the loss and is deterministic") {
    const auto set = build_training_set(two_class_inliers(), noise_exposures(60, 4), 2);
    Detector a(kShape, 2, 3), b(kShape, 2, 3);
    const auto ra = adversarial_train(a, set, quick(6, true));
    adversarial_train(b, set, quick(6, true));
    REQUIRE(ra.epoch_loss.size() == 6);
    CHECK(ra.epoch_loss.back() <= 0.7 * ra.epoch_loss.front());
    CHECK(a.id() == b.id());
  }

  TEST_CASE("uniform logits score 0.5 with one class") {
    Detector det(kShape, 1, 3);
    for (auto& p : det.network().parameters()) p->setZero();
    const Vector s = det.score(fixture::tiny_world().images.leftCols(3));
    for (Eigen::Index i = 0; i < s.size(); ++i) CHECK(s[i] == doctest::Approx(0.5));
  }

  TEST_CASE("score gradient matches finite differences") {
    for (auto mode : {ScoreMode::softmax, ScoreMode::logit}) {
      const Detector det(kShape, 2, 5, {}, mode);
      Rng rng = make_stream(6, 0);
      const Matrix x = uniform_matrix(rng, kShape.size(), 1, 0.2, 0.8);
      Matrix grad;
      det.score(x, &grad);
      const Vector g = oracle::numeric_gradient([&](const Vector& v) { return det.score(Matrix(v))[0]; },
                                                Vector(x.col(0)));
      for (int probe = 0; probe < 10; ++probe) {
        const auto i = static_cast<Eigen::Index>(uniform_index(rng, static_cast<std::size_t>(x.rows())));
        CHECK(std::abs(grad(i, 0) - g[i]) < 1e-3 * std::max(1.0, std::abs(g[i])));
      }
    }
  }

  TEST_CASE("softmax score is shift invariant in the logits") {
    Detector det(kShape, 2, 7);
    const Matrix x = fixture::tiny_world().images.leftCols(4);
    const Vector before = det.score(x);
    // The final layer bias moves every logit together.
    auto params = det.network().parameters();
    params.back()->array() += 3.0;
    const Vector after = det.score(x);
    CHECK((after - before).cwiseAbs().maxCoeff() < 1e-12);
    CHECK(before.minCoeff() > 0.0);
    CHECK(before.maxCoeff() < 1.0);
  }

  TEST_CASE("save and load") {
    Detector det(kShape, 2, 8);
    const auto set = build_training_set(two_class_inliers(), noise_exposures(20, 5), 3);
    const auto cfg = quick(1, false);
    const auto rep = adversarial_train(det, set, cfg);
    const auto path = std::filesystem::temp_directory_path() / "rodeo_test_detector.rarc";
    save_detector(path, det, cfg, rep, {"disk", "ring"});
    const auto back = load_detector(path);
    CHECK(back.id() == det.id());
    const Matrix x = fixture::tiny_world().images.leftCols(5);
    CHECK(back.score(x) == det.score(x));
    CHECK(load_detector_labels(path) == std::vector<std::string>{"disk", "ring"});
    std::filesystem::remove(path);
  }

  TEST_CASE("score mode names") {
    CHECK(parse_score_mode(to_string(ScoreMode::logit)) == ScoreMode::logit);
    CHECK(parse_score_mode("softmax") == ScoreMode::softmax);
    CHECK_THROWS_AS(parse_score_mode("probit"), Error);
    CHECK(sign(Matrix::Constant(1, 1, 0.0))(0, 0) == 0.0);
  }
}
