#include <cmath>
#include <filesystem>
#include <numeric>

#include "doctest.h"
#include "fixtures.hpp"
#include "rodeo/error.hpp"
#include "rodeo/random.hpp"

using namespace rodeo;
using namespace rodeo::diffusion;

TEST_SUITE("diffusion") {
  TEST_CASE("schedule invariants") {
    for (int T : {20, 200, 1000}) {
      const auto s = NoiseSchedule::scaled_linear(T);
      CHECK(s.T == T);
      for (int t = 0; t < T; ++t) {
        CHECK(s.beta[t] > 0.0);
        CHECK(s.beta[t] < 1.0);
        if (t) CHECK(s.alpha_bar[t] < s.alpha_bar[t - 1]);
      }
      CHECK(s.alpha_bar[T - 1] < 0.05);
    }
    CHECK_THROWS_AS(NoiseSchedule::from_betas({0.1, 1.2}), Error);
  }

  TEST_CASE("posterior variance definition") {
    const auto s = NoiseSchedule::scaled_linear(50);
    for (int t = 1; t < 50; ++t) {
      const double expect = s.beta[t] * (1 - s.alpha_bar[t - 1]) / (1 - s.alpha_bar[t]);
      CHECK(s.posterior_variance(t) == doctest::Approx(expect).epsilon(1e-14));
    }
  }

  TEST_CASE("forward noise limits") {
    const auto s = NoiseSchedule::from_betas({1e-9, 0.5, 0.99999});
    Rng rng = make_stream(1, 0);
    const Matrix x0 = uniform_matrix(rng, 16, 4, -1, 1);
    CHECK((forward_noise(s, x0, 0, 3) - x0).cwiseAbs().maxCoeff() < 1e-3);
    CHECK(forward_noise(s, x0, 1, 3) == forward_noise(s, x0, 1, 3));
    CHECK_THROWS_AS(forward_noise(s, x0, 3, 3), Error);

    const Matrix zero = Matrix::Zero(1, 10'000);
    const Matrix xt = forward_noise(s, zero + Matrix::Constant(1, 10'000, 0.7), 2, 4);
    const double mean = xt.mean();
    const double var = (xt.array() - mean).square().sum() / (xt.size() - 1);
    CHECK(var == doctest::Approx(1.0).epsilon(0.05));
  }

  TEST_CASE("true noise recovers x0 and the posterior mean") {
    const auto s = NoiseSchedule::scaled_linear(100);
    Rng rng = make_stream(2, 0);
    const Matrix x0 = uniform_matrix(rng, 10, 3, -1, 1);
    const Matrix z = normal_matrix(rng, 10, 3);
    for (int t : {1, 17, 60, 99}) {
      const Matrix xt = forward_noise_with(s, x0, t, z);
      CHECK((predict_x0(s, xt, t, z) - x0).cwiseAbs().maxCoeff() < 1e-6);
      const double ab = s.alpha_bar[t], ab1 = s.alpha_bar[t - 1], b = s.beta[t];
      const Matrix expect = (std::sqrt(ab1) * b / (1 - ab)) * x0 + (std::sqrt(1 - b) * (1 - ab1) / (1 - ab)) * xt;
      CHECK((posterior_mean(s, xt, t, z) - expect).cwiseAbs().maxCoeff() < 1e-9);
    }
  }

  TEST_CASE("time embedding") {
    const Vector e = time_embedding(7, 16);
    CHECK(e.size() == 16);
    CHECK(e.cwiseAbs().maxCoeff() <= 1.0);
    CHECK(time_embedding(7, 16) != time_embedding(8, 16));
    CHECK_THROWS_AS(time_embedding(1, 15), Error);
  }

  TEST_CASE("training reduces loss and is deterministic") {
    const auto& m = fixture::tiny_ddpm();
    CHECK(m.final_loss() <= 0.5 * m.initial_loss());
    CHECK(m.initial_loss() == doctest::Approx(1.0).epsilon(0.2));

    const auto& w = fixture::tiny_world();
    const auto s = NoiseSchedule::scaled_linear(50);
    const auto a = train_ddpm(w.images, w.shape, s, fixture::tiny_ddpm_config(20));
    const auto b = train_ddpm(w.images, w.shape, s, fixture::tiny_ddpm_config(20));
    CHECK(a.id() == b.id());
    CHECK_THROWS_AS(train_ddpm(w.images.leftCols(50), w.shape, s, fixture::tiny_ddpm_config(20)), Error);
  }

  TEST_CASE("reverse step") {
    const auto& m = fixture::tiny_ddpm();
    Rng rng = make_stream(3, 0);
    const Matrix xt = normal_matrix(rng, 64, 2);
    const int t = 20;
    const Matrix mu = posterior_mean(m.schedule(), xt, t, m.predict_noise(xt, t));
    CHECK(reverse_step_with_noise(m, xt, t, Matrix::Zero(64, 2)) == mu);
    const Matrix z = normal_matrix(rng, 64, 2);
    CHECK(reverse_step_with_noise(m, xt, 1, z) == posterior_mean(m.schedule(), xt, 1, m.predict_noise(xt, 1)));
    const Matrix step = reverse_step_with_noise(m, xt, t, z);
    CHECK((step - mu - std::sqrt(m.schedule().posterior_variance(t)) * z).cwiseAbs().maxCoeff() < 1e-12);
    CHECK_THROWS_AS(reverse_step(m, xt, 0, 1), Error);
    CHECK_THROWS_AS(reverse_step(m, xt, 50, 1), Error);
  }

  TEST_CASE("unguided samples stay in a sane range") {
    const Matrix x = sample(fixture::tiny_ddpm(), 16, 5);
    CHECK(x.allFinite());
    CHECK(x.cwiseAbs().maxCoeff() < 3.0);
  }

  TEST_CASE("guidance scale zero equals the plain step") {
    const auto& m = fixture::tiny_ddpm();
    const auto& e = fixture::tiny_embedder();
    Rng rng = make_stream(4, 0);
    const Matrix xt = normal_matrix(rng, 64, 3);
    GuidanceConfig g;
    g.s = 0.0;
    CHECK(guided_reverse_step(m, e, xt, 15, "a photo of ring", g, 77) == reverse_step(m, xt, 15, 77));
  }

  TEST_CASE("guided mean shift is s var g and linear in s") {
    const auto& m = fixture::tiny_ddpm();
    const auto& e = fixture::tiny_embedder();
    Rng rng = make_stream(5, 0);
    const Matrix xt = normal_matrix(rng, 64, 2);
    const std::vector<int> ts{12, 30};
    const Matrix text = e.encode_texts({"a photo of ring", "a photo of coin"});
    GuidanceConfig off, on, twice;
    off.s = 0.0;
    on.s = 3.0;
    twice.s = 6.0;
    const Matrix base = guided_mean(m, e, xt, ts, text, off);
    const Matrix shift = guided_mean(m, e, xt, ts, text, on) - base;
    const Matrix g = similarity_gradient(e, xt, text);
    for (int j = 0; j < 2; ++j) {
      const Vector expect = 3.0 * m.schedule().posterior_variance(ts[j]) * g.col(j);
      CHECK((shift.col(j) - expect).cwiseAbs().maxCoeff() < 1e-12);
    }
    const Matrix shift2 = guided_mean(m, e, xt, ts, text, twice) - base;
    CHECK((shift2 - 2.0 * shift).cwiseAbs().maxCoeff() < 1e-12);
    GuidanceConfig neg = on;
    neg.sign = -1;
    CHECK(((guided_mean(m, e, xt, ts, text, neg) - base) + shift).cwiseAbs().maxCoeff() < 1e-12);
  }

  TEST_CASE("guided step raises prompt similarity") {
    const auto& m = fixture::tiny_ddpm();
    const auto& e = fixture::tiny_embedder();
    const std::string prompt = "a photo of ring";
    const Vector text = e.embed_text(prompt);
    Rng rng = make_stream(6, 0);
    const Matrix xt = normal_matrix(rng, 64, 1) * 0.8;
    const int t = 25, n = 200;
    GuidanceConfig g;
    g.s = 5.0;
    GuidanceConfig none;
    none.s = 0.0;
    std::vector<double> diff;
    for (int i = 0; i < n; ++i) {
      const Matrix z = normal_matrix(rng, 64, 1);
      const Matrix a = guided_reverse_step_with_noise(m, e, xt, t, prompt, g, z);
      const Matrix b = guided_reverse_step_with_noise(m, e, xt, t, prompt, none, z);
      diff.push_back(e.similarity(a, text)[0] - e.similarity(b, text)[0]);
    }
    const double mean = std::accumulate(diff.begin(), diff.end(), 0.0) / n;
    double var = 0;
    for (double d : diff) var += (d - mean) * (d - mean);
    const double se = std::sqrt(var / (n - 1) / n);
    CHECK(mean > 3 * se);
  }

  TEST_CASE("t0 sampling") {
    const auto s = NoiseSchedule::scaled_linear(1000);
    GuidanceConfig g;
    CHECK(t0_range(s, g) == std::pair<int, int>{300, 600});
    GuidanceConfig point;
    point.t0_low_frac = 0.5;
    point.t0_high_frac = 0.5;
    CHECK(t0_range(s, point) == std::pair<int, int>{500, 500});
    CHECK(sample_t0(s, point, 3) == 500);

    const auto s50 = NoiseSchedule::scaled_linear(50);
    const auto [lo, hi] = t0_range(s50, g);
    std::vector<int> counts(static_cast<std::size_t>(hi - lo + 1), 0);
    Rng rng = make_stream(7, 0);
    const int n = 100'000;
    for (int i = 0; i < n; ++i) {
      const int t = sample_t0(s50, g, rng);
      REQUIRE(t >= lo);
      REQUIRE(t <= hi);
      ++counts[static_cast<std::size_t>(t - lo)];
    }
    const double expect = double(n) / counts.size();
    double chi2 = 0;
    for (int c : counts) chi2 += (c - expect) * (c - expect) / expect;
    // 15 degrees of freedom, 99.9th percentile
    CHECK(counts.size() == 16);
    CHECK(chi2 < 37.7);
  }

  TEST_CASE("checkpoint round trip") {
    const auto& m = fixture::tiny_ddpm();
    const auto path = std::filesystem::temp_directory_path() / "rodeo_test_ddpm.rarc";
    m.save(path);
    const auto back = DenoiserModel::load(path);
    CHECK(back.id() == m.id());
    Rng rng = make_stream(8, 0);
    const Matrix x = normal_matrix(rng, 64, 2);
    CHECK(back.predict_noise(x, 9) == m.predict_noise(x, 9));
    std::filesystem::remove(path);
  }
}
