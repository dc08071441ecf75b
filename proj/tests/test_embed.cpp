#include <cmath>
#include <filesystem>

#include "doctest.h"
#include "fixtures.hpp"
#include "oracles.hpp"
#include "rodeo/error.hpp"
#include "rodeo/labels.hpp"
#include "rodeo/random.hpp"

using namespace rodeo;
using namespace rodeo::embed;

namespace {

Vector v2(double x, double y) {
  Vector v(2);
  v << x, y;
  return v;
}

JointEmbedder untrained(std::uint64_t seed) {
  EmbedderConfig c;
  c.d_e = 16;
  c.image_hidden = 32;
  c.seed = seed;
  std::vector<std::string> vocab{"a photo of disk", "a photo of ring", "others"};
  return JointEmbedder({1, 8, 8}, Tokenizer(vocab), c);
}

// Mean matched and mismatched similarity over a dataset.
std::pair<double, double> pair_gap(const JointEmbedder& e, const data::Dataset& d) {
  std::vector<std::string> caps;
  for (const auto& n : d.label_names) caps.push_back(labels::caption_for(n));
  const Matrix img = e.encode_images(to_model_space(d.images));
  const Matrix txt = e.encode_texts(caps);
  double match = 0, mis = 0;
  int nm = 0, nn = 0;
  for (int i = 0; i < d.size(); ++i) {
    for (int c = 0; c < d.num_classes(); ++c) {
      const double s = cosine_similarity(img.col(i), txt.col(c));
      if (c + 1 == d.labels[static_cast<std::size_t>(i)]) {
        match += s;
        ++nm;
      } else {
        mis += s;
        ++nn;
      }
    }
  }
  return {match / nm, mis / nn};
}

}  // namespace

TEST_SUITE("embed") {
  TEST_CASE("cosine similarity") {
    CHECK(cosine_similarity(v2(1, 0), v2(0, 1)) == 0.0);
    CHECK(cosine_similarity(v2(2, 0), v2(1, 0)) == 1.0);
    CHECK(cosine_similarity(v2(1, 1), v2(1, 0)) == doctest::Approx(1 / std::sqrt(2.0)));
    CHECK_THROWS_AS(cosine_similarity(v2(0, 0), v2(1, 0)), Error);
    Rng rng = make_stream(1, 0);
    for (int i = 0; i < 20; ++i) {
      const Vector x = normal_vector(rng, 5), y = normal_vector(rng, 5);
      CHECK(cosine_similarity(x, 3.7 * x) == doctest::Approx(1.0));
      CHECK(cosine_similarity(x, -y) == doctest::Approx(-cosine_similarity(x, y)));
    }
  }

  TEST_CASE("tokenizer") {
    const Tokenizer t({"A photo of Disk!", "others"});
    const auto ids = t.encode("a photo of disk zebra");
    REQUIRE(ids.size() == 5);
    CHECK(ids[4] == Tokenizer::kUnk);
    CHECK(ids[3] != Tokenizer::kUnk);
  }

  TEST_CASE("encoder sizes stay small") {
    const auto e = untrained(1);
    CHECK(e.image_parameter_count() <= 100'000);
    CHECK(e.text_parameter_count() <= 50'000);
    EmbedderConfig big;
    const JointEmbedder d({1, 16, 16}, Tokenizer({"a photo of disk"}), big);
    CHECK(d.image_parameter_count() <= 100'000);
    CHECK(d.text_parameter_count() <= 50'000);
  }

  TEST_CASE("guidance loss gradient matches finite differences") {
    const auto& e = fixture::tiny_embedder();
    Rng rng = make_stream(2, 0);
    const std::vector<std::string> prompts{"a photo of ring", "a photo of coin", "others", "a photo of a broken disk"};
    for (int probe = 0; probe < 10; ++probe) {
      const Matrix x = normal_matrix(rng, 64, 1) * 0.6;
      const std::vector<std::string> p{prompts[static_cast<std::size_t>(probe) % prompts.size()]};
      const auto gl = guidance_loss(e, x, p);
      CHECK(gl.loss >= -1.0);
      CHECK(gl.loss <= 1.0);
      const auto fd = oracle::numeric_gradient(
          [&](const Vector& v) { return guidance_loss(e, Matrix(v), p).loss; }, Vector(x.col(0)));
      CHECK(oracle::relative_error(gl.grad.col(0), fd) < 1e-3);
    }
    CHECK_THROWS_AS(guidance_loss(e, Matrix::Zero(64, 1), {}), Error);
  }

  TEST_CASE("guidance loss of an aligned prompt is -1") {
    // A text embedding parallel to the image embedding gives D = 1.
    const auto& e = fixture::tiny_embedder();
    Rng rng = make_stream(3, 0);
    const Matrix x = normal_matrix(rng, 64, 1) * 0.5;
    const Matrix u = e.encode_images(x);
    CHECK(e.similarity(x, u * 2.5)[0] == doctest::Approx(1.0));
  }

  TEST_CASE("training separates matched from mismatched pairs") {
    const auto& e = fixture::tiny_embedder();
    data::SynthSpec s;
    s.side = fixture::kSide;
    s.per_class = 30;
    s.seed = 999;
    const auto held_out = data::synth_dataset(s);
    const auto [match, mis] = pair_gap(e, held_out);
    CHECK(match - mis > 0.1);
    CHECK(std::isfinite(e.final_loss()));
  }

  TEST_CASE("zero steps leaves a random embedder") {
    const auto& w = fixture::tiny_world();
    EmbedderConfig c;
    c.steps = 0;
    c.d_e = 16;
    c.image_hidden = 32;
    const auto e = train_joint_embedder({to_model_space(w.images), w.captions, w.shape}, c);
    const auto [match, mis] = pair_gap(e, w);
    CHECK(std::abs(match - mis) < 0.1);
  }

  TEST_CASE("training is deterministic") {
    const auto& w = fixture::tiny_world();
    EmbedderConfig c;
    c.steps = 20;
    c.d_e = 8;
    c.image_hidden = 16;
    c.seed = 12;
    const auto a = train_joint_embedder({to_model_space(w.images), w.captions, w.shape}, c);
    const auto b = train_joint_embedder({to_model_space(w.images), w.captions, w.shape}, c);
    CHECK(a.id() == b.id());
  }

  TEST_CASE("tau_image") {
    const auto& e = fixture::tiny_embedder();
    const auto& w = fixture::tiny_world();
    std::vector<int> lab;
    std::vector<int> pick;
    for (int i = 0; i < w.size(); i += 12) {
      pick.push_back(i);
      lab.push_back(w.labels[static_cast<std::size_t>(i)] - 1);
    }
    const auto sub = w.subset(pick);
    std::vector<std::string> caps;
    for (const auto& n : w.label_names) caps.push_back(labels::caption_for(n));
    const Matrix x = to_model_space(sub.images);
    const auto t = compute_tau_image(e, x, lab, caps);
    // brute-force triple loop
    double total = 0;
    int count = 0;
    const Matrix txt = e.encode_texts(caps);
    for (Eigen::Index i = 0; i < x.cols(); ++i) {
      const Vector u = e.encode_images(x.col(i));
      for (int r = 0; r < static_cast<int>(caps.size()); ++r) {
        if (r == lab[static_cast<std::size_t>(i)]) continue;
        total += cosine_similarity(u, txt.col(r));
        ++count;
      }
    }
    CHECK(x.cols() <= 50);
    CHECK(t.tau_image == doctest::Approx(total / count).epsilon(1e-12));
    CHECK(t.classes == 4);
    CHECK_THROWS_AS(compute_tau_image(e, x, std::vector<int>(lab.size(), 0), {caps[0]}), Error);
  }

  TEST_CASE("tau_image of random embedders averages to zero") {
    // Sign-symmetric text initialisation: zero mean over seeds.
    Rng rng = make_stream(4, 0);
    const Matrix x = normal_matrix(rng, 64, 200);
    std::vector<int> lab(200);
    for (int i = 0; i < 200; ++i) lab[static_cast<std::size_t>(i)] = i % 2;
    std::vector<double> taus;
    for (std::uint64_t seed = 1; seed <= 24; ++seed)
      taus.push_back(compute_tau_image(untrained(seed), x, lab, {"a photo of disk", "a photo of ring"}).tau_image);
    double mean = 0, var = 0;
    for (double t : taus) mean += t / taus.size();
    for (double t : taus) var += (t - mean) * (t - mean) / (taus.size() - 1);
    CHECK(std::abs(mean) < std::max(0.1, 3.0 * std::sqrt(var / taus.size())));
  }

  TEST_CASE("checkpoint round trip") {
    const auto& e = fixture::tiny_embedder();
    const auto path = std::filesystem::temp_directory_path() / "rodeo_test_embed.rarc";
    e.save(path);
    const auto back = JointEmbedder::load(path);
    CHECK(back.id() == e.id());
    Rng rng = make_stream(5, 0);
    const Matrix x = normal_matrix(rng, 64, 3);
    CHECK(back.encode_images(x) == e.encode_images(x));
    CHECK(back.embed_text("a photo of ring") == e.embed_text("a photo of ring"));
    std::filesystem::remove(path);
  }
}
