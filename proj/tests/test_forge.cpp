#include <filesystem>
#include <set>

#include "doctest.h"
#include "fixtures.hpp"
#include "rodeo/error.hpp"
#include "rodeo/forge.hpp"
#include "rodeo/protocols.hpp"

using namespace rodeo;
using namespace rodeo::forge;

namespace {

labels::PromptSet disk_prompts() {
  labels::PromptSet p;
  p.inlier_labels = {"disk"};
  p.near_labels = {{"coin", 0.9}, {"ring", 0.6}};
  p.negative = labels::negative_prompts("disk");
  p.tau_text = 0.5;
  return p;
}

data::Dataset disk_inliers(int n) {
  const auto& w = fixture::tiny_world();
  auto d = w.select_classes({1}, true);
  std::vector<int> idx(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) idx[static_cast<std::size_t>(i)] = i;
  return d.subset(idx);
}

double world_tau() {
  static const double t = protocols::dataset_tau_image(fixture::tiny_embedder(), fixture::tiny_world());
  return t;
}

ForgeConfig small_config(double tau, int attempts) {
  ForgeConfig c;
  c.guidance.s = 20.0;
  c.tau_image = tau;
  c.attempts = attempts;
  c.batch = 8;
  c.seed = 11;
  return c;
}

}  // namespace

TEST_SUITE("forge") {
  TEST_CASE("exposure count policy") {
    CHECK(exposure_count_policy(5000) == 5000);
    CHECK(exposure_count_policy(100) == 100);
    CHECK(exposure_count_policy(99) == 3000);
    CHECK(exposure_count_policy(50) == 3000);
    CHECK(exposure_count_policy(50, 700) == 700);
    CHECK_THROWS_AS(exposure_count_policy(0), Error);
  }

  TEST_CASE("threshold extremes") {
    const auto inl = disk_inliers(6);
    const std::map<std::string, labels::PromptSet> sets{{"disk", disk_prompts()}};
    CHECK_THROWS_AS(generate_exposure_dataset(inl, sets, fixture::tiny_ddpm(), fixture::tiny_embedder(),
                                              small_config(-1.0, 12)),
                    Error);
    const auto all = generate_exposure_dataset(inl, sets, fixture::tiny_ddpm(), fixture::tiny_embedder(),
                                               small_config(1.0 + 1e-9, 12));
    CHECK(all.accepted.size() == 12);
    CHECK(all.acceptance_rate() == 1.0);
  }

  TEST_CASE("accepted records respect the filter and ranges") {
    const auto inl = disk_inliers(6);
    const auto prompts = disk_prompts();
    const std::map<std::string, labels::PromptSet> sets{{"disk", prompts}};
    auto cfg = small_config(world_tau(), 24);
    const auto ds = generate_exposure_dataset(inl, sets, fixture::tiny_ddpm(), fixture::tiny_embedder(), cfg);
    REQUIRE(ds.attempts == 24);
    CHECK(ds.accepted.size() + ds.rejected.size() == 24);
    CHECK(ds.target_label == 2);
    std::set<std::string> texts;
    for (const auto& p : prompts.prompts()) texts.insert(p.text);
    const auto [lo, hi] = diffusion::t0_range(fixture::tiny_ddpm().schedule(), cfg.guidance);
    for (const auto& r : ds.accepted) {
      CHECK(r.accepted);
      CHECK(r.inlier_similarity < cfg.tau_image);
      CHECK(texts.count(r.prompt) == 1);
      CHECK(r.t0 >= lo);
      CHECK(r.t0 <= hi);
      CHECK(r.image.minCoeff() >= 0.0);
      CHECK(r.image.maxCoeff() <= 1.0);
      CHECK(r.image.size() == inl.images.rows());
    }
    for (const auto& r : ds.rejected) CHECK((!r.failure.empty() || r.inlier_similarity >= cfg.tau_image));
  }

  TEST_CASE("generation is deterministic and batch independent") {
    const auto inl = disk_inliers(4);
    const std::map<std::string, labels::PromptSet> sets{{"disk", disk_prompts()}};
    auto a_cfg = small_config(1.0 + 1e-9, 10);
    auto b_cfg = a_cfg;
    b_cfg.batch = 3;
    const auto a = generate_exposure_dataset(inl, sets, fixture::tiny_ddpm(), fixture::tiny_embedder(), a_cfg);
    const auto b = generate_exposure_dataset(inl, sets, fixture::tiny_ddpm(), fixture::tiny_embedder(), b_cfg);
    REQUIRE(a.accepted.size() == b.accepted.size());
    // Batch width changes Eigen's summation order, nothing else.
    CHECK((a.images() - b.images()).cwiseAbs().maxCoeff() < 1e-9);
    const auto again = generate_exposure_dataset(inl, sets, fixture::tiny_ddpm(), fixture::tiny_embedder(), a_cfg);
    CHECK(again.images() == a.images());
    for (std::size_t i = 0; i < a.accepted.size(); ++i) CHECK(a.accepted[i].prompt == b.accepted[i].prompt);
  }

  TEST_CASE("small inlier sets use the cap") {
    const auto inl = disk_inliers(10);
    const std::map<std::string, labels::PromptSet> sets{{"disk", disk_prompts()}};
    auto cfg = small_config(1.0 + 1e-9, 0);
    cfg.cap = 30;
    const auto ds = generate_exposure_dataset(inl, sets, fixture::tiny_ddpm(), fixture::tiny_embedder(), cfg);
    CHECK(ds.attempts == 30);
    std::set<int> sources;
    for (const auto& r : ds.accepted) sources.insert(r.source_index);
    CHECK(sources.size() == 10);
  }

  TEST_CASE("missing prompt set is a lookup error") {
    const auto inl = disk_inliers(4);
    const std::map<std::string, labels::PromptSet> sets{{"ring", disk_prompts()}};
    CHECK_THROWS_AS(generate_exposure_dataset(inl, sets, fixture::tiny_ddpm(), fixture::tiny_embedder(),
                                              small_config(1.0, 4)),
                    Error);
  }

  TEST_CASE("save and load") {
    const auto inl = disk_inliers(6);
    const std::map<std::string, labels::PromptSet> sets{{"disk", disk_prompts()}};
    const auto ds = generate_exposure_dataset(inl, sets, fixture::tiny_ddpm(), fixture::tiny_embedder(),
                                              small_config(world_tau(), 24));
    const auto path = std::filesystem::temp_directory_path() / "rodeo_test_exposures.rarc";
    save_exposures(path, ds);
    const auto back = load_exposures(path);
    CHECK(back.images() == ds.images());
    CHECK(back.attempts == ds.attempts);
    CHECK(back.tau_image == ds.tau_image);
    CHECK(back.target_label == ds.target_label);
    REQUIRE(back.accepted.size() == ds.accepted.size());
    for (std::size_t i = 0; i < ds.accepted.size(); ++i) {
      CHECK(back.accepted[i].prompt == ds.accepted[i].prompt);
      CHECK(back.accepted[i].t0 == ds.accepted[i].t0);
    }
    std::filesystem::remove(path);
    std::filesystem::remove(path.string() + ".rejected.csv");
  }
}
