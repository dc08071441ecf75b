#include <filesystem>
#include <set>
#include <sstream>

#include "doctest.h"
#include "fixtures.hpp"
#include "rodeo/error.hpp"
#include "rodeo/protocols.hpp"

using namespace rodeo;
using namespace rodeo::protocols;

namespace {

ExperimentConfig tiny_config() {
  ExperimentConfig c;
  c.seed = 2;
  c.data.classes = {"disk", "ring", "square"};
  c.data.per_class = 30;
  c.data.side = fixture::kSide;
  c.data.seed = 8;
  c.world = c.data;
  c.guidance.s = 20.0;
  c.attempts = 12;
  c.forge_batch = 6;
  c.train.epochs = 2;
  c.train.inner_steps = 2;
  c.train.batch = 32;
  c.attack.steps = 4;
  c.attack.restarts = 1;
  c.metrics_k = 3;
  c.osr_repeats = 5;
  return c;
}

const Foundation& tiny_foundation() {
  static const Foundation f = [] {
    Foundation x;
    x.embedder = fixture::tiny_embedder();
    x.ddpm = fixture::tiny_ddpm();
    x.table = labels::load_embedding_table(resolve_data_path("glyph_words.tsv"));
    return x;
  }();
  return f;
}

std::set<std::string> columns_of(const nn::Matrix& m) {
  std::set<std::string> out;
  for (Eigen::Index i = 0; i < m.cols(); ++i)
    out.insert(fnv1a_hex(std::string_view(reinterpret_cast<const char*>(m.col(i).data()), sizeof(double) * m.rows())));
  return out;
}

}  // namespace

TEST_SUITE("protocols") {
  TEST_CASE("experiment config round trip") {
    auto c = tiny_config();
    c.exposures = {ExposureKind::noise};
    c.high_res = true;
    c.nd_classes = {"ring"};
    const auto back = ExperimentConfig::from_config(c.to_config());
    CHECK(back.hash() == c.hash());
    CHECK(back.exposures.size() == 1);
    CHECK(back.effective_epsilon() == doctest::Approx(2.0 / 255.0));
    CHECK(tiny_config().effective_epsilon() == doctest::Approx(8.0 / 255.0));
    CHECK(parse_exposure_kind(to_string(ExposureKind::adaptive)) == ExposureKind::adaptive);
    CHECK_THROWS_AS(parse_exposure_kind("gan"), Error);
  }

  TEST_CASE("shipped experiment configs validate") {
    for (const char* name : {"nd.ini", "osr.ini", "ood.ini"}) {
      CAPTURE(name);
      const auto c = ExperimentConfig::from_config(Config::load(std::filesystem::path(RODEO_CONFIG_DIR) / name));
      CHECK_NOTHROW(c.validate());
    }
    const auto nd = ExperimentConfig::from_config(Config::load(std::filesystem::path(RODEO_CONFIG_DIR) / "nd.ini"));
    CHECK(nd.data.classes.size() == 4);
    CHECK(nd.attack.epsilon == doctest::Approx(8.0 / 255.0));
  }

  TEST_CASE("results csv round trip and means") {
    ResultsTable t;
    t.config_hash = "abc";
    ResultRow a{"nd", "disk", "adaptive", 0.9, 0.6, 1.0, 0.5, 0.4, 2.0, 0.7, 10, 1.0, "ok"};
    ResultRow b{"nd", "ring", "adaptive", 0.7, 0.4, 3.0, 0.1, 0.2, 1.0, 0.5, 12, 2.0, "ok"};
    ResultRow bad{"nd", "cross", "adaptive", 0, 0, 0, 0, 0, 0, 0, 0, 0, "generation"};
    t.rows = {a, b, bad};
    t.append_means();
    const auto* m = t.find("mean", "adaptive");
    REQUIRE(m != nullptr);
    CHECK(m->clean_auroc == doctest::Approx(0.8));
    CHECK(m->robust_auroc == doctest::Approx(0.5));
    CHECK(m->fdc == doctest::Approx(1.5));
    std::stringstream ss;
    t.write_csv(ss);
    const auto back = ResultsTable::read_csv(ss, "mem");
    CHECK(back.config_hash == "abc");
    REQUIRE(back.rows.size() == t.rows.size());
    CHECK(back.rows[2].status == "generation");
    CHECK(back.rows[1].n_exposures == 12);
    CHECK(back.find("ring", "adaptive")->clean_auroc == doctest::Approx(0.7));
    std::stringstream junk("not,a,table\n");
    CHECK_THROWS_AS(ResultsTable::read_csv(junk, "junk"), Error);
  }

  TEST_CASE("novelty detection partitions") {
    const auto cfg = tiny_config();
    const auto d = data::synth_dataset(cfg.data);
    const auto jobs = nd_jobs(cfg, tiny_foundation(), d);
    REQUIRE(jobs.size() == 3);
    for (const auto& j : jobs) {
      CHECK(j.inliers.num_classes() == 1);
      CHECK(j.inliers.label_names.front() == j.split);
      const auto tr = columns_of(j.inliers.images), ti = columns_of(j.test_inliers), to = columns_of(j.test_outliers);
      for (const auto& h : ti) CHECK((tr.count(h) == 0 && to.count(h) == 0));
      CHECK(j.inliers.size() + j.test_inliers.cols() + j.test_outliers.cols() == 30 + 2 * 6);
      CHECK(j.validation_labels.size() == 2);
    }
  }

  TEST_CASE("open-set splits") {
    auto cfg = tiny_config();
    cfg.data.classes = {"disk", "ring", "square", "cross", "triangle"};
    const auto d = data::synth_dataset(cfg.data);
    const auto jobs = osr_jobs(cfg, tiny_foundation(), d);
    REQUIRE(jobs.size() == 5);
    for (const auto& j : jobs) {
      CHECK(j.inliers.num_classes() == 3);
      const auto ti = columns_of(j.test_inliers), to = columns_of(j.test_outliers);
      for (const auto& h : ti) CHECK(to.count(h) == 0);
      CHECK(j.test_inliers.cols() + j.test_outliers.cols() == 5 * 6);
    }
  }

  TEST_CASE("novelty run rows") {
    auto cfg = tiny_config();
    cfg.data.classes = {"disk", "ring"};
    const auto d = data::synth_dataset(cfg.data);
    const auto t = run_nd(cfg, tiny_foundation(), d);
    CHECK(t.config_hash == cfg.hash());
    REQUIRE(t.rows.size() == 6);
    for (const auto& split : {"disk", "ring", "mean"}) {
      for (const auto& kind : {"adaptive", "noise"}) {
        const auto* r = t.find(split, kind);
        REQUIRE(r != nullptr);
        CHECK(r->clean_auroc >= 0.0);
        CHECK(r->clean_auroc <= 1.0);
        CHECK(r->robust_auroc <= 1.0);
      }
    }
    CHECK(t.find("disk", "noise")->acceptance_rate == 1.0);
    const auto again = run_nd(cfg, tiny_foundation(), d);
    for (std::size_t i = 0; i < t.rows.size(); ++i) {
      CHECK(again.rows[i].clean_auroc == t.rows[i].clean_auroc);
      CHECK(again.rows[i].robust_auroc == t.rows[i].robust_auroc);
    }
  }

  TEST_CASE("out-of-distribution run without attack") {
    auto cfg = tiny_config();
    cfg.attack_enabled = false;
    cfg.exposures = {ExposureKind::noise};
    const auto d = data::synth_dataset(cfg.data);
    const auto sets = default_ood_sets(cfg);
    REQUIRE(sets.size() == 2);
    const auto t = run_ood(cfg, tiny_foundation(), d, sets);
    REQUIRE(t.rows.size() == 3);
    for (const auto& r : t.rows) CHECK(r.robust_auroc == r.clean_auroc);
    CHECK(t.find("mean", "noise") != nullptr);
  }
}
