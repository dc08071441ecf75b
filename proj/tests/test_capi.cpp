#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include "doctest.h"
#include "rodeo/rodeo.h"

TEST_SUITE("capi") {
  TEST_CASE("version and status strings") {
    CHECK(std::string(rodeo_version()) == "0.1.0");
    CHECK(std::string(rodeo_status_string(RODEO_OK)) == "ok");
    CHECK(std::string(rodeo_status_string(RODEO_E_IO)) != "unknown");
    CHECK(std::string(rodeo_status_string(RODEO_E_INTERNAL)) == "internal");
    CHECK(std::string(rodeo_status_string(static_cast<rodeo_status>(42))) == "unknown");
  }

  TEST_CASE("dataset handle") {
    rodeo_dataset* d = nullptr;
    REQUIRE(rodeo_dataset_synth("disk,ring", 5, 8, 3, &d) == RODEO_OK);
    CHECK(std::string(rodeo_last_error()).empty());
    CHECK(rodeo_dataset_size(d) == 10);
    CHECK(rodeo_dataset_dim(d) == 64);
    CHECK(rodeo_dataset_num_classes(d) == 2);
    CHECK(rodeo_dataset_label(d, 0) == 1);
    CHECK(rodeo_dataset_label(d, 9) == 2);
    std::vector<double> buf(64);
    REQUIRE(rodeo_dataset_image(d, 3, buf.data(), buf.size()) == RODEO_OK);
    for (double v : buf) CHECK((v >= 0.0 && v <= 1.0));
    CHECK(rodeo_dataset_image(d, 10, buf.data(), buf.size()) == RODEO_E_LOOKUP);
    CHECK(rodeo_dataset_image(d, 0, buf.data(), 3) == RODEO_E_INVALID_INPUT);

    const auto path = (std::filesystem::temp_directory_path() / "rodeo_capi.rarc").string();
    REQUIRE(rodeo_dataset_save(d, path.c_str()) == RODEO_OK);
    rodeo_dataset* back = nullptr;
    REQUIRE(rodeo_dataset_load(path.c_str(), &back) == RODEO_OK);
    std::vector<double> buf2(64);
    rodeo_dataset_image(back, 3, buf2.data(), buf2.size());
    CHECK(buf == buf2);
    rodeo_dataset_free(back);
    rodeo_dataset_free(d);
    std::filesystem::remove(path);
  }

  TEST_CASE("errors carry codes and messages") {
    rodeo_dataset* d = nullptr;
    CHECK(rodeo_dataset_load("/nonexistent/x.rarc", &d) == RODEO_E_IO);
    CHECK_FALSE(std::string(rodeo_last_error()).empty());
    CHECK(d == nullptr);
    CHECK(rodeo_dataset_synth("disk,hexagon", 5, 8, 3, &d) != RODEO_OK);
    CHECK(rodeo_dataset_synth("disk", 5, 8, 3, nullptr) == RODEO_E_INVALID_INPUT);
    rodeo_detector* det = nullptr;
    CHECK(rodeo_detector_load("/nonexistent/det.rarc", &det) == RODEO_E_IO);
    CHECK(rodeo_dataset_size(nullptr) == 0);
    rodeo_dataset_free(nullptr);
  }

  TEST_CASE("auroc") {
    const double in[] = {0.1, 0.2, 0.3};
    const double out[] = {0.25, 0.9};
    double a = 0;
    REQUIRE(rodeo_auroc(in, 3, out, 2, &a) == RODEO_OK);
    CHECK(a == doctest::Approx(5.0 / 6.0));
    CHECK(rodeo_auroc(in, 0, out, 2, &a) != RODEO_OK);
  }

  TEST_CASE("fdc") {
    std::vector<double> real, gen;
    for (int i = 0; i < 40; ++i) {
      real.push_back(std::sin(i * 1.3));
      real.push_back(std::cos(i * 0.7));
      gen.push_back(std::sin(i * 1.3 + 0.01));
      gen.push_back(std::cos(i * 0.7 + 0.01));
    }
    double fid = -1, den = -1, cov = -1, f = -1;
    REQUIRE(rodeo_fdc(real.data(), 40, gen.data(), 40, 2, 5, &fid, &den, &cov, &f) == RODEO_OK);
    CHECK(fid >= 0.0);
    CHECK(fid < 1e-2);
    CHECK(cov > 0.9);
    CHECK(f > 0.0);
    CHECK(f == doctest::Approx(std::log1p(den * cov / fid * 1e4)));
  }
}
