// End-to-end acceptance run: one PASS/FAIL line per criterion.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include "oracles.hpp"
#include "rodeo/attack.hpp"
#include "rodeo/error.hpp"
#include "rodeo/imaging.hpp"
#include "rodeo/metrics.hpp"
#include "rodeo/protocols.hpp"
#include "rodeo/random.hpp"
#include "rodeo/theory.hpp"

using namespace rodeo;
using Clock = std::chrono::steady_clock;

namespace {

// Tolerances and budgets.
constexpr double kFdcTol = 1e-3;
constexpr double kMcSigmas = 3.0;
constexpr double kPointRisk = 0.50, kPointRiskTol = 0.02, kSphereRiskMax = 0.01;
constexpr double kRobustGap = 0.15, kCleanMin = 0.85;
constexpr double kStandardRobustMax = 0.10;
constexpr double kGradTol = 1e-3;
constexpr double kFrechetSelfMax = 1e-6;
constexpr double kMdAurocMin = 0.95;
constexpr double kLimit1 = 1.0, kLimit2 = 120.0, kLimit3 = 10.0, kLimit4 = 60.0, kLimit5 = 1800.0, kLimit6 = 300.0;

int failures = 0;

double since(Clock::time_point t) { return std::chrono::duration<double>(Clock::now() - t).count(); }

std::string fmt(double v, int prec = 4) {
  std::ostringstream o;
  o.setf(std::ios::fixed);
  o.precision(prec);
  o << v;
  return o.str();
}

std::string sci(double v) {
  std::ostringstream o;
  o.setf(std::ios::scientific);
  o.precision(2);
  o << v;
  return o.str();
}

void report(int id, const std::string& name, bool pass, const std::string& detail, double seconds) {
  if (!pass) ++failures;
  std::cout << "criterion " << id << " [" << (pass ? "PASS" : "FAIL") << "] " << name << ": " << detail << " ("
            << fmt(seconds, 1) << " s)" << std::endl;
}

void note(const std::string& s) { std::cout << "  " << s << std::endl; }

// ---------------------------------------------------------------- 1-4

void fdc_golden() {
  const auto t = Clock::now();
  const double a = metrics::fdc(145, 0.87, 0.64), b = metrics::fdc(133, 0.75, 0.86);
  const bool ok = std::abs(a - 3.674) <= kFdcTol && std::abs(b - 3.902) <= kFdcTol;
  const double s = since(t);
  report(1, "fdc golden values", ok && s < kLimit1, "fdc=" + fmt(a) + ", " + fmt(b), s);
}

void theory_agreement() {
  const auto t = Clock::now();
  const auto rows = theory::closed_form_vs_mc_sweep(theory::SweepGrid{});
  int bad = 0;
  double worst = 0.0, sum = 0.0, sum2 = 0.0;
  for (const auto& r : rows) {
    const double z = (r.mc_mean - r.closed_form) / r.mc_stderr;
    sum += z;
    sum2 += z * z;
    worst = std::max(worst, std::abs(z));
    if (std::abs(z) > kMcSigmas) ++bad;
  }
  const double s = since(t);
  const double nz = static_cast<double>(rows.size());
  note("z over the grid: mean " + fmt(sum / nz, 3) + ", mean square " + fmt(sum2 / nz, 3));
  report(2, "closed form vs Monte Carlo", bad == 0 && rows.size() == 108 && s < kLimit2,
         std::to_string(rows.size()) + " grid points, " + std::to_string(bad) + " beyond 3 stderr, max |z|=" +
             fmt(worst, 2),
         s);
}

void theory_monotonicity() {
  const auto t = Clock::now();
  int grids = 0, skipped = 0, violations = 0;
  for (double an : {0.5, 1.0, 2.0, 4.0}) {
    for (double th : {0.0, std::numbers::pi / 6, std::numbers::pi / 3, 1.4}) {
      for (double eps : {0.0, 0.05, 0.1, 0.2, 0.3}) {
        std::vector<double> grid;
        for (int i = 0; i <= 30; ++i) grid.push_back(an * (1.0 + 0.1 * i));
        const Eigen::VectorXd a = Eigen::Vector2d(an, 0.0);
        try {
          const auto pts = theory::theorem1_monotonicity_scan(a, th, eps, grid);
          ++grids;
          for (std::size_t i = 1; i < pts.size(); ++i) violations += !(pts[i].error > pts[i - 1].error);
        } catch (const Error& e) {
          if (e.code() != ErrorCode::precondition) throw;
          ++skipped;
        }
      }
    }
  }
  const double s = since(t);
  report(3, "error increasing in ||a'||", violations == 0 && grids > 0 && s < kLimit3,
         std::to_string(grids) + " grids, " + std::to_string(violations) + " violations (" + std::to_string(skipped) +
             " outside the precondition)",
         s);
}

void theory_worst_case() {
  const auto t = Clock::now();
  const double alpha = 4.0, sigma = 0.05;
  const auto lin = theory::optimal_robust_classifier(Eigen::Vector2d(alpha, 0.0));
  const auto r_lin = theory::worst_case_risk(theory::Classifier{lin}, alpha, sigma, 512, 50'000, 1);
  const auto r_sph = theory::worst_case_risk(theory::Classifier{theory::SphereClassifier{alpha / 2}}, alpha, sigma,
                                             512, 50'000, 1);
  const bool ok = std::abs(r_lin.value - kPointRisk) <= kPointRiskTol && r_sph.value <= kSphereRiskMax;
  const double s = since(t);
  report(4, "worst-case risk, point vs sphere exposure", ok && s < kLimit4,
         "linear " + fmt(r_lin.value) + ", sphere " + fmt(r_sph.value), s);
}

// ---------------------------------------------------------------- 10-11

void metrics_oracles() {
  const auto t = Clock::now();
  Rng rng = make_stream(10, 0);
  int mismatches = 0;
  for (int trial = 0; trial < 40; ++trial) {
    const auto n = static_cast<Eigen::Index>(6 + uniform_index(rng, 45));
    const auto m = static_cast<Eigen::Index>(1 + uniform_index(rng, 50));
    const int k = 1 + static_cast<int>(uniform_index(rng, 5));
    // Coarse grid so ball boundaries are hit exactly.
    const Eigen::MatrixXd real = (uniform_matrix(rng, n, 3, 0, 4)).array().round();
    const Eigen::MatrixXd fake = (uniform_matrix(rng, m, 3, 0, 4)).array().round();
    mismatches += metrics::density(real, fake, k) != oracle::density(real, fake, k);
    mismatches += metrics::coverage(real, fake, k) != oracle::coverage(real, fake, k);
  }
  const metrics::FeatureSet a{normal_matrix(rng, 50, 8), "x"};
  const double self = metrics::frechet_distance(a, a);
  for (int trial = 0; trial < 40; ++trial) {
    const std::size_t n = 1 + uniform_index(rng, 100), m = 1 + uniform_index(rng, 100);
    std::vector<double> in(n), out(m);
    for (auto& v : in) v = std::round(uniform(rng, 0, 8));
    for (auto& v : out) v = std::round(uniform(rng, 2, 10));
    mismatches += attack::auroc(in, out) != oracle::auroc(in, out);
  }
  report(10, "metric oracles", mismatches == 0 && self < kFrechetSelfMax,
         std::to_string(mismatches) + " mismatches vs brute force, frechet(A,A)=" + sci(self), since(t));
}

void md_sanity() {
  const auto t = Clock::now();
  Rng rng = make_stream(11, 0);
  const int n = 400, d = 4;
  Eigen::MatrixXd f(d, 3 * n);
  std::vector<int> lab;
  for (int c = 0; c < 3; ++c) {
    Eigen::VectorXd mu = Eigen::VectorXd::Zero(d);
    mu[c] = 8.0;
    for (int i = 0; i < n; ++i) {
      f.col(c * n + i) = normal_vector(rng, d) + mu;
      lab.push_back(c + 1);
    }
  }
  const auto stats = attack::fit_class_stats(f, lab);
  Eigen::MatrixXd in(d, n), out(d, n);
  Eigen::VectorXd far = Eigen::VectorXd::Constant(d, -6.0);
  for (int i = 0; i < n; ++i) {
    Eigen::VectorXd mu = Eigen::VectorXd::Zero(d);
    mu[i % 3] = 8.0;
    in.col(i) = normal_vector(rng, d) + mu;
    out.col(i) = normal_vector(rng, d) + far;
  }
  const auto si = attack::md_rmd_scores(stats, in), so = attack::md_rmd_scores(stats, out);
  std::vector<double> a(n), b(n);
  for (int i = 0; i < n; ++i) {
    a[static_cast<std::size_t>(i)] = -si.md[i];
    b[static_cast<std::size_t>(i)] = -so.md[i];
  }
  const double au = attack::auroc(a, b);
  report(11, "Mahalanobis sanity", au >= kMdAurocMin, "AUROC " + fmt(au), since(t));
}

// ---------------------------------------------------------------- pipeline

protocols::ExperimentConfig base_config(std::uint64_t seed) {
  Config c;
  c.set("seed", std::to_string(seed));
  auto cfg = protocols::ExperimentConfig::from_config(c);
  cfg.embed_checkpoint = std::filesystem::path(RODEO_ACCEPT_DIR) / "acceptance_embedder.rarc";
  cfg.diffusion_checkpoint = std::filesystem::path(RODEO_ACCEPT_DIR) / "acceptance_diffusion.rarc";
  return cfg;
}

struct PersistCheck {
  int total = 0;
  int violations = 0;
};

// Saves, reloads and re-scores every accepted exposure.
void check_persisted(const protocols::Foundation& f, const forge::ExposureDataset& ds, const std::string& inlier,
                     PersistCheck& pc) {
  const auto path = std::filesystem::temp_directory_path() / ("rodeo_accept_" + inlier + ".rarc");
  forge::save_exposures(path, ds);
  const auto back = forge::load_exposures(path);
  const Eigen::MatrixXd cap = f.embedder.encode_texts({labels::caption_for(inlier)});
  const Eigen::MatrixXd img = back.images();
  for (Eigen::Index i = 0; i < img.cols(); ++i) {
    const double sim = f.embedder.similarity(to_model_space(img.col(i)), cap)[0];
    const auto& r = back.accepted[static_cast<std::size_t>(i)];
    ++pc.total;
    pc.violations += !(r.inlier_similarity < back.tau_image && sim < back.tau_image);
  }
  std::filesystem::remove(path);
  std::filesystem::remove(path.string() + ".rejected.csv");
}

void pipeline_direction(const protocols::Foundation& f, PersistCheck& pc) {
  const auto t = Clock::now();
  const auto cfg = base_config(0);
  const auto d = data::synth_dataset(cfg.data);
  protocols::ResultsTable table;
  table.config_hash = cfg.hash();
  for (const auto& job : protocols::nd_jobs(cfg, f, d)) {
    for (auto kind : cfg.exposures) {
      protocols::JobArtifacts art;
      table.rows.push_back(protocols::run_job(cfg, f, job, kind, &art));
      const auto& r = table.rows.back();
      note(r.split + " " + r.exposure + ": clean " + fmt(r.clean_auroc, 3) + " robust " + fmt(r.robust_auroc, 3) +
           " exposures " + std::to_string(r.n_exposures));
      if (art.exposures) check_persisted(f, *art.exposures, job.split, pc);
    }
  }
  table.append_means();
  {
    std::ofstream out(std::filesystem::path(RODEO_ACCEPT_DIR) / "acceptance_nd.csv");
    table.write_csv(out);
  }
  const auto* a = table.find("mean", "adaptive");
  const auto* n = table.find("mean", "noise");
  const bool have = a && n;
  const double gap = have ? a->robust_auroc - n->robust_auroc : 0.0;
  const double s = since(t);
  const bool ok = have && gap >= kRobustGap && a->clean_auroc >= kCleanMin && s <= kLimit5;
  report(5, "adaptive vs noise exposure (ND, 4 classes)", ok,
         have ? "robust " + fmt(a->robust_auroc, 3) + " vs " + fmt(n->robust_auroc, 3) + " (gap " + fmt(gap, 3) +
                    "), adaptive clean " + fmt(a->clean_auroc, 3)
              : "missing mean rows",
         s);
}

void attack_potency(const protocols::Foundation& f, PersistCheck& pc, detect::Detector& standard) {
  const auto t = Clock::now();
  auto cfg = base_config(0);
  cfg.train.adversarial = false;
  const auto d = data::synth_dataset(cfg.data);
  const auto jobs = protocols::nd_jobs(cfg, f, d);
  protocols::JobArtifacts art;
  const auto r = protocols::run_job(cfg, f, jobs.front(), protocols::ExposureKind::adaptive, &art);
  if (art.exposures) check_persisted(f, *art.exposures, jobs.front().split, pc);
  standard = art.detector;
  const double s = since(t);
  report(6, "standard-trained detector under attack (" + r.split + ")",
         r.robust_auroc < kStandardRobustMax && s <= kLimit6,
         "clean " + fmt(r.clean_auroc, 3) + " robust " + fmt(r.robust_auroc, 3), s);
  if (std::getenv("RODEO_ACCEPT_ALL")) {
    for (std::size_t i = 1; i < jobs.size(); ++i) {
      const auto o = protocols::run_job(cfg, f, jobs[i], protocols::ExposureKind::adaptive);
      note(o.split + " standard: clean " + fmt(o.clean_auroc, 3) + " robust " + fmt(o.robust_auroc, 3));
    }
  }
}

void fdc_ordering(const protocols::Foundation& f) {
  const auto t = Clock::now();
  bool ok = true;
  std::string detail;
  for (std::uint64_t seed : {0, 1, 2}) {
    const auto cfg = base_config(seed);
    const auto d = data::synth_dataset(cfg.data);
    double fa = 0.0, fn = 0.0;
    const auto jobs = protocols::nd_jobs(cfg, f, d);
    for (const auto& job : jobs) {
      const auto a = protocols::exposure_quality(cfg, f, job, protocols::ExposureKind::adaptive);
      const auto n = protocols::exposure_quality(cfg, f, job, protocols::ExposureKind::noise);
      note("seed " + std::to_string(seed) + " " + job.split + ": adaptive fid " + fmt(a.fid, 2) + " fdc " +
           fmt(a.fdc, 3) + ", noise fid " + fmt(n.fid, 2) + " fdc " + fmt(n.fdc, 3));
      fa += a.fdc / static_cast<double>(jobs.size());
      fn += n.fdc / static_cast<double>(jobs.size());
    }
    ok = ok && fa > fn;
    detail += (detail.empty() ? "" : "; ") + std::string("seed ") + std::to_string(seed) + " " + fmt(fa, 3) + " vs " +
              fmt(fn, 3);
  }
  report(8, "FDC adaptive > noise (class mean)", ok, detail, since(t));
}

void gradient_oracles(const protocols::Foundation& f, const detect::Detector& det) {
  const auto t = Clock::now();
  Rng rng = make_stream(9, 0);
  const auto world = data::synth_dataset(base_config(0).world);
  double worst_guidance = 0.0, worst_score = 0.0;
  for (int probe = 0; probe < 10; ++probe) {
    const auto i = static_cast<Eigen::Index>(uniform_index(rng, static_cast<std::size_t>(world.size())));
    const auto j = uniform_index(rng, world.captions.size());
    const double level = uniform(rng, 0.0, 0.5);
    const Eigen::MatrixXd x = to_model_space(world.images.col(i)) + level * normal_matrix(rng, world.images.rows(), 1);
    const std::vector<std::string> prompt{world.captions[j]};
    const auto gl = embed::guidance_loss(f.embedder, x, prompt);
    const auto fd = oracle::numeric_gradient(
        [&](const Eigen::VectorXd& v) { return embed::guidance_loss(f.embedder, Eigen::MatrixXd(v), prompt).loss; },
        Eigen::VectorXd(x.col(0)));
    worst_guidance = std::max(worst_guidance, oracle::relative_error(gl.grad.col(0), fd));

    const Eigen::MatrixXd u = world.images.col(i);
    Eigen::MatrixXd g;
    det.score(u, &g);
    const auto fs = oracle::numeric_gradient(
        [&](const Eigen::VectorXd& v) { return det.score(Eigen::MatrixXd(v))[0]; }, Eigen::VectorXd(u.col(0)));
    worst_score = std::max(worst_score, oracle::relative_error(g.col(0), fs));
  }
  report(9, "gradient oracles", worst_guidance < kGradTol && worst_score < kGradTol,
         "max relative error guidance " + sci(worst_guidance) + ", score " + sci(worst_score),
         since(t));
}

}  // namespace

int main() {
  try {
    fdc_golden();
    theory_agreement();
    theory_monotonicity();
    theory_worst_case();
    metrics_oracles();
    md_sanity();

    const auto t = Clock::now();
    const auto foundation = protocols::prepare_foundation(base_config(0), &std::cout);
    note("foundation ready in " + fmt(since(t), 1) + " s");

    PersistCheck pc;
    pipeline_direction(foundation, pc);
    detect::Detector standard;
    attack_potency(foundation, pc, standard);
    report(7, "filter soundness", pc.total > 0 && pc.violations == 0,
           std::to_string(pc.total) + " persisted exposures, " + std::to_string(pc.violations) + " at or above tau_image",
           0.0);
    fdc_ordering(foundation);
    gradient_oracles(foundation, standard);
  } catch (const std::exception& e) {
    std::cout << "acceptance aborted: " << e.what() << std::endl;
    return 2;
  }
  std::cout << (failures ? std::to_string(failures) + " criteria failed" : std::string("all criteria passed"))
            << std::endl;
  return failures ? 1 : 0;
}
