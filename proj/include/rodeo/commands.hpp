#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "rodeo/config.hpp"
#include "rodeo/protocols.hpp"

// Verb implementations behind the C API. Each writes its primary output
// (CSV, prompt set, report) to `out` and progress to `log` when given.
namespace rodeo::commands {

/// Loads an INI config; RODEO_SEED in the environment replaces `seed`.
Config load_config(const std::filesystem::path& path);
void apply_seed_override(Config& c);

/// Columns d, a_norm, a_prime_norm, theta, eps, closed_form, mc_mean,
/// mc_stderr, n_samples, seed. Keys under [theory].
void theory_sweep(const Config& c, std::ostream& out);

struct LabelsArgs {
  std::string inlier;
  std::filesystem::path table;
  int k = 16;
  std::filesystem::path embedder;
  std::vector<std::string> validation;  // empty: glyph families minus the inlier
  std::optional<double> tau_text;       // overrides validation
  std::uint64_t seed = 0;
};
void labels_build(const LabelsArgs& a, std::ostream& out);

struct SynthArgs {
  std::vector<std::string> classes{"disk", "ring", "square", "cross"};
  int per_class = 500;
  int side = 16;
  std::uint64_t seed = 0;
  bool synonym_captions = false;
  std::filesystem::path out;
};
void synth(const SynthArgs& a);

void embed_train(const std::filesystem::path& data, const std::filesystem::path& out, const Config& c,
                 std::ostream* log);
void diffusion_train(const std::filesystem::path& data, int T, const std::filesystem::path& out, const Config& c,
                     std::ostream* log);

/// Keys under [forge]: inliers, embedder, diffusion, out, table, k,
/// validation, tau_image | reference, s, t0_low, t0_high, attempts, cap,
/// batch. Writes exposures to `out`, rejected records to `<out>.rejected.csv`.
void forge_generate(const Config& c, std::ostream* log);

/// Keys under [detector]: inliers, exposures, out, plus training options.
void detector_train(const Config& c, std::ostream* log);

struct AttackArgs {
  std::filesystem::path detector;
  std::filesystem::path in;
  std::filesystem::path out;  // adversarial images, same labels
  double epsilon = 8.0 / 255.0;
  int steps = 200;
  int restarts = 3;
  std::uint64_t seed = 0;
};
/// CSV columns sample_id, clean_score, adv_score, y (+1 inlier, -1 outlier).
void attack_run(const AttackArgs& a, std::ostream& csv);

/// One-row CSV: fid, density, coverage, fdc, k, n_real, n_gen.
void metrics_fdc(const std::filesystem::path& real, const std::filesystem::path& gen,
                 const std::filesystem::path& extractor, int k, std::ostream& csv);

/// kind = nd | osr | ood. Writes results.csv, config.ini and auroc.png into
/// out_dir (created) and returns the table.
protocols::ResultsTable run_protocol(const std::string& kind, const Config& c, const std::filesystem::path& out_dir,
                                     std::ostream* log);

/// Markdown summary of a results CSV; writes a bar chart when png is set.
void report(const std::filesystem::path& results, const std::filesystem::path& png, std::ostream& out);

/// Images from a dataset or exposure container, [0,1], one per column.
nn::Matrix load_images(const std::filesystem::path& path, nn::Shape3* shape = nullptr);

}  // namespace rodeo::commands
