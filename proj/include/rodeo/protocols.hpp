#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "rodeo/attack.hpp"
#include "rodeo/config.hpp"
#include "rodeo/dataset.hpp"
#include "rodeo/detector.hpp"
#include "rodeo/diffusion.hpp"
#include "rodeo/embed.hpp"
#include "rodeo/forge.hpp"
#include "rodeo/labels.hpp"
#include "rodeo/metrics.hpp"

namespace rodeo::protocols {

enum class ExposureKind { adaptive, noise };
std::string to_string(ExposureKind k);
ExposureKind parse_exposure_kind(const std::string& s);

/// Everything a protocol run depends on. Round-trips through Config; the
/// config hash is stamped into every results table.
struct ExperimentConfig {
  std::uint64_t seed = 0;
  std::filesystem::path out_dir;  // empty: keep artifacts in memory only

  data::SynthSpec data;  // protocol dataset
  double train_fraction = 0.8;
  data::SynthSpec world;  // foundation-model training set

  embed::EmbedderConfig embed;
  diffusion::DdpmConfig ddpm;
  int T = 200;
  std::filesystem::path embed_checkpoint;      // loaded when present, else trained and saved there
  std::filesystem::path diffusion_checkpoint;

  std::filesystem::path word_table = "glyph_words.tsv";
  int k = 16;
  double aux_weight = labels::kDefaultAuxWeight;

  diffusion::GuidanceConfig guidance;
  int exposure_cap = forge::kDefaultExposureCap;
  int attempts = 0;  // 0: exposure-count policy
  int forge_batch = 64;

  detect::TrainConfig train;
  detect::DetectorArch arch;
  detect::ScoreMode score = detect::ScoreMode::softmax;

  bool attack_enabled = true;
  attack::AttackConfig attack;
  bool high_res = false;  // epsilon 2/255 for training and attack

  int metrics_k = 5;
  std::vector<ExposureKind> exposures{ExposureKind::adaptive, ExposureKind::noise};

  std::vector<std::string> nd_classes;  // empty: every class
  double osr_fraction = 0.6;
  int osr_repeats = 5;
  std::vector<std::filesystem::path> ood_outliers;  // empty: built-in glyph sets

  static ExperimentConfig from_config(const Config& c);
  Config to_config() const;
  std::string hash() const { return to_config().hash(); }

  double effective_epsilon() const { return high_res ? 2.0 / 255.0 : attack.epsilon; }
  void validate() const;
};

/// Resolves a word-table path: as given, then relative to the installed
/// data directory.
std::filesystem::path resolve_data_path(const std::filesystem::path& p);

/// Pretrained pieces shared by every job of a run.
struct Foundation {
  embed::JointEmbedder embedder;
  diffusion::DenoiserModel ddpm;
  labels::TextEmbeddingTable table;
};

Foundation prepare_foundation(const ExperimentConfig& cfg, std::ostream* log = nullptr);

struct ResultRow {
  std::string protocol;
  std::string split;
  std::string exposure;
  double clean_auroc = 0.0;
  double robust_auroc = 0.0;
  double fid = 0.0;
  double density = 0.0;
  double coverage = 0.0;
  double fdc = 0.0;
  double acceptance_rate = 0.0;
  int n_exposures = 0;
  double runtime_s = 0.0;
  std::string status = "ok";

  bool ok() const { return status == "ok"; }
};

struct ResultsTable {
  std::string config_hash;
  std::vector<ResultRow> rows;

  /// Appends one "mean" row per (protocol, exposure) over the ok rows.
  void append_means();
  const ResultRow* find(const std::string& split, const std::string& exposure) const;
  void write_csv(std::ostream& out) const;
  static ResultsTable read_csv(std::istream& in, const std::string& origin);
};

/// One train/evaluate unit: inliers (labels 1..K) against test outliers.
struct Job {
  std::string protocol;
  std::string split;
  data::Dataset inliers;
  nn::Matrix test_inliers;
  nn::Matrix test_outliers;
  std::vector<std::string> validation_labels;  // tau_text vocabulary
  double tau_image = 0.0;
  std::uint64_t seed = 0;
};

struct JobArtifacts {
  std::optional<forge::ExposureDataset> exposures;
  nn::Matrix exposure_images;
  detect::Detector detector;
  std::vector<labels::PromptSet> prompt_sets;
};

/// Prompt set per inlier label, doubling k while nothing survives the filter.
labels::PromptSet prompt_set_for(const ExperimentConfig& cfg, const Foundation& f, const std::string& inlier,
                                 const std::vector<std::string>& validation_labels, std::uint64_t seed);

ResultRow run_job(const ExperimentConfig& cfg, const Foundation& f, const Job& job, ExposureKind kind,
                  JobArtifacts* artifacts = nullptr);

/// Exposure quality only (no detector): metrics of generated or noise
/// exposures against the job's inlier features.
metrics::MetricsReport exposure_quality(const ExperimentConfig& cfg, const Foundation& f, const Job& job,
                                        ExposureKind kind, double* acceptance_rate = nullptr);

/// Conv-trunk features of the image encoder, one row per image ([0,1] columns in).
metrics::FeatureSet embed_features(const embed::JointEmbedder& embedder, const nn::Matrix& images);

/// tau_image over the train split of every class of `d`.
double dataset_tau_image(const embed::JointEmbedder& embedder, const data::Dataset& d);

std::vector<Job> nd_jobs(const ExperimentConfig& cfg, const Foundation& f, const data::Dataset& d);
std::vector<Job> osr_jobs(const ExperimentConfig& cfg, const Foundation& f, const data::Dataset& d);

ResultsTable run_nd(const ExperimentConfig& cfg, const Foundation& f, const data::Dataset& d,
                    std::ostream* log = nullptr);
ResultsTable run_osr(const ExperimentConfig& cfg, const Foundation& f, const data::Dataset& d,
                     std::ostream* log = nullptr);
ResultsTable run_ood(const ExperimentConfig& cfg, const Foundation& f, const data::Dataset& inliers,
                     const std::vector<std::pair<std::string, data::Dataset>>& outliers, std::ostream* log = nullptr);

/// Two disjoint glyph sets outside the protocol classes.
std::vector<std::pair<std::string, data::Dataset>> default_ood_sets(const ExperimentConfig& cfg);

}  // namespace rodeo::protocols
