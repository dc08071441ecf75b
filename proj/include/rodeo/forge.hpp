#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "rodeo/dataset.hpp"
#include "rodeo/diffusion.hpp"
#include "rodeo/embed.hpp"
#include "rodeo/labels.hpp"

namespace rodeo::forge {

using nn::Matrix;
using nn::Vector;

inline constexpr int kDefaultExposureCap = 3000;
inline constexpr int kSmallClassThreshold = 100;

/// n if n >= 100, otherwise the cap.
int exposure_count_policy(int n_inlier, int cap = kDefaultExposureCap);

struct ExposureRecord {
  Vector image;  // [0,1]
  int attempt = 0;
  int source_index = 0;
  int source_label = 0;
  std::string prompt;
  int t0 = 0;
  double inlier_similarity = 0.0;
  bool accepted = false;
  std::string failure;  // stage tag when the chain failed, empty otherwise
};

struct ForgeConfig {
  diffusion::GuidanceConfig guidance;
  double tau_image = 0.0;
  int cap = kDefaultExposureCap;
  /// Overrides the policy when positive.
  int attempts = 0;
  int batch = 64;
  std::uint64_t seed = 0;
};

/// One chain: prompt by weight, t0, forward noise, guided reverse to step 0,
/// filter against tau_image. `x0` is a [0,1] image column.
ExposureRecord generate_one(const Vector& x0, int source_index, const std::string& inlier_label,
                            const labels::PromptSet& prompts, const diffusion::DenoiserModel& model,
                            const embed::JointEmbedder& embedder, const diffusion::GuidanceConfig& guidance,
                            double tau_image, std::uint64_t seed);

struct ExposureDataset {
  nn::Shape3 shape;
  std::vector<ExposureRecord> accepted;
  std::vector<ExposureRecord> rejected;  // includes failed chains
  int attempts = 0;
  int target_label = 0;  // K + 1
  double tau_image = 0.0;
  std::uint64_t seed = 0;
  std::string prompt_set_id;
  std::string diffusion_id;
  std::string embedder_id;

  double acceptance_rate() const { return attempts ? static_cast<double>(accepted.size()) / attempts : 0.0; }
  Matrix images() const;
};

/// Attempts cycle through the inliers; attempt a uses seed stream a, so the
/// result does not depend on the batch size beyond summation order.
/// `prompt_sets` maps inlier label name to its prompt set. Throws
/// ErrorCode::generation when nothing passes.
ExposureDataset generate_exposure_dataset(const data::Dataset& inliers,
                                          const std::map<std::string, labels::PromptSet>& prompt_sets,
                                          const diffusion::DenoiserModel& model, const embed::JointEmbedder& embedder,
                                          const ForgeConfig& config);

/// Accepted records go to the container; rejected ones to a CSV sidecar at
/// `<path>.rejected.csv`.
void save_exposures(const std::filesystem::path& path, const ExposureDataset& ds);
ExposureDataset load_exposures(const std::filesystem::path& path);

}  // namespace rodeo::forge
