#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "rodeo/dataset.hpp"
#include "rodeo/nn.hpp"

namespace rodeo {
class ArrayContainer;
}

namespace rodeo::detect {

using nn::Matrix;
using nn::Vector;

enum class ScoreMode { softmax, logit };
std::string to_string(ScoreMode m);
ScoreMode parse_score_mode(const std::string& s);

struct DetectorArch {
  int conv1 = 8;
  int conv2 = 16;
  int hidden = 64;
};

/// (K+1)-way classifier on [0,1] images; the last logit is the outlier class.
class Detector {
 public:
  Detector() = default;
  Detector(nn::Shape3 shape, int k, std::uint64_t seed, const DetectorArch& arch = {},
           ScoreMode mode = ScoreMode::softmax);

  Matrix logits(const Matrix& x) const;
  /// O(x) per column; writes dO/dx when grad is non-null.
  Vector score(const Matrix& x, Matrix* grad = nullptr) const;
  /// Mean cross-entropy over columns; labels are 1..K+1. Writes d(loss)/dx
  /// (of the mean) when grad is non-null.
  double loss(const Matrix& x, std::span<const int> labels, Matrix* grad = nullptr) const;

  int k() const { return k_; }
  nn::Shape3 shape() const { return shape_; }
  ScoreMode mode() const { return mode_; }
  void set_mode(ScoreMode m) { mode_ = m; }
  nn::Sequential& network() { return net_; }
  const nn::Sequential& network() const { return net_; }
  std::string id() const;

  void save_into(ArrayContainer& c) const;
  static Detector load_from(const ArrayContainer& c);

 private:
  nn::Shape3 shape_;
  int k_ = 1;
  DetectorArch arch_;
  ScoreMode mode_ = ScoreMode::softmax;
  nn::Sequential net_;
};

struct TrainConfig {
  double epsilon = 8.0 / 255.0;
  int inner_steps = 10;
  double lr = 1e-3;
  int epochs = 20;
  int batch = 64;
  bool adversarial = true;
  std::uint64_t seed = 0;

  double inner_alpha() const { return 2.5 * epsilon / inner_steps; }
  void validate() const;
};

struct LabeledSet {
  Matrix images;  // [0,1]
  std::vector<int> labels;  // 1..K+1
  nn::Shape3 shape;
  int k = 1;

  int size() const { return static_cast<int>(images.cols()); }
};

/// Inliers keep labels 1..K, exposures get K+1; shuffled by seed.
LabeledSet build_training_set(const data::Dataset& inliers, const Matrix& exposures, std::uint64_t seed);

/// Sign-gradient ascent on cross-entropy inside the l_inf ball, starting
/// from a uniform random point; returns the iterate with the highest loss
/// per column.
Matrix pgd_inner_max(const Detector& det, const Matrix& x, std::span<const int> labels, const TrainConfig& config,
                     Rng& rng);

struct TrainReport {
  std::vector<double> epoch_loss;
};

/// Per epoch, inliers and exposures are resampled 1:1 up to the larger side.
TrainReport adversarial_train(Detector& det, const LabeledSet& data, const TrainConfig& config);

void save_detector(const std::filesystem::path& path, const Detector& det, const TrainConfig& config,
                   const TrainReport& report, const std::vector<std::string>& inlier_labels = {});
Detector load_detector(const std::filesystem::path& path);
/// Inlier class names stored with the checkpoint, empty when absent.
std::vector<std::string> load_detector_labels(const std::filesystem::path& path);

/// Elementwise sign with sign(0) = 0.
Matrix sign(const Matrix& m);

}  // namespace rodeo::detect
