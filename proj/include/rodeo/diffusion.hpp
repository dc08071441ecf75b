#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "rodeo/nn.hpp"

namespace rodeo {
class ArrayContainer;
}
namespace rodeo::embed {
class JointEmbedder;
}

namespace rodeo::diffusion {

using nn::Matrix;
using nn::Vector;

/// Steps are 0-indexed: x_t = sqrt(alpha_bar[t]) x + sqrt(1 - alpha_bar[t]) z
/// for t in [0, T).
struct NoiseSchedule {
  int T = 0;
  std::vector<double> beta;
  std::vector<double> alpha_bar;

  /// Linear betas from 1e-4 to 0.02, rescaled by 1000/T so short chains
  /// still end near pure noise.
  static NoiseSchedule scaled_linear(int T);
  static NoiseSchedule from_betas(std::vector<double> betas);

  void validate() const;
  /// beta_t (1 - alpha_bar[t-1]) / (1 - alpha_bar[t]), t >= 1.
  double posterior_variance(int t) const;
};

/// x_t from model-space x0 with the supplied noise.
Matrix forward_noise_with(const NoiseSchedule& s, const Matrix& x0, int t, const Matrix& z);
Matrix forward_noise(const NoiseSchedule& s, const Matrix& x0, int t, std::uint64_t seed);

/// x0 implied by x_t and a noise estimate.
Matrix predict_x0(const NoiseSchedule& s, const Matrix& x_t, int t, const Matrix& eps);
/// Posterior mean of x_{t-1} written in terms of the noise estimate.
Matrix posterior_mean(const NoiseSchedule& s, const Matrix& x_t, int t, const Matrix& eps);

struct DdpmConfig {
  int hidden = 512;
  int depth = 3;  // hidden layers
  int time_dim = 32;
  int steps = 12000;
  int batch = 64;
  double lr = 1e-3;
  std::uint64_t seed = 0;
};

/// Skip/output/input scalings around the network so its target has unit
/// variance at every step.
struct Precond {
  double c_skip = 0.0;
  double c_out = 0.0;
  double c_in = 0.0;
};
inline constexpr double kSigmaData = 0.5;
Precond preconditioning(const NoiseSchedule& s, int t);

/// MLP over [c_in x; sinusoidal(t)] with fixed posterior variance. The net
/// predicts a scaled clean image; predict_noise() converts it to epsilon.
class DenoiserModel {
 public:
  DenoiserModel() = default;
  DenoiserModel(NoiseSchedule schedule, nn::Shape3 shape, const DdpmConfig& config);

  /// One step index per column.
  Matrix predict_noise(const Matrix& x_t, std::span<const int> t) const;
  Matrix predict_noise(const Matrix& x_t, int t) const;

  const NoiseSchedule& schedule() const { return schedule_; }
  nn::Shape3 shape() const { return shape_; }
  const DdpmConfig& config() const { return config_; }
  /// Loss on a fixed evaluation batch before and after training.
  double initial_loss() const { return initial_loss_; }
  double final_loss() const { return final_loss_; }
  const std::vector<double>& loss_curve() const { return loss_curve_; }
  std::size_t parameter_count() const { return net_.parameter_count(); }

  std::string architecture_hash() const;
  std::string id() const;

  void save(const std::filesystem::path& path) const;
  static DenoiserModel load(const std::filesystem::path& path);
  void save_into(ArrayContainer& c) const;
  static DenoiserModel load_from(const ArrayContainer& c);

 private:
  friend DenoiserModel train_ddpm(const Matrix&, nn::Shape3, const NoiseSchedule&, const DdpmConfig&);
  Matrix network_input(const Matrix& x_t, std::span<const int> t) const;
  Matrix noise_from_output(const Matrix& x_t, std::span<const int> t, const Matrix& f) const;

  NoiseSchedule schedule_;
  nn::Shape3 shape_;
  DdpmConfig config_;
  nn::Sequential net_;
  double initial_loss_ = 0.0;
  double final_loss_ = 0.0;
  std::vector<double> loss_curve_;
};

/// Sinusoidal embedding of step t, dim values (dim even).
Vector time_embedding(int t, int dim);

/// Epsilon-prediction training on [0,1] images (columns). Throws
/// ErrorCode::training on a non-finite loss.
DenoiserModel train_ddpm(const Matrix& images, nn::Shape3 shape, const NoiseSchedule& schedule,
                         const DdpmConfig& config);

/// x_{t-1} = mu + sqrt(var_t) z; the noise term is skipped at t = 1.
Matrix reverse_step_with_noise(const DenoiserModel& model, const Matrix& x_t, int t, const Matrix& z);
Matrix reverse_step(const DenoiserModel& model, const Matrix& x_t, int t, std::uint64_t seed);

struct GuidanceConfig {
  double s = 100.0;
  double t0_low_frac = 0.3;
  double t0_high_frac = 0.6;
  /// +1 ascends similarity to the prompt, -1 descends.
  int sign = +1;
  void validate() const;
};

/// d D(E_I(x_t), text) / d x_t per column.
Matrix similarity_gradient(const embed::JointEmbedder& embedder, const Matrix& x_t, const Matrix& text_embeddings);

/// Guided mean: mu + sign * s * var_t * g, with g from similarity_gradient.
/// `t` holds one step per column.
Matrix guided_mean(const DenoiserModel& model, const embed::JointEmbedder& embedder, const Matrix& x_t,
                   std::span<const int> t, const Matrix& text_embeddings, const GuidanceConfig& guidance);

Matrix guided_reverse_step_with_noise(const DenoiserModel& model, const embed::JointEmbedder& embedder,
                                      const Matrix& x_t, int t, const std::string& prompt,
                                      const GuidanceConfig& guidance, const Matrix& z);
Matrix guided_reverse_step(const DenoiserModel& model, const embed::JointEmbedder& embedder, const Matrix& x_t, int t,
                           const std::string& prompt, const GuidanceConfig& guidance, std::uint64_t seed);

/// Inclusive integer range [ceil(low*T), floor(high*T)], clipped to [1, T-1].
std::pair<int, int> t0_range(const NoiseSchedule& schedule, const GuidanceConfig& guidance);
int sample_t0(const NoiseSchedule& schedule, const GuidanceConfig& guidance, Rng& rng);
int sample_t0(const NoiseSchedule& schedule, const GuidanceConfig& guidance, std::uint64_t seed);

/// Unguided ancestral sampling from pure noise; returns model-space images.
Matrix sample(const DenoiserModel& model, int n, std::uint64_t seed);

}  // namespace rodeo::diffusion
