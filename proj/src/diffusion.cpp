#include "rodeo/diffusion.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "rodeo/config.hpp"
#include "rodeo/container.hpp"
#include "rodeo/embed.hpp"
#include "rodeo/error.hpp"
#include "rodeo/imaging.hpp"

namespace rodeo::diffusion {

namespace {

void check_step(const NoiseSchedule& s, int t, int lo) {
  require(t >= lo && t < s.T, ErrorCode::invalid_input,
          "step " + std::to_string(t) + " outside [" + std::to_string(lo) + ", " + std::to_string(s.T) + ")");
}

std::string join(const std::vector<double>& v) {
  std::ostringstream os;
  os.precision(17);
  for (std::size_t i = 0; i < v.size(); ++i) os << (i ? "," : "") << v[i];
  return os.str();
}

}  // namespace

// ---------------------------------------------------------------- schedule

NoiseSchedule NoiseSchedule::scaled_linear(int T) {
  require(T >= 2, ErrorCode::invalid_input, "T must be at least 2");
  const double scale = 1000.0 / T;
  const double lo = 1e-4 * scale, hi = std::min(0.02 * scale, 0.999);
  std::vector<double> betas(static_cast<std::size_t>(T));
  for (int t = 0; t < T; ++t) betas[static_cast<std::size_t>(t)] = lo + (hi - lo) * t / (T - 1);
  return from_betas(std::move(betas));
}

NoiseSchedule NoiseSchedule::from_betas(std::vector<double> betas) {
  NoiseSchedule s;
  s.T = static_cast<int>(betas.size());
  s.beta = std::move(betas);
  double prod = 1.0;
  for (double b : s.beta) {
    prod *= 1.0 - b;
    s.alpha_bar.push_back(prod);
  }
  s.validate();
  return s;
}

void NoiseSchedule::validate() const {
  require(T >= 2 && beta.size() == static_cast<std::size_t>(T) && alpha_bar.size() == beta.size(),
          ErrorCode::invalid_input, "schedule arrays must have length T");
  for (int t = 0; t < T; ++t) {
    const double b = beta[static_cast<std::size_t>(t)];
    require(b > 0.0 && b < 1.0, ErrorCode::invalid_input, "beta must lie in (0,1)");
    if (t > 0) {
      require(alpha_bar[static_cast<std::size_t>(t)] < alpha_bar[static_cast<std::size_t>(t - 1)],
              ErrorCode::invalid_input, "alpha_bar must be strictly decreasing");
    }
  }
  require(alpha_bar.back() < 0.05, ErrorCode::invalid_input, "alpha_bar[T-1] must be below 0.05");
}

double NoiseSchedule::posterior_variance(int t) const {
  check_step(*this, t, 1);
  const auto i = static_cast<std::size_t>(t);
  return beta[i] * (1.0 - alpha_bar[i - 1]) / (1.0 - alpha_bar[i]);
}

Matrix forward_noise_with(const NoiseSchedule& s, const Matrix& x0, int t, const Matrix& z) {
  check_step(s, t, 0);
  require(z.rows() == x0.rows() && z.cols() == x0.cols(), ErrorCode::invalid_input, "noise shape mismatch");
  const double ab = s.alpha_bar[static_cast<std::size_t>(t)];
  return std::sqrt(ab) * x0 + std::sqrt(1.0 - ab) * z;
}

Matrix forward_noise(const NoiseSchedule& s, const Matrix& x0, int t, std::uint64_t seed) {
  Rng rng = make_stream(seed, 0xF0);
  return forward_noise_with(s, x0, t, normal_matrix(rng, x0.rows(), x0.cols()));
}

Matrix predict_x0(const NoiseSchedule& s, const Matrix& x_t, int t, const Matrix& eps) {
  check_step(s, t, 0);
  const double ab = s.alpha_bar[static_cast<std::size_t>(t)];
  return (x_t - std::sqrt(1.0 - ab) * eps) / std::sqrt(ab);
}

Matrix posterior_mean(const NoiseSchedule& s, const Matrix& x_t, int t, const Matrix& eps) {
  check_step(s, t, 1);
  const auto i = static_cast<std::size_t>(t);
  const double b = s.beta[i];
  return (x_t - b / std::sqrt(1.0 - s.alpha_bar[i]) * eps) / std::sqrt(1.0 - b);
}

// ---------------------------------------------------------------- model

Precond preconditioning(const NoiseSchedule& s, int t) {
  constexpr double sd2 = kSigmaData * kSigmaData;
  const double ab = s.alpha_bar[static_cast<std::size_t>(t)];
  const double sigma2 = (1.0 - ab) / ab;
  const double r = std::sqrt(sigma2 + sd2);
  return {sd2 / (sigma2 + sd2), std::sqrt(sigma2) * kSigmaData / r, std::sqrt(ab) / r};
}

Vector time_embedding(int t, int dim) {
  require(dim >= 2 && dim % 2 == 0, ErrorCode::invalid_input, "time embedding dim must be even");
  const int half = dim / 2;
  Vector e(dim);
  for (int i = 0; i < half; ++i) {
    const double freq = std::exp(-std::log(1000.0) * i / half);
    e[i] = std::sin(t * freq);
    e[half + i] = std::cos(t * freq);
  }
  return e;
}

DenoiserModel::DenoiserModel(NoiseSchedule schedule, nn::Shape3 shape, const DdpmConfig& config)
    : schedule_(std::move(schedule)), shape_(shape), config_(config) {
  schedule_.validate();
  require(config.depth >= 1 && config.hidden >= 1, ErrorCode::invalid_input, "bad denoiser size");
  Rng rng = make_stream(config.seed, 0xD1);
  int in = shape.size() + config.time_dim;
  for (int l = 0; l < config.depth; ++l) {
    net_.add(std::make_unique<nn::Linear>(in, config.hidden, rng, std::sqrt(2.0)));
    net_.add(std::make_unique<nn::Elementwise>(nn::Activation::silu, config.hidden));
    in = config.hidden;
  }
  net_.add(std::make_unique<nn::Linear>(in, shape.size(), rng, 0.0));
}

Matrix DenoiserModel::network_input(const Matrix& x_t, std::span<const int> t) const {
  require(x_t.rows() == shape_.size(), ErrorCode::invalid_input, "image size does not match denoiser");
  require(static_cast<std::size_t>(x_t.cols()) == t.size(), ErrorCode::invalid_input, "one step per column required");
  Matrix in(x_t.rows() + config_.time_dim, x_t.cols());
  for (std::size_t j = 0; j < t.size(); ++j) {
    check_step(schedule_, t[j], 0);
    const auto c = static_cast<Eigen::Index>(j);
    in.col(c).head(x_t.rows()) = preconditioning(schedule_, t[j]).c_in * x_t.col(c);
    in.col(c).tail(config_.time_dim) = time_embedding(t[j], config_.time_dim);
  }
  return in;
}

Matrix DenoiserModel::noise_from_output(const Matrix& x_t, std::span<const int> t, const Matrix& f) const {
  Matrix eps(x_t.rows(), x_t.cols());
  for (std::size_t j = 0; j < t.size(); ++j) {
    const auto c = static_cast<Eigen::Index>(j);
    const Precond p = preconditioning(schedule_, t[j]);
    const double ab = schedule_.alpha_bar[static_cast<std::size_t>(t[j])];
    const Vector x0 = p.c_skip * x_t.col(c) / std::sqrt(ab) + p.c_out * f.col(c);
    eps.col(c) = (x_t.col(c) - std::sqrt(ab) * x0) / std::sqrt(1.0 - ab);
  }
  return eps;
}

Matrix DenoiserModel::predict_noise(const Matrix& x_t, std::span<const int> t) const {
  return noise_from_output(x_t, t, net_.forward(network_input(x_t, t)));
}

Matrix DenoiserModel::predict_noise(const Matrix& x_t, int t) const {
  const std::vector<int> ts(static_cast<std::size_t>(x_t.cols()), t);
  return predict_noise(x_t, ts);
}

std::string DenoiserModel::architecture_hash() const {
  std::ostringstream os;
  os << "ddpm-mlp-precond;" << shape_.channels << "x" << shape_.height << "x" << shape_.width << ";time" << config_.time_dim
     << ";" << net_.describe() << ";T" << schedule_.T;
  return fnv1a_hex(os.str());
}

std::string DenoiserModel::id() const {
  std::string bytes = architecture_hash();
  for (const Matrix* m : net_.parameters()) {
    bytes.append(reinterpret_cast<const char*>(m->data()), static_cast<std::size_t>(m->size()) * sizeof(double));
  }
  bytes.append(reinterpret_cast<const char*>(schedule_.beta.data()), schedule_.beta.size() * sizeof(double));
  return fnv1a_hex(bytes);
}

void DenoiserModel::save_into(ArrayContainer& c) const {
  net_.save(c, "net");
  c.put_vector("beta", Eigen::Map<const Vector>(schedule_.beta.data(), schedule_.T));
  c.put_vector("loss_curve", Eigen::Map<const Vector>(loss_curve_.data(), static_cast<Eigen::Index>(loss_curve_.size())));
  c.set_meta("kind", "ddpm");
  c.set_meta("T", std::to_string(schedule_.T));
  c.set_meta("image_shape", std::to_string(shape_.channels) + "," + std::to_string(shape_.height) + "," +
                                std::to_string(shape_.width));
  c.set_meta("hidden", std::to_string(config_.hidden));
  c.set_meta("depth", std::to_string(config_.depth));
  c.set_meta("time_dim", std::to_string(config_.time_dim));
  c.set_meta("steps", std::to_string(config_.steps));
  c.set_meta("seed", std::to_string(config_.seed));
  c.set_meta("variance", "posterior");
  c.set_meta("parameterization", "preconditioned-x0");
  c.set_meta("initial_loss", join({initial_loss_}));
  c.set_meta("final_loss", join({final_loss_}));
  c.set_meta("architecture_hash", architecture_hash());
  c.set_meta("model_id", id());
}

void DenoiserModel::save(const std::filesystem::path& path) const {
  ArrayContainer c;
  save_into(c);
  c.save(path);
}

DenoiserModel DenoiserModel::load_from(const ArrayContainer& c) {
  require(c.meta_or("kind", "") == "ddpm", ErrorCode::parse, "not a diffusion checkpoint");
  DdpmConfig cfg;
  cfg.hidden = std::stoi(c.meta("hidden"));
  cfg.depth = std::stoi(c.meta("depth"));
  cfg.time_dim = std::stoi(c.meta("time_dim"));
  cfg.steps = std::stoi(c.meta("steps"));
  cfg.seed = std::stoull(c.meta("seed"));
  const auto dims = split(c.meta("image_shape"), ',');
  require(dims.size() == 3, ErrorCode::parse, "bad image_shape in manifest");
  const nn::Shape3 shape{std::stoi(dims[0]), std::stoi(dims[1]), std::stoi(dims[2])};
  const Vector beta = c.get_vector("beta");
  DenoiserModel m(NoiseSchedule::from_betas(std::vector<double>(beta.data(), beta.data() + beta.size())), shape, cfg);
  m.net_.load(c, "net");
  const Vector curve = c.get_vector("loss_curve");
  m.loss_curve_.assign(curve.data(), curve.data() + curve.size());
  m.initial_loss_ = parse_number(c.meta("initial_loss"));
  m.final_loss_ = parse_number(c.meta("final_loss"));
  require(m.architecture_hash() == c.meta("architecture_hash"), ErrorCode::parse, "architecture hash mismatch");
  return m;
}

DenoiserModel DenoiserModel::load(const std::filesystem::path& path) { return load_from(ArrayContainer::load(path)); }

DenoiserModel train_ddpm(const Matrix& images, nn::Shape3 shape, const NoiseSchedule& schedule,
                         const DdpmConfig& config) {
  require(images.rows() == shape.size(), ErrorCode::invalid_input, "image shape mismatch");
  require(images.cols() >= 100, ErrorCode::invalid_input, "diffusion training needs at least 100 images");
  require(images.minCoeff() >= 0.0 && images.maxCoeff() <= 1.0, ErrorCode::invalid_input, "images must be in [0,1]");
  DenoiserModel model(schedule, shape, config);
  const Matrix data = to_model_space(images);
  auto params = model.net_.parameters();
  nn::Adam adam(params, config.lr);
  Rng rng = make_stream(config.seed, 0xD2);
  const int batch = config.batch;
  const int curve_every = std::max(1, config.steps / 100);
  double window = 0.0;
  int window_n = 0;

  // Fixed evaluation batch for the recorded initial and final losses.
  const int n_eval = 256;
  Rng eval_rng = make_stream(config.seed, 0xD3);
  std::vector<int> eval_t(static_cast<std::size_t>(n_eval));
  Matrix eval_x(data.rows(), n_eval), eval_target(data.rows(), n_eval);
  for (int b = 0; b < n_eval; ++b) {
    const int t = static_cast<int>(uniform_index(eval_rng, static_cast<std::size_t>(schedule.T)));
    eval_t[static_cast<std::size_t>(b)] = t;
    const Vector x0 = data.col(static_cast<Eigen::Index>(uniform_index(eval_rng, static_cast<std::size_t>(data.cols()))));
    const double ab = schedule.alpha_bar[static_cast<std::size_t>(t)];
    eval_x.col(b) = std::sqrt(ab) * x0 + std::sqrt(1.0 - ab) * normal_vector(eval_rng, data.rows());
    const Precond p = preconditioning(schedule, t);
    eval_target.col(b) = (x0 - p.c_skip * eval_x.col(b) / std::sqrt(ab)) / p.c_out;
  }
  auto eval_loss = [&] {
    const Matrix d = model.net_.forward(model.network_input(eval_x, eval_t), nullptr) - eval_target;
    return d.squaredNorm() / static_cast<double>(d.size());
  };
  model.initial_loss_ = eval_loss();

  for (int step = 0; step < config.steps; ++step) {
    // Cosine decay to a tenth of the base rate.
    const double progress = static_cast<double>(step) / std::max(1, config.steps);
    adam.set_learning_rate(config.lr * (0.1 + 0.45 * (1.0 + std::cos(3.141592653589793 * progress))));
    Matrix x0(data.rows(), batch);
    std::vector<int> ts(static_cast<std::size_t>(batch));
    for (int b = 0; b < batch; ++b) {
      x0.col(b) = data.col(static_cast<Eigen::Index>(uniform_index(rng, static_cast<std::size_t>(data.cols()))));
      ts[static_cast<std::size_t>(b)] = static_cast<int>(uniform_index(rng, static_cast<std::size_t>(schedule.T)));
    }
    const Matrix z = normal_matrix(rng, data.rows(), batch);
    Matrix x_t(data.rows(), batch);
    for (int b = 0; b < batch; ++b) {
      const double ab = schedule.alpha_bar[static_cast<std::size_t>(ts[static_cast<std::size_t>(b)])];
      x_t.col(b) = std::sqrt(ab) * x0.col(b) + std::sqrt(1.0 - ab) * z.col(b);
    }
    nn::Sequential::Tape tape;
    const Matrix pred = model.net_.forward(model.network_input(x_t, ts), &tape);
    Matrix target(data.rows(), batch);
    for (int b = 0; b < batch; ++b) {
      const Precond p = preconditioning(schedule, ts[static_cast<std::size_t>(b)]);
      const double ab = schedule.alpha_bar[static_cast<std::size_t>(ts[static_cast<std::size_t>(b)])];
      target.col(b) = (x0.col(b) - p.c_skip * x_t.col(b) / std::sqrt(ab)) / p.c_out;
    }
    const Matrix diff = pred - target;
    const double loss = diff.squaredNorm() / static_cast<double>(diff.size());
    if (!std::isfinite(loss)) fail(ErrorCode::training, "non-finite diffusion loss at step " + std::to_string(step));
    auto grads = model.net_.zero_grads();
    model.net_.backward(tape, diff * (2.0 / static_cast<double>(diff.size())), &grads);
    adam.step(params, grads);

    window += loss;
    if (++window_n == curve_every) {
      model.loss_curve_.push_back(window / window_n);
      window = 0.0;
      window_n = 0;
    }
  }
  model.final_loss_ = eval_loss();
  return model;
}

// ---------------------------------------------------------------- sampling

Matrix reverse_step_with_noise(const DenoiserModel& model, const Matrix& x_t, int t, const Matrix& z) {
  const auto& s = model.schedule();
  check_step(s, t, 1);
  Matrix mu = posterior_mean(s, x_t, t, model.predict_noise(x_t, t));
  if (t > 1) mu += std::sqrt(s.posterior_variance(t)) * z;
  return mu;
}

Matrix reverse_step(const DenoiserModel& model, const Matrix& x_t, int t, std::uint64_t seed) {
  Rng rng = make_stream(seed, 0xF1);
  return reverse_step_with_noise(model, x_t, t, normal_matrix(rng, x_t.rows(), x_t.cols()));
}

void GuidanceConfig::validate() const {
  require(s >= 0.0 && std::isfinite(s), ErrorCode::config, "guidance scale must be non-negative");
  require(t0_low_frac >= 0.0 && t0_low_frac <= t0_high_frac && t0_high_frac <= 1.0, ErrorCode::config,
          "t0 fractions must satisfy 0 <= low <= high <= 1");
  require(sign == 1 || sign == -1, ErrorCode::config, "guidance sign must be +1 or -1");
}

Matrix similarity_gradient(const embed::JointEmbedder& embedder, const Matrix& x_t, const Matrix& text_embeddings) {
  Matrix g;
  embedder.similarity(x_t, text_embeddings, &g);
  if (!g.allFinite()) fail(ErrorCode::numeric, "non-finite guidance gradient");
  return g;
}

Matrix guided_mean(const DenoiserModel& model, const embed::JointEmbedder& embedder, const Matrix& x_t,
                   std::span<const int> t, const Matrix& text_embeddings, const GuidanceConfig& guidance) {
  guidance.validate();
  const auto& s = model.schedule();
  const Matrix eps = model.predict_noise(x_t, t);
  Matrix mu(x_t.rows(), x_t.cols());
  for (Eigen::Index j = 0; j < x_t.cols(); ++j) {
    mu.col(j) = posterior_mean(s, x_t.col(j), t[static_cast<std::size_t>(j)], eps.col(j));
  }
  if (guidance.s == 0.0) return mu;
  const Matrix g = similarity_gradient(embedder, x_t, text_embeddings);
  for (Eigen::Index j = 0; j < x_t.cols(); ++j) {
    mu.col(j) += guidance.sign * guidance.s * s.posterior_variance(t[static_cast<std::size_t>(j)]) * g.col(j);
  }
  return mu;
}

Matrix guided_reverse_step_with_noise(const DenoiserModel& model, const embed::JointEmbedder& embedder,
                                      const Matrix& x_t, int t, const std::string& prompt,
                                      const GuidanceConfig& guidance, const Matrix& z) {
  require(!prompt.empty(), ErrorCode::invalid_input, "empty prompt");
  check_step(model.schedule(), t, 1);
  const Matrix text = embedder.encode_texts({prompt}).replicate(1, x_t.cols());
  const std::vector<int> ts(static_cast<std::size_t>(x_t.cols()), t);
  Matrix mu = guided_mean(model, embedder, x_t, ts, text, guidance);
  if (t > 1) mu += std::sqrt(model.schedule().posterior_variance(t)) * z;
  return mu;
}

Matrix guided_reverse_step(const DenoiserModel& model, const embed::JointEmbedder& embedder, const Matrix& x_t, int t,
                           const std::string& prompt, const GuidanceConfig& guidance, std::uint64_t seed) {
  Rng rng = make_stream(seed, 0xF1);
  return guided_reverse_step_with_noise(model, embedder, x_t, t, prompt, guidance,
                                        normal_matrix(rng, x_t.rows(), x_t.cols()));
}

std::pair<int, int> t0_range(const NoiseSchedule& schedule, const GuidanceConfig& guidance) {
  guidance.validate();
  int lo = static_cast<int>(std::ceil(guidance.t0_low_frac * schedule.T - 1e-9));
  int hi = static_cast<int>(std::floor(guidance.t0_high_frac * schedule.T + 1e-9));
  lo = std::max(lo, 1);
  hi = std::min(hi, schedule.T - 1);
  if (lo > hi) fail(ErrorCode::config, "empty t0 range");
  return {lo, hi};
}

int sample_t0(const NoiseSchedule& schedule, const GuidanceConfig& guidance, Rng& rng) {
  const auto [lo, hi] = t0_range(schedule, guidance);
  return lo + static_cast<int>(uniform_index(rng, static_cast<std::size_t>(hi - lo + 1)));
}

int sample_t0(const NoiseSchedule& schedule, const GuidanceConfig& guidance, std::uint64_t seed) {
  Rng rng = make_stream(seed, 0xF2);
  return sample_t0(schedule, guidance, rng);
}

Matrix sample(const DenoiserModel& model, int n, std::uint64_t seed) {
  require(n >= 1, ErrorCode::invalid_input, "sample count must be positive");
  Rng rng = make_stream(seed, 0xF3);
  const int d = model.shape().size();
  Matrix x = normal_matrix(rng, d, n);
  for (int t = model.schedule().T - 1; t >= 1; --t) {
    x = reverse_step_with_noise(model, x, t, normal_matrix(rng, d, n));
  }
  return x;
}

}  // namespace rodeo::diffusion
