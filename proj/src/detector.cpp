#include "rodeo/detector.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "rodeo/config.hpp"
#include "rodeo/container.hpp"
#include "rodeo/error.hpp"
#include "rodeo/imaging.hpp"

namespace rodeo::detect {

std::string to_string(ScoreMode m) { return m == ScoreMode::softmax ? "softmax" : "logit"; }

ScoreMode parse_score_mode(const std::string& s) {
  if (s == "softmax") return ScoreMode::softmax;
  if (s == "logit") return ScoreMode::logit;
  fail(ErrorCode::config, "unknown score mode '" + s + "' (softmax|logit)");
}

Matrix sign(const Matrix& m) {
  return m.unaryExpr([](double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); });
}

Detector::Detector(nn::Shape3 shape, int k, std::uint64_t seed, const DetectorArch& arch, ScoreMode mode)
    : shape_(shape), k_(k), arch_(arch), mode_(mode) {
  require(k >= 1, ErrorCode::invalid_input, "K must be at least 1");
  require(shape.height % 4 == 0 && shape.width % 4 == 0, ErrorCode::invalid_input,
          "image sides must be divisible by 4");
  Rng rng = make_stream(seed, 0xDE7);
  auto c1 = std::make_unique<nn::Conv2d>(shape, arch.conv1, 3, rng);
  const auto s1 = c1->out_shape();
  net_.add(std::move(c1));
  net_.add(std::make_unique<nn::Elementwise>(nn::Activation::relu, s1.size()));
  auto p1 = std::make_unique<nn::AvgPool2>(s1);
  const auto s2 = p1->out_shape();
  net_.add(std::move(p1));
  auto c2 = std::make_unique<nn::Conv2d>(s2, arch.conv2, 3, rng);
  const auto s3 = c2->out_shape();
  net_.add(std::move(c2));
  net_.add(std::make_unique<nn::Elementwise>(nn::Activation::relu, s3.size()));
  auto p2 = std::make_unique<nn::AvgPool2>(s3);
  const int flat = p2->out_size();
  net_.add(std::move(p2));
  net_.add(std::make_unique<nn::Linear>(flat, arch.hidden, rng, std::sqrt(2.0)));
  net_.add(std::make_unique<nn::Elementwise>(nn::Activation::relu, arch.hidden));
  net_.add(std::make_unique<nn::Linear>(arch.hidden, k + 1, rng));
}

Matrix Detector::logits(const Matrix& x) const {
  require(x.rows() == shape_.size(), ErrorCode::invalid_input, "image size does not match detector");
  return net_.forward(x);
}

Vector Detector::score(const Matrix& x, Matrix* grad) const {
  require(x.rows() == shape_.size(), ErrorCode::invalid_input, "image size does not match detector");
  nn::Sequential::Tape tape;
  const Matrix z = net_.forward(x, grad ? &tape : nullptr);
  Vector out(z.cols());
  Matrix dz;
  if (mode_ == ScoreMode::logit) {
    out = z.row(k_).transpose();
    if (grad) {
      dz = Matrix::Zero(z.rows(), z.cols());
      dz.row(k_).setOnes();
    }
  } else {
    const Matrix p = nn::softmax(z);
    out = p.row(k_).transpose();
    if (grad) {
      // d p_K / d z_j = p_K (delta_jK - p_j)
      dz = -p;
      dz.row(k_).array() += 1.0;
      dz.array().rowwise() *= p.row(k_).array();
    }
  }
  if (grad) *grad = net_.backward(tape, dz, nullptr);
  return out;
}

double Detector::loss(const Matrix& x, std::span<const int> labels, Matrix* grad) const {
  require(static_cast<std::size_t>(x.cols()) == labels.size(), ErrorCode::invalid_input, "one label per column");
  std::vector<int> zero_based(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    require(labels[i] >= 1 && labels[i] <= k_ + 1, ErrorCode::invalid_input, "label outside 1..K+1");
    zero_based[i] = labels[i] - 1;
  }
  nn::Sequential::Tape tape;
  const Matrix z = net_.forward(x, grad ? &tape : nullptr);
  Matrix dz;
  const double l = nn::cross_entropy(z, zero_based, grad ? &dz : nullptr);
  if (grad) *grad = net_.backward(tape, dz, nullptr);
  return l;
}

std::string Detector::id() const {
  std::string bytes = net_.describe() + to_string(mode_);
  for (const Matrix* m : net_.parameters()) {
    bytes.append(reinterpret_cast<const char*>(m->data()), static_cast<std::size_t>(m->size()) * sizeof(double));
  }
  return fnv1a_hex(bytes);
}

void Detector::save_into(ArrayContainer& c) const {
  net_.save(c, "net");
  c.set_meta("kind", "detector");
  c.set_meta("K", std::to_string(k_));
  c.set_meta("image_shape", std::to_string(shape_.channels) + "," + std::to_string(shape_.height) + "," +
                                std::to_string(shape_.width));
  c.set_meta("conv1", std::to_string(arch_.conv1));
  c.set_meta("conv2", std::to_string(arch_.conv2));
  c.set_meta("hidden", std::to_string(arch_.hidden));
  c.set_meta("score_mode", to_string(mode_));
  c.set_meta("detector_id", id());
}

Detector Detector::load_from(const ArrayContainer& c) {
  require(c.meta_or("kind", "") == "detector", ErrorCode::parse, "not a detector checkpoint");
  const auto dims = split(c.meta("image_shape"), ',');
  require(dims.size() == 3, ErrorCode::parse, "bad image_shape in manifest");
  DetectorArch arch{std::stoi(c.meta("conv1")), std::stoi(c.meta("conv2")), std::stoi(c.meta("hidden"))};
  Detector d({std::stoi(dims[0]), std::stoi(dims[1]), std::stoi(dims[2])}, std::stoi(c.meta("K")), 0, arch,
             parse_score_mode(c.meta("score_mode")));
  d.net_.load(c, "net");
  return d;
}

void TrainConfig::validate() const {
  require(epsilon >= 0.0, ErrorCode::config, "epsilon must be non-negative");
  require(inner_steps >= 1, ErrorCode::config, "inner steps must be at least 1");
  require(epochs >= 0 && batch >= 1 && lr > 0.0, ErrorCode::config, "bad training schedule");
}

LabeledSet build_training_set(const data::Dataset& inliers, const Matrix& exposures, std::uint64_t seed) {
  inliers.validate();
  require(exposures.cols() > 0, ErrorCode::invalid_input, "exposure set is empty");
  require(exposures.rows() == inliers.shape.size(), ErrorCode::invalid_input, "exposure shape mismatch");
  const int k = inliers.num_classes();
  const Eigen::Index n = inliers.images.cols() + exposures.cols();
  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  Rng rng = make_stream(seed, 0x7A1);
  std::shuffle(order.begin(), order.end(), rng);
  LabeledSet out;
  out.shape = inliers.shape;
  out.k = k;
  out.images.resize(inliers.images.rows(), n);
  out.labels.resize(static_cast<std::size_t>(n));
  for (Eigen::Index j = 0; j < n; ++j) {
    const int src = order[static_cast<std::size_t>(j)];
    if (src < inliers.images.cols()) {
      out.images.col(j) = inliers.images.col(src);
      out.labels[static_cast<std::size_t>(j)] = inliers.labels[static_cast<std::size_t>(src)];
    } else {
      out.images.col(j) = exposures.col(src - inliers.images.cols());
      out.labels[static_cast<std::size_t>(j)] = k + 1;
    }
  }
  return out;
}

Matrix pgd_inner_max(const Detector& det, const Matrix& x, std::span<const int> labels, const TrainConfig& config,
                     Rng& rng) {
  if (config.epsilon == 0.0) return x;
  const double eps = config.epsilon, alpha = config.inner_alpha();
  Matrix cur = project_linf_box(x + uniform_matrix(rng, x.rows(), x.cols(), -eps, eps), x, eps);
  Matrix best = cur;
  Vector best_loss = Vector::Constant(x.cols(), -std::numeric_limits<double>::infinity());
  std::vector<int> zero_based(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) zero_based[i] = labels[i] - 1;
  const auto& net = det.network();
  for (int step = 0; step <= config.inner_steps; ++step) {
    nn::Sequential::Tape tape;
    const Matrix z = net.forward(cur, &tape);
    const Vector per = nn::cross_entropy_per_sample(z, zero_based);
    if (!per.allFinite()) fail(ErrorCode::numeric, "non-finite loss in PGD inner maximization");
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
      if (per[j] > best_loss[j]) {
        best_loss[j] = per[j];
        best.col(j) = cur.col(j);
      }
    }
    if (step == config.inner_steps) break;
    Matrix dz;
    nn::cross_entropy(z, zero_based, &dz);
    const Matrix g = net.backward(tape, dz, nullptr);
    cur = project_linf_box(cur + alpha * sign(g), x, eps);
  }
  return best;
}

TrainReport adversarial_train(Detector& det, const LabeledSet& data, const TrainConfig& config) {
  config.validate();
  require(data.shape == det.shape() && data.k == det.k(), ErrorCode::invalid_input,
          "training set does not match the detector");
  std::vector<int> in_idx, out_idx;
  for (int i = 0; i < data.size(); ++i) {
    const int y = data.labels[static_cast<std::size_t>(i)];
    require(y >= 1 && y <= data.k + 1, ErrorCode::invalid_input, "label outside 1..K+1");
    (y == data.k + 1 ? out_idx : in_idx).push_back(i);
  }
  require(!in_idx.empty() && !out_idx.empty(), ErrorCode::invalid_input, "need both inliers and exposures");

  TrainReport report;
  if (config.epochs == 0) return report;
  auto& net = det.network();
  auto params = net.parameters();
  nn::Adam adam(params, config.lr);
  Rng rng = make_stream(config.seed, 0xAD7);
  const std::size_t per_side = std::max(in_idx.size(), out_idx.size());

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    // Balanced epoch: the smaller side is resampled with replacement.
    std::vector<int> order;
    auto fill = [&](const std::vector<int>& src) {
      std::vector<int> s = src;
      std::shuffle(s.begin(), s.end(), rng);
      for (std::size_t i = 0; i < per_side; ++i) {
        order.push_back(i < s.size() ? s[i] : src[uniform_index(rng, src.size())]);
      }
    };
    fill(in_idx);
    fill(out_idx);
    std::shuffle(order.begin(), order.end(), rng);

    double total = 0.0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(config.batch)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(config.batch));
      Matrix x(data.images.rows(), static_cast<Eigen::Index>(end - start));
      std::vector<int> y, zero_based;
      for (std::size_t i = start; i < end; ++i) {
        x.col(static_cast<Eigen::Index>(i - start)) = data.images.col(order[i]);
        y.push_back(data.labels[static_cast<std::size_t>(order[i])]);
        zero_based.push_back(y.back() - 1);
      }
      const Matrix xa = config.adversarial ? pgd_inner_max(det, x, y, config, rng) : x;
      nn::Sequential::Tape tape;
      const Matrix z = net.forward(xa, &tape);
      Matrix dz;
      const double l = nn::cross_entropy(z, zero_based, &dz);
      if (!std::isfinite(l)) fail(ErrorCode::training, "non-finite detector loss in epoch " + std::to_string(epoch));
      auto grads = net.zero_grads();
      net.backward(tape, dz, &grads);
      adam.step(params, grads);
      total += l * static_cast<double>(end - start);
    }
    report.epoch_loss.push_back(total / static_cast<double>(order.size()));
  }
  return report;
}

void save_detector(const std::filesystem::path& path, const Detector& det, const TrainConfig& config,
                   const TrainReport& report, const std::vector<std::string>& inlier_labels) {
  require(inlier_labels.empty() || static_cast<int>(inlier_labels.size()) == det.k(), ErrorCode::invalid_input,
          "one inlier label name per detector class expected");
  ArrayContainer c;
  det.save_into(c);
  if (!inlier_labels.empty()) c.put_strings("inlier_labels", inlier_labels);
  c.put_vector("epoch_loss",
               Eigen::Map<const Vector>(report.epoch_loss.data(), static_cast<Eigen::Index>(report.epoch_loss.size())));
  std::ostringstream eps;
  eps.precision(17);
  eps << config.epsilon;
  c.set_meta("epsilon", eps.str());
  c.set_meta("epochs", std::to_string(config.epochs));
  c.set_meta("inner_steps", std::to_string(config.inner_steps));
  c.set_meta("adversarial", config.adversarial ? "true" : "false");
  c.set_meta("seed", std::to_string(config.seed));
  c.save(path);
}

Detector load_detector(const std::filesystem::path& path) { return Detector::load_from(ArrayContainer::load(path)); }

std::vector<std::string> load_detector_labels(const std::filesystem::path& path) {
  const auto c = ArrayContainer::load(path);
  return c.has("inlier_labels") ? c.get_strings("inlier_labels") : std::vector<std::string>{};
}

}  // namespace rodeo::detect
