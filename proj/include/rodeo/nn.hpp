#pragma once

#include <memory>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "rodeo/random.hpp"

namespace rodeo {
class ArrayContainer;
}

namespace rodeo::nn {

/// Activations are column-major batches: one sample per column. Image
/// features are flattened channel-major (c, y, x).
using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

struct Shape3 {
  int channels = 1;
  int height = 1;
  int width = 1;

  int size() const { return channels * height * width; }
  int plane() const { return height * width; }
  bool operator==(const Shape3&) const = default;
};

class Layer {
 public:
  virtual ~Layer() = default;

  virtual std::string kind() const = 0;
  virtual int in_size() const = 0;
  virtual int out_size() const = 0;

  /// When `cache` is non-null the layer stores what backward() needs in it.
  virtual Matrix forward(const Matrix& x, Matrix* cache) const = 0;

  /// Returns d(loss)/d(input). When `grads` is non-null, parameter gradients
  /// are accumulated into grads[0..param_count).
  virtual Matrix backward(const Matrix& grad_out, const Matrix& cache, Matrix* grads) const = 0;

  virtual std::vector<Matrix*> parameters() { return {}; }
  virtual std::vector<const Matrix*> parameters() const { return {}; }
  virtual std::unique_ptr<Layer> clone() const = 0;
};

class Linear final : public Layer {
 public:
  Linear(int in, int out, Rng& rng, double gain = 1.0);

  std::string kind() const override { return "linear"; }
  int in_size() const override { return static_cast<int>(weight_.cols()); }
  int out_size() const override { return static_cast<int>(weight_.rows()); }
  Matrix forward(const Matrix& x, Matrix* cache) const override;
  Matrix backward(const Matrix& grad_out, const Matrix& cache, Matrix* grads) const override;
  std::vector<Matrix*> parameters() override { return {&weight_, &bias_}; }
  std::vector<const Matrix*> parameters() const override { return {&weight_, &bias_}; }
  std::unique_ptr<Layer> clone() const override { return std::make_unique<Linear>(*this); }

  Matrix& weight() { return weight_; }
  Matrix& bias() { return bias_; }

 private:
  Matrix weight_;
  Matrix bias_;
};

/// 2-d convolution, stride 1, zero padding (k-1)/2 so spatial size is kept.
class Conv2d final : public Layer {
 public:
  Conv2d(Shape3 in, int out_channels, int kernel, Rng& rng);

  std::string kind() const override { return "conv2d"; }
  int in_size() const override { return in_.size(); }
  int out_size() const override { return out_channels_ * in_.plane(); }
  Matrix forward(const Matrix& x, Matrix* cache) const override;
  Matrix backward(const Matrix& grad_out, const Matrix& cache, Matrix* grads) const override;
  std::vector<Matrix*> parameters() override { return {&weight_, &bias_}; }
  std::vector<const Matrix*> parameters() const override { return {&weight_, &bias_}; }
  std::unique_ptr<Layer> clone() const override { return std::make_unique<Conv2d>(*this); }

  Shape3 out_shape() const { return {out_channels_, in_.height, in_.width}; }

 private:
  void im2col(const Matrix& x, Eigen::Index first, Eigen::Index count, Matrix& cols) const;
  void col2im(const Matrix& cols, Eigen::Index first, Eigen::Index count, Matrix& dx) const;

  Shape3 in_;
  int out_channels_;
  int kernel_;
  Matrix weight_;  // out_channels x (in_channels * k * k)
  Matrix bias_;    // out_channels x 1
};

/// 2x2 average pooling with stride 2.
class AvgPool2 final : public Layer {
 public:
  explicit AvgPool2(Shape3 in);

  std::string kind() const override { return "avgpool2"; }
  int in_size() const override { return in_.size(); }
  int out_size() const override { return in_.channels * (in_.height / 2) * (in_.width / 2); }
  Matrix forward(const Matrix& x, Matrix* cache) const override;
  Matrix backward(const Matrix& grad_out, const Matrix& cache, Matrix* grads) const override;
  std::unique_ptr<Layer> clone() const override { return std::make_unique<AvgPool2>(*this); }

  Shape3 out_shape() const { return {in_.channels, in_.height / 2, in_.width / 2}; }

 private:
  Shape3 in_;
};

enum class Activation { relu, silu, tanh };

class Elementwise final : public Layer {
 public:
  Elementwise(Activation act, int size) : act_(act), size_(size) {}

  std::string kind() const override;
  int in_size() const override { return size_; }
  int out_size() const override { return size_; }
  Matrix forward(const Matrix& x, Matrix* cache) const override;
  Matrix backward(const Matrix& grad_out, const Matrix& cache, Matrix* grads) const override;
  std::unique_ptr<Layer> clone() const override { return std::make_unique<Elementwise>(*this); }

 private:
  Activation act_;
  int size_;
};

Matrix activate(Activation act, const Matrix& x);
/// Derivative of the activation evaluated at pre-activation x, times g.
Matrix activate_backward(Activation act, const Matrix& x, const Matrix& g);

/// Ordered stack of layers.
class Sequential {
 public:
  struct Tape {
    std::vector<Matrix> caches;
  };

  Sequential() = default;
  Sequential(const Sequential& other);
  Sequential& operator=(const Sequential& other);
  Sequential(Sequential&&) noexcept = default;
  Sequential& operator=(Sequential&&) noexcept = default;

  void add(std::unique_ptr<Layer> layer);

  Matrix forward(const Matrix& x, Tape* tape = nullptr) const;
  /// `grads` (if non-null) must come from zero_grads(); it is accumulated into.
  Matrix backward(const Tape& tape, const Matrix& grad_out, std::vector<Matrix>* grads) const;

  std::vector<Matrix*> parameters();
  std::vector<const Matrix*> parameters() const;
  std::vector<Matrix> zero_grads() const;
  std::size_t parameter_count() const;

  std::size_t size() const { return layers_.size(); }
  const Layer& layer(std::size_t i) const { return *layers_[i]; }
  int in_size() const;
  int out_size() const;
  /// Layer kinds and sizes, used for architecture hashes.
  std::string describe() const;

  void save(ArrayContainer& out, const std::string& prefix) const;
  void load(const ArrayContainer& in, const std::string& prefix);

 private:
  std::vector<std::unique_ptr<Layer>> layers_;
};

/// Adam with bias correction.
class Adam {
 public:
  Adam(const std::vector<Matrix*>& params, double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

  void step(const std::vector<Matrix*>& params, const std::vector<Matrix>& grads);
  double learning_rate() const { return lr_; }
  void set_learning_rate(double lr) { lr_ = lr; }

 private:
  double lr_, beta1_, beta2_, eps_;
  long t_ = 0;
  std::vector<Matrix> m_, v_;
};

/// Column-wise softmax, numerically stabilized.
Matrix softmax(const Matrix& logits);

/// Mean cross-entropy over columns; labels are 0-based class indices.
/// Writes d(mean loss)/d(logits) into `grad` when non-null.
double cross_entropy(const Matrix& logits, std::span<const int> labels, Matrix* grad);

/// Per-column cross-entropy (no reduction).
Vector cross_entropy_per_sample(const Matrix& logits, std::span<const int> labels);

bool all_finite(const Matrix& m);

void save_matrices(ArrayContainer& out, const std::string& prefix, const std::vector<const Matrix*>& mats);
void load_matrices(const ArrayContainer& in, const std::string& prefix, const std::vector<Matrix*>& mats);

}  // namespace rodeo::nn
