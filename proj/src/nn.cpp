#include "rodeo/nn.hpp"

#include <cmath>
#include <sstream>

#include "rodeo/container.hpp"
#include "rodeo/error.hpp"

namespace rodeo::nn {

namespace {

constexpr Eigen::Index kConvChunk = 64;

Matrix scaled_normal(Rng& rng, Eigen::Index rows, Eigen::Index cols, double stddev) {
  if (stddev == 0.0) return Matrix::Zero(rows, cols);
  return normal_matrix(rng, rows, cols) * stddev;
}

}  // namespace

// ---------------------------------------------------------------- Linear

Linear::Linear(int in, int out, Rng& rng, double gain)
    : weight_(scaled_normal(rng, out, in, gain / std::sqrt(static_cast<double>(in)))),
      bias_(Matrix::Zero(out, 1)) {}

Matrix Linear::forward(const Matrix& x, Matrix* cache) const {
  if (cache) *cache = x;
  Matrix y = weight_ * x;
  y.colwise() += bias_.col(0);
  return y;
}

Matrix Linear::backward(const Matrix& grad_out, const Matrix& cache, Matrix* grads) const {
  if (grads) {
    grads[0].noalias() += grad_out * cache.transpose();
    grads[1] += grad_out.rowwise().sum();
  }
  return weight_.transpose() * grad_out;
}

// ---------------------------------------------------------------- Conv2d

Conv2d::Conv2d(Shape3 in, int out_channels, int kernel, Rng& rng)
    : in_(in), out_channels_(out_channels), kernel_(kernel) {
  require(kernel % 2 == 1, ErrorCode::invalid_input, "conv kernel must be odd");
  const int fan_in = in.channels * kernel * kernel;
  weight_ = scaled_normal(rng, out_channels, fan_in, std::sqrt(2.0 / fan_in));
  bias_ = Matrix::Zero(out_channels, 1);
}

void Conv2d::im2col(const Matrix& x, Eigen::Index first, Eigen::Index count, Matrix& cols) const {
  const int H = in_.height, W = in_.width, HW = in_.plane(), k = kernel_, pad = kernel_ / 2;
  cols.setZero(static_cast<Eigen::Index>(in_.channels) * k * k, count * HW);
  for (Eigen::Index b = 0; b < count; ++b) {
    const double* src = x.col(first + b).data();
    for (int c = 0; c < in_.channels; ++c) {
      for (int ky = 0; ky < k; ++ky) {
        for (int kx = 0; kx < k; ++kx) {
          const Eigen::Index row = (static_cast<Eigen::Index>(c) * k + ky) * k + kx;
          for (int oy = 0; oy < H; ++oy) {
            const int iy = oy + ky - pad;
            if (iy < 0 || iy >= H) continue;
            for (int ox = 0; ox < W; ++ox) {
              const int ix = ox + kx - pad;
              if (ix < 0 || ix >= W) continue;
              cols(row, b * HW + oy * W + ox) = src[c * HW + iy * W + ix];
            }
          }
        }
      }
    }
  }
}

void Conv2d::col2im(const Matrix& cols, Eigen::Index first, Eigen::Index count, Matrix& dx) const {
  const int H = in_.height, W = in_.width, HW = in_.plane(), k = kernel_, pad = kernel_ / 2;
  for (Eigen::Index b = 0; b < count; ++b) {
    double* dst = dx.col(first + b).data();
    for (int c = 0; c < in_.channels; ++c) {
      for (int ky = 0; ky < k; ++ky) {
        for (int kx = 0; kx < k; ++kx) {
          const Eigen::Index row = (static_cast<Eigen::Index>(c) * k + ky) * k + kx;
          for (int oy = 0; oy < H; ++oy) {
            const int iy = oy + ky - pad;
            if (iy < 0 || iy >= H) continue;
            for (int ox = 0; ox < W; ++ox) {
              const int ix = ox + kx - pad;
              if (ix < 0 || ix >= W) continue;
              dst[c * HW + iy * W + ix] += cols(row, b * HW + oy * W + ox);
            }
          }
        }
      }
    }
  }
}

Matrix Conv2d::forward(const Matrix& x, Matrix* cache) const {
  require(x.rows() == in_.size(), ErrorCode::invalid_input, "conv2d input size mismatch");
  if (cache) *cache = x;
  const Eigen::Index n = x.cols(), HW = in_.plane();
  Matrix out(static_cast<Eigen::Index>(out_channels_) * HW, n);
  Matrix cols, tmp;
  for (Eigen::Index first = 0; first < n; first += kConvChunk) {
    const Eigen::Index count = std::min(kConvChunk, n - first);
    im2col(x, first, count, cols);
    tmp.noalias() = weight_ * cols;
    tmp.colwise() += bias_.col(0);
    for (Eigen::Index b = 0; b < count; ++b) {
      Eigen::Map<Matrix>(out.col(first + b).data(), HW, out_channels_) = tmp.middleCols(b * HW, HW).transpose();
    }
  }
  return out;
}

Matrix Conv2d::backward(const Matrix& grad_out, const Matrix& cache, Matrix* grads) const {
  const Eigen::Index n = grad_out.cols(), HW = in_.plane();
  Matrix dx = Matrix::Zero(in_.size(), n);
  Matrix cols, gtmp(out_channels_, kConvChunk * HW), dcols;
  for (Eigen::Index first = 0; first < n; first += kConvChunk) {
    const Eigen::Index count = std::min(kConvChunk, n - first);
    gtmp.resize(out_channels_, count * HW);
    for (Eigen::Index b = 0; b < count; ++b) {
      gtmp.middleCols(b * HW, HW) =
          Eigen::Map<const Matrix>(grad_out.col(first + b).data(), HW, out_channels_).transpose();
    }
    if (grads) {
      im2col(cache, first, count, cols);
      grads[0].noalias() += gtmp * cols.transpose();
      grads[1] += gtmp.rowwise().sum();
    }
    dcols.noalias() = weight_.transpose() * gtmp;
    col2im(dcols, first, count, dx);
  }
  return dx;
}

// ---------------------------------------------------------------- AvgPool2

AvgPool2::AvgPool2(Shape3 in) : in_(in) {
  require(in.height % 2 == 0 && in.width % 2 == 0, ErrorCode::invalid_input, "avgpool2 needs even spatial size");
}

Matrix AvgPool2::forward(const Matrix& x, Matrix*) const {
  const int H = in_.height, W = in_.width, h = H / 2, w = W / 2;
  Matrix out(static_cast<Eigen::Index>(in_.channels) * h * w, x.cols());
  for (Eigen::Index b = 0; b < x.cols(); ++b) {
    const double* src = x.col(b).data();
    double* dst = out.col(b).data();
    for (int c = 0; c < in_.channels; ++c) {
      const double* s = src + c * H * W;
      for (int y = 0; y < h; ++y) {
        for (int xx = 0; xx < w; ++xx) {
          const int i = 2 * y * W + 2 * xx;
          dst[(c * h + y) * w + xx] = 0.25 * (s[i] + s[i + 1] + s[i + W] + s[i + W + 1]);
        }
      }
    }
  }
  return out;
}

Matrix AvgPool2::backward(const Matrix& grad_out, const Matrix&, Matrix*) const {
  const int H = in_.height, W = in_.width, h = H / 2, w = W / 2;
  Matrix dx(in_.size(), grad_out.cols());
  for (Eigen::Index b = 0; b < grad_out.cols(); ++b) {
    const double* g = grad_out.col(b).data();
    double* d = dx.col(b).data();
    for (int c = 0; c < in_.channels; ++c) {
      for (int y = 0; y < H; ++y) {
        for (int xx = 0; xx < W; ++xx) {
          d[(c * H + y) * W + xx] = 0.25 * g[(c * h + y / 2) * w + xx / 2];
        }
      }
    }
  }
  return dx;
}

// ---------------------------------------------------------------- activations

Matrix activate(Activation act, const Matrix& x) {
  switch (act) {
    case Activation::relu: return x.cwiseMax(0.0);
    case Activation::silu: return x.array() / (1.0 + (-x.array()).exp());
    case Activation::tanh: return x.array().tanh();
  }
  return x;
}

Matrix activate_backward(Activation act, const Matrix& x, const Matrix& g) {
  switch (act) {
    case Activation::relu: return (x.array() > 0.0).select(g, 0.0);
    case Activation::silu: {
      const Eigen::ArrayXXd s = 1.0 / (1.0 + (-x.array()).exp());
      return g.array() * (s * (1.0 + x.array() * (1.0 - s)));
    }
    case Activation::tanh: {
      const Eigen::ArrayXXd t = x.array().tanh();
      return g.array() * (1.0 - t.square());
    }
  }
  return g;
}

std::string Elementwise::kind() const {
  switch (act_) {
    case Activation::relu: return "relu";
    case Activation::silu: return "silu";
    case Activation::tanh: return "tanh";
  }
  return "?";
}

Matrix Elementwise::forward(const Matrix& x, Matrix* cache) const {
  if (cache) *cache = x;
  return activate(act_, x);
}

Matrix Elementwise::backward(const Matrix& grad_out, const Matrix& cache, Matrix*) const {
  return activate_backward(act_, cache, grad_out);
}

// ---------------------------------------------------------------- Sequential

Sequential::Sequential(const Sequential& other) {
  for (const auto& l : other.layers_) layers_.push_back(l->clone());
}

Sequential& Sequential::operator=(const Sequential& other) {
  if (this != &other) {
    layers_.clear();
    for (const auto& l : other.layers_) layers_.push_back(l->clone());
  }
  return *this;
}

void Sequential::add(std::unique_ptr<Layer> layer) {
  if (!layers_.empty()) {
    require(layers_.back()->out_size() == layer->in_size(), ErrorCode::invalid_input,
            "layer size mismatch adding " + layer->kind());
  }
  layers_.push_back(std::move(layer));
}

Matrix Sequential::forward(const Matrix& x, Tape* tape) const {
  if (tape) tape->caches.assign(layers_.size(), Matrix());
  Matrix h = x;
  for (std::size_t i = 0; i < layers_.size(); ++i) h = layers_[i]->forward(h, tape ? &tape->caches[i] : nullptr);
  return h;
}

Matrix Sequential::backward(const Tape& tape, const Matrix& grad_out, std::vector<Matrix>* grads) const {
  require(tape.caches.size() == layers_.size(), ErrorCode::invalid_input, "tape does not match network");
  std::vector<std::size_t> offsets(layers_.size());
  std::size_t offset = 0;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    offsets[i] = offset;
    offset += layers_[i]->parameters().size();
  }
  Matrix g = grad_out;
  for (std::size_t i = layers_.size(); i-- > 0;) {
    Matrix* slot = grads && !layers_[i]->parameters().empty() ? grads->data() + offsets[i] : nullptr;
    g = layers_[i]->backward(g, tape.caches[i], slot);
  }
  return g;
}

std::vector<Matrix*> Sequential::parameters() {
  std::vector<Matrix*> out;
  for (auto& l : layers_) {
    auto p = l->parameters();
    out.insert(out.end(), p.begin(), p.end());
  }
  return out;
}

std::vector<const Matrix*> Sequential::parameters() const {
  std::vector<const Matrix*> out;
  for (const auto& l : layers_) {
    auto p = static_cast<const Layer&>(*l).parameters();
    out.insert(out.end(), p.begin(), p.end());
  }
  return out;
}

std::vector<Matrix> Sequential::zero_grads() const {
  std::vector<Matrix> out;
  for (const Matrix* p : parameters()) out.push_back(Matrix::Zero(p->rows(), p->cols()));
  return out;
}

std::size_t Sequential::parameter_count() const {
  std::size_t n = 0;
  for (const Matrix* p : parameters()) n += static_cast<std::size_t>(p->size());
  return n;
}

int Sequential::in_size() const { return layers_.empty() ? 0 : layers_.front()->in_size(); }
int Sequential::out_size() const { return layers_.empty() ? 0 : layers_.back()->out_size(); }

std::string Sequential::describe() const {
  std::ostringstream os;
  for (const auto& l : layers_) os << l->kind() << "(" << l->in_size() << "->" << l->out_size() << ");";
  return os.str();
}

void Sequential::save(ArrayContainer& out, const std::string& prefix) const {
  save_matrices(out, prefix, parameters());
}

void Sequential::load(const ArrayContainer& in, const std::string& prefix) {
  load_matrices(in, prefix, parameters());
}

void save_matrices(ArrayContainer& out, const std::string& prefix, const std::vector<const Matrix*>& mats) {
  for (std::size_t i = 0; i < mats.size(); ++i) out.put_matrix(prefix + "." + std::to_string(i), *mats[i]);
}

void load_matrices(const ArrayContainer& in, const std::string& prefix, const std::vector<Matrix*>& mats) {
  for (std::size_t i = 0; i < mats.size(); ++i) {
    Matrix m = in.get_matrix(prefix + "." + std::to_string(i));
    require(m.rows() == mats[i]->rows() && m.cols() == mats[i]->cols(), ErrorCode::parse,
            "checkpoint array " + prefix + "." + std::to_string(i) + " has the wrong shape");
    *mats[i] = std::move(m);
  }
}

// ---------------------------------------------------------------- Adam

Adam::Adam(const std::vector<Matrix*>& params, double lr, double beta1, double beta2, double eps)
    : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (const Matrix* p : params) {
    m_.push_back(Matrix::Zero(p->rows(), p->cols()));
    v_.push_back(Matrix::Zero(p->rows(), p->cols()));
  }
}

void Adam::step(const std::vector<Matrix*>& params, const std::vector<Matrix>& grads) {
  require(params.size() == m_.size() && grads.size() == m_.size(), ErrorCode::invalid_input,
          "optimizer parameter count mismatch");
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * grads[i];
    v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * grads[i].cwiseAbs2();
    params[i]->array() -= lr_ * (m_[i].array() / c1) / ((v_[i].array() / c2).sqrt() + eps_);
  }
}

// ---------------------------------------------------------------- losses

Matrix softmax(const Matrix& logits) {
  Matrix p = logits.rowwise() - logits.colwise().maxCoeff();
  p = p.array().exp();
  p.array().rowwise() /= p.colwise().sum().array();
  return p;
}

Vector cross_entropy_per_sample(const Matrix& logits, std::span<const int> labels) {
  require(static_cast<Eigen::Index>(labels.size()) == logits.cols(), ErrorCode::invalid_input, "label count mismatch");
  const Eigen::RowVectorXd mx = logits.colwise().maxCoeff();
  Vector out(logits.cols());
  for (Eigen::Index j = 0; j < logits.cols(); ++j) {
    const double lse = mx[j] + std::log((logits.col(j).array() - mx[j]).exp().sum());
    out[j] = lse - logits(labels[static_cast<std::size_t>(j)], j);
  }
  return out;
}

double cross_entropy(const Matrix& logits, std::span<const int> labels, Matrix* grad) {
  const Vector per = cross_entropy_per_sample(logits, labels);
  const double n = static_cast<double>(logits.cols());
  if (grad) {
    *grad = softmax(logits);
    for (Eigen::Index j = 0; j < logits.cols(); ++j) (*grad)(labels[static_cast<std::size_t>(j)], j) -= 1.0;
    *grad /= n;
  }
  return per.sum() / n;
}

bool all_finite(const Matrix& m) { return m.allFinite(); }

}  // namespace rodeo::nn
