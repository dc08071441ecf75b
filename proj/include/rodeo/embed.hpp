#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "rodeo/labels.hpp"
#include "rodeo/nn.hpp"

namespace rodeo {
class ArrayContainer;
}

namespace rodeo::embed {

using nn::Matrix;
using nn::Vector;

/// Lowercase whitespace tokenizer. Punctuation is stripped; index 0 is <unk>.
class Tokenizer {
 public:
  static constexpr int kUnk = 0;

  Tokenizer();
  explicit Tokenizer(const std::vector<std::string>& texts);

  static std::vector<std::string> split(const std::string& text);

  std::vector<int> encode(const std::string& text) const;
  int size() const { return static_cast<int>(words_.size()); }
  const std::vector<std::string>& words() const { return words_; }

 private:
  std::vector<std::string> words_;
  std::map<std::string, int> index_;
};

struct EmbedderConfig {
  int d_e = 64;
  int token_dim = 32;
  int text_hidden = 64;
  int conv1 = 8;
  int conv2 = 16;
  int image_hidden = 128;
  int steps = 1500;
  int batch = 64;
  double lr = 2e-3;
  double temperature = 0.1;
  double unk_prob = 0.05;
  /// Forward-noise levels, as alpha_bar values; 1 means clean.
  std::vector<double> noise_aug_schedule{1.0, 1.0, 0.9, 0.7, 0.5, 0.3, 0.15, 0.05};
  std::uint64_t seed = 0;
};

/// Images in model space ([-1,1]), one per column, with a caption each.
struct CaptionedImages {
  Matrix images;
  std::vector<std::string> captions;
  nn::Shape3 shape;
};

/// Paired image encoder E_I and text encoder E_T sharing a d_e-dim space.
/// Inference is const and side-effect free.
class JointEmbedder final : public labels::TextEncoder {
 public:
  JointEmbedder() = default;
  JointEmbedder(nn::Shape3 image_shape, Tokenizer tokenizer, const EmbedderConfig& config);

  /// d_e x n raw (unnormalized) embeddings of model-space images.
  Matrix encode_images(const Matrix& images) const;
  /// Flattened conv-trunk activations (input of the MLP head), one column
  /// per model-space image.
  Matrix image_features(const Matrix& images) const;
  Matrix encode_texts(const std::vector<std::string>& texts) const;
  Vector embed_text(const std::string& text) const override;
  std::string encoder_id() const override { return id(); }

  /// Cosine similarity between each image column and the matching column of
  /// `text_embeddings`. If `grad` is non-null it receives dD/dx per column.
  Vector similarity(const Matrix& images, const Matrix& text_embeddings, Matrix* grad = nullptr) const;

  int embedding_dim() const { return config_.d_e; }
  nn::Shape3 image_shape() const { return shape_; }
  const EmbedderConfig& config() const { return config_; }
  const Tokenizer& tokenizer() const { return tokenizer_; }
  double final_loss() const { return final_loss_; }
  std::size_t image_parameter_count() const { return image_.parameter_count(); }
  std::size_t text_parameter_count() const;

  std::string architecture_hash() const;
  /// Hash over architecture and parameters.
  std::string id() const;

  void save(const std::filesystem::path& path) const;
  static JointEmbedder load(const std::filesystem::path& path);
  void save_into(ArrayContainer& c) const;
  static JointEmbedder load_from(const ArrayContainer& c);

 private:
  friend JointEmbedder train_joint_embedder(const CaptionedImages&, const EmbedderConfig&);

  struct TextTape {
    std::vector<std::vector<int>> tokens;
    nn::Sequential::Tape mlp;
  };
  Matrix pool_tokens(const std::vector<std::vector<int>>& tokens) const;
  Matrix text_forward(const std::vector<std::vector<int>>& tokens, TextTape* tape) const;

  nn::Shape3 shape_;
  EmbedderConfig config_;
  Tokenizer tokenizer_;
  nn::Sequential image_;
  Matrix token_embeddings_;  // token_dim x vocab
  nn::Sequential text_mlp_;
  double final_loss_ = 0.0;
};

double cosine_similarity(const Vector& x, const Vector& y);

/// Words used by the negative-attribute templates and the extra label; these
/// enter the tokenizer vocabulary alongside caption words.
std::vector<std::string> template_words();

/// Contrastive training over in-batch image/caption pairs with forward-noise
/// augmentation. Throws ErrorCode::training on a non-finite loss.
JointEmbedder train_joint_embedder(const CaptionedImages& data, const EmbedderConfig& config);

struct GuidanceLoss {
  double loss = 0.0;
  Matrix grad;  // same shape as the image column
};

/// loss = -mean_p D(E_I(x), E_T(p)); grad = d loss / d x.
GuidanceLoss guidance_loss(const JointEmbedder& embedder, const Matrix& image, const std::vector<std::string>& prompts);

struct ImageThreshold {
  double tau_image = 0.0;
  std::string dataset_id;
  std::string embedder_id;
  int classes = 0;             // M
  int samples_per_class = 0;   // N (minimum over classes)
};

/// Mean similarity between each validation image and the captions of every
/// class other than its own. `labels` are 0-based indices into `class_captions`.
ImageThreshold compute_tau_image(const JointEmbedder& embedder, const Matrix& images, const std::vector<int>& labels,
                                 const std::vector<std::string>& class_captions, std::string dataset_id = {});

}  // namespace rodeo::embed
