#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "rodeo/random.hpp"

namespace rodeo::labels {

/// Word-vector table: `#dim <d>` header, then `label<TAB>v1 v2 ... vd` lines.
class TextEmbeddingTable {
 public:
  TextEmbeddingTable() = default;
  explicit TextEmbeddingTable(int dim) : dim_(dim) {}

  void add(const std::string& label, const Eigen::VectorXd& vector);

  int dim() const { return dim_; }
  std::size_t size() const { return labels_.size(); }
  bool contains(const std::string& label) const { return index_.count(label) != 0; }
  const Eigen::VectorXd& vector(const std::string& label) const;
  const std::vector<std::string>& labels() const { return labels_; }

 private:
  int dim_ = 0;
  std::vector<std::string> labels_;
  std::vector<Eigen::VectorXd> vectors_;
  std::map<std::string, std::size_t> index_;
};

TextEmbeddingTable parse_embedding_table(std::istream& in, const std::string& origin);
TextEmbeddingTable load_embedding_table(const std::filesystem::path& path);
void write_embedding_table(std::ostream& out, const TextEmbeddingTable& table);

struct Neighbor {
  std::string label;
  double similarity = 0.0;
};

/// The k most cosine-similar labels to `inlier_label`, itself excluded; ties
/// are broken lexicographically.
std::vector<Neighbor> nearest_labels(const TextEmbeddingTable& table, const std::string& inlier_label, int k);

/// Anything that maps text into the joint image/text space.
class TextEncoder {
 public:
  virtual ~TextEncoder() = default;
  virtual Eigen::VectorXd embed_text(const std::string& text) const = 0;
  virtual std::string encoder_id() const = 0;
};

/// Prompt used for a bare class label, e.g. "a photo of disk".
std::string caption_for(const std::string& label);

/// Unit-norm joint-space embedding of caption_for(label).
Eigen::VectorXd label_embedding(const TextEncoder& encoder, const std::string& label);

struct TextThreshold {
  double tau_text = 0.0;
  std::string vocab_id;
  std::string encoder_id;
  bool degenerate = false;  // every embedding identical
};

/// Mean pairwise Euclidean distance over ordered pairs i != j.
TextThreshold compute_tau_text(std::span<const Eigen::VectorXd> embeddings, std::string vocab_id = {},
                               std::string encoder_id = {});

/// Validation labels are embedded with label_embedding() first.
TextThreshold compute_tau_text(const TextEncoder& encoder, std::span<const std::string> validation_labels,
                               std::string vocab_id = {});

struct FilterResult {
  std::vector<Neighbor> kept;
  /// Set when nothing survived; callers may retry with a larger k.
  bool empty_warning = false;
};

/// Keeps candidate c iff min over inlier labels y of
/// ||E_T(c) - E_T(y)|| >= tau_text in the joint text space.
FilterResult filter_near_labels(std::span<const Neighbor> candidates, std::span<const std::string> inlier_labels,
                                const TextEncoder& encoder, double tau_text);

/// The 14 negative-attribute templates with `label` substituted, fixed order.
std::vector<std::string> negative_prompts(const std::string& label);

inline constexpr const char* kExtraLabel = "others";
inline constexpr double kDefaultAuxWeight = 0.05;

struct WeightedPrompt {
  std::string text;
  double weight = 0.0;
};

struct PromptSet {
  std::vector<std::string> inlier_labels;
  std::vector<Neighbor> near_labels;  // weight = cosine similarity in (0, 1]
  std::vector<std::string> negative;  // 14 per inlier label
  std::string extra_label = kExtraLabel;
  double tau_text = 0.0;
  double aux_weight = kDefaultAuxWeight;  // weight of each negative prompt and of "others"
  std::uint64_t seed = 0;

  /// All prompt strings with unnormalized weights: near labels as captions,
  /// then negative prompts, then the extra label verbatim.
  std::vector<WeightedPrompt> prompts() const;
  /// Index into prompts(), drawn proportionally to weight.
  std::size_t sample(Rng& rng) const;
  std::string id() const;
};

PromptSet build_prompt_set(const TextEmbeddingTable& table, const TextEncoder& encoder,
                           const std::vector<std::string>& inlier_labels, int k, double tau_text,
                           std::uint64_t seed, double aux_weight = kDefaultAuxWeight);

/// Text form, keys in this order (repeated keys one per line):
///   format, inlier*, tau_text, seed, aux_weight, near* (label<TAB>weight),
///   negative*, extra
void write_prompt_set(std::ostream& out, const PromptSet& set);
PromptSet read_prompt_set(std::istream& in, const std::string& origin);

}  // namespace rodeo::labels
