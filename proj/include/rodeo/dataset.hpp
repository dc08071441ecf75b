#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "rodeo/nn.hpp"

namespace rodeo {
class ArrayContainer;
}

namespace rodeo::data {

using nn::Matrix;
using nn::Vector;

/// Images in [0,1], one flattened (c, y, x) image per column. Labels are
/// 1-based indices into label_names.
struct Dataset {
  Matrix images;
  nn::Shape3 shape;
  std::vector<int> labels;
  std::vector<std::string> label_names;
  std::vector<std::string> captions;  // empty or one per image

  int size() const { return static_cast<int>(images.cols()); }
  int num_classes() const { return static_cast<int>(label_names.size()); }
  void validate() const;
  /// Hash of shape, labels, names and pixel data.
  std::string id() const;

  Dataset subset(const std::vector<int>& indices) const;
  std::vector<int> indices_of(int label) const;
  /// Images whose label is in `keep` (1-based); relabels to 1..|keep| in the
  /// given order when `relabel` is set.
  Dataset select_classes(const std::vector<int>& keep, bool relabel) const;
  /// Captions if present, otherwise "a photo of <label name>".
  std::vector<std::string> caption_list() const;
};

void write_dataset(ArrayContainer& c, const Dataset& d);
Dataset read_dataset(const ArrayContainer& c);
void save_dataset(const std::filesystem::path& path, const Dataset& d);
Dataset load_dataset(const std::filesystem::path& path);

/// Glyph families the renderer knows.
const std::vector<std::string>& glyph_families();

struct GlyphJitter {
  double center_shift = 1.5;  // pixels
  double radius_min = 0.28;   // fraction of the side
  double radius_max = 0.40;
  double stroke_min = 0.09;
  double stroke_max = 0.15;
  double intensity_min = 0.15;
  double intensity_max = 0.35;
  double background_max = 0.5;  // uniform background level in [0, background_max]
  double pixel_noise = 0.01;
};

/// One anti-aliased glyph, values in [0,1], flattened row-major.
Vector render_glyph(const std::string& family, int side, Rng& rng, const GlyphJitter& jitter = {});

/// Alternative names per glyph family, first entry is the family itself.
const std::map<std::string, std::vector<std::string>>& glyph_synonyms();

struct SynthSpec {
  std::vector<std::string> classes{"disk", "ring", "square", "cross"};
  int per_class = 500;
  int side = 16;
  std::uint64_t seed = 0;
  GlyphJitter jitter;
  /// Caption each image with a random synonym instead of the class name.
  bool synonym_captions = false;
};

/// Rendered glyph dataset, class-major order, captions "a photo of <name>".
Dataset synth_dataset(const SynthSpec& spec);

struct Split {
  Dataset train;
  Dataset test;
};

/// Per-class split, train fraction rounded down, fixed by seed.
Split split_per_class(const Dataset& d, double train_fraction, std::uint64_t seed);

/// clip(N(mean, std^2)) images with a single placeholder label.
Dataset gaussian_noise_images(int n, nn::Shape3 shape, std::uint64_t seed, double mean = 0.5, double std = 0.25);

/// Accuracy of a ridge-regularized one-vs-rest least-squares probe on raw
/// pixels, trained on `train` and scored on `test`.
double linear_probe_accuracy(const Dataset& train, const Dataset& test, double ridge = 1e-2);

}  // namespace rodeo::data
