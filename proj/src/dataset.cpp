#include "rodeo/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <set>

#include "rodeo/config.hpp"
#include "rodeo/container.hpp"
#include "rodeo/error.hpp"
#include "rodeo/labels.hpp"

namespace rodeo::data {

void Dataset::validate() const {
  require(images.rows() == shape.size(), ErrorCode::invalid_input, "image rows do not match shape");
  require(static_cast<std::size_t>(images.cols()) == labels.size(), ErrorCode::invalid_input,
          "one label per image required");
  require(captions.empty() || captions.size() == labels.size(), ErrorCode::invalid_input,
          "captions must be empty or one per image");
  for (int y : labels) {
    require(y >= 1 && y <= num_classes(), ErrorCode::invalid_input,
            "label " + std::to_string(y) + " outside 1.." + std::to_string(num_classes()));
  }
  require(images.allFinite(), ErrorCode::invalid_input, "non-finite pixel");
}

std::string Dataset::id() const {
  std::string bytes = std::to_string(shape.channels) + "x" + std::to_string(shape.height) + "x" +
                      std::to_string(shape.width) + ";";
  for (const auto& n : label_names) bytes += n + ";";
  bytes.append(reinterpret_cast<const char*>(labels.data()), labels.size() * sizeof(int));
  bytes.append(reinterpret_cast<const char*>(images.data()), static_cast<std::size_t>(images.size()) * sizeof(double));
  return fnv1a_hex(bytes);
}

Dataset Dataset::subset(const std::vector<int>& indices) const {
  Dataset out;
  out.shape = shape;
  out.label_names = label_names;
  out.images.resize(images.rows(), static_cast<Eigen::Index>(indices.size()));
  for (std::size_t j = 0; j < indices.size(); ++j) {
    const int i = indices[j];
    require(i >= 0 && i < size(), ErrorCode::invalid_input, "subset index out of range");
    out.images.col(static_cast<Eigen::Index>(j)) = images.col(i);
    out.labels.push_back(labels[static_cast<std::size_t>(i)]);
    if (!captions.empty()) out.captions.push_back(captions[static_cast<std::size_t>(i)]);
  }
  return out;
}

std::vector<int> Dataset::indices_of(int label) const {
  std::vector<int> out;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] == label) out.push_back(static_cast<int>(i));
  }
  return out;
}

Dataset Dataset::select_classes(const std::vector<int>& keep, bool relabel) const {
  std::vector<int> idx;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (std::find(keep.begin(), keep.end(), labels[i]) != keep.end()) idx.push_back(static_cast<int>(i));
  }
  Dataset out = subset(idx);
  if (relabel) {
    std::vector<std::string> names;
    for (int k : keep) {
      require(k >= 1 && k <= num_classes(), ErrorCode::invalid_input, "class index out of range");
      names.push_back(label_names[static_cast<std::size_t>(k - 1)]);
    }
    for (int& y : out.labels) y = static_cast<int>(std::find(keep.begin(), keep.end(), y) - keep.begin()) + 1;
    out.label_names = names;
  }
  return out;
}

std::vector<std::string> Dataset::caption_list() const {
  if (!captions.empty()) return captions;
  std::vector<std::string> out;
  out.reserve(labels.size());
  for (int y : labels) out.push_back(labels::caption_for(label_names[static_cast<std::size_t>(y - 1)]));
  return out;
}

void write_dataset(ArrayContainer& c, const Dataset& d) {
  d.validate();
  c.put_samples("images", d.images,
                {static_cast<std::uint64_t>(d.shape.channels), static_cast<std::uint64_t>(d.shape.height),
                 static_cast<std::uint64_t>(d.shape.width)});
  c.put_ints("labels", std::vector<std::int64_t>(d.labels.begin(), d.labels.end()));
  c.put_strings("label_names", d.label_names);
  if (!d.captions.empty()) c.put_strings("captions", d.captions);
  c.set_meta("kind", "dataset");
  c.set_meta("dataset_id", d.id());
  c.set_meta("n", std::to_string(d.size()));
}

Dataset read_dataset(const ArrayContainer& c) {
  Dataset d;
  const auto& arr = c.at("images");
  require(arr.shape.size() == 4, ErrorCode::parse, "images must be n x C x H x W");
  d.shape = {static_cast<int>(arr.shape[1]), static_cast<int>(arr.shape[2]), static_cast<int>(arr.shape[3])};
  d.images = c.get_samples("images");
  for (auto v : c.get_ints("labels")) d.labels.push_back(static_cast<int>(v));
  d.label_names = c.get_strings("label_names");
  if (c.has("captions")) d.captions = c.get_strings("captions");
  d.validate();
  return d;
}

void save_dataset(const std::filesystem::path& path, const Dataset& d) {
  ArrayContainer c;
  write_dataset(c, d);
  c.save(path);
}

Dataset load_dataset(const std::filesystem::path& path) { return read_dataset(ArrayContainer::load(path)); }

const std::vector<std::string>& glyph_families() {
  static const std::vector<std::string> families{"disk", "ring",     "square", "cross",
                                                 "triangle", "frame", "bar",    "xmark"};
  return families;
}

namespace {

// Coverage test in glyph-local coordinates (dx, dy already centred).
bool inside(const std::string& f, double dx, double dy, double r, double stroke, double angle) {
  const double dist = std::hypot(dx, dy);
  const double ax = std::abs(dx), ay = std::abs(dy);
  if (f == "disk") return dist <= r;
  if (f == "ring") return dist <= r && dist >= r - stroke;
  if (f == "square") return std::max(ax, ay) <= 0.82 * r;
  if (f == "frame") {
    const double m = std::max(ax, ay);
    return m <= 0.85 * r && m >= 0.85 * r - stroke;
  }
  if (f == "cross") return (ax <= stroke / 2 && ay <= r) || (ay <= stroke / 2 && ax <= r);
  if (f == "xmark") {
    const double u = (dx + dy) / std::numbers::sqrt2, v = (dx - dy) / std::numbers::sqrt2;
    return (std::abs(u) <= stroke / 2 && std::abs(v) <= r) || (std::abs(v) <= stroke / 2 && std::abs(u) <= r);
  }
  if (f == "bar") {
    const double c = std::cos(angle), s = std::sin(angle);
    const double u = c * dx + s * dy, v = -s * dx + c * dy;
    return std::abs(u) <= r && std::abs(v) <= stroke * 0.75;
  }
  if (f == "triangle") {
    // Upward triangle with vertices on the circle of radius r.
    const double top = -r, bottom = 0.5 * r;
    if (dy < top || dy > bottom) return false;
    const double half = (dy - top) / (bottom - top) * r * 0.866;
    return ax <= half;
  }
  fail(ErrorCode::invalid_input, "unknown glyph family: " + f);
}

}  // namespace

Vector render_glyph(const std::string& family, int side, Rng& rng, const GlyphJitter& j) {
  require(side >= 4, ErrorCode::invalid_input, "glyph side must be at least 4");
  const auto& fams = glyph_families();
  require(std::find(fams.begin(), fams.end(), family) != fams.end(), ErrorCode::invalid_input,
          "unknown glyph family: " + family);
  const double cx = (side - 1) / 2.0 + uniform(rng, -j.center_shift, j.center_shift);
  const double cy = (side - 1) / 2.0 + uniform(rng, -j.center_shift, j.center_shift);
  const double r = side * uniform(rng, j.radius_min, j.radius_max);
  const double stroke = side * uniform(rng, j.stroke_min, j.stroke_max);
  const double intensity = uniform(rng, j.intensity_min, j.intensity_max);
  const double background = j.background_max > 0.0 ? uniform(rng, 0.0, j.background_max) : 0.0;
  const double angle = uniform(rng, 0.0, std::numbers::pi);
  constexpr int kSuper = 4;
  Vector img(side * side);
  for (int y = 0; y < side; ++y) {
    for (int x = 0; x < side; ++x) {
      int hits = 0;
      for (int sy = 0; sy < kSuper; ++sy) {
        for (int sx = 0; sx < kSuper; ++sx) {
          const double px = x + (sx + 0.5) / kSuper - 0.5, py = y + (sy + 0.5) / kSuper - 0.5;
          hits += inside(family, px - cx, py - cy, r, stroke, angle);
        }
      }
      const double v =
          background + intensity * hits / double(kSuper * kSuper) + j.pixel_noise * standard_normal(rng);
      img[y * side + x] = std::clamp(v, 0.0, 1.0);
    }
  }
  return img;
}

const std::map<std::string, std::vector<std::string>>& glyph_synonyms() {
  static const std::map<std::string, std::vector<std::string>> table{
      {"disk", {"disk", "dot", "coin"}},        {"ring", {"ring", "donut", "hoop", "circle"}},
      {"square", {"square", "tile", "block"}},  {"cross", {"cross", "plus"}},
      {"triangle", {"triangle", "pyramid", "wedge"}}, {"frame", {"frame", "window", "border"}},
      {"bar", {"bar", "line", "stick"}},        {"xmark", {"xmark", "saltire"}},
  };
  return table;
}

Dataset synth_dataset(const SynthSpec& spec) {
  require(!spec.classes.empty() && spec.per_class >= 1, ErrorCode::invalid_input, "empty synth spec");
  std::set<std::string> seen(spec.classes.begin(), spec.classes.end());
  require(seen.size() == spec.classes.size(), ErrorCode::invalid_input, "duplicate class in synth spec");
  Dataset d;
  d.shape = {1, spec.side, spec.side};
  d.label_names = spec.classes;
  d.images.resize(d.shape.size(), static_cast<Eigen::Index>(spec.classes.size()) * spec.per_class);
  Eigen::Index col = 0;
  for (std::size_t k = 0; k < spec.classes.size(); ++k) {
    Rng rng = make_stream(spec.seed, 0x5000 + k);
    for (int i = 0; i < spec.per_class; ++i) {
      d.images.col(col++) = render_glyph(spec.classes[k], spec.side, rng, spec.jitter);
      d.labels.push_back(static_cast<int>(k) + 1);
      std::string name = spec.classes[k];
      if (spec.synonym_captions) {
        const auto& syn = glyph_synonyms().at(name);
        name = syn[uniform_index(rng, syn.size())];
      }
      d.captions.push_back(labels::caption_for(name));
    }
  }
  return d;
}

Split split_per_class(const Dataset& d, double train_fraction, std::uint64_t seed) {
  require(train_fraction > 0.0 && train_fraction < 1.0, ErrorCode::invalid_input, "train fraction must be in (0,1)");
  Rng rng = make_stream(seed, 0x5917);
  std::vector<int> train, test;
  for (int k = 1; k <= d.num_classes(); ++k) {
    auto idx = d.indices_of(k);
    std::shuffle(idx.begin(), idx.end(), rng);
    const auto n_train = static_cast<std::size_t>(std::floor(train_fraction * static_cast<double>(idx.size())));
    train.insert(train.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_train));
    test.insert(test.end(), idx.begin() + static_cast<std::ptrdiff_t>(n_train), idx.end());
  }
  std::sort(train.begin(), train.end());
  std::sort(test.begin(), test.end());
  return {d.subset(train), d.subset(test)};
}

Dataset gaussian_noise_images(int n, nn::Shape3 shape, std::uint64_t seed, double mean, double std) {
  require(n >= 1, ErrorCode::invalid_input, "need at least one noise image");
  Rng rng = make_stream(seed, 0x6A05);
  Dataset d;
  d.shape = shape;
  d.label_names = {"noise"};
  d.images = (normal_matrix(rng, shape.size(), n).array() * std + mean).cwiseMax(0.0).cwiseMin(1.0);
  d.labels.assign(static_cast<std::size_t>(n), 1);
  return d;
}

double linear_probe_accuracy(const Dataset& train, const Dataset& test, double ridge) {
  const int k = train.num_classes();
  const Eigen::Index p = train.images.rows() + 1;
  Matrix x(p, train.size());
  x.topRows(p - 1) = train.images;
  x.row(p - 1).setOnes();
  Matrix y = Matrix::Constant(k, train.size(), -1.0);
  for (int i = 0; i < train.size(); ++i) y(train.labels[static_cast<std::size_t>(i)] - 1, i) = 1.0;
  Matrix gram = x * x.transpose();
  gram.diagonal().array() += ridge * train.size();
  const Matrix w = gram.ldlt().solve(x * y.transpose());  // p x k
  Matrix xt(p, test.size());
  xt.topRows(p - 1) = test.images;
  xt.row(p - 1).setOnes();
  const Matrix scores = w.transpose() * xt;
  int correct = 0;
  for (int i = 0; i < test.size(); ++i) {
    Eigen::Index best;
    scores.col(i).maxCoeff(&best);
    correct += static_cast<int>(best) + 1 == test.labels[static_cast<std::size_t>(i)];
  }
  return static_cast<double>(correct) / test.size();
}

}  // namespace rodeo::data
