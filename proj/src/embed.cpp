#include "rodeo/embed.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <set>
#include <sstream>

#include "rodeo/config.hpp"
#include "rodeo/container.hpp"
#include "rodeo/error.hpp"

namespace rodeo::embed {

namespace {

std::string join_doubles(const std::vector<double>& v) {
  std::ostringstream os;
  os.precision(17);
  for (std::size_t i = 0; i < v.size(); ++i) os << (i ? "," : "") << v[i];
  return os.str();
}

std::string hash_matrices(const std::vector<const Matrix*>& mats, std::string seed_text) {
  for (const Matrix* m : mats) {
    seed_text.append(reinterpret_cast<const char*>(m->data()), static_cast<std::size_t>(m->size()) * sizeof(double));
  }
  return fnv1a_hex(seed_text);
}

/// d(u.v / |u||v|)/du for each column.
Matrix cosine_grad(const Matrix& u, const Matrix& v, Vector& sim) {
  Matrix g(u.rows(), u.cols());
  sim.resize(u.cols());
  for (Eigen::Index j = 0; j < u.cols(); ++j) {
    const double un = u.col(j).norm(), vn = v.col(j).norm();
    require(un > 0.0 && vn > 0.0, ErrorCode::numeric, "zero embedding in similarity");
    const double d = u.col(j).dot(v.col(j)) / (un * vn);
    sim[j] = d;
    g.col(j) = v.col(j) / (un * vn) - d * u.col(j) / (un * un);
  }
  return g;
}

Matrix normalize_columns(const Matrix& m, Vector& norms) {
  norms = m.colwise().norm().transpose();
  Matrix out = m;
  for (Eigen::Index j = 0; j < m.cols(); ++j) {
    require(norms[j] > 0.0, ErrorCode::numeric, "zero-norm embedding");
    out.col(j) /= norms[j];
  }
  return out;
}

/// Backprop through x / |x| column-wise.
Matrix normalize_backward(const Matrix& unit, const Vector& norms, const Matrix& g) {
  Matrix out(g.rows(), g.cols());
  for (Eigen::Index j = 0; j < g.cols(); ++j) {
    out.col(j) = (g.col(j) - unit.col(j) * unit.col(j).dot(g.col(j))) / norms[j];
  }
  return out;
}

}  // namespace

// ---------------------------------------------------------------- Tokenizer

Tokenizer::Tokenizer() {
  words_.push_back("<unk>");
  index_["<unk>"] = 0;
}

Tokenizer::Tokenizer(const std::vector<std::string>& texts) : Tokenizer() {
  std::set<std::string> all;
  for (const auto& t : texts) {
    for (auto& w : split(t)) all.insert(w);
  }
  for (const auto& w : all) {
    index_[w] = static_cast<int>(words_.size());
    words_.push_back(w);
  }
}

std::vector<std::string> Tokenizer::split(const std::string& text) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isalnum(c)) {
      cur.push_back(static_cast<char>(std::tolower(c)));
    } else if (!cur.empty()) {
      out.push_back(cur);
      cur.clear();
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

std::vector<int> Tokenizer::encode(const std::string& text) const {
  std::vector<int> ids;
  for (const auto& w : split(text)) {
    auto it = index_.find(w);
    ids.push_back(it == index_.end() ? kUnk : it->second);
  }
  if (ids.empty()) ids.push_back(kUnk);
  return ids;
}

std::vector<std::string> template_words() {
  std::vector<std::string> out;
  for (const auto& p : labels::negative_prompts("x")) out.push_back(p);
  out.push_back(labels::kExtraLabel);
  return out;
}

// ---------------------------------------------------------------- JointEmbedder

JointEmbedder::JointEmbedder(nn::Shape3 shape, Tokenizer tokenizer, const EmbedderConfig& config)
    : shape_(shape), config_(config), tokenizer_(std::move(tokenizer)) {
  require(shape.height % 4 == 0 && shape.width % 4 == 0, ErrorCode::invalid_input,
          "image sides must be divisible by 4");
  require(config.d_e >= 2 && config.token_dim >= 1, ErrorCode::invalid_input, "bad embedding sizes");
  Rng rng = make_stream(config.seed, 0xE1);
  auto c1 = std::make_unique<nn::Conv2d>(shape, config.conv1, 3, rng);
  const nn::Shape3 s1 = c1->out_shape();
  image_.add(std::move(c1));
  image_.add(std::make_unique<nn::Elementwise>(nn::Activation::silu, s1.size()));
  auto p1 = std::make_unique<nn::AvgPool2>(s1);
  const nn::Shape3 s2 = p1->out_shape();
  image_.add(std::move(p1));
  auto c2 = std::make_unique<nn::Conv2d>(s2, config.conv2, 3, rng);
  const nn::Shape3 s3 = c2->out_shape();
  image_.add(std::move(c2));
  image_.add(std::make_unique<nn::Elementwise>(nn::Activation::silu, s3.size()));
  auto p2 = std::make_unique<nn::AvgPool2>(s3);
  const int flat = p2->out_size();
  image_.add(std::move(p2));
  image_.add(std::make_unique<nn::Linear>(flat, config.image_hidden, rng, std::sqrt(2.0)));
  image_.add(std::make_unique<nn::Elementwise>(nn::Activation::silu, config.image_hidden));
  image_.add(std::make_unique<nn::Linear>(config.image_hidden, config.d_e, rng));

  token_embeddings_ = normal_matrix(rng, config.token_dim, tokenizer_.size());
  text_mlp_.add(std::make_unique<nn::Linear>(config.token_dim, config.text_hidden, rng));
  text_mlp_.add(std::make_unique<nn::Elementwise>(nn::Activation::tanh, config.text_hidden));
  text_mlp_.add(std::make_unique<nn::Linear>(config.text_hidden, config.d_e, rng));
}

std::size_t JointEmbedder::text_parameter_count() const {
  return static_cast<std::size_t>(token_embeddings_.size()) + text_mlp_.parameter_count();
}

Matrix JointEmbedder::encode_images(const Matrix& images) const {
  require(images.rows() == shape_.size(), ErrorCode::invalid_input, "image size does not match embedder");
  return image_.forward(images);
}

Matrix JointEmbedder::image_features(const Matrix& images) const {
  require(images.rows() == shape_.size(), ErrorCode::invalid_input, "image size does not match embedder");
  Matrix h = images;
  for (std::size_t i = 0; i + 3 < image_.size(); ++i) h = image_.layer(i).forward(h, nullptr);
  return h;
}

Matrix JointEmbedder::pool_tokens(const std::vector<std::vector<int>>& tokens) const {
  Matrix pooled = Matrix::Zero(token_embeddings_.rows(), static_cast<Eigen::Index>(tokens.size()));
  for (std::size_t j = 0; j < tokens.size(); ++j) {
    for (int id : tokens[j]) pooled.col(static_cast<Eigen::Index>(j)) += token_embeddings_.col(id);
    pooled.col(static_cast<Eigen::Index>(j)) /= static_cast<double>(tokens[j].size());
  }
  return pooled;
}

Matrix JointEmbedder::text_forward(const std::vector<std::vector<int>>& tokens, TextTape* tape) const {
  if (tape) tape->tokens = tokens;
  return text_mlp_.forward(pool_tokens(tokens), tape ? &tape->mlp : nullptr);
}

Matrix JointEmbedder::encode_texts(const std::vector<std::string>& texts) const {
  std::vector<std::vector<int>> tokens;
  for (const auto& t : texts) tokens.push_back(tokenizer_.encode(t));
  return text_forward(tokens, nullptr);
}

Vector JointEmbedder::embed_text(const std::string& text) const { return encode_texts({text}).col(0); }

Vector JointEmbedder::similarity(const Matrix& images, const Matrix& text_embeddings, Matrix* grad) const {
  require(text_embeddings.cols() == images.cols(), ErrorCode::invalid_input, "one text embedding per image expected");
  nn::Sequential::Tape tape;
  const Matrix u = image_.forward(images, grad ? &tape : nullptr);
  Vector sim;
  const Matrix du = cosine_grad(u, text_embeddings, sim);
  if (grad) *grad = image_.backward(tape, du, nullptr);
  return sim;
}

std::string JointEmbedder::architecture_hash() const {
  std::ostringstream os;
  os << "joint-embedder;" << shape_.channels << "x" << shape_.height << "x" << shape_.width << ";" << image_.describe()
     << "tokens(" << token_embeddings_.rows() << "x" << token_embeddings_.cols() << ");" << text_mlp_.describe();
  return fnv1a_hex(os.str());
}

std::string JointEmbedder::id() const {
  auto params = image_.parameters();
  params.push_back(&token_embeddings_);
  for (const Matrix* m : text_mlp_.parameters()) params.push_back(m);
  return hash_matrices(params, architecture_hash());
}

void JointEmbedder::save_into(ArrayContainer& c) const {
  image_.save(c, "image");
  c.put_matrix("token_embeddings", token_embeddings_);
  text_mlp_.save(c, "text");
  c.put_strings("vocab", tokenizer_.words());
  c.set_meta("kind", "joint-embedder");
  c.set_meta("d_e", std::to_string(config_.d_e));
  c.set_meta("architecture_hash", architecture_hash());
  c.set_meta("noise_aug_schedule", join_doubles(config_.noise_aug_schedule));
  c.set_meta("image_shape", std::to_string(shape_.channels) + "," + std::to_string(shape_.height) + "," +
                                std::to_string(shape_.width));
  c.set_meta("token_dim", std::to_string(config_.token_dim));
  c.set_meta("text_hidden", std::to_string(config_.text_hidden));
  c.set_meta("conv1", std::to_string(config_.conv1));
  c.set_meta("conv2", std::to_string(config_.conv2));
  c.set_meta("image_hidden", std::to_string(config_.image_hidden));
  c.set_meta("temperature", std::to_string(config_.temperature));
  c.set_meta("steps", std::to_string(config_.steps));
  c.set_meta("seed", std::to_string(config_.seed));
  std::ostringstream os;
  os.precision(17);
  os << final_loss_;
  c.set_meta("final_loss", os.str());
  c.set_meta("embedder_id", id());
}

void JointEmbedder::save(const std::filesystem::path& path) const {
  ArrayContainer c;
  save_into(c);
  c.save(path);
}

JointEmbedder JointEmbedder::load_from(const ArrayContainer& c) {
  require(c.meta_or("kind", "") == "joint-embedder", ErrorCode::parse, "not a joint-embedder checkpoint");
  EmbedderConfig cfg;
  cfg.d_e = std::stoi(c.meta("d_e"));
  cfg.token_dim = std::stoi(c.meta("token_dim"));
  cfg.text_hidden = std::stoi(c.meta("text_hidden"));
  cfg.conv1 = std::stoi(c.meta("conv1"));
  cfg.conv2 = std::stoi(c.meta("conv2"));
  cfg.image_hidden = std::stoi(c.meta("image_hidden"));
  cfg.temperature = parse_number(c.meta("temperature"));
  cfg.steps = std::stoi(c.meta("steps"));
  cfg.seed = std::stoull(c.meta("seed"));
  cfg.noise_aug_schedule.clear();
  for (const auto& s : split(c.meta("noise_aug_schedule"), ',')) {
    if (!s.empty()) cfg.noise_aug_schedule.push_back(parse_number(s));
  }
  const auto dims = split(c.meta("image_shape"), ',');
  require(dims.size() == 3, ErrorCode::parse, "bad image_shape in manifest");
  nn::Shape3 shape{std::stoi(dims[0]), std::stoi(dims[1]), std::stoi(dims[2])};

  // Rebuild the vocabulary in stored order.
  const auto words = c.get_strings("vocab");
  require(!words.empty() && words[0] == "<unk>", ErrorCode::parse, "bad vocabulary");
  std::vector<std::string> texts(words.begin() + 1, words.end());
  Tokenizer tok(texts);
  require(tok.words() == words, ErrorCode::parse, "vocabulary does not round-trip");

  JointEmbedder e(shape, std::move(tok), cfg);
  e.image_.load(c, "image");
  const Matrix tokens = c.get_matrix("token_embeddings");
  require(tokens.rows() == e.token_embeddings_.rows() && tokens.cols() == e.token_embeddings_.cols(),
          ErrorCode::parse, "token embedding shape mismatch");
  e.token_embeddings_ = tokens;
  e.text_mlp_.load(c, "text");
  e.final_loss_ = parse_number(c.meta("final_loss"));
  require(e.architecture_hash() == c.meta("architecture_hash"), ErrorCode::parse, "architecture hash mismatch");
  return e;
}

JointEmbedder JointEmbedder::load(const std::filesystem::path& path) { return load_from(ArrayContainer::load(path)); }

double cosine_similarity(const Vector& x, const Vector& y) {
  require(x.size() == y.size(), ErrorCode::invalid_input, "dimension mismatch");
  const double nx = x.norm(), ny = y.norm();
  require(nx > 0.0 && ny > 0.0, ErrorCode::invalid_input, "cosine similarity of a zero vector");
  return std::clamp(x.dot(y) / (nx * ny), -1.0, 1.0);
}

// ---------------------------------------------------------------- training

JointEmbedder train_joint_embedder(const CaptionedImages& data, const EmbedderConfig& config) {
  const Eigen::Index n = data.images.cols();
  require(static_cast<std::size_t>(n) == data.captions.size() && n > 0, ErrorCode::invalid_input,
          "one caption per image required");
  require(data.images.rows() == data.shape.size(), ErrorCode::invalid_input, "image shape mismatch");
  std::vector<std::string> unique(data.captions.begin(), data.captions.end());
  std::sort(unique.begin(), unique.end());
  unique.erase(std::unique(unique.begin(), unique.end()), unique.end());
  require(unique.size() >= 2, ErrorCode::invalid_input, "need at least two distinct captions");
  require(!config.noise_aug_schedule.empty(), ErrorCode::invalid_input, "empty noise augmentation schedule");
  for (double ab : config.noise_aug_schedule) {
    require(ab > 0.0 && ab <= 1.0, ErrorCode::invalid_input, "noise levels must be alpha_bar values in (0,1]");
  }

  std::vector<std::string> vocab_texts = unique;
  for (const auto& w : template_words()) vocab_texts.push_back(w);
  JointEmbedder model(data.shape, Tokenizer(vocab_texts), config);

  std::vector<int> caption_index(static_cast<std::size_t>(n));
  std::vector<std::vector<int>> caption_tokens;
  for (const auto& u : unique) caption_tokens.push_back(model.tokenizer_.encode(u));
  for (Eigen::Index i = 0; i < n; ++i) {
    caption_index[static_cast<std::size_t>(i)] = static_cast<int>(
        std::lower_bound(unique.begin(), unique.end(), data.captions[static_cast<std::size_t>(i)]) - unique.begin());
  }

  auto params = model.image_.parameters();
  params.push_back(&model.token_embeddings_);
  for (Matrix* m : model.text_mlp_.parameters()) params.push_back(m);
  const std::size_t n_image = model.image_.parameters().size();
  nn::Adam adam(params, config.lr);

  Rng rng = make_stream(config.seed, 0xE2);
  const double inv_t = 1.0 / config.temperature;
  const int batch = static_cast<int>(std::min<Eigen::Index>(config.batch, n));
  std::vector<double> recent;

  for (int step = 0; step < config.steps; ++step) {
    Matrix x(data.images.rows(), batch);
    std::vector<int> cap(static_cast<std::size_t>(batch));
    for (int b = 0; b < batch; ++b) {
      const auto i = static_cast<Eigen::Index>(uniform_index(rng, static_cast<std::size_t>(n)));
      const double ab = config.noise_aug_schedule[uniform_index(rng, config.noise_aug_schedule.size())];
      x.col(b) = std::sqrt(ab) * data.images.col(i) + std::sqrt(1.0 - ab) * normal_vector(rng, x.rows());
      cap[static_cast<std::size_t>(b)] = caption_index[static_cast<std::size_t>(i)];
    }
    // Distinct captions present in this batch, in caption order.
    std::vector<int> present(cap);
    std::sort(present.begin(), present.end());
    present.erase(std::unique(present.begin(), present.end()), present.end());
    std::vector<int> slot(unique.size(), -1);
    for (std::size_t k = 0; k < present.size(); ++k) slot[static_cast<std::size_t>(present[k])] = static_cast<int>(k);
    std::vector<std::vector<int>> toks;
    for (int c : present) {
      auto t = caption_tokens[static_cast<std::size_t>(c)];
      for (auto& id : t) {
        if (uniform(rng, 0.0, 1.0) < config.unk_prob) id = Tokenizer::kUnk;
      }
      toks.push_back(std::move(t));
    }

    nn::Sequential::Tape itape;
    JointEmbedder::TextTape ttape;
    const Matrix u = model.image_.forward(x, &itape);
    const Matrix v = model.text_forward(toks, &ttape);
    Vector un, vn;
    const Matrix uu = normalize_columns(u, un);
    const Matrix vv = normalize_columns(v, vn);
    const Matrix s = uu.transpose() * vv * inv_t;  // batch x captions
    const auto C = static_cast<Eigen::Index>(present.size());

    // image -> caption
    Matrix ds = Matrix::Zero(batch, C);
    double loss_i2t = 0.0;
    for (int b = 0; b < batch; ++b) {
      const Eigen::RowVectorXd row = s.row(b);
      const double mx = row.maxCoeff();
      const Eigen::RowVectorXd e = (row.array() - mx).exp();
      const double z = e.sum();
      const int target = slot[static_cast<std::size_t>(cap[static_cast<std::size_t>(b)])];
      loss_i2t += mx + std::log(z) - row[target];
      ds.row(b) += e / z / batch;
      ds(b, target) -= 1.0 / batch;
    }
    loss_i2t /= batch;
    // caption -> image, uniform target over images sharing the caption
    double loss_t2i = 0.0;
    for (Eigen::Index c = 0; c < C; ++c) {
      const Vector col = s.col(c);
      const double mx = col.maxCoeff();
      const Vector e = (col.array() - mx).exp();
      const double z = e.sum();
      int count = 0;
      for (int b = 0; b < batch; ++b) count += slot[static_cast<std::size_t>(cap[static_cast<std::size_t>(b)])] == c;
      for (int b = 0; b < batch; ++b) {
        const double q = slot[static_cast<std::size_t>(cap[static_cast<std::size_t>(b)])] == c ? 1.0 / count : 0.0;
        loss_t2i -= q * (col[b] - mx - std::log(z));
        ds(b, c) += (e[b] / z - q) / static_cast<double>(C);
      }
    }
    loss_t2i /= static_cast<double>(C);
    const double loss = 0.5 * (loss_i2t + loss_t2i);
    if (!std::isfinite(loss)) fail(ErrorCode::training, "non-finite contrastive loss at step " + std::to_string(step));
    ds *= 0.5 * inv_t;

    const Matrix duu = vv * ds.transpose();
    const Matrix dvv = uu * ds;
    std::vector<Matrix> grads;
    {
      auto ig = model.image_.zero_grads();
      model.image_.backward(itape, normalize_backward(uu, un, duu), &ig);
      grads = std::move(ig);
    }
    auto tg = model.text_mlp_.zero_grads();
    const Matrix dpooled = model.text_mlp_.backward(ttape.mlp, normalize_backward(vv, vn, dvv), &tg);
    Matrix dtok = Matrix::Zero(model.token_embeddings_.rows(), model.token_embeddings_.cols());
    for (std::size_t j = 0; j < toks.size(); ++j) {
      for (int id : toks[j]) dtok.col(id) += dpooled.col(static_cast<Eigen::Index>(j)) / static_cast<double>(toks[j].size());
    }
    grads.push_back(std::move(dtok));
    for (auto& g : tg) grads.push_back(std::move(g));
    require(grads.size() == params.size() && n_image + 1 + model.text_mlp_.parameters().size() == params.size(),
            ErrorCode::training, "gradient layout mismatch");
    adam.step(params, grads);

    recent.push_back(loss);
    if (recent.size() > 50) recent.erase(recent.begin());
  }
  if (!recent.empty()) {
    double sum = 0.0;
    for (double l : recent) sum += l;
    model.final_loss_ = sum / static_cast<double>(recent.size());
  }
  return model;
}

GuidanceLoss guidance_loss(const JointEmbedder& embedder, const Matrix& image, const std::vector<std::string>& prompts) {
  require(!prompts.empty(), ErrorCode::invalid_input, "guidance needs at least one prompt");
  require(image.cols() == 1, ErrorCode::invalid_input, "guidance_loss takes a single image");
  require(image.allFinite(), ErrorCode::numeric, "non-finite image");
  const Matrix texts = embedder.encode_texts(prompts);
  const Matrix repeated = image.replicate(1, texts.cols());
  Matrix grad;
  const Vector sim = embedder.similarity(repeated, texts, &grad);
  GuidanceLoss out;
  out.loss = -sim.mean();
  out.grad = -grad.rowwise().sum() / static_cast<double>(texts.cols());
  if (!std::isfinite(out.loss) || !out.grad.allFinite()) fail(ErrorCode::numeric, "non-finite guidance loss");
  return out;
}

ImageThreshold compute_tau_image(const JointEmbedder& embedder, const Matrix& images, const std::vector<int>& labels,
                                 const std::vector<std::string>& class_captions, std::string dataset_id) {
  const int m = static_cast<int>(class_captions.size());
  require(m >= 2, ErrorCode::invalid_input, "tau_image needs at least two classes");
  require(static_cast<std::size_t>(images.cols()) == labels.size() && !labels.empty(), ErrorCode::invalid_input,
          "one label per image required");
  std::vector<int> counts(static_cast<std::size_t>(m), 0);
  for (int y : labels) {
    require(y >= 0 && y < m, ErrorCode::invalid_input, "label out of range");
    ++counts[static_cast<std::size_t>(y)];
  }
  Matrix u = embedder.encode_images(images);
  Matrix t = embedder.encode_texts(class_captions);
  for (Eigen::Index j = 0; j < u.cols(); ++j) u.col(j).normalize();
  for (Eigen::Index j = 0; j < t.cols(); ++j) t.col(j).normalize();
  const Matrix sims = u.transpose() * t;  // n x M
  double total = 0.0;
  std::int64_t pairs = 0;
  for (Eigen::Index i = 0; i < sims.rows(); ++i) {
    for (int r = 0; r < m; ++r) {
      if (r == labels[static_cast<std::size_t>(i)]) continue;
      total += sims(i, r);
      ++pairs;
    }
  }
  ImageThreshold out;
  out.tau_image = total / static_cast<double>(pairs);
  out.dataset_id = std::move(dataset_id);
  out.embedder_id = embedder.id();
  out.classes = m;
  out.samples_per_class = *std::min_element(counts.begin(), counts.end());
  return out;
}

}  // namespace rodeo::embed
