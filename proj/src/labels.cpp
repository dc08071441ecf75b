#include "rodeo/labels.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include "rodeo/config.hpp"
#include "rodeo/error.hpp"

namespace rodeo::labels {

void TextEmbeddingTable::add(const std::string& label, const Eigen::VectorXd& vector) {
  require(!label.empty(), ErrorCode::invalid_input, "empty label");
  require(vector.size() == dim_, ErrorCode::invalid_input, "vector for '" + label + "' has the wrong dimension");
  require(vector.allFinite(), ErrorCode::invalid_input, "non-finite vector for '" + label + "'");
  require(!contains(label), ErrorCode::invalid_input, "duplicate label '" + label + "'");
  index_[label] = labels_.size();
  labels_.push_back(label);
  vectors_.push_back(vector);
}

const Eigen::VectorXd& TextEmbeddingTable::vector(const std::string& label) const {
  auto it = index_.find(label);
  if (it == index_.end()) fail(ErrorCode::lookup, "unknown label '" + label + "'");
  return vectors_[it->second];
}

TextEmbeddingTable parse_embedding_table(std::istream& in, const std::string& origin) {
  std::string line;
  int line_no = 0;
  int dim = -1;
  TextEmbeddingTable table;
  auto where = [&] { return origin + ":" + std::to_string(line_no) + ": "; };
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty()) continue;
    if (dim < 0) {
      std::istringstream hs(line);
      std::string tag;
      hs >> tag >> dim;
      if (tag != "#dim" || !hs || dim <= 0) fail(ErrorCode::parse, where() + "expected header '#dim <d>'");
      table = TextEmbeddingTable(dim);
      continue;
    }
    const auto tab = line.find('\t');
    if (tab == std::string::npos) fail(ErrorCode::parse, where() + "expected label<TAB>values");
    const std::string label = line.substr(0, tab);
    if (label.empty()) fail(ErrorCode::parse, where() + "empty label");
    if (table.contains(label)) fail(ErrorCode::parse, where() + "duplicate label '" + label + "'");
    std::vector<double> values;
    const std::string rest = line.substr(tab + 1);
    const char* p = rest.data();
    const char* end = rest.data() + rest.size();
    while (p < end) {
      while (p < end && *p == ' ') ++p;
      if (p == end) break;
      double v = 0.0;
      auto [next, ec] = std::from_chars(p, end, v);
      if (ec != std::errc() || (next < end && *next != ' ')) fail(ErrorCode::parse, where() + "malformed number");
      if (!std::isfinite(v)) fail(ErrorCode::parse, where() + "non-finite value");
      values.push_back(v);
      p = next;
    }
    if (static_cast<int>(values.size()) != dim) {
      fail(ErrorCode::parse, where() + "expected " + std::to_string(dim) + " values, got " + std::to_string(values.size()));
    }
    table.add(label, Eigen::Map<Eigen::VectorXd>(values.data(), dim));
  }
  if (dim < 0) fail(ErrorCode::parse, origin + ": empty embedding table");
  if (table.size() == 0) fail(ErrorCode::parse, origin + ": embedding table has no entries");
  return table;
}

TextEmbeddingTable load_embedding_table(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::io, "cannot open " + path.string());
  return parse_embedding_table(in, path.string());
}

void write_embedding_table(std::ostream& out, const TextEmbeddingTable& table) {
  out << "#dim " << table.dim() << "\n";
  out.precision(17);
  for (const auto& label : table.labels()) {
    out << label << '\t';
    const auto& v = table.vector(label);
    for (Eigen::Index i = 0; i < v.size(); ++i) out << (i ? " " : "") << v[i];
    out << '\n';
  }
}

std::vector<Neighbor> nearest_labels(const TextEmbeddingTable& table, const std::string& inlier_label, int k) {
  const Eigen::VectorXd& q = table.vector(inlier_label);
  require(k >= 1 && static_cast<std::size_t>(k) < table.size(), ErrorCode::invalid_input,
          "k must satisfy 1 <= k < vocabulary size");
  const double qn = q.norm();
  std::vector<Neighbor> all;
  for (const auto& label : table.labels()) {
    if (label == inlier_label) continue;
    const auto& v = table.vector(label);
    const double denom = qn * v.norm();
    all.push_back({label, denom > 0.0 ? q.dot(v) / denom : 0.0});
  }
  std::sort(all.begin(), all.end(), [](const Neighbor& x, const Neighbor& y) {
    if (x.similarity != y.similarity) return x.similarity > y.similarity;
    return x.label < y.label;
  });
  all.resize(static_cast<std::size_t>(k));
  return all;
}

std::string caption_for(const std::string& label) { return "a photo of " + label; }

Eigen::VectorXd label_embedding(const TextEncoder& encoder, const std::string& label) {
  Eigen::VectorXd v = encoder.embed_text(caption_for(label));
  const double n = v.norm();
  require(n > 0.0 && std::isfinite(n), ErrorCode::numeric, "text embedding of '" + label + "' has zero norm");
  return v / n;
}

TextThreshold compute_tau_text(std::span<const Eigen::VectorXd> embeddings, std::string vocab_id,
                               std::string encoder_id) {
  const std::size_t m = embeddings.size();
  require(m >= 2, ErrorCode::invalid_input, "tau_text needs at least two validation labels");
  double total = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      if (i != j) total += (embeddings[i] - embeddings[j]).norm();
    }
  }
  TextThreshold out;
  out.tau_text = total / static_cast<double>(m * (m - 1));
  out.vocab_id = std::move(vocab_id);
  out.encoder_id = std::move(encoder_id);
  out.degenerate = out.tau_text == 0.0;
  return out;
}

TextThreshold compute_tau_text(const TextEncoder& encoder, std::span<const std::string> validation_labels,
                               std::string vocab_id) {
  std::vector<Eigen::VectorXd> e;
  for (const auto& label : validation_labels) e.push_back(label_embedding(encoder, label));
  return compute_tau_text(e, std::move(vocab_id), encoder.encoder_id());
}

FilterResult filter_near_labels(std::span<const Neighbor> candidates, std::span<const std::string> inlier_labels,
                                const TextEncoder& encoder, double tau_text) {
  require(!inlier_labels.empty(), ErrorCode::invalid_input, "no inlier labels");
  std::vector<Eigen::VectorXd> inlier_e;
  for (const auto& y : inlier_labels) inlier_e.push_back(label_embedding(encoder, y));
  FilterResult out;
  for (const auto& c : candidates) {
    const Eigen::VectorXd e = label_embedding(encoder, c.label);
    double min_dist = std::numeric_limits<double>::infinity();
    for (const auto& y : inlier_e) min_dist = std::min(min_dist, (e - y).norm());
    if (min_dist >= tau_text) out.kept.push_back(c);
  }
  out.empty_warning = out.kept.empty();
  return out;
}

std::vector<std::string> negative_prompts(const std::string& label) {
  require(!trim(label).empty(), ErrorCode::invalid_input, "empty label");
  const std::string& x = label;
  return {
      "A photo of " + x + " with a crack",
      "A photo of a broken " + x,
      "A photo of " + x + " with a defect",
      "A photo of " + x + " with damage",
      "A photo of " + x + " with a scratch",
      "A photo of " + x + " with a hole",
      "A photo of " + x + " torn",
      "A photo of " + x + " cut",
      "A photo of " + x + " with contamination",
      "A photo of " + x + " with a fracture",
      "A photo of a damaged " + x,
      "A photo of a fractured " + x,
      "A photo of " + x + " with destruction",
      "A photo of " + x + " with a mark",
  };
}

std::vector<WeightedPrompt> PromptSet::prompts() const {
  std::vector<WeightedPrompt> out;
  for (const auto& n : near_labels) out.push_back({caption_for(n.label), n.similarity});
  for (const auto& p : negative) out.push_back({p, aux_weight});
  out.push_back({extra_label, aux_weight});
  return out;
}

std::size_t PromptSet::sample(Rng& rng) const {
  std::vector<double> w;
  for (const auto& p : prompts()) w.push_back(p.weight);
  std::discrete_distribution<std::size_t> dist(w.begin(), w.end());
  return dist(rng);
}

std::string PromptSet::id() const {
  std::ostringstream os;
  write_prompt_set(os, *this);
  return fnv1a_hex(os.str());
}

PromptSet build_prompt_set(const TextEmbeddingTable& table, const TextEncoder& encoder,
                           const std::vector<std::string>& inlier_labels, int k, double tau_text,
                           std::uint64_t seed, double aux_weight) {
  require(!inlier_labels.empty(), ErrorCode::invalid_input, "no inlier labels");
  require(aux_weight > 0.0 && std::isfinite(aux_weight), ErrorCode::invalid_input, "aux weight must be positive");
  const std::set<std::string> inliers(inlier_labels.begin(), inlier_labels.end());

  // Union of each inlier label's neighbors, keeping the best similarity.
  std::map<std::string, double> best;
  for (const auto& y : inlier_labels) {
    for (const auto& n : nearest_labels(table, y, k)) {
      if (inliers.count(n.label)) continue;
      auto [it, inserted] = best.emplace(n.label, n.similarity);
      if (!inserted) it->second = std::max(it->second, n.similarity);
    }
  }
  std::vector<Neighbor> candidates;
  for (const auto& [label, sim] : best) {
    if (sim > 0.0) candidates.push_back({label, std::min(sim, 1.0)});
  }
  std::sort(candidates.begin(), candidates.end(), [](const Neighbor& a, const Neighbor& b) {
    if (a.similarity != b.similarity) return a.similarity > b.similarity;
    return a.label < b.label;
  });

  PromptSet set;
  set.inlier_labels = inlier_labels;
  set.near_labels = filter_near_labels(candidates, inlier_labels, encoder, tau_text).kept;
  for (const auto& y : inlier_labels) {
    auto neg = negative_prompts(y);
    set.negative.insert(set.negative.end(), neg.begin(), neg.end());
  }
  set.tau_text = tau_text;
  set.aux_weight = aux_weight;
  set.seed = seed;
  return set;
}

void write_prompt_set(std::ostream& out, const PromptSet& set) {
  out.precision(17);
  out << "format=rodeo-prompt-set-1\n";
  for (const auto& y : set.inlier_labels) out << "inlier=" << y << "\n";
  out << "tau_text=" << set.tau_text << "\n";
  out << "seed=" << set.seed << "\n";
  out << "aux_weight=" << set.aux_weight << "\n";
  for (const auto& n : set.near_labels) out << "near=" << n.label << "\t" << n.similarity << "\n";
  for (const auto& p : set.negative) out << "negative=" << p << "\n";
  out << "extra=" << set.extra_label << "\n";
}

PromptSet read_prompt_set(std::istream& in, const std::string& origin) {
  PromptSet set;
  set.negative.clear();
  std::string line;
  int line_no = 0;
  bool saw_format = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) fail(ErrorCode::parse, origin + ":" + std::to_string(line_no) + ": expected key=value");
    const std::string key = line.substr(0, eq), value = line.substr(eq + 1);
    if (key == "format") {
      if (value != "rodeo-prompt-set-1") fail(ErrorCode::parse, origin + ": unsupported format " + value);
      saw_format = true;
    } else if (key == "inlier") {
      set.inlier_labels.push_back(value);
    } else if (key == "tau_text") {
      set.tau_text = parse_number(value);
    } else if (key == "seed") {
      set.seed = std::stoull(value);
    } else if (key == "aux_weight") {
      set.aux_weight = parse_number(value);
    } else if (key == "near") {
      const auto tab = value.find('\t');
      if (tab == std::string::npos) fail(ErrorCode::parse, origin + ":" + std::to_string(line_no) + ": near needs label<TAB>weight");
      set.near_labels.push_back({value.substr(0, tab), parse_number(value.substr(tab + 1))});
    } else if (key == "negative") {
      set.negative.push_back(value);
    } else if (key == "extra") {
      set.extra_label = value;
    } else {
      fail(ErrorCode::parse, origin + ":" + std::to_string(line_no) + ": unknown key " + key);
    }
  }
  if (!saw_format) fail(ErrorCode::parse, origin + ": missing format line");
  return set;
}

}  // namespace rodeo::labels
