#include "rodeo/forge.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "rodeo/config.hpp"
#include "rodeo/container.hpp"
#include "rodeo/error.hpp"
#include "rodeo/imaging.hpp"

namespace rodeo::forge {

int exposure_count_policy(int n_inlier, int cap) {
  require(n_inlier >= 1, ErrorCode::invalid_input, "need at least one inlier");
  require(cap >= 1, ErrorCode::config, "exposure cap must be positive");
  return n_inlier >= kSmallClassThreshold ? n_inlier : cap;
}

Matrix ExposureDataset::images() const {
  Matrix out(shape.size(), static_cast<Eigen::Index>(accepted.size()));
  for (std::size_t i = 0; i < accepted.size(); ++i) out.col(static_cast<Eigen::Index>(i)) = accepted[i].image;
  return out;
}

namespace {

struct Job {
  int attempt;
  int source_index;
  int source_label;
  const Vector* x0;
  const labels::PromptSet* prompts;
  std::string inlier_caption;
};

/// Runs all chains of a batch in lockstep over t; each column keeps its own
/// random stream.
std::vector<ExposureRecord> run_batch(const std::vector<Job>& jobs, const diffusion::DenoiserModel& model,
                                      const embed::JointEmbedder& embedder, const diffusion::GuidanceConfig& guidance,
                                      double tau_image, std::uint64_t seed) {
  const auto& sched = model.schedule();
  const int d = model.shape().size();
  const auto n = static_cast<Eigen::Index>(jobs.size());
  std::vector<ExposureRecord> out(jobs.size());
  std::vector<Rng> rngs;
  std::vector<std::string> prompt_text(jobs.size()), inlier_caps(jobs.size());
  Matrix x(d, n);
  int t_max = 0;
  for (std::size_t j = 0; j < jobs.size(); ++j) {
    const Job& job = jobs[j];
    rngs.push_back(make_stream(seed, static_cast<std::uint64_t>(job.attempt)));
    Rng& rng = rngs.back();
    const auto all = job.prompts->prompts();
    prompt_text[j] = all[job.prompts->sample(rng)].text;
    const int t0 = diffusion::sample_t0(sched, guidance, rng);
    const Vector z = normal_vector(rng, d);
    x.col(static_cast<Eigen::Index>(j)) = diffusion::forward_noise_with(sched, to_model_space(*job.x0), t0, z);
    out[j].attempt = job.attempt;
    out[j].source_index = job.source_index;
    out[j].source_label = job.source_label;
    out[j].prompt = prompt_text[j];
    out[j].t0 = t0;
    inlier_caps[j] = job.inlier_caption;
    t_max = std::max(t_max, t0);
  }
  const Matrix text = embedder.encode_texts(prompt_text);
  std::vector<bool> failed(jobs.size(), false);

  for (int t = t_max; t >= 1; --t) {
    std::vector<Eigen::Index> active;
    for (std::size_t j = 0; j < jobs.size(); ++j) {
      if (out[j].t0 >= t && !failed[j]) active.push_back(static_cast<Eigen::Index>(j));
    }
    if (active.empty()) continue;
    const auto m = static_cast<Eigen::Index>(active.size());
    Matrix xa(d, m), ta(text.rows(), m);
    for (Eigen::Index k = 0; k < m; ++k) {
      xa.col(k) = x.col(active[static_cast<std::size_t>(k)]);
      ta.col(k) = text.col(active[static_cast<std::size_t>(k)]);
    }
    const Matrix eps = model.predict_noise(xa, t);
    Matrix mu = diffusion::posterior_mean(sched, xa, t, eps);
    const double var = sched.posterior_variance(t);
    if (guidance.s != 0.0) {
      Matrix g;
      embedder.similarity(xa, ta, &g);
      mu += guidance.sign * guidance.s * var * g;
    }
    for (Eigen::Index k = 0; k < m; ++k) {
      const auto j = static_cast<std::size_t>(active[static_cast<std::size_t>(k)]);
      Vector next = mu.col(k);
      if (t > 1) next += std::sqrt(var) * normal_vector(rngs[j], d);
      if (!next.allFinite()) {
        failed[j] = true;
        out[j].failure = "guided-reverse-step@t=" + std::to_string(t);
        continue;
      }
      x.col(static_cast<Eigen::Index>(j)) = next;
    }
  }

  const Matrix unit = to_unit_space(x);
  const Matrix caps = embedder.encode_texts(inlier_caps);
  Vector sims = embedder.similarity(to_model_space(unit), caps);
  for (std::size_t j = 0; j < jobs.size(); ++j) {
    out[j].image = unit.col(static_cast<Eigen::Index>(j));
    if (failed[j]) {
      out[j].inlier_similarity = std::nan("");
      out[j].accepted = false;
      continue;
    }
    const double s = sims[static_cast<Eigen::Index>(j)];
    if (!std::isfinite(s)) {
      out[j].failure = "filter";
      out[j].inlier_similarity = std::nan("");
      continue;
    }
    out[j].inlier_similarity = s;
    out[j].accepted = s < tau_image;
  }
  return out;
}

}  // namespace

ExposureRecord generate_one(const Vector& x0, int source_index, const std::string& inlier_label,
                            const labels::PromptSet& prompts, const diffusion::DenoiserModel& model,
                            const embed::JointEmbedder& embedder, const diffusion::GuidanceConfig& guidance,
                            double tau_image, std::uint64_t seed) {
  require(x0.size() == model.shape().size(), ErrorCode::invalid_input, "image size does not match the model");
  require(embedder.image_shape() == model.shape(), ErrorCode::invalid_input, "embedder and diffusion shapes differ");
  guidance.validate();
  Job job{0, source_index, 0, &x0, &prompts, labels::caption_for(inlier_label)};
  return run_batch({job}, model, embedder, guidance, tau_image, seed).front();
}

ExposureDataset generate_exposure_dataset(const data::Dataset& inliers,
                                          const std::map<std::string, labels::PromptSet>& prompt_sets,
                                          const diffusion::DenoiserModel& model, const embed::JointEmbedder& embedder,
                                          const ForgeConfig& config) {
  inliers.validate();
  require(inliers.size() >= 1, ErrorCode::invalid_input, "empty inlier set");
  require(inliers.shape == model.shape() && embedder.image_shape() == model.shape(), ErrorCode::invalid_input,
          "inlier, diffusion and embedder shapes must agree");
  require(config.batch >= 1, ErrorCode::config, "batch must be positive");
  config.guidance.validate();
  for (const auto& name : inliers.label_names) {
    require(prompt_sets.count(name) == 1, ErrorCode::lookup, "no prompt set for inlier label '" + name + "'");
  }

  ExposureDataset ds;
  ds.shape = inliers.shape;
  ds.attempts = config.attempts > 0 ? config.attempts : exposure_count_policy(inliers.size(), config.cap);
  ds.target_label = inliers.num_classes() + 1;
  ds.tau_image = config.tau_image;
  ds.seed = config.seed;
  ds.diffusion_id = model.id();
  ds.embedder_id = embedder.id();
  std::string ids;
  for (const auto& [name, set] : prompt_sets) ids += name + ":" + set.id() + ";";
  ds.prompt_set_id = fnv1a_hex(ids);

  std::vector<Vector> columns;
  columns.reserve(static_cast<std::size_t>(inliers.size()));
  for (int i = 0; i < inliers.size(); ++i) columns.emplace_back(inliers.images.col(i));

  for (int start = 0; start < ds.attempts; start += config.batch) {
    std::vector<Job> jobs;
    for (int a = start; a < std::min(ds.attempts, start + config.batch); ++a) {
      const int src = a % inliers.size();
      const int label = inliers.labels[static_cast<std::size_t>(src)];
      const auto& name = inliers.label_names[static_cast<std::size_t>(label - 1)];
      jobs.push_back({a, src, label, &columns[static_cast<std::size_t>(src)], &prompt_sets.at(name),
                      labels::caption_for(name)});
    }
    for (auto& r : run_batch(jobs, model, embedder, config.guidance, config.tau_image, config.seed)) {
      (r.accepted ? ds.accepted : ds.rejected).push_back(std::move(r));
    }
  }
  if (ds.accepted.empty()) {
    fail(ErrorCode::generation, "no generated exposure passed the tau_image filter after " +
                                    std::to_string(ds.attempts) +
                                    " attempts; raise tau_image or the guidance scale s");
  }
  return ds;
}

void save_exposures(const std::filesystem::path& path, const ExposureDataset& ds) {
  ArrayContainer c;
  std::vector<std::string> prompts;
  std::vector<std::int64_t> t0, src, src_label, attempt;
  Vector sims(static_cast<Eigen::Index>(ds.accepted.size()));
  for (std::size_t i = 0; i < ds.accepted.size(); ++i) {
    const auto& r = ds.accepted[i];
    prompts.push_back(r.prompt);
    t0.push_back(r.t0);
    src.push_back(r.source_index);
    src_label.push_back(r.source_label);
    attempt.push_back(r.attempt);
    sims[static_cast<Eigen::Index>(i)] = r.inlier_similarity;
  }
  c.put_samples("images", ds.images(),
                {static_cast<std::uint64_t>(ds.shape.channels), static_cast<std::uint64_t>(ds.shape.height),
                 static_cast<std::uint64_t>(ds.shape.width)});
  c.put_strings("prompts", prompts);
  c.put_ints("t0", t0);
  c.put_ints("source_index", src);
  c.put_ints("source_label", src_label);
  c.put_ints("attempt", attempt);
  c.put_vector("inlier_similarity", sims);
  std::ostringstream tau;
  tau.precision(17);
  tau << ds.tau_image;
  c.set_meta("kind", "exposures");
  c.set_meta("target_label", std::to_string(ds.target_label));
  c.set_meta("attempts", std::to_string(ds.attempts));
  c.set_meta("accepted", std::to_string(ds.accepted.size()));
  c.set_meta("acceptance_rate", std::to_string(ds.acceptance_rate()));
  c.set_meta("tau_image", tau.str());
  c.set_meta("seed", std::to_string(ds.seed));
  c.set_meta("prompt_set_id", ds.prompt_set_id);
  c.set_meta("diffusion_id", ds.diffusion_id);
  c.set_meta("embedder_id", ds.embedder_id);
  c.save(path);

  std::ofstream log(path.string() + ".rejected.csv");
  require(static_cast<bool>(log), ErrorCode::io, "cannot write rejected-record log next to " + path.string());
  log << "attempt,source_index,t0,inlier_similarity,status,prompt\n";
  log.precision(10);
  for (const auto& r : ds.rejected) {
    log << r.attempt << ',' << r.source_index << ',' << r.t0 << ',' << r.inlier_similarity << ','
        << (r.failure.empty() ? "rejected" : "failed:" + r.failure) << ",\"" << r.prompt << "\"\n";
  }
}

ExposureDataset load_exposures(const std::filesystem::path& path) {
  const auto c = ArrayContainer::load(path);
  require(c.meta_or("kind", "") == "exposures", ErrorCode::parse, "not an exposure container: " + path.string());
  ExposureDataset ds;
  const auto& arr = c.at("images");
  require(arr.shape.size() == 4, ErrorCode::parse, "images must be n x C x H x W");
  ds.shape = {static_cast<int>(arr.shape[1]), static_cast<int>(arr.shape[2]), static_cast<int>(arr.shape[3])};
  const Matrix images = c.get_samples("images");
  const auto prompts = c.get_strings("prompts");
  const auto t0 = c.get_ints("t0");
  const auto src = c.get_ints("source_index");
  const auto src_label = c.get_ints("source_label");
  const auto attempt = c.get_ints("attempt");
  const Vector sims = c.get_vector("inlier_similarity");
  for (Eigen::Index i = 0; i < images.cols(); ++i) {
    ExposureRecord r;
    const auto k = static_cast<std::size_t>(i);
    r.image = images.col(i);
    r.prompt = prompts.at(k);
    r.t0 = static_cast<int>(t0.at(k));
    r.source_index = static_cast<int>(src.at(k));
    r.source_label = static_cast<int>(src_label.at(k));
    r.attempt = static_cast<int>(attempt.at(k));
    r.inlier_similarity = sims[i];
    r.accepted = true;
    ds.accepted.push_back(std::move(r));
  }
  ds.target_label = std::stoi(c.meta("target_label"));
  ds.attempts = std::stoi(c.meta("attempts"));
  ds.tau_image = parse_number(c.meta("tau_image"));
  ds.seed = std::stoull(c.meta("seed"));
  ds.prompt_set_id = c.meta("prompt_set_id");
  ds.diffusion_id = c.meta("diffusion_id");
  ds.embedder_id = c.meta("embedder_id");
  return ds;
}

}  // namespace rodeo::forge
