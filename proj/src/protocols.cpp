#include "rodeo/protocols.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <numeric>
#include <ostream>
#include <set>
#include <sstream>

#include "rodeo/container.hpp"
#include "rodeo/error.hpp"
#include "rodeo/imaging.hpp"
#include "rodeo/random.hpp"

#ifndef RODEO_DATA_DIR
#define RODEO_DATA_DIR "data"
#endif

namespace rodeo::protocols {

namespace {

using Clock = std::chrono::steady_clock;

std::string join(const std::vector<std::string>& v, char sep = ',') {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? std::string(1, sep) : "") + v[i];
  return out;
}

std::string num(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

std::string brief(double v) {
  std::ostringstream os;
  os.precision(4);
  os << v;
  return os.str();
}

std::vector<int> class_ids(const data::Dataset& d, const std::vector<std::string>& names) {
  std::vector<int> ids;
  for (const auto& n : names) {
    const auto it = std::find(d.label_names.begin(), d.label_names.end(), n);
    require(it != d.label_names.end(), ErrorCode::lookup, "class '" + n + "' not in dataset");
    ids.push_back(static_cast<int>(it - d.label_names.begin()) + 1);
  }
  return ids;
}

void log_line(std::ostream* log, const std::string& s) {
  if (log) *log << s << std::endl;
}

}  // namespace

std::string to_string(ExposureKind k) { return k == ExposureKind::adaptive ? "adaptive" : "noise"; }

ExposureKind parse_exposure_kind(const std::string& s) {
  if (s == "adaptive") return ExposureKind::adaptive;
  if (s == "noise") return ExposureKind::noise;
  fail(ErrorCode::config, "unknown exposure source '" + s + "' (adaptive|noise)");
}

// ---------------------------------------------------------------- config

ExperimentConfig ExperimentConfig::from_config(const Config& c) {
  ExperimentConfig e;
  e.seed = c.get_u64("seed", e.seed);
  e.out_dir = c.get_string("out_dir", "");

  e.data.classes = c.get_strings("data.classes", e.data.classes);
  e.data.per_class = static_cast<int>(c.get_int("data.per_class", e.data.per_class));
  e.data.side = static_cast<int>(c.get_int("data.side", e.data.side));
  e.data.seed = c.get_u64("data.seed", e.data.seed);
  e.train_fraction = c.get_double("data.train_fraction", e.train_fraction);
  auto& j = e.data.jitter;
  j.intensity_min = c.get_double("data.intensity_min", j.intensity_min);
  j.intensity_max = c.get_double("data.intensity_max", j.intensity_max);
  j.background_max = c.get_double("data.background_max", j.background_max);
  j.pixel_noise = c.get_double("data.pixel_noise", j.pixel_noise);

  e.world.classes = c.get_strings("world.classes", data::glyph_families());
  e.world.per_class = static_cast<int>(c.get_int("world.per_class", 300));
  e.world.seed = c.get_u64("world.seed", 100);
  e.world.side = e.data.side;
  e.world.jitter = e.data.jitter;
  e.world.synonym_captions = c.get_bool("world.synonym_captions", true);

  e.embed.steps = static_cast<int>(c.get_int("embed.steps", e.embed.steps));
  e.embed.d_e = static_cast<int>(c.get_int("embed.d_e", e.embed.d_e));
  e.embed.batch = static_cast<int>(c.get_int("embed.batch", e.embed.batch));
  e.embed.lr = c.get_double("embed.lr", e.embed.lr);
  e.embed.temperature = c.get_double("embed.temperature", e.embed.temperature);
  e.embed.seed = c.get_u64("embed.seed", e.embed.seed);
  e.embed_checkpoint = c.get_string("embed.checkpoint", "");

  e.T = static_cast<int>(c.get_int("diffusion.T", e.T));
  e.ddpm.hidden = static_cast<int>(c.get_int("diffusion.hidden", e.ddpm.hidden));
  e.ddpm.depth = static_cast<int>(c.get_int("diffusion.depth", e.ddpm.depth));
  e.ddpm.time_dim = static_cast<int>(c.get_int("diffusion.time_dim", e.ddpm.time_dim));
  e.ddpm.steps = static_cast<int>(c.get_int("diffusion.steps", e.ddpm.steps));
  e.ddpm.batch = static_cast<int>(c.get_int("diffusion.batch", e.ddpm.batch));
  e.ddpm.lr = c.get_double("diffusion.lr", e.ddpm.lr);
  e.ddpm.seed = c.get_u64("diffusion.seed", e.ddpm.seed);
  e.diffusion_checkpoint = c.get_string("diffusion.checkpoint", "");

  e.word_table = c.get_string("labels.table", e.word_table.string());
  e.k = static_cast<int>(c.get_int("labels.k", e.k));
  e.aux_weight = c.get_double("labels.aux_weight", e.aux_weight);

  e.guidance.s = c.get_double("forge.s", e.guidance.s);
  e.guidance.t0_low_frac = c.get_double("forge.t0_low", e.guidance.t0_low_frac);
  e.guidance.t0_high_frac = c.get_double("forge.t0_high", e.guidance.t0_high_frac);
  e.guidance.sign = static_cast<int>(c.get_int("forge.sign", e.guidance.sign));
  e.exposure_cap = static_cast<int>(c.get_int("forge.cap", e.exposure_cap));
  e.attempts = static_cast<int>(c.get_int("forge.attempts", e.attempts));
  e.forge_batch = static_cast<int>(c.get_int("forge.batch", e.forge_batch));

  e.train.epsilon = c.get_double("detector.epsilon", e.train.epsilon);
  e.train.inner_steps = static_cast<int>(c.get_int("detector.inner_steps", e.train.inner_steps));
  e.train.lr = c.get_double("detector.lr", e.train.lr);
  e.train.epochs = static_cast<int>(c.get_int("detector.epochs", e.train.epochs));
  e.train.batch = static_cast<int>(c.get_int("detector.batch", e.train.batch));
  e.train.adversarial = c.get_bool("detector.adversarial", e.train.adversarial);
  e.score = detect::parse_score_mode(c.get_string("detector.score", detect::to_string(e.score)));
  e.arch.conv1 = static_cast<int>(c.get_int("detector.conv1", e.arch.conv1));
  e.arch.conv2 = static_cast<int>(c.get_int("detector.conv2", e.arch.conv2));
  e.arch.hidden = static_cast<int>(c.get_int("detector.hidden", e.arch.hidden));

  e.attack_enabled = c.get_bool("attack.enabled", e.attack_enabled);
  e.attack.epsilon = c.get_double("attack.epsilon", e.attack.epsilon);
  e.attack.steps = static_cast<int>(c.get_int("attack.steps", e.attack.steps));
  e.attack.restarts = static_cast<int>(c.get_int("attack.restarts", e.attack.restarts));
  e.high_res = c.get_bool("attack.high_res", e.high_res);

  e.metrics_k = static_cast<int>(c.get_int("metrics.k", e.metrics_k));

  e.exposures.clear();
  for (const auto& s : c.get_strings("protocol.exposures", {"adaptive", "noise"})) {
    e.exposures.push_back(parse_exposure_kind(s));
  }
  e.nd_classes = c.get_strings("protocol.nd_classes", {});
  e.osr_fraction = c.get_double("protocol.osr_fraction", e.osr_fraction);
  e.osr_repeats = static_cast<int>(c.get_int("protocol.osr_repeats", e.osr_repeats));
  for (const auto& p : c.get_strings("protocol.ood_outliers", {})) e.ood_outliers.emplace_back(p);

  e.validate();
  return e;
}

Config ExperimentConfig::to_config() const {
  Config c;
  auto i = [&](const std::string& k, std::int64_t v) { c.set(k, std::to_string(v)); };
  auto d = [&](const std::string& k, double v) { c.set(k, num(v)); };
  auto b = [&](const std::string& k, bool v) { c.set(k, v ? "true" : "false"); };
  c.set("seed", std::to_string(seed));
  c.set("out_dir", out_dir.string());
  c.set("data.classes", join(data.classes));
  i("data.per_class", data.per_class);
  i("data.side", data.side);
  c.set("data.seed", std::to_string(data.seed));
  d("data.train_fraction", train_fraction);
  d("data.intensity_min", data.jitter.intensity_min);
  d("data.intensity_max", data.jitter.intensity_max);
  d("data.background_max", data.jitter.background_max);
  d("data.pixel_noise", data.jitter.pixel_noise);
  c.set("world.classes", join(world.classes));
  i("world.per_class", world.per_class);
  c.set("world.seed", std::to_string(world.seed));
  b("world.synonym_captions", world.synonym_captions);
  i("embed.steps", embed.steps);
  i("embed.d_e", embed.d_e);
  i("embed.batch", embed.batch);
  d("embed.lr", embed.lr);
  d("embed.temperature", embed.temperature);
  c.set("embed.seed", std::to_string(embed.seed));
  c.set("embed.checkpoint", embed_checkpoint.string());
  i("diffusion.T", T);
  i("diffusion.hidden", ddpm.hidden);
  i("diffusion.depth", ddpm.depth);
  i("diffusion.time_dim", ddpm.time_dim);
  i("diffusion.steps", ddpm.steps);
  i("diffusion.batch", ddpm.batch);
  d("diffusion.lr", ddpm.lr);
  c.set("diffusion.seed", std::to_string(ddpm.seed));
  c.set("diffusion.checkpoint", diffusion_checkpoint.string());
  c.set("labels.table", word_table.string());
  i("labels.k", k);
  d("labels.aux_weight", aux_weight);
  d("forge.s", guidance.s);
  d("forge.t0_low", guidance.t0_low_frac);
  d("forge.t0_high", guidance.t0_high_frac);
  i("forge.sign", guidance.sign);
  i("forge.cap", exposure_cap);
  i("forge.attempts", attempts);
  i("forge.batch", forge_batch);
  d("detector.epsilon", train.epsilon);
  i("detector.inner_steps", train.inner_steps);
  d("detector.lr", train.lr);
  i("detector.epochs", train.epochs);
  i("detector.batch", train.batch);
  b("detector.adversarial", train.adversarial);
  c.set("detector.score", detect::to_string(score));
  i("detector.conv1", arch.conv1);
  i("detector.conv2", arch.conv2);
  i("detector.hidden", arch.hidden);
  b("attack.enabled", attack_enabled);
  d("attack.epsilon", attack.epsilon);
  i("attack.steps", attack.steps);
  i("attack.restarts", attack.restarts);
  b("attack.high_res", high_res);
  i("metrics.k", metrics_k);
  std::vector<std::string> ex;
  for (auto k : exposures) ex.push_back(to_string(k));
  c.set("protocol.exposures", join(ex));
  c.set("protocol.nd_classes", join(nd_classes));
  d("protocol.osr_fraction", osr_fraction);
  i("protocol.osr_repeats", osr_repeats);
  std::vector<std::string> ood;
  for (const auto& p : ood_outliers) ood.push_back(p.string());
  c.set("protocol.ood_outliers", join(ood));
  return c;
}

void ExperimentConfig::validate() const {
  require(data.classes.size() >= 2, ErrorCode::config, "protocols need at least two classes");
  require(train_fraction > 0.0 && train_fraction < 1.0, ErrorCode::config, "train_fraction must lie in (0,1)");
  require(osr_fraction > 0.0 && osr_fraction < 1.0, ErrorCode::config, "osr_fraction must lie in (0,1)");
  require(osr_repeats >= 1, ErrorCode::config, "osr_repeats must be at least 1");
  require(k >= 1, ErrorCode::config, "labels.k must be positive");
  require(metrics_k >= 1, ErrorCode::config, "metrics.k must be positive");
  require(!exposures.empty(), ErrorCode::config, "no exposure source selected");
  require(T >= 10, ErrorCode::config, "diffusion.T must be at least 10");
  guidance.validate();
  train.validate();
  attack.validate();
}

std::filesystem::path resolve_data_path(const std::filesystem::path& p) {
  if (p.empty() || std::filesystem::exists(p)) return p;
  const auto alt = std::filesystem::path(RODEO_DATA_DIR) / p.filename();
  return std::filesystem::exists(alt) ? alt : p;
}

// ---------------------------------------------------------------- foundation

Foundation prepare_foundation(const ExperimentConfig& cfg, std::ostream* log) {
  Foundation f;
  f.table = labels::load_embedding_table(resolve_data_path(cfg.word_table));
  const bool have_embed = !cfg.embed_checkpoint.empty() && std::filesystem::exists(cfg.embed_checkpoint);
  const bool have_ddpm = !cfg.diffusion_checkpoint.empty() && std::filesystem::exists(cfg.diffusion_checkpoint);
  data::Dataset world;
  if (!have_embed || !have_ddpm) world = data::synth_dataset(cfg.world);

  if (have_embed) {
    f.embedder = embed::JointEmbedder::load(cfg.embed_checkpoint);
  } else {
    const auto t0 = Clock::now();
    f.embedder = embed::train_joint_embedder({to_model_space(world.images), world.caption_list(), world.shape}, cfg.embed);
    log_line(log, "embedder trained in " + brief(std::chrono::duration<double>(Clock::now() - t0).count()) +
                      " s, loss " + brief(f.embedder.final_loss()));
    if (!cfg.embed_checkpoint.empty()) f.embedder.save(cfg.embed_checkpoint);
  }
  if (have_ddpm) {
    f.ddpm = diffusion::DenoiserModel::load(cfg.diffusion_checkpoint);
  } else {
    const auto t0 = Clock::now();
    f.ddpm = diffusion::train_ddpm(world.images, world.shape, diffusion::NoiseSchedule::scaled_linear(cfg.T), cfg.ddpm);
    log_line(log, "diffusion trained in " + brief(std::chrono::duration<double>(Clock::now() - t0).count()) +
                      " s, loss " + brief(f.ddpm.final_loss()));
    if (!cfg.diffusion_checkpoint.empty()) f.ddpm.save(cfg.diffusion_checkpoint);
  }
  require(f.embedder.image_shape() == f.ddpm.shape(), ErrorCode::config, "embedder and diffusion shapes differ");
  return f;
}

// ---------------------------------------------------------------- results

void ResultsTable::append_means() {
  std::vector<std::pair<std::string, std::string>> keys;
  for (const auto& r : rows) {
    if (r.split == "mean") continue;
    const std::pair<std::string, std::string> key{r.protocol, r.exposure};
    if (std::find(keys.begin(), keys.end(), key) == keys.end()) keys.push_back(key);
  }
  std::vector<ResultRow> means;
  for (const auto& [protocol, exposure] : keys) {
    ResultRow m;
    m.protocol = protocol;
    m.split = "mean";
    m.exposure = exposure;
    int n = 0;
    for (const auto& r : rows) {
      if (r.protocol != protocol || r.exposure != exposure || r.split == "mean" || !r.ok()) continue;
      m.clean_auroc += r.clean_auroc;
      m.robust_auroc += r.robust_auroc;
      m.fid += r.fid;
      m.density += r.density;
      m.coverage += r.coverage;
      m.fdc += r.fdc;
      m.acceptance_rate += r.acceptance_rate;
      m.n_exposures += r.n_exposures;
      m.runtime_s += r.runtime_s;
      ++n;
    }
    if (n == 0) {
      m.status = "no successful rows";
    } else {
      for (double* v : {&m.clean_auroc, &m.robust_auroc, &m.fid, &m.density, &m.coverage, &m.fdc,
                        &m.acceptance_rate}) {
        *v /= n;
      }
      m.n_exposures /= n;
    }
    means.push_back(m);
  }
  rows.insert(rows.end(), means.begin(), means.end());
}

const ResultRow* ResultsTable::find(const std::string& split, const std::string& exposure) const {
  for (const auto& r : rows) {
    if (r.split == split && r.exposure == exposure) return &r;
  }
  return nullptr;
}

namespace {

const char* kHeader =
    "protocol,split,exposure,clean_auroc,robust_auroc,fid,density,coverage,fdc,acceptance_rate,n_exposures,"
    "runtime_s,status,config_hash";

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char ch : s) out += ch == '"' ? std::string("\"\"") : std::string(1, ch);
  return out + "\"";
}

std::vector<std::string> csv_split(const std::string& line) {
  std::vector<std::string> out(1);
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char ch = line[i];
    if (quoted) {
      if (ch == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        out.back() += '"';
        ++i;
      } else if (ch == '"') {
        quoted = false;
      } else {
        out.back() += ch;
      }
    } else if (ch == '"') {
      quoted = true;
    } else if (ch == ',') {
      out.emplace_back();
    } else {
      out.back() += ch;
    }
  }
  return out;
}

}  // namespace

void ResultsTable::write_csv(std::ostream& out) const {
  out << kHeader << "\n";
  out << std::setprecision(6);
  for (const auto& r : rows) {
    out << csv_field(r.protocol) << ',' << csv_field(r.split) << ',' << r.exposure << ',' << r.clean_auroc << ','
        << r.robust_auroc << ',' << r.fid << ',' << r.density << ',' << r.coverage << ',' << r.fdc << ','
        << r.acceptance_rate << ',' << r.n_exposures << ',' << r.runtime_s << ',' << csv_field(r.status) << ','
        << config_hash << "\n";
  }
}

ResultsTable ResultsTable::read_csv(std::istream& in, const std::string& origin) {
  ResultsTable t;
  std::string line;
  require(static_cast<bool>(std::getline(in, line)), ErrorCode::parse, origin + ": empty results file");
  require(trim(line) == kHeader, ErrorCode::parse, origin + ": unexpected results header");
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    const auto f = csv_split(line);
    require(f.size() == 14, ErrorCode::parse, origin + ":" + std::to_string(lineno) + ": expected 14 fields");
    ResultRow r;
    r.protocol = f[0];
    r.split = f[1];
    r.exposure = f[2];
    r.clean_auroc = parse_number(f[3]);
    r.robust_auroc = parse_number(f[4]);
    r.fid = parse_number(f[5]);
    r.density = parse_number(f[6]);
    r.coverage = parse_number(f[7]);
    r.fdc = parse_number(f[8]);
    r.acceptance_rate = parse_number(f[9]);
    r.n_exposures = static_cast<int>(parse_number(f[10]));
    r.runtime_s = parse_number(f[11]);
    r.status = f[12];
    t.config_hash = f[13];
    t.rows.push_back(r);
  }
  return t;
}

// ---------------------------------------------------------------- jobs

metrics::FeatureSet embed_features(const embed::JointEmbedder& embedder, const nn::Matrix& images) {
  metrics::FeatureSet fs;
  fs.features = embedder.image_features(to_model_space(images)).transpose();
  fs.extractor_id = embedder.id();
  return fs;
}

double dataset_tau_image(const embed::JointEmbedder& embedder, const data::Dataset& d) {
  std::vector<std::string> caps;
  for (const auto& n : d.label_names) caps.push_back(labels::caption_for(n));
  std::vector<int> lab;
  for (int y : d.labels) lab.push_back(y - 1);
  return embed::compute_tau_image(embedder, to_model_space(d.images), lab, caps, d.id()).tau_image;
}

labels::PromptSet prompt_set_for(const ExperimentConfig& cfg, const Foundation& f, const std::string& inlier,
                                 const std::vector<std::string>& validation_labels, std::uint64_t seed) {
  const auto tt = labels::compute_tau_text(f.embedder, std::span<const std::string>(validation_labels));
  require(!tt.degenerate, ErrorCode::degenerate, "validation labels embed to a single point");
  const int table_size = static_cast<int>(f.table.size());
  int k = std::min(cfg.k, table_size - 1);
  while (true) {
    auto ps = labels::build_prompt_set(f.table, f.embedder, {inlier}, k, tt.tau_text, seed, cfg.aux_weight);
    if (!ps.near_labels.empty() || k >= table_size - 1) return ps;
    k = std::min(2 * k, table_size - 1);
  }
}

namespace {

struct Exposures {
  nn::Matrix images;
  double acceptance_rate = 1.0;
  std::optional<forge::ExposureDataset> generated;
  std::vector<labels::PromptSet> prompt_sets;
};

Exposures make_exposures(const ExperimentConfig& cfg, const Foundation& f, const Job& job, ExposureKind kind) {
  Exposures e;
  const std::uint64_t forge_seed = derive_seed(job.seed, 1);
  if (kind == ExposureKind::noise) {
    const int n = cfg.attempts > 0 ? cfg.attempts : forge::exposure_count_policy(job.inliers.size(), cfg.exposure_cap);
    e.images = data::gaussian_noise_images(n, job.inliers.shape, forge_seed).images;
    return e;
  }
  std::map<std::string, labels::PromptSet> sets;
  for (const auto& name : job.inliers.label_names) {
    sets[name] = prompt_set_for(cfg, f, name, job.validation_labels, forge_seed);
    e.prompt_sets.push_back(sets[name]);
  }
  forge::ForgeConfig fc;
  fc.guidance = cfg.guidance;
  fc.tau_image = job.tau_image;
  fc.cap = cfg.exposure_cap;
  fc.attempts = cfg.attempts;
  fc.batch = cfg.forge_batch;
  fc.seed = forge_seed;
  e.generated = forge::generate_exposure_dataset(job.inliers, sets, f.ddpm, f.embedder, fc);
  e.images = e.generated->images();
  e.acceptance_rate = e.generated->acceptance_rate();
  return e;
}

metrics::MetricsReport quality(const ExperimentConfig& cfg, const Foundation& f, const Job& job,
                               const nn::Matrix& exposures) {
  const auto real = embed_features(f.embedder, job.inliers.images);
  require(exposures.cols() >= 2, ErrorCode::generation, "fewer than two exposures; metrics undefined");
  const auto gen = embed_features(f.embedder, exposures);
  return metrics::evaluate(real, gen, cfg.metrics_k);
}

}  // namespace

metrics::MetricsReport exposure_quality(const ExperimentConfig& cfg, const Foundation& f, const Job& job,
                                        ExposureKind kind, double* acceptance_rate) {
  const Exposures e = make_exposures(cfg, f, job, kind);
  if (acceptance_rate) *acceptance_rate = e.acceptance_rate;
  return quality(cfg, f, job, e.images);
}

ResultRow run_job(const ExperimentConfig& cfg, const Foundation& f, const Job& job, ExposureKind kind,
                  JobArtifacts* artifacts) {
  const auto start = Clock::now();
  ResultRow row;
  row.protocol = job.protocol;
  row.split = job.split;
  row.exposure = to_string(kind);
  try {
    Exposures e = make_exposures(cfg, f, job, kind);
    row.acceptance_rate = e.acceptance_rate;
    row.n_exposures = static_cast<int>(e.images.cols());
    const auto m = quality(cfg, f, job, e.images);
    row.fid = m.fid;
    row.density = m.density;
    row.coverage = m.coverage;
    row.fdc = m.fdc;

    detect::TrainConfig tc = cfg.train;
    tc.epsilon = cfg.high_res ? 2.0 / 255.0 : cfg.train.epsilon;
    tc.seed = derive_seed(job.seed, 2);
    const auto ls = detect::build_training_set(job.inliers, e.images, derive_seed(job.seed, 3));
    detect::Detector det(job.inliers.shape, job.inliers.num_classes(), derive_seed(job.seed, 4), cfg.arch, cfg.score);
    detect::adversarial_train(det, ls, tc);

    std::optional<attack::AttackConfig> ac;
    if (cfg.attack_enabled) {
      ac = cfg.attack;
      ac->epsilon = cfg.effective_epsilon();
      ac->seed = derive_seed(job.seed, 5);
    }
    const attack::ScoreFn score = [&det](const nn::Matrix& x, nn::Matrix* g) { return det.score(x, g); };
    const auto r = attack::evaluate(score, job.test_inliers, job.test_outliers, ac);
    row.clean_auroc = r.clean_auroc;
    row.robust_auroc = r.robust_auroc;

    if (!cfg.out_dir.empty()) {
      const auto dir = cfg.out_dir / job.protocol / job.split;
      std::filesystem::create_directories(dir);
      if (e.generated) forge::save_exposures(dir / (row.exposure + "_exposures.rarc"), *e.generated);
      detect::save_detector(dir / (row.exposure + "_detector.rarc"), det, tc, {});
      for (const auto& ps : e.prompt_sets) {
        std::ofstream out(dir / ("prompts_" + ps.inlier_labels.front() + ".txt"));
        labels::write_prompt_set(out, ps);
      }
    }
    if (artifacts) {
      artifacts->exposures = std::move(e.generated);
      artifacts->exposure_images = std::move(e.images);
      artifacts->detector = std::move(det);
      artifacts->prompt_sets = std::move(e.prompt_sets);
    }
  } catch (const Error& err) {
    row.status = std::string(to_string(err.code())) + ": " + err.what();
  } catch (const std::exception& err) {
    row.status = std::string("internal: ") + err.what();
  }
  row.runtime_s = std::chrono::duration<double>(Clock::now() - start).count();
  return row;
}

// ---------------------------------------------------------------- protocols

std::vector<Job> nd_jobs(const ExperimentConfig& cfg, const Foundation& f, const data::Dataset& d) {
  d.validate();
  require(d.num_classes() >= 2, ErrorCode::invalid_input, "novelty detection needs at least two classes");
  const auto sp = data::split_per_class(d, cfg.train_fraction, cfg.seed);
  const double tau = dataset_tau_image(f.embedder, sp.train);
  const auto wanted = cfg.nd_classes.empty() ? d.label_names : cfg.nd_classes;
  std::vector<Job> jobs;
  for (int c : class_ids(d, wanted)) {
    std::vector<int> others;
    for (int k = 1; k <= d.num_classes(); ++k) {
      if (k != c) others.push_back(k);
    }
    Job j;
    j.protocol = "nd";
    j.split = d.label_names[static_cast<std::size_t>(c - 1)];
    j.inliers = sp.train.select_classes({c}, true);
    j.test_inliers = sp.test.select_classes({c}, false).images;
    j.test_outliers = sp.test.select_classes(others, false).images;
    for (int k : others) j.validation_labels.push_back(d.label_names[static_cast<std::size_t>(k - 1)]);
    j.tau_image = tau;
    j.seed = derive_seed(cfg.seed, 0x100 + static_cast<std::uint64_t>(c));
    jobs.push_back(std::move(j));
  }
  return jobs;
}

std::vector<Job> osr_jobs(const ExperimentConfig& cfg, const Foundation& f, const data::Dataset& d) {
  d.validate();
  const int K = d.num_classes();
  require(K >= 2, ErrorCode::invalid_input, "open-set recognition needs at least two classes");
  const auto sp = data::split_per_class(d, cfg.train_fraction, cfg.seed);
  const double tau = dataset_tau_image(f.embedder, sp.train);
  const int n_in = std::clamp(static_cast<int>(std::lround(cfg.osr_fraction * K)), 1, K - 1);
  std::vector<Job> jobs;
  for (int r = 0; r < cfg.osr_repeats; ++r) {
    Rng rng = make_stream(cfg.seed, 0x05E0 + static_cast<std::uint64_t>(r));
    std::vector<int> order(static_cast<std::size_t>(K));
    std::iota(order.begin(), order.end(), 1);
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<int> in(order.begin(), order.begin() + n_in), out(order.begin() + n_in, order.end());
    std::sort(in.begin(), in.end());
    std::sort(out.begin(), out.end());
    std::vector<std::string> in_names;
    Job j;
    for (int k : in) in_names.push_back(d.label_names[static_cast<std::size_t>(k - 1)]);
    for (int k : out) j.validation_labels.push_back(d.label_names[static_cast<std::size_t>(k - 1)]);
    require(std::set<int>(in.begin(), in.end()).count(out.front()) == 0, ErrorCode::precondition,
            "inlier and outlier class sets overlap");
    if (j.validation_labels.size() < 2) {
      j.validation_labels.clear();
      for (const auto& w : data::glyph_families()) {
        if (std::find(in_names.begin(), in_names.end(), w) == in_names.end()) j.validation_labels.push_back(w);
      }
    }
    j.protocol = "osr";
    j.split = "split" + std::to_string(r) + ":" + join(in_names, '+');
    j.inliers = sp.train.select_classes(in, true);
    j.test_inliers = sp.test.select_classes(in, false).images;
    j.test_outliers = sp.test.select_classes(out, false).images;
    j.tau_image = tau;
    j.seed = derive_seed(cfg.seed, 0x200 + static_cast<std::uint64_t>(r));
    jobs.push_back(std::move(j));
  }
  return jobs;
}

namespace {

ResultsTable run_jobs(const ExperimentConfig& cfg, const Foundation& f, const std::vector<Job>& jobs,
                      std::ostream* log) {
  ResultsTable t;
  t.config_hash = cfg.hash();
  for (const auto& job : jobs) {
    for (auto kind : cfg.exposures) {
      t.rows.push_back(run_job(cfg, f, job, kind));
      const auto& r = t.rows.back();
      log_line(log, r.protocol + " " + r.split + " " + r.exposure + ": clean " + brief(r.clean_auroc) + " robust " +
                        brief(r.robust_auroc) + " fdc " + brief(r.fdc) + " (" + r.status + ")");
    }
  }
  t.append_means();
  return t;
}

}  // namespace

ResultsTable run_nd(const ExperimentConfig& cfg, const Foundation& f, const data::Dataset& d, std::ostream* log) {
  return run_jobs(cfg, f, nd_jobs(cfg, f, d), log);
}

ResultsTable run_osr(const ExperimentConfig& cfg, const Foundation& f, const data::Dataset& d, std::ostream* log) {
  return run_jobs(cfg, f, osr_jobs(cfg, f, d), log);
}

ResultsTable run_ood(const ExperimentConfig& cfg, const Foundation& f, const data::Dataset& inliers,
                     const std::vector<std::pair<std::string, data::Dataset>>& outliers, std::ostream* log) {
  inliers.validate();
  require(!outliers.empty(), ErrorCode::invalid_input, "no outlier datasets given");
  const std::set<std::string> in_names(inliers.label_names.begin(), inliers.label_names.end());
  for (const auto& [name, d] : outliers) {
    d.validate();
    require(d.shape == inliers.shape, ErrorCode::invalid_input, "outlier set '" + name + "' has a different shape");
    for (const auto& n : d.label_names) {
      require(in_names.count(n) == 0, ErrorCode::precondition,
              "outlier set '" + name + "' shares label '" + n + "' with the inliers");
    }
  }
  const auto sp = data::split_per_class(inliers, cfg.train_fraction, cfg.seed);
  Job base;
  base.protocol = "ood";
  base.inliers = sp.train;
  base.test_inliers = sp.test.images;
  for (const auto& w : data::glyph_families()) {
    if (!in_names.count(w)) base.validation_labels.push_back(w);
  }
  require(base.validation_labels.size() >= 2, ErrorCode::precondition, "too few labels left for tau_text");
  base.tau_image = dataset_tau_image(f.embedder, sp.train);
  base.seed = derive_seed(cfg.seed, 0x300);

  ResultsTable t;
  t.config_hash = cfg.hash();
  for (auto kind : cfg.exposures) {
    const auto start = Clock::now();
    JobArtifacts art;
    Job probe = base;
    probe.split = "train";
    probe.test_outliers = outliers.front().second.images;
    const ResultRow trained = run_job(cfg, f, probe, kind, &art);
    const double train_time = std::chrono::duration<double>(Clock::now() - start).count();
    for (std::size_t i = 0; i < outliers.size(); ++i) {
      ResultRow row = trained;
      row.split = outliers[i].first;
      if (row.ok() && i > 0) {
        const auto t1 = Clock::now();
        std::optional<attack::AttackConfig> ac;
        if (cfg.attack_enabled) {
          ac = cfg.attack;
          ac->epsilon = cfg.effective_epsilon();
          ac->seed = derive_seed(base.seed, 5);
        }
        const attack::ScoreFn score = [&art](const nn::Matrix& x, nn::Matrix* g) {
          return art.detector.score(x, g);
        };
        try {
          const auto r = attack::evaluate(score, base.test_inliers, outliers[i].second.images, ac);
          row.clean_auroc = r.clean_auroc;
          row.robust_auroc = r.robust_auroc;
        } catch (const Error& err) {
          row.status = std::string(to_string(err.code())) + ": " + err.what();
        }
        row.runtime_s = train_time + std::chrono::duration<double>(Clock::now() - t1).count();
      }
      t.rows.push_back(row);
      log_line(log, "ood " + row.split + " " + row.exposure + ": clean " + brief(row.clean_auroc) + " robust " +
                        brief(row.robust_auroc) + " (" + row.status + ")");
    }
  }
  t.append_means();
  return t;
}

std::vector<std::pair<std::string, data::Dataset>> default_ood_sets(const ExperimentConfig& cfg) {
  std::vector<std::pair<std::string, data::Dataset>> out;
  const std::vector<std::vector<std::string>> groups{{"triangle", "frame"}, {"bar", "xmark"}};
  for (std::size_t g = 0; g < groups.size(); ++g) {
    data::SynthSpec s = cfg.data;
    s.classes = groups[g];
    s.per_class = std::max(10, cfg.data.per_class / 5);
    s.seed = derive_seed(cfg.data.seed, 0x0D0 + g);
    s.synonym_captions = false;
    out.emplace_back(join(groups[g], '+'), data::synth_dataset(s));
  }
  return out;
}

}  // namespace rodeo::protocols
