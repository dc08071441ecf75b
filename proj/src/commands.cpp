#include "rodeo/commands.hpp"

#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <map>
#include <ostream>
#include <set>

#include "rodeo/attack.hpp"
#include "rodeo/container.hpp"
#include "rodeo/error.hpp"
#include "rodeo/imaging.hpp"
#include "rodeo/metrics.hpp"
#include "rodeo/plot.hpp"
#include "rodeo/theory.hpp"

namespace rodeo::commands {

namespace {

void say(std::ostream* log, const std::string& s) {
  if (log) *log << s << std::endl;
}

std::filesystem::path required_path(const Config& c, const std::string& key) {
  const auto v = c.find(key);
  require(v.has_value() && !v->empty(), ErrorCode::config, "missing config key '" + key + "'");
  return *v;
}

embed::EmbedderConfig embedder_config(const Config& c) {
  embed::EmbedderConfig e;
  e.steps = static_cast<int>(c.get_int("embed.steps", e.steps));
  e.d_e = static_cast<int>(c.get_int("embed.d_e", e.d_e));
  e.batch = static_cast<int>(c.get_int("embed.batch", e.batch));
  e.lr = c.get_double("embed.lr", e.lr);
  e.temperature = c.get_double("embed.temperature", e.temperature);
  e.seed = c.get_u64("embed.seed", c.get_u64("seed", e.seed));
  return e;
}

diffusion::DdpmConfig ddpm_config(const Config& c) {
  diffusion::DdpmConfig d;
  d.hidden = static_cast<int>(c.get_int("diffusion.hidden", d.hidden));
  d.depth = static_cast<int>(c.get_int("diffusion.depth", d.depth));
  d.time_dim = static_cast<int>(c.get_int("diffusion.time_dim", d.time_dim));
  d.steps = static_cast<int>(c.get_int("diffusion.steps", d.steps));
  d.batch = static_cast<int>(c.get_int("diffusion.batch", d.batch));
  d.lr = c.get_double("diffusion.lr", d.lr);
  d.seed = c.get_u64("diffusion.seed", c.get_u64("seed", d.seed));
  return d;
}

std::vector<std::string> families_except(const std::vector<std::string>& skip) {
  std::vector<std::string> out;
  for (const auto& w : data::glyph_families()) {
    if (std::find(skip.begin(), skip.end(), w) == skip.end()) out.push_back(w);
  }
  return out;
}

}  // namespace

void apply_seed_override(Config& c) {
  if (const char* s = std::getenv("RODEO_SEED"); s != nullptr && *s != '\0') {
    require(trim(s).find_first_not_of("0123456789") == std::string::npos, ErrorCode::config,
            std::string("RODEO_SEED must be a non-negative integer, got '") + s + "'");
    c.set("seed", trim(s));
  }
}

Config load_config(const std::filesystem::path& path) {
  Config c = path.empty() ? Config{} : Config::load(path);
  apply_seed_override(c);
  return c;
}

nn::Matrix load_images(const std::filesystem::path& path, nn::Shape3* shape) {
  const auto c = ArrayContainer::load(path);
  const auto kind = c.meta_or("kind", "");
  require(kind == "dataset" || kind == "exposures", ErrorCode::parse,
          path.string() + ": expected a dataset or exposure container, found kind '" + kind + "'");
  const auto& arr = c.at("images");
  require(arr.shape.size() == 4, ErrorCode::parse, path.string() + ": images must be n x C x H x W");
  if (shape) *shape = {static_cast<int>(arr.shape[1]), static_cast<int>(arr.shape[2]), static_cast<int>(arr.shape[3])};
  return c.get_samples("images");
}

// ---------------------------------------------------------------- theory

void theory_sweep(const Config& c, std::ostream& out) {
  theory::SweepGrid g;
  g.dim = static_cast<int>(c.get_int("theory.dim", g.dim));
  g.a_norms = c.get_doubles("theory.a_norms", g.a_norms);
  g.ratios = c.get_doubles("theory.ratios", g.ratios);
  g.thetas = c.get_doubles("theory.thetas", g.thetas);
  g.epsilons = c.get_doubles("theory.epsilons", g.epsilons);
  g.n_samples = c.get_int("theory.n_samples", g.n_samples);
  g.seed = c.get_u64("theory.seed", c.get_u64("seed", g.seed));
  const auto rows = theory::closed_form_vs_mc_sweep(g);
  theory::write_sweep_csv(out, rows);
}

// ---------------------------------------------------------------- labels

void labels_build(const LabelsArgs& a, std::ostream& out) {
  require(!a.inlier.empty(), ErrorCode::invalid_input, "inlier label required");
  const auto table = labels::load_embedding_table(protocols::resolve_data_path(a.table));
  const auto embedder = embed::JointEmbedder::load(a.embedder);
  double tau = 0.0;
  if (a.tau_text) {
    tau = *a.tau_text;
    require(tau > 0.0, ErrorCode::invalid_input, "tau_text must be positive");
  } else {
    const auto vocab = a.validation.empty() ? families_except({a.inlier}) : a.validation;
    const auto tt = labels::compute_tau_text(embedder, std::span<const std::string>(vocab));
    require(!tt.degenerate, ErrorCode::degenerate, "validation labels embed to a single point");
    tau = tt.tau_text;
  }
  const auto ps = labels::build_prompt_set(table, embedder, {a.inlier}, a.k, tau, a.seed);
  labels::write_prompt_set(out, ps);
}

// ---------------------------------------------------------------- data and models

void synth(const SynthArgs& a) {
  require(!a.out.empty(), ErrorCode::invalid_input, "output path required");
  data::SynthSpec s;
  s.classes = a.classes;
  s.per_class = a.per_class;
  s.side = a.side;
  s.seed = a.seed;
  s.synonym_captions = a.synonym_captions;
  data::save_dataset(a.out, data::synth_dataset(s));
}

void embed_train(const std::filesystem::path& data_path, const std::filesystem::path& out, const Config& c,
                 std::ostream* log) {
  const auto d = data::load_dataset(data_path);
  require(d.captions.size() == static_cast<std::size_t>(d.size()), ErrorCode::invalid_input,
          "embedder training needs one caption per image");
  const auto e = embed::train_joint_embedder({to_model_space(d.images), d.captions, d.shape}, embedder_config(c));
  say(log, "embedder final loss " + std::to_string(e.final_loss()));
  e.save(out);
}

void diffusion_train(const std::filesystem::path& data_path, int T, const std::filesystem::path& out, const Config& c,
                     std::ostream* log) {
  const auto d = data::load_dataset(data_path);
  const auto m = diffusion::train_ddpm(d.images, d.shape, diffusion::NoiseSchedule::scaled_linear(T), ddpm_config(c));
  say(log, "diffusion loss " + std::to_string(m.initial_loss()) + " -> " + std::to_string(m.final_loss()));
  m.save(out);
}

// ---------------------------------------------------------------- forge

void forge_generate(const Config& c, std::ostream* log) {
  const auto inliers = data::load_dataset(required_path(c, "forge.inliers"));
  const auto embedder = embed::JointEmbedder::load(required_path(c, "forge.embedder"));
  const auto model = diffusion::DenoiserModel::load(required_path(c, "forge.diffusion"));
  const auto out = required_path(c, "forge.out");
  const auto table = labels::load_embedding_table(
      protocols::resolve_data_path(c.get_string("forge.table", "glyph_words.tsv")));

  forge::ForgeConfig fc;
  fc.seed = c.get_u64("forge.seed", c.get_u64("seed", 0));
  fc.guidance.s = c.get_double("forge.s", fc.guidance.s);
  fc.guidance.t0_low_frac = c.get_double("forge.t0_low", fc.guidance.t0_low_frac);
  fc.guidance.t0_high_frac = c.get_double("forge.t0_high", fc.guidance.t0_high_frac);
  fc.guidance.sign = static_cast<int>(c.get_int("forge.sign", fc.guidance.sign));
  fc.attempts = static_cast<int>(c.get_int("forge.attempts", 0));
  fc.cap = static_cast<int>(c.get_int("forge.cap", fc.cap));
  fc.batch = static_cast<int>(c.get_int("forge.batch", fc.batch));
  if (c.contains("forge.tau_image")) {
    fc.tau_image = c.get_double("forge.tau_image", 0.0);
  } else {
    const auto ref = c.contains("forge.reference") ? data::load_dataset(required_path(c, "forge.reference")) : inliers;
    require(ref.num_classes() >= 2, ErrorCode::config,
            "tau_image needs a reference with at least two classes; set forge.reference or forge.tau_image");
    fc.tau_image = protocols::dataset_tau_image(embedder, ref);
  }

  const auto validation = c.get_strings("forge.validation", families_except(inliers.label_names));
  const auto tt = labels::compute_tau_text(embedder, std::span<const std::string>(validation));
  require(!tt.degenerate, ErrorCode::degenerate, "validation labels embed to a single point");
  std::map<std::string, labels::PromptSet> sets;
  for (const auto& name : inliers.label_names) {
    sets[name] = labels::build_prompt_set(table, embedder, {name}, static_cast<int>(c.get_int("forge.k", 16)),
                                          tt.tau_text, fc.seed);
    say(log, "prompt set for " + name + ": " + std::to_string(sets[name].near_labels.size()) + " near labels");
  }
  const auto ds = forge::generate_exposure_dataset(inliers, sets, model, embedder, fc);
  say(log, "accepted " + std::to_string(ds.accepted.size()) + "/" + std::to_string(ds.attempts) +
               " (tau_image " + std::to_string(fc.tau_image) + ")");
  forge::save_exposures(out, ds);
}

// ---------------------------------------------------------------- detector

void detector_train(const Config& c, std::ostream* log) {
  const auto inliers = data::load_dataset(required_path(c, "detector.inliers"));
  nn::Shape3 shape;
  const auto exposures = load_images(required_path(c, "detector.exposures"), &shape);
  require(shape == inliers.shape, ErrorCode::invalid_input, "exposure and inlier image shapes differ");
  const auto out = required_path(c, "detector.out");
  const std::uint64_t seed = c.get_u64("seed", 0);

  detect::TrainConfig tc;
  tc.epsilon = c.get_double("detector.epsilon", tc.epsilon);
  tc.inner_steps = static_cast<int>(c.get_int("detector.inner_steps", tc.inner_steps));
  tc.lr = c.get_double("detector.lr", tc.lr);
  tc.epochs = static_cast<int>(c.get_int("detector.epochs", tc.epochs));
  tc.batch = static_cast<int>(c.get_int("detector.batch", tc.batch));
  tc.adversarial = c.get_bool("detector.adversarial", tc.adversarial);
  tc.seed = derive_seed(seed, 2);
  detect::DetectorArch arch;
  arch.conv1 = static_cast<int>(c.get_int("detector.conv1", arch.conv1));
  arch.conv2 = static_cast<int>(c.get_int("detector.conv2", arch.conv2));
  arch.hidden = static_cast<int>(c.get_int("detector.hidden", arch.hidden));
  const auto mode = detect::parse_score_mode(c.get_string("detector.score", "softmax"));

  const auto ls = detect::build_training_set(inliers, exposures, derive_seed(seed, 3));
  detect::Detector det(inliers.shape, inliers.num_classes(), derive_seed(seed, 4), arch, mode);
  const auto rep = detect::adversarial_train(det, ls, tc);
  if (!rep.epoch_loss.empty()) say(log, "final epoch loss " + std::to_string(rep.epoch_loss.back()));
  detect::save_detector(out, det, tc, rep, inliers.label_names);
}

// ---------------------------------------------------------------- attack

void attack_run(const AttackArgs& a, std::ostream& csv) {
  const auto det = detect::load_detector(a.detector);
  const auto names = detect::load_detector_labels(a.detector);
  const auto c = ArrayContainer::load(a.in);
  std::vector<int> y;
  nn::Matrix x;
  data::Dataset d;
  if (c.meta_or("kind", "") == "exposures") {
    x = c.get_samples("images");
    y.assign(static_cast<std::size_t>(x.cols()), -1);
    d.shape = det.shape();
  } else {
    d = data::read_dataset(c);
    x = d.images;
    for (int label : d.labels) {
      const auto& name = d.label_names[static_cast<std::size_t>(label - 1)];
      const bool inlier = names.empty() ? label <= det.k()
                                        : std::find(names.begin(), names.end(), name) != names.end();
      y.push_back(inlier ? 1 : -1);
    }
  }
  require(x.rows() == det.shape().size(), ErrorCode::invalid_input, "input images do not match the detector");
  attack::AttackConfig ac;
  ac.epsilon = a.epsilon;
  ac.steps = a.steps;
  ac.restarts = a.restarts;
  ac.seed = a.seed;
  const attack::ScoreFn score = [&det](const nn::Matrix& m, nn::Matrix* g) { return det.score(m, g); };
  const nn::Matrix adv = attack::pgd_score_attack(score, x, y, ac);
  const nn::Vector clean = det.score(x), attacked = det.score(adv);

  if (!a.out.empty()) {
    if (d.labels.empty()) {
      d.labels.assign(static_cast<std::size_t>(adv.cols()), 1);
      d.label_names = {"exposure"};
    }
    d.images = adv;
    data::save_dataset(a.out, d);
  }
  csv << "sample_id,clean_score,adv_score,y\n" << std::setprecision(10);
  for (Eigen::Index i = 0; i < x.cols(); ++i) {
    csv << i << ',' << clean[i] << ',' << attacked[i] << ',' << y[static_cast<std::size_t>(i)] << '\n';
  }
}

// ---------------------------------------------------------------- metrics

void metrics_fdc(const std::filesystem::path& real, const std::filesystem::path& gen,
                 const std::filesystem::path& extractor, int k, std::ostream& csv) {
  const auto embedder = embed::JointEmbedder::load(extractor);
  const auto r = metrics::evaluate(protocols::embed_features(embedder, load_images(real)),
                                   protocols::embed_features(embedder, load_images(gen)), k);
  csv << "fid,density,coverage,fdc,k,n_real,n_gen\n" << std::setprecision(10) << r.fid << ',' << r.density << ','
      << r.coverage << ',' << r.fdc << ',' << r.k << ',' << r.n_real << ',' << r.n_gen << '\n';
}

// ---------------------------------------------------------------- protocols

protocols::ResultsTable run_protocol(const std::string& kind, const Config& c, const std::filesystem::path& out_dir,
                                     std::ostream* log) {
  require(kind == "nd" || kind == "osr" || kind == "ood", ErrorCode::invalid_input,
          "protocol must be nd, osr or ood, got '" + kind + "'");
  Config cc = c;
  if (!out_dir.empty()) cc.set("out_dir", out_dir.string());
  const auto cfg = protocols::ExperimentConfig::from_config(cc);
  if (!cfg.out_dir.empty()) std::filesystem::create_directories(cfg.out_dir);

  protocols::ExperimentConfig run_cfg = cfg;
  if (!cfg.out_dir.empty()) {
    if (run_cfg.embed_checkpoint.empty()) run_cfg.embed_checkpoint = cfg.out_dir / "embedder.rarc";
    if (run_cfg.diffusion_checkpoint.empty()) run_cfg.diffusion_checkpoint = cfg.out_dir / "diffusion.rarc";
  }
  const auto f = protocols::prepare_foundation(run_cfg, log);
  const auto d = data::synth_dataset(cfg.data);

  protocols::ResultsTable t;
  if (kind == "nd") {
    t = protocols::run_nd(cfg, f, d, log);
  } else if (kind == "osr") {
    t = protocols::run_osr(cfg, f, d, log);
  } else {
    std::vector<std::pair<std::string, data::Dataset>> outliers;
    if (cfg.ood_outliers.empty()) {
      outliers = protocols::default_ood_sets(cfg);
    } else {
      for (const auto& p : cfg.ood_outliers) outliers.emplace_back(p.stem().string(), data::load_dataset(p));
    }
    t = protocols::run_ood(cfg, f, d, outliers, log);
  }
  if (!cfg.out_dir.empty()) {
    std::ofstream csv(cfg.out_dir / "results.csv");
    t.write_csv(csv);
    std::ofstream ini(cfg.out_dir / "config.ini");
    ini << cfg.to_config().serialize();
    plot::write_png(cfg.out_dir / "auroc.png", plot::auroc_bars(t));
  }
  return t;
}

void report(const std::filesystem::path& results, const std::filesystem::path& png, std::ostream& out) {
  std::ifstream in(results);
  require(in.good(), ErrorCode::io, "cannot open '" + results.string() + "'");
  const auto t = protocols::ResultsTable::read_csv(in, results.string());
  out << "config " << t.config_hash << "\n\n";
  out << "| protocol | split | exposure | clean | robust | FDC | accept | status |\n";
  out << "|---|---|---|---|---|---|---|---|\n";
  out << std::fixed << std::setprecision(3);
  for (const auto& r : t.rows) {
    out << "| " << r.protocol << " | " << r.split << " | " << r.exposure << " | " << r.clean_auroc << " | "
        << r.robust_auroc << " | " << r.fdc << " | " << r.acceptance_rate << " | " << r.status << " |\n";
  }
  if (!png.empty()) plot::write_png(png, plot::auroc_bars(t));
}

}  // namespace rodeo::commands
