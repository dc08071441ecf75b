#include <cstdint>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "rodeo/rodeo.h"

namespace {

int finish(rodeo_status s) {
  if (s != RODEO_OK) std::cerr << "rodeo: " << rodeo_last_error() << '\n';
  return static_cast<int>(s);
}

const char* opt(const std::string& s) { return s.empty() ? nullptr : s.c_str(); }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Outlier exposure with generated near-distribution images"};
  app.set_version_flag("--version", std::string(rodeo_version()));
  app.require_subcommand(1);
  bool verbose = false;
  app.add_flag("-v,--verbose", verbose, "Progress on stderr");
  int status = 0;

  // theory sweep
  auto* theory = app.add_subcommand("theory", "Gaussian model checks");
  theory->require_subcommand(1);
  std::string theory_cfg, theory_out = "-";
  auto* sweep = theory->add_subcommand("sweep", "Closed-form vs Monte Carlo adversarial risk");
  sweep->add_option("--config", theory_cfg, "INI with a [theory] section");
  sweep->add_option("--out", theory_out, "CSV path or -");
  sweep->callback([&] { status = finish(rodeo_theory_sweep(opt(theory_cfg), theory_out.c_str())); });

  // labels build
  auto* labels = app.add_subcommand("labels", "Near-distribution label sets");
  labels->require_subcommand(1);
  std::string inlier, table = "glyph_words.tsv", lab_embedder, validation, labels_out = "-";
  int k = 16;
  double tau_text = 0.0;
  std::uint64_t labels_seed = 0;
  auto* build = labels->add_subcommand("build", "Build a prompt set for one inlier label");
  build->add_option("--inlier", inlier)->required();
  build->add_option("--table", table, "Word embedding table");
  build->add_option("--k", k, "Neighbours before filtering")->check(CLI::PositiveNumber);
  build->add_option("--embedder", lab_embedder, "Joint embedder checkpoint")->required();
  build->add_option("--validation", validation, "Comma-separated validation labels");
  build->add_option("--tau-text", tau_text, "Fixed text threshold");
  build->add_option("--seed", labels_seed);
  build->add_option("--out", labels_out);
  build->callback([&] {
    status = finish(rodeo_labels_build(inlier.c_str(), table.c_str(), k, lab_embedder.c_str(), opt(validation),
                                       tau_text, labels_seed, labels_out.c_str()));
  });

  // synth
  auto* synth = app.add_subcommand("synth", "Render a glyph dataset");
  std::string classes = "disk,ring,square,cross", synth_out;
  int per_class = 500, side = 16;
  std::uint64_t synth_seed = 0;
  bool synonyms = false;
  synth->add_option("--classes", classes, "Comma-separated glyph families");
  synth->add_option("--per-class", per_class)->check(CLI::PositiveNumber);
  synth->add_option("--side", side)->check(CLI::Range(8, 64));
  synth->add_option("--seed", synth_seed);
  synth->add_flag("--synonym-captions", synonyms);
  synth->add_option("--out", synth_out)->required();
  synth->callback([&] {
    status = finish(rodeo_synth(classes.c_str(), per_class, side, synth_seed, synonyms ? 1 : 0, synth_out.c_str()));
  });

  // embed train
  auto* embed = app.add_subcommand("embed", "Joint image/text embedder");
  embed->require_subcommand(1);
  std::string embed_data, embed_cfg, embed_out;
  auto* embed_train = embed->add_subcommand("train", "Contrastive training on a captioned dataset");
  embed_train->add_option("--data", embed_data)->required();
  embed_train->add_option("--config", embed_cfg, "INI with an [embed] section");
  embed_train->add_option("--out", embed_out)->required();
  embed_train->callback(
      [&] { status = finish(rodeo_embed_train(embed_data.c_str(), opt(embed_cfg), embed_out.c_str(), verbose)); });

  // diffusion train
  auto* diff = app.add_subcommand("diffusion", "Pixel-space denoising diffusion");
  diff->require_subcommand(1);
  std::string diff_data, diff_cfg, diff_out;
  int T = 200;
  auto* diff_train = diff->add_subcommand("train", "Train a denoiser");
  diff_train->add_option("--data", diff_data)->required();
  diff_train->add_option("--T", T, "Diffusion steps")->check(CLI::PositiveNumber);
  diff_train->add_option("--config", diff_cfg, "INI with a [diffusion] section");
  diff_train->add_option("--out", diff_out)->required();
  diff_train->callback([&] {
    status = finish(rodeo_diffusion_train(diff_data.c_str(), T, opt(diff_cfg), diff_out.c_str(), verbose));
  });

  // forge generate
  auto* forge = app.add_subcommand("forge", "Exposure generation");
  forge->require_subcommand(1);
  std::string forge_cfg;
  auto* gen = forge->add_subcommand("generate", "Guided generation with similarity filtering");
  gen->add_option("--config", forge_cfg, "INI with a [forge] section")->required();
  gen->callback([&] { status = finish(rodeo_forge_generate(forge_cfg.c_str(), verbose)); });

  // detector train
  auto* det = app.add_subcommand("detector", "Inlier classifier and outlier detector");
  det->require_subcommand(1);
  std::string det_cfg;
  auto* det_train = det->add_subcommand("train", "Adversarial training with exposures");
  det_train->add_option("--config", det_cfg, "INI with a [detector] section")->required();
  det_train->callback([&] { status = finish(rodeo_detector_train(det_cfg.c_str(), verbose)); });

  // attack run
  auto* attack = app.add_subcommand("attack", "Score attacks");
  attack->require_subcommand(1);
  std::string att_det, att_in, att_adv, att_csv = "-";
  double eps = 8.0 / 255.0;
  int steps = 200, restarts = 3;
  std::uint64_t att_seed = 0;
  auto* att_run = attack->add_subcommand("run", "L-inf PGD against a detector");
  att_run->add_option("--detector", att_det)->required();
  att_run->add_option("--in", att_in, "Dataset or exposure container")->required();
  att_run->add_option("--out", att_adv, "Write perturbed images here");
  att_run->add_option("--eps", eps)->check(CLI::NonNegativeNumber);
  att_run->add_option("--steps", steps)->check(CLI::PositiveNumber);
  att_run->add_option("--restarts", restarts)->check(CLI::PositiveNumber);
  att_run->add_option("--seed", att_seed);
  att_run->add_option("--csv", att_csv, "Score CSV path or -");
  att_run->callback([&] {
    status = finish(rodeo_attack_run(att_det.c_str(), att_in.c_str(), opt(att_adv), eps, steps, restarts, att_seed,
                                     att_csv.c_str()));
  });

  // metrics fdc
  auto* metrics = app.add_subcommand("metrics", "Generation quality");
  metrics->require_subcommand(1);
  std::string m_real, m_gen, m_ext, m_out = "-";
  int mk = 5;
  auto* fdc = metrics->add_subcommand("fdc", "FID, density, coverage and FDC");
  fdc->add_option("--real", m_real)->required();
  fdc->add_option("--gen", m_gen)->required();
  fdc->add_option("--extractor", m_ext, "Embedder checkpoint")->required();
  fdc->add_option("--k", mk)->check(CLI::PositiveNumber);
  fdc->add_option("--out", m_out);
  fdc->callback([&] {
    status = finish(rodeo_metrics_fdc(m_real.c_str(), m_gen.c_str(), m_ext.c_str(), mk, m_out.c_str()));
  });

  // run nd|osr|ood
  auto* run = app.add_subcommand("run", "Full evaluation protocol");
  std::string kind, run_cfg, run_out;
  run->add_option("protocol", kind, "nd, osr or ood")->required()->check(CLI::IsMember({"nd", "osr", "ood"}));
  run->add_option("--config", run_cfg, "Experiment INI");
  run->add_option("--out-dir", run_out, "Artifacts and results.csv");
  run->callback(
      [&] { status = finish(rodeo_run_protocol(kind.c_str(), opt(run_cfg), opt(run_out), verbose)); });

  // report
  auto* rep = app.add_subcommand("report", "Summarize a results CSV");
  std::string rep_in, rep_png, rep_out = "-";
  rep->add_option("--results", rep_in)->required();
  rep->add_option("--png", rep_png, "Bar chart output");
  rep->add_option("--out", rep_out);
  rep->callback([&] { status = finish(rodeo_report(rep_in.c_str(), opt(rep_png), rep_out.c_str())); });

  CLI11_PARSE(app, argc, argv);
  return status;
}
