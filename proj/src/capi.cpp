#include "rodeo/rodeo.h"

#include <fstream>
#include <iostream>
#include <memory>
#include <new>
#include <span>
#include <string>

#include "rodeo/attack.hpp"
#include "rodeo/commands.hpp"
#include "rodeo/config.hpp"
#include "rodeo/dataset.hpp"
#include "rodeo/detector.hpp"
#include "rodeo/error.hpp"
#include "rodeo/metrics.hpp"

struct rodeo_dataset {
  rodeo::data::Dataset d;
};

struct rodeo_detector {
  rodeo::detect::Detector det;
};

namespace {

thread_local std::string g_last_error;

template <class F>
rodeo_status guarded(F&& f) {
  try {
    f();
    g_last_error.clear();
    return RODEO_OK;
  } catch (const rodeo::Error& e) {
    g_last_error = e.what();
    return static_cast<rodeo_status>(static_cast<int>(e.code()));
  } catch (const std::bad_alloc&) {
    g_last_error = "out of memory";
    return RODEO_E_INTERNAL;
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return RODEO_E_INTERNAL;
  } catch (...) {
    g_last_error = "unknown error";
    return RODEO_E_INTERNAL;
  }
}

void need(const void* p, const char* what) {
  rodeo::require(p != nullptr, rodeo::ErrorCode::invalid_input, std::string(what) + " is null");
}

std::string str(const char* s) { return s ? std::string(s) : std::string(); }

std::vector<std::string> csv_list(const char* s) {
  std::vector<std::string> out;
  if (!s) return out;
  for (auto& t : rodeo::split(s, ',')) {
    auto v = rodeo::trim(t);
    if (!v.empty()) out.push_back(v);
  }
  return out;
}

// Writes through `fn` to stdout for "-" or null, otherwise to a file.
template <class F>
void with_output(const char* path, F&& fn) {
  if (path == nullptr || std::string(path) == "-") {
    fn(std::cout);
    std::cout.flush();
    return;
  }
  std::ofstream out(path);
  rodeo::require(out.good(), rodeo::ErrorCode::io, std::string("cannot write '") + path + "'");
  fn(out);
  rodeo::require(out.good(), rodeo::ErrorCode::io, std::string("write failed for '") + path + "'");
}

rodeo::Config config_at(const char* path) { return rodeo::commands::load_config(str(path)); }

std::ostream* log_for(int verbose) { return verbose ? &std::cerr : nullptr; }

}  // namespace

extern "C" {

const char* rodeo_version(void) { return "0.1.0"; }

const char* rodeo_status_string(rodeo_status s) {
  if (s == RODEO_OK) return "ok";
  if (s == RODEO_E_INTERNAL) return "internal";
  if (s >= RODEO_E_INVALID_INPUT && s <= RODEO_E_DEGENERATE) return rodeo::to_string(static_cast<rodeo::ErrorCode>(s));
  return "unknown";
}

const char* rodeo_last_error(void) { return g_last_error.c_str(); }

rodeo_status rodeo_dataset_synth(const char* classes, int per_class, int side, uint64_t seed, rodeo_dataset** out) {
  return guarded([&] {
    need(out, "out");
    rodeo::data::SynthSpec s;
    if (classes) s.classes = csv_list(classes);
    s.per_class = per_class;
    s.side = side;
    s.seed = seed;
    auto h = std::make_unique<rodeo_dataset>();
    h->d = rodeo::data::synth_dataset(s);
    *out = h.release();
  });
}

rodeo_status rodeo_dataset_load(const char* path, rodeo_dataset** out) {
  return guarded([&] {
    need(path, "path");
    need(out, "out");
    auto h = std::make_unique<rodeo_dataset>();
    h->d = rodeo::data::load_dataset(path);
    *out = h.release();
  });
}

rodeo_status rodeo_dataset_save(const rodeo_dataset* d, const char* path) {
  return guarded([&] {
    need(d, "dataset");
    need(path, "path");
    rodeo::data::save_dataset(path, d->d);
  });
}

size_t rodeo_dataset_size(const rodeo_dataset* d) { return d ? static_cast<size_t>(d->d.size()) : 0; }
size_t rodeo_dataset_dim(const rodeo_dataset* d) { return d ? static_cast<size_t>(d->d.images.rows()) : 0; }
int rodeo_dataset_num_classes(const rodeo_dataset* d) { return d ? d->d.num_classes() : 0; }

rodeo_status rodeo_dataset_image(const rodeo_dataset* d, size_t i, double* buf, size_t len) {
  return guarded([&] {
    need(d, "dataset");
    need(buf, "buf");
    rodeo::require(i < static_cast<size_t>(d->d.size()), rodeo::ErrorCode::lookup, "image index out of range");
    rodeo::require(len >= static_cast<size_t>(d->d.images.rows()), rodeo::ErrorCode::invalid_input,
                   "buffer too small");
    const auto col = d->d.images.col(static_cast<Eigen::Index>(i));
    for (Eigen::Index r = 0; r < col.size(); ++r) buf[r] = col[r];
  });
}

int rodeo_dataset_label(const rodeo_dataset* d, size_t i) {
  if (!d || i >= d->d.labels.size()) return 0;
  return d->d.labels[i];
}

void rodeo_dataset_free(rodeo_dataset* d) { delete d; }

rodeo_status rodeo_detector_load(const char* path, rodeo_detector** out) {
  return guarded([&] {
    need(path, "path");
    need(out, "out");
    *out = new rodeo_detector{rodeo::detect::load_detector(path)};
  });
}

int rodeo_detector_num_classes(const rodeo_detector* det) { return det ? det->det.k() : 0; }
size_t rodeo_detector_dim(const rodeo_detector* det) {
  return det ? static_cast<size_t>(det->det.shape().size()) : 0;
}

rodeo_status rodeo_detector_score(const rodeo_detector* det, const double* images, size_t n, double* scores) {
  return guarded([&] {
    need(det, "detector");
    need(images, "images");
    need(scores, "scores");
    const auto dim = static_cast<Eigen::Index>(det->det.shape().size());
    const Eigen::Map<const Eigen::MatrixXd> x(images, dim, static_cast<Eigen::Index>(n));
    const auto s = det->det.score(x);
    for (Eigen::Index i = 0; i < s.size(); ++i) scores[i] = s[i];
  });
}

void rodeo_detector_free(rodeo_detector* det) { delete det; }

rodeo_status rodeo_auroc(const double* inlier, size_t n_in, const double* outlier, size_t n_out, double* out) {
  return guarded([&] {
    need(inlier, "inlier");
    need(outlier, "outlier");
    need(out, "out");
    *out = rodeo::attack::auroc(std::span<const double>(inlier, n_in), std::span<const double>(outlier, n_out));
  });
}

rodeo_status rodeo_fdc(const double* real, size_t n_real, const double* gen, size_t n_gen, size_t dim, int k,
                       double* fid, double* density, double* coverage, double* fdc) {
  return guarded([&] {
    need(real, "real");
    need(gen, "gen");
    using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    const auto d = static_cast<Eigen::Index>(dim);
    rodeo::metrics::FeatureSet r{Eigen::Map<const RowMat>(real, static_cast<Eigen::Index>(n_real), d), "capi"};
    rodeo::metrics::FeatureSet g{Eigen::Map<const RowMat>(gen, static_cast<Eigen::Index>(n_gen), d), "capi"};
    const auto m = rodeo::metrics::evaluate(r, g, k);
    if (fid) *fid = m.fid;
    if (density) *density = m.density;
    if (coverage) *coverage = m.coverage;
    if (fdc) *fdc = m.fdc;
  });
}

rodeo_status rodeo_theory_sweep(const char* config_path, const char* out_path) {
  return guarded([&] {
    const auto c = config_at(config_path);
    with_output(out_path, [&](std::ostream& o) { rodeo::commands::theory_sweep(c, o); });
  });
}

rodeo_status rodeo_labels_build(const char* inlier, const char* table, int k, const char* embedder,
                                const char* validation, double tau_text, uint64_t seed, const char* out_path) {
  return guarded([&] {
    need(embedder, "embedder");
    rodeo::commands::LabelsArgs a;
    a.inlier = str(inlier);
    a.table = table ? std::string(table) : std::string("glyph_words.tsv");
    a.k = k;
    a.embedder = embedder;
    a.validation = csv_list(validation);
    if (tau_text > 0.0) a.tau_text = tau_text;
    a.seed = seed;
    with_output(out_path, [&](std::ostream& o) { rodeo::commands::labels_build(a, o); });
  });
}

rodeo_status rodeo_synth(const char* classes, int per_class, int side, uint64_t seed, int synonym_captions,
                         const char* out_path) {
  return guarded([&] {
    need(out_path, "out");
    rodeo::commands::SynthArgs a;
    if (classes) a.classes = csv_list(classes);
    a.per_class = per_class;
    a.side = side;
    a.seed = seed;
    a.synonym_captions = synonym_captions != 0;
    a.out = out_path;
    rodeo::commands::synth(a);
  });
}

rodeo_status rodeo_embed_train(const char* data, const char* config_path, const char* out_path, int verbose) {
  return guarded([&] {
    need(data, "data");
    need(out_path, "out");
    rodeo::commands::embed_train(data, out_path, config_at(config_path), log_for(verbose));
  });
}

rodeo_status rodeo_diffusion_train(const char* data, int T, const char* config_path, const char* out_path,
                                   int verbose) {
  return guarded([&] {
    need(data, "data");
    need(out_path, "out");
    rodeo::commands::diffusion_train(data, T, out_path, config_at(config_path), log_for(verbose));
  });
}

rodeo_status rodeo_forge_generate(const char* config_path, int verbose) {
  return guarded([&] {
    need(config_path, "config");
    rodeo::commands::forge_generate(config_at(config_path), log_for(verbose));
  });
}

rodeo_status rodeo_detector_train(const char* config_path, int verbose) {
  return guarded([&] {
    need(config_path, "config");
    rodeo::commands::detector_train(config_at(config_path), log_for(verbose));
  });
}

rodeo_status rodeo_attack_run(const char* detector, const char* in, const char* adv_out, double epsilon, int steps,
                              int restarts, uint64_t seed, const char* csv_out) {
  return guarded([&] {
    need(detector, "detector");
    need(in, "in");
    rodeo::commands::AttackArgs a;
    a.detector = detector;
    a.in = in;
    a.out = str(adv_out);
    a.epsilon = epsilon;
    a.steps = steps;
    a.restarts = restarts;
    a.seed = seed;
    with_output(csv_out, [&](std::ostream& o) { rodeo::commands::attack_run(a, o); });
  });
}

rodeo_status rodeo_metrics_fdc(const char* real, const char* gen, const char* extractor, int k, const char* csv_out) {
  return guarded([&] {
    need(real, "real");
    need(gen, "gen");
    need(extractor, "extractor");
    with_output(csv_out, [&](std::ostream& o) { rodeo::commands::metrics_fdc(real, gen, extractor, k, o); });
  });
}

rodeo_status rodeo_run_protocol(const char* kind, const char* config_path, const char* out_dir, int verbose) {
  return guarded([&] {
    need(kind, "kind");
    rodeo::commands::run_protocol(kind, config_at(config_path), str(out_dir), log_for(verbose));
  });
}

rodeo_status rodeo_report(const char* results_csv, const char* png_out, const char* out_path) {
  return guarded([&] {
    need(results_csv, "results");
    with_output(out_path, [&](std::ostream& o) { rodeo::commands::report(results_csv, str(png_out), o); });
  });
}

}  // extern "C"
