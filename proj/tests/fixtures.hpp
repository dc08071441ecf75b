#pragma once

#include "rodeo/dataset.hpp"
#include "rodeo/diffusion.hpp"
#include "rodeo/embed.hpp"
#include "rodeo/imaging.hpp"

namespace fixture {

inline constexpr int kSide = 8;

// Four-class 8x8 glyph set with synonym captions.
inline const rodeo::data::Dataset& tiny_world() {
  static const rodeo::data::Dataset d = [] {
    rodeo::data::SynthSpec s;
    s.classes = {"disk", "ring", "square", "cross"};
    s.per_class = 120;
    s.side = kSide;
    s.seed = 21;
    s.synonym_captions = true;
    return rodeo::data::synth_dataset(s);
  }();
  return d;
}

inline const rodeo::embed::JointEmbedder& tiny_embedder() {
  static const rodeo::embed::JointEmbedder e = [] {
    const auto& d = tiny_world();
    rodeo::embed::EmbedderConfig c;
    c.steps = 1000;
    c.d_e = 16;
    c.image_hidden = 32;
    c.seed = 4;
    return rodeo::embed::train_joint_embedder({rodeo::to_model_space(d.images), d.captions, d.shape}, c);
  }();
  return e;
}

inline rodeo::diffusion::DdpmConfig tiny_ddpm_config(int steps) {
  rodeo::diffusion::DdpmConfig c;
  c.hidden = 64;
  c.depth = 2;
  c.time_dim = 16;
  c.steps = steps;
  c.seed = 6;
  return c;
}

inline const rodeo::diffusion::DenoiserModel& tiny_ddpm() {
  static const rodeo::diffusion::DenoiserModel m = [] {
    const auto& d = tiny_world();
    return rodeo::diffusion::train_ddpm(d.images, d.shape, rodeo::diffusion::NoiseSchedule::scaled_linear(50),
                                        tiny_ddpm_config(600));
  }();
  return m;
}

}  // namespace fixture
