#pragma once

// Small configurations shared by the model, evaluation and CLI tests.

#include "l2i/config.hpp"
#include "l2i/data.hpp"

namespace fixture {

/// Standard scene classes at 32 px with lengths halved.
inline l2i::SceneSpec small_spec() {
  l2i::SceneSpec spec = l2i::SceneSpec::standard();
  spec.image_size = 32;
  for (auto& c : spec.classes) {
    c.min_length /= 2;
    c.max_length /= 2;
  }
  return spec;
}

inline l2i::RunConfig tiny_config(std::uint64_t seed = 3) {
  l2i::RunConfig cfg;
  cfg.seed = seed;
  cfg.model.width = 16;
  cfg.model.encoder = {24, 16, 1, 2, 2};
  cfg.model.resampler.num_queries = 2;
  cfg.model.resampler.layers = 1;
  cfg.model.resampler.fourier_freqs = 4;
  cfg.model.unet.image_size = 32;
  cfg.model.unet.channels = {8, 16};
  cfg.model.unet.cgm_levels = {1};
  cfg.model.unet.time_dim = 16;
  cfg.model.unet.groups = 4;
  cfg.schedule.steps = 20;
  cfg.train.steps = 4;
  cfg.train.batch_size = 2;
  cfg.train.lr = 1e-3;
  cfg.train.log_every = 2;
  cfg.sample.steps = 4;
  cfg.data.n_train = 12;
  cfg.data.n_eval = 4;
  return cfg;
}

}  // namespace fixture
