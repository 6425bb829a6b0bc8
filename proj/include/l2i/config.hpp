#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include <json.hpp>

#include "l2i/conditioning.hpp"
#include "l2i/diffusion.hpp"
#include "l2i/encoder.hpp"
#include "l2i/unet.hpp"

namespace l2i {

/// Architecture. `width` is the token width shared by the encoder, both
/// re-samplers and the generation-site contexts.
struct ModelConfig {
  int width = 64;
  EncoderConfig encoder;
  ResamplerConfig resampler;
  UNetConfig unet;

  EncoderConfig encoder_config() const;
  ResamplerConfig resampler_config() const;
  UNetConfig unet_config() const;
};

struct TrainConfig {
  int steps = 2000;
  int batch_size = 32;
  double lr = 1e-4;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  /// Global gradient-norm clip; 0 disables.
  double grad_clip = 1.0;
  /// Probability of replacing a sample's conditions with the null condition.
  double cond_dropout = 0.1;
  bool freeze_encoder = false;
  /// With freeze_encoder, the encoder trains for this many steps first.
  int encoder_warmup_steps = 0;
  int log_every = 50;
  /// Write an intermediate checkpoint every N steps; 0 disables.
  int checkpoint_every = 0;
};

struct SampleConfig {
  int steps = 50;
  double guidance_scale = 3.0;
  /// Deterministic DDIM instead of ancestral sampling.
  bool ddim = false;
  bool clip_x0 = true;
};

struct DataConfig {
  /// Scene spec JSON; empty selects the built-in five-class table.
  std::string spec;
  int n_train = 4000;
  int n_eval = 256;
  int max_objects = 6;
  double max_overlap_iou = 0.3;
};

struct EvalConfig {
  /// CIE76 acceptance radius around a class signature.
  double delta_e_tolerance = 25.0;
  /// Width in pixels of the ring outside each box used for the contrast check.
  int ring_margin = 3;
  int feature_dim = 64;
  std::uint64_t feature_seed = 1234;
};

struct RunConfig {
  std::uint64_t seed = 0;
  int workers = 1;
  ModelConfig model;
  ScheduleConfig schedule;
  TrainConfig train;
  SampleConfig sample;
  DataConfig data;
  EvalConfig eval;
};

nlohmann::json config_to_json(const RunConfig& cfg);

/// Strict: every key must exist in the default document with a compatible
/// type. Missing keys keep their defaults.
RunConfig config_from_json(const nlohmann::json& j);
RunConfig load_config(const std::filesystem::path& path);
void validate_config(const RunConfig& cfg);

/// FNV-1a over the canonical dump of the whole effective config.
std::uint64_t config_hash(const RunConfig& cfg);
/// Hash of the parts that shape weights (model and schedule); checkpoints are
/// compatible exactly when this matches.
std::uint64_t architecture_hash(const RunConfig& cfg);

std::uint64_t fnv1a(const std::string& bytes);
std::string hex64(std::uint64_t v);

}  // namespace l2i
