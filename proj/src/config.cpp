#include "l2i/config.hpp"

#include <cstdio>
#include <fstream>

namespace l2i {

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(ScheduleConfig, steps, beta_start, beta_end)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(TrainConfig, steps, batch_size, lr, adam_beta1, adam_beta2, adam_eps, grad_clip,
                                   cond_dropout, freeze_encoder, encoder_warmup_steps, log_every, checkpoint_every)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(SampleConfig, steps, guidance_scale, ddim, clip_x0)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(DataConfig, spec, n_train, n_eval, max_objects, max_overlap_iou)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(EvalConfig, delta_e_tolerance, ring_margin, feature_dim, feature_seed)

EncoderConfig ModelConfig::encoder_config() const {
  EncoderConfig e = encoder;
  e.width = width;
  return e;
}

ResamplerConfig ModelConfig::resampler_config() const {
  ResamplerConfig r = resampler;
  r.width = width;
  return r;
}

UNetConfig ModelConfig::unet_config() const {
  UNetConfig u = unet;
  u.context_dim = width;
  return u;
}

namespace {

nlohmann::json model_to_json(const ModelConfig& m) {
  return {
      {"width", m.width},
      {"encoder",
       {{"seq_len", m.encoder.seq_len},
        {"layers", m.encoder.layers},
        {"heads", m.encoder.heads},
        {"ffn_mult", m.encoder.ffn_mult}}},
      {"resampler",
       {{"num_queries", m.resampler.num_queries},
        {"layers", m.resampler.layers},
        {"fourier_freqs", m.resampler.fourier_freqs},
        {"heads", m.resampler.heads},
        {"ffn_mult", m.resampler.ffn_mult},
        {"context_bridge", m.resampler.context_bridge}}},
      {"unet",
       {{"image_size", m.unet.image_size},
        {"channels", m.unet.channels},
        {"cgm_levels", m.unet.cgm_levels},
        {"time_dim", m.unet.time_dim},
        {"groups", m.unet.groups},
        {"fg_aware", m.unet.fg_aware}}},
  };
}

ModelConfig model_from_json(const nlohmann::json& j) {
  ModelConfig m;
  m.width = j.at("width").get<int>();
  const auto& e = j.at("encoder");
  m.encoder.seq_len = e.at("seq_len").get<int>();
  m.encoder.layers = e.at("layers").get<int>();
  m.encoder.heads = e.at("heads").get<int>();
  m.encoder.ffn_mult = e.at("ffn_mult").get<int>();
  const auto& r = j.at("resampler");
  m.resampler.num_queries = r.at("num_queries").get<int>();
  m.resampler.layers = r.at("layers").get<int>();
  m.resampler.fourier_freqs = r.at("fourier_freqs").get<int>();
  m.resampler.heads = r.at("heads").get<int>();
  m.resampler.ffn_mult = r.at("ffn_mult").get<int>();
  m.resampler.context_bridge = r.at("context_bridge").get<bool>();
  const auto& u = j.at("unet");
  m.unet.image_size = u.at("image_size").get<int>();
  m.unet.channels = u.at("channels").get<std::vector<int>>();
  m.unet.cgm_levels = u.at("cgm_levels").get<std::vector<int>>();
  m.unet.time_dim = u.at("time_dim").get<int>();
  m.unet.groups = u.at("groups").get<int>();
  m.unet.fg_aware = u.at("fg_aware").get<bool>();
  return m;
}

bool compatible(const nlohmann::json& def, const nlohmann::json& v) {
  if (def.is_boolean()) return v.is_boolean();
  if (def.is_number_integer()) return v.is_number_integer();
  if (def.is_number()) return v.is_number();
  if (def.is_string()) return v.is_string();
  if (def.is_array()) return v.is_array();
  return def.type() == v.type();
}

void merge_strict(nlohmann::json& base, const nlohmann::json& user, const std::string& path) {
  if (!user.is_object()) throw Error(Errc::InvalidConfig, "expected an object at " + (path.empty() ? "top level" : path));
  for (auto it = user.begin(); it != user.end(); ++it) {
    const std::string key = path.empty() ? it.key() : path + "." + it.key();
    if (!base.contains(it.key())) throw Error(Errc::InvalidConfig, "unknown key " + key);
    nlohmann::json& slot = base[it.key()];
    if (slot.is_object()) {
      merge_strict(slot, it.value(), key);
    } else if (!compatible(slot, it.value())) {
      throw Error(Errc::InvalidConfig, "wrong type for " + key);
    } else {
      slot = it.value();
    }
  }
}

}  // namespace

nlohmann::json config_to_json(const RunConfig& cfg) {
  return {
      {"seed", cfg.seed},       {"workers", cfg.workers}, {"model", model_to_json(cfg.model)},
      {"schedule", cfg.schedule}, {"train", cfg.train},   {"sample", cfg.sample},
      {"data", cfg.data},       {"eval", cfg.eval},
  };
}

RunConfig config_from_json(const nlohmann::json& j) {
  nlohmann::json merged = config_to_json(RunConfig{});
  merge_strict(merged, j, "");
  RunConfig cfg;
  try {
    cfg.seed = merged.at("seed").get<std::uint64_t>();
    cfg.workers = merged.at("workers").get<int>();
    cfg.model = model_from_json(merged.at("model"));
    cfg.schedule = merged.at("schedule").get<ScheduleConfig>();
    cfg.train = merged.at("train").get<TrainConfig>();
    cfg.sample = merged.at("sample").get<SampleConfig>();
    cfg.data = merged.at("data").get<DataConfig>();
    cfg.eval = merged.at("eval").get<EvalConfig>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::InvalidConfig, e.what());
  }
  validate_config(cfg);
  return cfg;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::IoError, "cannot open config " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(Errc::InvalidConfig, path.string() + ": " + e.what());
  }
  return config_from_json(j);
}

void validate_config(const RunConfig& cfg) {
  auto require = [](bool ok, const char* what) {
    if (!ok) throw Error(Errc::InvalidConfig, what);
  };
  const ModelConfig& m = cfg.model;
  require(m.width > 0, "model.width must be positive");
  require(m.encoder.seq_len > 0 && m.encoder.layers >= 0 && m.encoder.heads > 0, "model.encoder values");
  require(m.width % m.encoder.heads == 0, "model.width must be divisible by model.encoder.heads");
  require(m.resampler.num_queries > 0 && m.resampler.layers >= 0 && m.resampler.fourier_freqs > 0,
          "model.resampler values");
  require(m.resampler.heads > 0 && m.width % m.resampler.heads == 0, "model.width must be divisible by resampler heads");
  require(!m.unet.channels.empty(), "model.unet.channels must not be empty");
  const int levels = static_cast<int>(m.unet.channels.size());
  require(m.unet.image_size > 0 && m.unet.image_size % (1 << (levels - 1)) == 0,
          "model.unet.image_size must be divisible by the downsampling factor");
  for (int l : m.unet.cgm_levels) require(l >= 0 && l < levels, "model.unet.cgm_levels entry out of range");
  require(m.unet.time_dim > 0 && m.unet.groups > 0, "model.unet values");
  require(cfg.schedule.steps >= 1, "schedule.steps must be at least 1");
  require(cfg.train.batch_size >= 1 && cfg.train.steps >= 0 && cfg.train.lr > 0.0, "train values");
  require(cfg.train.cond_dropout >= 0.0 && cfg.train.cond_dropout <= 1.0, "train.cond_dropout must lie in [0, 1]");
  require(cfg.sample.steps >= 1 && cfg.sample.steps <= cfg.schedule.steps, "sample.steps must lie in [1, T]");
  require(cfg.data.max_objects >= 1, "data.max_objects must be at least 1");
  require(cfg.workers >= 1, "workers must be at least 1");
}

std::uint64_t fnv1a(const std::string& bytes) {
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::uint64_t config_hash(const RunConfig& cfg) { return fnv1a(config_to_json(cfg).dump()); }

std::uint64_t architecture_hash(const RunConfig& cfg) {
  const nlohmann::json j = {{"model", model_to_json(cfg.model)}, {"schedule", cfg.schedule}};
  return fnv1a(j.dump());
}

}  // namespace l2i
