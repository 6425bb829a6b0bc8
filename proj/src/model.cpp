#include "l2i/model.hpp"

#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>

namespace l2i {

namespace {

constexpr char kMagic[8] = {'L', '2', 'I', 'C', 'K', 'P', 'T', '\0'};

template <typename Scalar>
const char* scalar_name() {
  return sizeof(Scalar) == 8 ? "float64" : "float32";
}

bool is_encoder_param(const std::string& name) { return name.rfind("encoder.", 0) == 0; }

}  // namespace

Image from_model_space(const Eigen::MatrixXd& rows, int height, int width) {
  if (rows.rows() != static_cast<Eigen::Index>(height) * width || rows.cols() != 3) {
    throw Error(Errc::ShapeMismatch, "model output does not match the image shape");
  }
  Image img(height, width);
  img.pixels = ((rows.array() + 1.0) * 0.5).cwiseMax(0.0).cwiseMin(1.0).matrix();
  return img;
}

Vocabulary vocabulary_for(const SceneSpec& spec) {
  return Vocabulary::for_captions(spec.class_names(), spec.class_names());
}

template <typename Scalar>
Model<Scalar>::Model(const RunConfig& cfg, Vocabulary vocab) : cfg_(cfg), schedule_(cfg.schedule) {
  validate_config(cfg_);
  // Independent streams per component keep the initial weights of one part
  // unaffected by architectural toggles in another.
  Rng enc_rng(derive_seed(cfg_.seed, 1));
  Rng res_rng(derive_seed(cfg_.seed, 2));
  Rng unet_rng(derive_seed(cfg_.seed, 3));
  Rng null_rng(derive_seed(cfg_.seed, 4));
  encoder_ = TextEncoder<Scalar>(store_, "encoder", std::move(vocab), cfg_.model.encoder_config(), enc_rng);
  resampler_ = DualResampler<Scalar>(store_, "resampler", cfg_.model.resampler_config(), res_rng);
  unet_ = UNet<Scalar>(store_, "unet", cfg_.model.unet_config(), unet_rng);
  null_bg_ = store_.add("null_bg", nn::normal_matrix<Scalar>(2 * cfg_.model.resampler.num_queries + 1,
                                                             cfg_.model.width, 0.2, null_rng));
}

template <typename Scalar>
SampleCondition<Scalar> Model<Scalar>::condition(const Layout& layout, const Caption& caption,
                                                 TextCache<Scalar>* cache) const {
  const Layout scaled = layout.image_size == image_size() ? layout : rescale_layout(layout, image_size());
  SampleCondition<Scalar> c;
  c.embeddings = assemble_conditions(scaled, encoder_, resampler_, caption, cache);
  for (const Instance& inst : scaled.instances) c.boxes.push_back(inst.box);
  return c;
}

template <typename Scalar>
SampleCondition<Scalar> Model<Scalar>::null_condition() const {
  SampleCondition<Scalar> c;
  c.embeddings.e_bg = null_bg_;
  return c;
}

template <typename Scalar>
ad::Var<Scalar> Model<Scalar>::predict_noise(const ad::Var<Scalar>& x, const std::vector<int>& steps,
                                             const std::vector<SampleCondition<Scalar>>& conditions) const {
  return unet_.forward(x, steps, conditions);
}

template <typename Scalar>
NoisedBatch<Scalar> make_noised_batch(const ad::Matrix<Scalar>& z0, int batch, const DiffusionSchedule& schedule,
                                      Rng& rng) {
  if (batch < 1 || z0.rows() % batch != 0) throw Error(Errc::ShapeMismatch, "batch does not divide the rows");
  const Eigen::Index per = z0.rows() / batch;
  NoisedBatch<Scalar> nb;
  nb.z0 = z0;
  std::uniform_int_distribution<int> step_dist(1, schedule.steps());
  for (int b = 0; b < batch; ++b) nb.steps.push_back(step_dist(rng));
  std::normal_distribution<double> normal(0.0, 1.0);
  nb.eps.resize(z0.rows(), z0.cols());
  for (Eigen::Index i = 0; i < nb.eps.size(); ++i) nb.eps.data()[i] = static_cast<Scalar>(normal(rng));
  nb.z_t.resize(z0.rows(), z0.cols());
  for (int b = 0; b < batch; ++b) {
    nb.z_t.middleRows(b * per, per) = forward_noise(z0.middleRows(b * per, per), nb.steps[static_cast<std::size_t>(b)],
                                                    nb.eps.middleRows(b * per, per), schedule);
  }
  return nb;
}

template <typename Scalar>
ad::Var<Scalar> ldm_loss(const NoisedBatch<Scalar>& batch, const Denoiser<Scalar>& denoiser) {
  return ad::mse(denoiser(batch), batch.eps);
}

template <typename Scalar>
ad::Var<Scalar> ldm_loss(const Model<Scalar>& model, const std::vector<const SceneSample*>& batch, Rng& rng,
                         double cond_dropout) {
  if (batch.empty()) throw Error(Errc::EmptyInput, "empty training batch");
  const int size = model.image_size();
  const Eigen::Index per = static_cast<Eigen::Index>(size) * size;
  ad::Matrix<Scalar> z0(per * static_cast<Eigen::Index>(batch.size()), 3);
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const Image& img = batch[b]->image;
    if (img.height != size || img.width != size) {
      throw Error(Errc::ResolutionMismatch, "training image size differs from the model resolution");
    }
    z0.middleRows(static_cast<Eigen::Index>(b) * per, per) = to_model_space<Scalar>(img);
  }
  const NoisedBatch<Scalar> nb = make_noised_batch(z0, static_cast<int>(batch.size()), model.schedule(), rng);

  std::uniform_real_distribution<double> unit(0.0, 1.0);
  TextCache<Scalar> cache;
  std::vector<SampleCondition<Scalar>> conds;
  conds.reserve(batch.size());
  for (const SceneSample* s : batch) {
    const bool drop = cond_dropout > 0.0 && unit(rng) < cond_dropout;
    conds.push_back(drop ? model.null_condition() : model.condition(s->layout, s->caption, &cache));
  }
  return ldm_loss<Scalar>(nb, [&](const NoisedBatch<Scalar>& in) {
    return model.predict_noise(ad::constant<Scalar>(in.z_t), in.steps, conds);
  });
}

template <typename Scalar>
ad::Var<Scalar> ldm_loss(const Model<Scalar>& model, const Image& z0, const Caption& caption, const Layout& layout,
                         Rng& rng) {
  SceneSample s;
  s.image = z0;
  s.caption = caption;
  s.layout = layout;
  return ldm_loss(model, std::vector<const SceneSample*>{&s}, rng, 0.0);
}

template <typename Scalar>
Trainer<Scalar>::Trainer(Model<Scalar>& model, const TrainConfig& cfg, std::uint64_t seed)
    : model_(model), cfg_(cfg), rng_(derive_seed(seed, 0x7261696eull)) {
  for (const auto& [name, v] : model_.params().entries()) {
    moments_.push_back({ad::Matrix<Scalar>::Zero(v.rows(), v.cols()), ad::Matrix<Scalar>::Zero(v.rows(), v.cols())});
  }
}

template <typename Scalar>
bool Trainer<Scalar>::encoder_frozen() const {
  return cfg_.freeze_encoder && step_ >= cfg_.encoder_warmup_steps;
}

template <typename Scalar>
std::vector<const SceneSample*> Trainer<Scalar>::next_batch(const std::vector<SceneSample>& data) {
  if (data.empty()) throw Error(Errc::EmptyInput, "training set is empty");
  if (data_size_ != 0 && data_size_ != data.size()) {
    throw Error(Errc::IncompatibleCheckpoint, "training set size differs from the one the trainer state was built on");
  }
  data_size_ = data.size();
  std::vector<const SceneSample*> batch;
  for (int i = 0; i < cfg_.batch_size; ++i) {
    if (cursor_ >= order_.size()) {
      order_.resize(data.size());
      std::iota(order_.begin(), order_.end(), std::size_t{0});
      std::shuffle(order_.begin(), order_.end(), rng_);
      cursor_ = 0;
    }
    batch.push_back(&data[order_[cursor_++]]);
  }
  return batch;
}

template <typename Scalar>
double Trainer<Scalar>::step(const std::vector<SceneSample>& data) {
  const std::vector<const SceneSample*> batch = next_batch(data);
  auto& entries = model_.params().entries();
  const bool frozen = encoder_frozen();
  for (const auto& [name, v] : entries) v.node()->requires_grad = !(frozen && is_encoder_param(name));
  model_.params().zero_grad();

  double loss = 0.0;
  {
    ad::Tape<Scalar> tape;
    const ad::Var<Scalar> l = ldm_loss(model_, batch, rng_, cfg_.cond_dropout);
    loss = static_cast<double>(l.value()(0, 0));
    if (!std::isfinite(loss)) throw Error(Errc::DivergedLoss, "non-finite loss at step " + std::to_string(step_ + 1));
    tape.backward(l);
  }

  double sq = 0.0;
  for (const auto& [name, v] : entries) {
    if (v.requires_grad() && v.grad().size() != 0) sq += static_cast<double>(v.grad().squaredNorm());
  }
  const double norm = std::sqrt(sq);
  if (!std::isfinite(norm)) throw Error(Errc::DivergedLoss, "non-finite gradient at step " + std::to_string(step_ + 1));
  const Scalar clip = cfg_.grad_clip > 0.0 && norm > cfg_.grad_clip ? static_cast<Scalar>(cfg_.grad_clip / norm)
                                                                    : Scalar(1);

  ++step_;
  const Scalar b1 = static_cast<Scalar>(cfg_.adam_beta1);
  const Scalar b2 = static_cast<Scalar>(cfg_.adam_beta2);
  const Scalar c1 = Scalar(1) - static_cast<Scalar>(std::pow(cfg_.adam_beta1, step_));
  const Scalar c2 = Scalar(1) - static_cast<Scalar>(std::pow(cfg_.adam_beta2, step_));
  const Scalar lr = static_cast<Scalar>(cfg_.lr);
  const Scalar eps = static_cast<Scalar>(cfg_.adam_eps);
  for (std::size_t i = 0; i < entries.size(); ++i) {
    ad::Var<Scalar> v = entries[i].second;
    if (!v.requires_grad() || v.grad().size() == 0) continue;
    Moments& mo = moments_[i];
    const ad::Matrix<Scalar> g = v.grad() * clip;
    mo.m = b1 * mo.m + (Scalar(1) - b1) * g;
    mo.v = b2 * mo.v + (Scalar(1) - b2) * g.cwiseProduct(g);
    v.mutable_value().array() -= lr * (mo.m.array() / c1) / ((mo.v.array() / c2).sqrt() + eps);
  }
  model_.params().zero_grad();
  return loss;
}

template <typename Scalar>
nlohmann::json Trainer<Scalar>::state_json() const {
  std::ostringstream rng;
  rng << rng_;
  return {{"step", step_}, {"rng", rng.str()}, {"order", order_}, {"cursor", cursor_}, {"data_size", data_size_}};
}

template <typename Scalar>
void Trainer<Scalar>::restore_state(const nlohmann::json& state) {
  try {
    step_ = state.at("step").get<int>();
    std::istringstream rng(state.at("rng").get<std::string>());
    rng >> rng_;
    if (!rng) throw Error(Errc::IncompatibleCheckpoint, "unreadable generator state");
    order_ = state.at("order").get<std::vector<std::size_t>>();
    cursor_ = state.at("cursor").get<std::size_t>();
    data_size_ = state.at("data_size").get<std::size_t>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::IncompatibleCheckpoint, std::string("trainer state: ") + e.what());
  }
}

template <typename Scalar>
std::vector<TrainLogRow> train(Model<Scalar>& model, Trainer<Scalar>& trainer, const std::vector<SceneSample>& data,
                               const TrainOptions& options) {
  const TrainConfig& cfg = trainer.config();
  std::ofstream csv;
  if (!options.out_dir.empty()) {
    std::filesystem::create_directories(options.out_dir);
    const auto log_path = options.out_dir / "train_log.csv";
    const bool fresh = trainer.steps_done() == 0 || !std::filesystem::exists(log_path);
    csv.open(log_path, fresh ? std::ios::trunc : std::ios::app);
    if (!csv) throw Error(Errc::IoError, "cannot write " + log_path.string());
    if (fresh) csv << "step,loss,lr,wall_seconds\n";
  }
  std::vector<TrainLogRow> rows;
  const auto start = std::chrono::steady_clock::now();
  double window = 0.0;
  int window_n = 0;
  const int every = std::max(1, cfg.log_every);
  while (trainer.steps_done() < cfg.steps) {
    window += trainer.step(data);
    ++window_n;
    const int s = trainer.steps_done();
    if (s % every == 0 || s == cfg.steps || s == 1) {
      TrainLogRow row{s, window / window_n, cfg.lr,
                      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count()};
      rows.push_back(row);
      if (csv.is_open()) csv << row.step << ',' << row.loss << ',' << row.lr << ',' << row.wall_seconds << '\n' << std::flush;
      if (options.on_log) options.on_log(row);
      window = 0.0;
      window_n = 0;
    }
    if (!options.out_dir.empty() && cfg.checkpoint_every > 0 && s % cfg.checkpoint_every == 0) {
      save_checkpoint(options.out_dir / ("checkpoint_" + std::to_string(s) + ".l2ic"), model, &trainer);
    }
  }
  return rows;
}

template <typename Scalar>
void save_checkpoint(const std::filesystem::path& path, const Model<Scalar>& model, const Trainer<Scalar>* trainer) {
  const auto& entries = model.params().entries();
  nlohmann::json arrays = nlohmann::json::array();
  std::vector<const ad::Matrix<Scalar>*> payload;
  std::size_t offset = 0;
  auto add = [&](const std::string& name, const ad::Matrix<Scalar>& m) {
    arrays.push_back({{"name", name}, {"shape", {m.rows(), m.cols()}}, {"offset", offset}, {"dtype", "float64"}});
    payload.push_back(&m);
    offset += static_cast<std::size_t>(m.size());
  };
  for (const auto& [name, v] : entries) add(name, v.value());
  if (trainer) {
    for (std::size_t i = 0; i < entries.size(); ++i) {
      add("adam.m/" + entries[i].first, trainer->moments()[i].m);
      add("adam.v/" + entries[i].first, trainer->moments()[i].v);
    }
  }
  const RunConfig& cfg = model.config();
  nlohmann::json header = {
      {"format", "l2i-checkpoint"},
      {"version", kCheckpointVersion},
      {"scalar", scalar_name<Scalar>()},
      {"config", config_to_json(cfg)},
      {"config_hash", hex64(config_hash(cfg))},
      {"architecture_hash", hex64(architecture_hash(cfg))},
      {"seed", cfg.seed},
      {"step", trainer ? trainer->steps_done() : 0},
      {"schedule", {{"steps", model.schedule().steps()},
                    {"beta_start", model.schedule().config().beta_start},
                    {"beta_end", model.schedule().config().beta_end}}},
      {"vocabulary", model.encoder().vocabulary().words()},
      {"arrays", arrays},
      {"trainer", trainer ? trainer->state_json() : nlohmann::json(nullptr)},
  };
  const std::string text = header.dump();

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(Errc::IoError, "cannot write " + path.string());
  out.write(kMagic, sizeof kMagic);
  const std::uint32_t version = kCheckpointVersion;
  out.write(reinterpret_cast<const char*>(&version), sizeof version);
  const std::uint64_t len = text.size();
  out.write(reinterpret_cast<const char*>(&len), sizeof len);
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  std::vector<double> buf;
  for (const auto* m : payload) {
    buf.assign(m->data(), m->data() + m->size());
    out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(double)));
  }
  if (!out) throw Error(Errc::IoError, "write failed for " + path.string());

  std::ofstream side(path.string() + ".json");
  side << config_to_json(cfg).dump(2) << '\n';
}

namespace {

struct CheckpointFile {
  nlohmann::json header;
  std::vector<double> payload;
};

CheckpointFile read_checkpoint(const std::filesystem::path& path, bool with_payload) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::IoError, "cannot open checkpoint " + path.string());
  char magic[8];
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kMagic, sizeof magic) != 0) {
    throw Error(Errc::IncompatibleCheckpoint, path.string() + " is not a checkpoint");
  }
  std::uint32_t version = 0;
  std::uint64_t len = 0;
  in.read(reinterpret_cast<char*>(&version), sizeof version);
  in.read(reinterpret_cast<char*>(&len), sizeof len);
  if (!in) throw Error(Errc::IncompatibleCheckpoint, path.string() + ": truncated header");
  if (version != kCheckpointVersion) {
    throw Error(Errc::IncompatibleCheckpoint, path.string() + ": version " + std::to_string(version) + ", expected " +
                                                  std::to_string(kCheckpointVersion));
  }
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  if (!in) throw Error(Errc::IncompatibleCheckpoint, path.string() + ": truncated header");
  CheckpointFile f;
  try {
    f.header = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(Errc::IncompatibleCheckpoint, path.string() + ": " + e.what());
  }
  if (with_payload) {
    std::size_t total = 0;
    for (const auto& a : f.header.at("arrays")) {
      total = std::max(total, a.at("offset").get<std::size_t>() + a.at("shape")[0].get<std::size_t>() *
                                                                     a.at("shape")[1].get<std::size_t>());
    }
    f.payload.resize(total);
    in.read(reinterpret_cast<char*>(f.payload.data()), static_cast<std::streamsize>(total * sizeof(double)));
    if (!in) throw Error(Errc::IncompatibleCheckpoint, path.string() + ": truncated payload");
  }
  return f;
}

template <typename Scalar>
void copy_array(const CheckpointFile& f, const std::string& name, ad::Matrix<Scalar>& dst) {
  for (const auto& a : f.header.at("arrays")) {
    if (a.at("name") != name) continue;
    const auto rows = a.at("shape")[0].get<Eigen::Index>();
    const auto cols = a.at("shape")[1].get<Eigen::Index>();
    if (rows != dst.rows() || cols != dst.cols()) {
      throw Error(Errc::IncompatibleCheckpoint, "array " + name + " has shape " + a.at("shape").dump());
    }
    const double* src = f.payload.data() + a.at("offset").get<std::size_t>();
    for (Eigen::Index i = 0; i < dst.size(); ++i) dst.data()[i] = static_cast<Scalar>(src[i]);
    return;
  }
  throw Error(Errc::IncompatibleCheckpoint, "checkpoint lacks array " + name);
}

}  // namespace

nlohmann::json read_checkpoint_header(const std::filesystem::path& path) { return read_checkpoint(path, false).header; }

template <typename Scalar>
std::unique_ptr<Model<Scalar>> load_model(const std::filesystem::path& path, const RunConfig* expected) {
  const CheckpointFile f = read_checkpoint(path, true);
  RunConfig cfg;
  try {
    cfg = config_from_json(f.header.at("config"));
  } catch (const Error& e) {
    throw Error(Errc::IncompatibleCheckpoint, path.string() + ": stored config: " + e.detail());
  }
  const std::string stored = f.header.at("architecture_hash").get<std::string>();
  if (stored != hex64(architecture_hash(cfg))) {
    throw Error(Errc::IncompatibleCheckpoint, path.string() + ": stored config does not match its hash");
  }
  if (expected && hex64(architecture_hash(*expected)) != stored) {
    throw Error(Errc::IncompatibleCheckpoint, path.string() + ": architecture hash " + stored + " differs from " +
                                                  hex64(architecture_hash(*expected)));
  }
  const auto words = f.header.at("vocabulary").get<std::vector<std::string>>();
  Vocabulary vocab = Vocabulary::from_words(std::vector<std::string>(words.begin() + std::min<std::size_t>(3, words.size()), words.end()));
  if (vocab.words() != words) throw Error(Errc::IncompatibleCheckpoint, path.string() + ": vocabulary order");
  auto model = std::make_unique<Model<Scalar>>(cfg, std::move(vocab));
  for (auto& [name, v] : model->params().entries()) {
    ad::Var<Scalar> var = v;
    copy_array(f, name, var.mutable_value());
  }
  return model;
}

template <typename Scalar>
void load_trainer_state(const std::filesystem::path& path, Trainer<Scalar>& trainer) {
  const CheckpointFile f = read_checkpoint(path, true);
  if (f.header.at("trainer").is_null()) throw Error(Errc::IncompatibleCheckpoint, path.string() + " has no trainer state");
  trainer.restore_state(f.header.at("trainer"));
  // Moments are aligned with the model the trainer was built for.
  auto& moments = trainer.moments();
  std::size_t i = 0;
  for (const auto& a : f.header.at("arrays")) {
    const std::string name = a.at("name").get<std::string>();
    if (name.rfind("adam.m/", 0) != 0) continue;
    if (i >= moments.size()) throw Error(Errc::IncompatibleCheckpoint, "more optimiser slots than parameters");
    copy_array(f, name, moments[i].m);
    copy_array(f, "adam.v/" + name.substr(7), moments[i].v);
    ++i;
  }
  if (i != moments.size()) throw Error(Errc::IncompatibleCheckpoint, "optimiser slot count differs from parameters");
}

template <typename Scalar>
std::vector<Image> sample_images(const Model<Scalar>& model, const std::vector<Layout>& layouts,
                                 const std::vector<Caption>& captions, std::uint64_t seed, const SampleConfig& options,
                                 int batch) {
  if (layouts.size() != captions.size()) throw Error(Errc::MismatchedLengths, "one caption per layout required");
  if (options.steps < 1 || options.steps > model.schedule().steps()) {
    throw Error(Errc::StepOutOfRange, "sampling steps must lie in [1, T]");
  }
  const int size = model.image_size();
  const Eigen::Index per = static_cast<Eigen::Index>(size) * size;
  const bool guided = options.guidance_scale != 1.0;
  const double scale = options.guidance_scale;
  SamplerOptions so;
  so.steps = options.steps;
  so.eta = options.ddim ? 0.0 : 1.0;
  so.clip_x0 = options.clip_x0;

  std::vector<Image> out;
  out.reserve(layouts.size());
  const std::size_t chunk = static_cast<std::size_t>(std::max(1, batch));
  for (std::size_t first = 0; first < layouts.size(); first += chunk) {
    const std::size_t n = std::min(chunk, layouts.size() - first);
    std::vector<SampleCondition<Scalar>> conds;
    for (std::size_t i = 0; i < n; ++i) conds.push_back(model.condition(layouts[first + i], captions[first + i]));
    if (guided) {
      for (std::size_t i = 0; i < n; ++i) conds.push_back(model.null_condition());
    }
    std::vector<Rng> rngs;
    Eigen::MatrixXd x(per * static_cast<Eigen::Index>(n), 3);
    for (std::size_t i = 0; i < n; ++i) {
      rngs.emplace_back(derive_seed(seed, first + i));
      std::normal_distribution<double> normal(0.0, 1.0);
      auto block = x.middleRows(static_cast<Eigen::Index>(i) * per, per);
      for (Eigen::Index r = 0; r < block.rows(); ++r) {
        for (Eigen::Index c = 0; c < 3; ++c) block(r, c) = normal(rngs.back());
      }
    }
    const NoisePredictor predict = [&](const Eigen::MatrixXd& xt, int t) -> Eigen::MatrixXd {
      const ad::Matrix<Scalar> xs = xt.cast<Scalar>();
      if (!guided) {
        return model.predict_noise(ad::constant<Scalar>(xs), std::vector<int>(n, t), conds).value().template cast<double>();
      }
      ad::Matrix<Scalar> both(xs.rows() * 2, 3);
      both << xs, xs;
      const ad::Matrix<Scalar> eps = model.predict_noise(ad::constant<Scalar>(both), std::vector<int>(2 * n, t), conds).value();
      const Eigen::MatrixXd cond = eps.topRows(xs.rows()).template cast<double>();
      const Eigen::MatrixXd uncond = eps.bottomRows(xs.rows()).template cast<double>();
      return uncond + scale * (cond - uncond);
    };
    const Eigen::MatrixXd x0 = sample_loop(predict, std::move(x), model.schedule(), so, rngs);
    for (std::size_t i = 0; i < n; ++i) {
      out.push_back(from_model_space(x0.middleRows(static_cast<Eigen::Index>(i) * per, per), size, size));
    }
  }
  return out;
}

template class Model<float>;
template class Model<double>;
template class Trainer<float>;
template class Trainer<double>;

#define L2I_INSTANTIATE(S)                                                                                           \
  template NoisedBatch<S> make_noised_batch(const ad::Matrix<S>&, int, const DiffusionSchedule&, Rng&);              \
  template ad::Var<S> ldm_loss(const NoisedBatch<S>&, const Denoiser<S>&);                                           \
  template ad::Var<S> ldm_loss(const Model<S>&, const std::vector<const SceneSample*>&, Rng&, double);               \
  template ad::Var<S> ldm_loss(const Model<S>&, const Image&, const Caption&, const Layout&, Rng&);                   \
  template std::vector<TrainLogRow> train(Model<S>&, Trainer<S>&, const std::vector<SceneSample>&,                   \
                                          const TrainOptions&);                                                      \
  template void save_checkpoint(const std::filesystem::path&, const Model<S>&, const Trainer<S>*);                   \
  template std::unique_ptr<Model<S>> load_model(const std::filesystem::path&, const RunConfig*);                    \
  template void load_trainer_state(const std::filesystem::path&, Trainer<S>&);                                       \
  template std::vector<Image> sample_images(const Model<S>&, const std::vector<Layout>&, const std::vector<Caption>&, \
                                            std::uint64_t, const SampleConfig&, int);

L2I_INSTANTIATE(float)
L2I_INSTANTIATE(double)

#undef L2I_INSTANTIATE

}  // namespace l2i
