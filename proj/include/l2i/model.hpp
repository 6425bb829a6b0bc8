#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "l2i/conditioning.hpp"
#include "l2i/config.hpp"
#include "l2i/data.hpp"
#include "l2i/diffusion.hpp"
#include "l2i/encoder.hpp"
#include "l2i/image.hpp"
#include "l2i/unet.hpp"

namespace l2i {

/// Images live in [0, 1]; the diffusion model works in [-1, 1].
template <typename Scalar>
ad::Matrix<Scalar> to_model_space(const Image& image) {
  return (image.pixels.array() * 2.0 - 1.0).matrix().cast<Scalar>();
}

Image from_model_space(const Eigen::MatrixXd& rows, int height, int width);

/// Vocabulary covering every caption and label the scene spec can produce.
Vocabulary vocabulary_for(const SceneSpec& spec);

/// Encoder, dual re-sampler, conditional UNet, learned null background
/// condition and the noise schedule, all registered in one parameter store.
template <typename Scalar>
class Model {
 public:
  Model(const RunConfig& cfg, Vocabulary vocab);
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;

  const RunConfig& config() const { return cfg_; }
  nn::ParamStore<Scalar>& params() { return store_; }
  const nn::ParamStore<Scalar>& params() const { return store_; }
  const TextEncoder<Scalar>& encoder() const { return encoder_; }
  const DualResampler<Scalar>& resampler() const { return resampler_; }
  const UNet<Scalar>& unet() const { return unet_; }
  const ad::Var<Scalar>& null_background() const { return null_bg_; }
  const DiffusionSchedule& schedule() const { return schedule_; }
  int image_size() const { return cfg_.model.unet.image_size; }

  /// Condition for one image; the layout is rescaled to the model resolution.
  SampleCondition<Scalar> condition(const Layout& layout, const Caption& caption,
                                    TextCache<Scalar>* cache = nullptr) const;
  /// No instances and the learned null background tokens.
  SampleCondition<Scalar> null_condition() const;

  ad::Var<Scalar> predict_noise(const ad::Var<Scalar>& x, const std::vector<int>& steps,
                                const std::vector<SampleCondition<Scalar>>& conditions) const;

 private:
  RunConfig cfg_;
  nn::ParamStore<Scalar> store_;
  TextEncoder<Scalar> encoder_;
  DualResampler<Scalar> resampler_;
  UNet<Scalar> unet_;
  ad::Var<Scalar> null_bg_;
  DiffusionSchedule schedule_;
};

/// Forward-noised batch: z_t = sqrt(abar) z0 + sqrt(1 - abar) eps per image.
template <typename Scalar>
struct NoisedBatch {
  ad::Matrix<Scalar> z0;
  ad::Matrix<Scalar> eps;
  ad::Matrix<Scalar> z_t;
  std::vector<int> steps;
};

/// Draws one step per image uniformly in [1, T] and Gaussian eps.
template <typename Scalar>
NoisedBatch<Scalar> make_noised_batch(const ad::Matrix<Scalar>& z0, int batch, const DiffusionSchedule& schedule,
                                      Rng& rng);

template <typename Scalar>
using Denoiser = std::function<ad::Var<Scalar>(const NoisedBatch<Scalar>&)>;

/// Mean squared error between eps and the denoiser output.
template <typename Scalar>
ad::Var<Scalar> ldm_loss(const NoisedBatch<Scalar>& batch, const Denoiser<Scalar>& denoiser);

/// Noise-prediction loss of the model on a batch of samples. Each sample's
/// condition is replaced by the null condition with probability cond_dropout.
template <typename Scalar>
ad::Var<Scalar> ldm_loss(const Model<Scalar>& model, const std::vector<const SceneSample*>& batch, Rng& rng,
                         double cond_dropout = 0.0);

template <typename Scalar>
ad::Var<Scalar> ldm_loss(const Model<Scalar>& model, const Image& z0, const Caption& caption, const Layout& layout,
                         Rng& rng);

struct TrainLogRow {
  int step = 0;
  double loss = 0.0;
  double lr = 0.0;
  double wall_seconds = 0.0;
};

/// Adam over the model's parameter store with epoch-shuffled batches.
template <typename Scalar>
class Trainer {
 public:
  struct Moments {
    ad::Matrix<Scalar> m;
    ad::Matrix<Scalar> v;
  };

  Trainer(Model<Scalar>& model, const TrainConfig& cfg, std::uint64_t seed);

  /// One optimisation step; returns the batch loss before the update.
  double step(const std::vector<SceneSample>& data);

  int steps_done() const { return step_; }
  const TrainConfig& config() const { return cfg_; }
  bool encoder_frozen() const;

  /// Serialisable optimiser and data-order state.
  nlohmann::json state_json() const;
  void restore_state(const nlohmann::json& state);
  std::vector<Moments>& moments() { return moments_; }
  const std::vector<Moments>& moments() const { return moments_; }

 private:
  std::vector<const SceneSample*> next_batch(const std::vector<SceneSample>& data);

  Model<Scalar>& model_;
  TrainConfig cfg_;
  Rng rng_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
  std::size_t data_size_ = 0;
  int step_ = 0;
  std::vector<Moments> moments_;
};

struct TrainOptions {
  /// Writes train_log.csv, checkpoints and the effective config when set.
  std::filesystem::path out_dir;
  std::function<void(const TrainLogRow&)> on_log;
};

/// Runs trainer.steps_done() .. cfg.train.steps and returns the log rows.
template <typename Scalar>
std::vector<TrainLogRow> train(Model<Scalar>& model, Trainer<Scalar>& trainer, const std::vector<SceneSample>& data,
                               const TrainOptions& options = {});

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Single-file container: magic, version, JSON header (config, hashes,
/// vocabulary, array table, optimiser state), then float64 array payload.
/// A JSON copy of the config is written next to it as <path>.json.
template <typename Scalar>
void save_checkpoint(const std::filesystem::path& path, const Model<Scalar>& model,
                     const Trainer<Scalar>* trainer = nullptr);

nlohmann::json read_checkpoint_header(const std::filesystem::path& path);

/// Rebuilds the model stored in a checkpoint. When `expected` is given its
/// architecture hash must match the stored one.
template <typename Scalar>
std::unique_ptr<Model<Scalar>> load_model(const std::filesystem::path& path, const RunConfig* expected = nullptr);

/// Restores optimiser moments and data order saved alongside the weights.
template <typename Scalar>
void load_trainer_state(const std::filesystem::path& path, Trainer<Scalar>& trainer);

/// Classifier-free guided sampling. Image i uses its own noise stream
/// derived from (seed, i), so results do not depend on batching.
template <typename Scalar>
std::vector<Image> sample_images(const Model<Scalar>& model, const std::vector<Layout>& layouts,
                                 const std::vector<Caption>& captions, std::uint64_t seed,
                                 const SampleConfig& options, int batch = 8);

extern template class Model<float>;
extern template class Model<double>;
extern template class Trainer<float>;
extern template class Trainer<double>;

}  // namespace l2i
