#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "fixtures.hpp"
#include "l2i/model.hpp"

using namespace l2i;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / "l2i_unit" / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

template <typename Scalar>
bool same_parameters(const Model<Scalar>& a, const Model<Scalar>& b) {
  const auto& ea = a.params().entries();
  const auto& eb = b.params().entries();
  if (ea.size() != eb.size()) return false;
  for (std::size_t i = 0; i < ea.size(); ++i) {
    if (ea[i].first != eb[i].first || ea[i].second.value() != eb[i].second.value()) return false;
  }
  return true;
}

Errc code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  return Errc::EmptyInput;  // sentinel for "no error"
}

const std::vector<SceneSample>& tiny_data() {
  static const std::vector<SceneSample> data = generate_dataset(fixture::small_spec(), 12, 5);
  return data;
}

}  // namespace

TEST_CASE("config json round trip and strictness") {
  const RunConfig cfg = fixture::tiny_config();
  const nlohmann::json j = config_to_json(cfg);
  CHECK(config_to_json(config_from_json(j)) == j);
  CHECK(config_hash(config_from_json(j)) == config_hash(cfg));

  nlohmann::json unknown = j;
  unknown["train"]["learning_rate"] = 0.1;
  CHECK(code_of([&] { config_from_json(unknown); }) == Errc::InvalidConfig);
  nlohmann::json wrong_type = j;
  wrong_type["model"]["width"] = "wide";
  CHECK(code_of([&] { config_from_json(wrong_type); }) == Errc::InvalidConfig);
  nlohmann::json partial = {{"train", {{"steps", 7}}}};
  CHECK(config_from_json(partial).train.steps == 7);
  CHECK(config_from_json(partial).model.width == RunConfig{}.model.width);
  nlohmann::json bad = j;
  bad["model"]["unet"]["cgm_levels"] = {5};
  CHECK(code_of([&] { config_from_json(bad); }) == Errc::InvalidConfig);
}

TEST_CASE("config hashes") {
  CHECK(fnv1a("") == 0xcbf29ce484222325ull);
  CHECK(fnv1a("a") == 0xaf63dc4c8601ec8cull);
  CHECK(hex64(255) == "00000000000000ff");
  RunConfig a = fixture::tiny_config(), b = a;
  b.train.lr *= 2;
  CHECK(config_hash(a) != config_hash(b));
  CHECK(architecture_hash(a) == architecture_hash(b));
  b.model.width = 32;
  CHECK(architecture_hash(a) != architecture_hash(b));
}

TEST_CASE("model construction is deterministic and bridge toggling is additive") {
  const RunConfig cfg = fixture::tiny_config();
  const Vocabulary vocab = vocabulary_for(fixture::small_spec());
  const Model<double> a(cfg, vocab), b(cfg, vocab);
  CHECK(same_parameters(a, b));

  RunConfig no_cb = cfg;
  no_cb.model.resampler.context_bridge = false;
  const Model<double> c(no_cb, vocab);
  for (const auto& [name, v] : c.params().entries()) {
    CHECK_MESSAGE(v.value() == a.params().get(name).value(), name);
  }
  CHECK(a.params().parameter_count() - c.params().parameter_count() ==
        a.params().parameter_count("resampler.bridge") + 1);
}

TEST_CASE("noising and loss plumbing") {
  const DiffusionSchedule s({20, 1e-4, 2e-2});
  Rng rng(1);
  const ad::Matrix<double> z0 = nn::normal_matrix<double>(8, 3, 1.0, rng);
  const NoisedBatch<double> nb = make_noised_batch(z0, 2, s, rng);
  REQUIRE(nb.steps.size() == 2);
  for (int b = 0; b < 2; ++b) {
    const double ab = s.alpha_bar(nb.steps[b]);
    const ad::Matrix<double> expect =
        std::sqrt(ab) * z0.middleRows(4 * b, 4) + std::sqrt(1 - ab) * nb.eps.middleRows(4 * b, 4);
    CHECK((nb.z_t.middleRows(4 * b, 4) - expect).cwiseAbs().maxCoeff() < 1e-12);
  }
  const Denoiser<double> perfect = [](const NoisedBatch<double>& n) { return ad::constant(n.eps); };
  CHECK(ldm_loss(nb, perfect).value()(0, 0) == 0.0);
  const Denoiser<double> zero = [](const NoisedBatch<double>& n) {
    return ad::constant<double>(ad::Matrix<double>::Zero(n.eps.rows(), n.eps.cols()));
  };
  CHECK(ldm_loss(nb, zero).value()(0, 0) == doctest::Approx(nb.eps.squaredNorm() / nb.eps.size()));
}

TEST_CASE("training reduces nothing to NaN and logs") {
  RunConfig cfg = fixture::tiny_config();
  Model<float> model(cfg, vocabulary_for(fixture::small_spec()));
  Trainer<float> trainer(model, cfg.train, cfg.seed);
  const fs::path dir = scratch("train");
  const auto rows = train(model, trainer, tiny_data(), {dir, nullptr});
  CHECK(rows.size() == 3);  // step 1, 2 and 4
  CHECK(rows.back().step == 4);
  std::ifstream csv(dir / "train_log.csv");
  std::string header;
  std::getline(csv, header);
  CHECK(header == "step,loss,lr,wall_seconds");
}

TEST_CASE("frozen encoder keeps its weights") {
  RunConfig cfg = fixture::tiny_config();
  cfg.train.freeze_encoder = true;
  Model<float> model(cfg, vocabulary_for(fixture::small_spec()));
  const auto before = model.params().get("encoder.embedding").value();
  const auto unet_before = model.params().get("unet.stem.weight").value();
  Trainer<float> trainer(model, cfg.train, cfg.seed);
  CHECK(trainer.encoder_frozen());
  trainer.step(tiny_data());
  CHECK(model.params().get("encoder.embedding").value() == before);
  CHECK(model.params().get("unet.stem.weight").value() != unet_before);
}

TEST_CASE("non-finite loss raises DivergedLoss") {
  RunConfig cfg = fixture::tiny_config();
  Model<float> model(cfg, vocabulary_for(fixture::small_spec()));
  model.params().get("unet.out.conv.bias").node()->value(0, 0) = std::numeric_limits<float>::quiet_NaN();
  Trainer<float> trainer(model, cfg.train, cfg.seed);
  CHECK(code_of([&] { trainer.step(tiny_data()); }) == Errc::DivergedLoss);
}

TEST_CASE("checkpoint round trip and resume are bit exact") {
  const RunConfig cfg = fixture::tiny_config();
  const Vocabulary vocab = vocabulary_for(fixture::small_spec());
  const fs::path dir = scratch("resume");

  Model<float> straight(cfg, vocab);
  Trainer<float> t_straight(straight, cfg.train, cfg.seed);
  for (int i = 0; i < 4; ++i) t_straight.step(tiny_data());

  Model<float> first(cfg, vocab);
  Trainer<float> t_first(first, cfg.train, cfg.seed);
  for (int i = 0; i < 2; ++i) t_first.step(tiny_data());
  save_checkpoint(dir / "half.l2ic", first, &t_first);
  CHECK(fs::exists(dir / "half.l2ic.json"));

  auto resumed = load_model<float>(dir / "half.l2ic", &cfg);
  CHECK(same_parameters(*resumed, first));
  CHECK(resumed->encoder().vocabulary() == vocab);
  Trainer<float> t_resumed(*resumed, cfg.train, 999);
  load_trainer_state(dir / "half.l2ic", t_resumed);
  CHECK(t_resumed.steps_done() == 2);
  for (int i = 0; i < 2; ++i) t_resumed.step(tiny_data());
  CHECK(same_parameters(*resumed, straight));

  const nlohmann::json header = read_checkpoint_header(dir / "half.l2ic");
  CHECK(header.at("step") == 2);
  CHECK(header.at("architecture_hash") == hex64(architecture_hash(cfg)));
}

TEST_CASE("incompatible checkpoints are rejected") {
  const RunConfig cfg = fixture::tiny_config();
  const fs::path dir = scratch("incompatible");
  const Model<float> model(cfg, vocabulary_for(fixture::small_spec()));
  save_checkpoint(dir / "m.l2ic", model);

  RunConfig other = cfg;
  other.model.width = 32;
  CHECK(code_of([&] { load_model<float>(dir / "m.l2ic", &other); }) == Errc::IncompatibleCheckpoint);
  RunConfig sampling_only = cfg;
  sampling_only.sample.guidance_scale = 7.0;
  CHECK_NOTHROW(load_model<float>(dir / "m.l2ic", &sampling_only));

  {
    std::ofstream junk(dir / "junk.l2ic", std::ios::binary);
    junk << "not a checkpoint";
  }
  CHECK(code_of([&] { load_model<float>(dir / "junk.l2ic"); }) == Errc::IncompatibleCheckpoint);
  CHECK(code_of([&] { load_model<float>(dir / "missing.l2ic"); }) == Errc::IoError);

  // Truncated payload.
  const auto size = fs::file_size(dir / "m.l2ic");
  fs::copy_file(dir / "m.l2ic", dir / "short.l2ic");
  fs::resize_file(dir / "short.l2ic", size - 64);
  CHECK(code_of([&] { load_model<float>(dir / "short.l2ic"); }) == Errc::IncompatibleCheckpoint);
}

TEST_CASE("guidance scale one is the conditional sampler and batching does not matter") {
  const RunConfig cfg = fixture::tiny_config();
  const Model<double> model(cfg, vocabulary_for(fixture::small_spec()));
  std::vector<Layout> layouts;
  std::vector<Caption> captions;
  for (int i = 0; i < 3; ++i) {
    layouts.push_back(tiny_data()[i].layout);
    captions.push_back(tiny_data()[i].caption);
  }
  SampleConfig sc = cfg.sample;
  sc.guidance_scale = 1.0;
  const auto batched = sample_images(model, layouts, captions, 21, sc, 3);
  const auto single = sample_images(model, layouts, captions, 21, sc, 1);
  for (int i = 0; i < 3; ++i) CHECK((batched[i].pixels - single[i].pixels).cwiseAbs().maxCoeff() < 1e-9);

  // Reference: conditional noise only, image 1 with its own stream.
  const SampleCondition<double> cond = model.condition(layouts[1], captions[1]);
  const NoisePredictor predict = [&](const Eigen::MatrixXd& x, int t) -> Eigen::MatrixXd {
    return model.predict_noise(ad::constant<double>(x), {t}, {cond}).value();
  };
  Rng rng(derive_seed(21, 1));
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::MatrixXd x(32 * 32, 3);
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    for (Eigen::Index c = 0; c < 3; ++c) x(r, c) = normal(rng);
  }
  const Image ref = from_model_space(sample_loop(predict, x, model.schedule(), {sc.steps, 1.0, true}, rng), 32, 32);
  CHECK((batched[1].pixels - ref.pixels).cwiseAbs().maxCoeff() < 1e-9);

  // Guided sampling is continuous in the scale and reduces to the conditional one at 1.
  sc.guidance_scale = 1.0 + 1e-9;
  const auto nearly = sample_images(model, layouts, captions, 21, sc, 3);
  CHECK((nearly[1].pixels - ref.pixels).cwiseAbs().maxCoeff() < 1e-6);
  sc.guidance_scale = 4.0;
  const auto strong = sample_images(model, layouts, captions, 21, sc, 3);
  CHECK((strong[1].pixels - ref.pixels).cwiseAbs().maxCoeff() > 1e-4);
}
