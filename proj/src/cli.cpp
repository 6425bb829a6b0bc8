#include "l2i/cli.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "l2i/detector.hpp"
#include "l2i/evaluation.hpp"
#include "l2i/model.hpp"

namespace l2i {

namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::IoError, "cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

nlohmann::json read_json(const fs::path& path) {
  try {
    return nlohmann::json::parse(read_text(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(Errc::ParseError, path.string() + ": " + e.what());
  }
}

void write_json(const fs::path& path, const nlohmann::json& j) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw Error(Errc::IoError, "cannot write " + path.string());
  out << j.dump(2) << '\n';
}

// A layout file holds one layout object, an array of them, or {"layouts": [...]}.
std::vector<Layout> read_layouts(const fs::path& path) {
  const nlohmann::json j = read_json(path);
  const nlohmann::json& list = j.is_object() && j.contains("layouts") ? j.at("layouts") : j;
  std::vector<Layout> out;
  try {
    if (list.is_array()) {
      for (const auto& item : list) out.push_back(layout_from_json(item));
    } else {
      out.push_back(layout_from_json(list));
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::ParseError, path.string() + ": " + e.what());
  }
  for (const auto& l : out) validate_layout(l, std::max<int>(kDefaultMaxObjects, static_cast<int>(l.instances.size())));
  return out;
}

std::string sample_name(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "sample_%06zu.png", i);
  return buf;
}

double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

std::vector<Image> images_of(const std::vector<SceneSample>& samples) {
  std::vector<Image> out;
  for (const auto& s : samples) out.push_back(s.image);
  return out;
}

std::vector<Layout> layouts_of(const std::vector<SceneSample>& samples) {
  std::vector<Layout> out;
  for (const auto& s : samples) out.push_back(s.layout);
  return out;
}

std::vector<Caption> captions_of(const std::vector<SceneSample>& samples) {
  std::vector<Caption> out;
  for (const auto& s : samples) out.push_back(s.caption);
  return out;
}

// Horizontal bar chart, one group per variant.
void write_bar_svg(const fs::path& path, const std::vector<std::string>& groups,
                   const std::vector<std::string>& series, const std::vector<std::vector<double>>& values) {
  const int bar = 18, gap = 10, label_w = 130, plot_w = 360;
  const int group_h = static_cast<int>(series.size()) * bar + gap;
  const int height = static_cast<int>(groups.size()) * group_h + 40;
  static const char* colors[] = {"#4c72b0", "#dd8452", "#55a868", "#c44e52"};
  std::ofstream out(path);
  if (!out) throw Error(Errc::IoError, "cannot write " + path.string());
  const int width = std::max(label_w + plot_w + 60, label_w + 110 * static_cast<int>(series.size()) + 20);
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
      << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  for (std::size_t s = 0; s < series.size(); ++s) {
    out << "<rect x=\"" << label_w + 110 * s << "\" y=\"4\" width=\"10\" height=\"10\" fill=\"" << colors[s % 4]
        << "\"/><text x=\"" << label_w + 110 * s + 14 << "\" y=\"13\">" << series[s] << "</text>\n";
  }
  for (std::size_t g = 0; g < groups.size(); ++g) {
    const int y0 = 24 + static_cast<int>(g) * group_h;
    out << "<text x=\"4\" y=\"" << y0 + group_h / 2 << "\">" << groups[g] << "</text>\n";
    for (std::size_t s = 0; s < series.size(); ++s) {
      const double v = std::clamp(values[g][s], 0.0, 1.0);
      const int y = y0 + static_cast<int>(s) * bar;
      out << "<rect x=\"" << label_w << "\" y=\"" << y << "\" width=\"" << static_cast<int>(v * plot_w)
          << "\" height=\"" << bar - 2 << "\" fill=\"" << colors[s % 4] << "\"/>"
          << "<text x=\"" << label_w + static_cast<int>(v * plot_w) + 4 << "\" y=\"" << y + bar - 5 << "\">"
          << std::fixed << std::setprecision(3) << values[g][s] << "</text>\n";
    }
  }
  out << "</svg>\n";
}

// Step-wise precision-recall curves on a unit square.
void write_pr_svg(const fs::path& path, const std::vector<std::string>& names,
                  const std::vector<std::vector<Eigen::Vector2d>>& curves) {
  const int size = 300, margin = 40, legend_w = 220;
  static const char* colors[] = {"#4c72b0", "#dd8452", "#55a868", "#c44e52", "#8172b3", "#937860"};
  std::ofstream out(path);
  if (!out) throw Error(Errc::IoError, "cannot write " + path.string());
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << size + 2 * margin + legend_w << "\" height=\""
      << size + 2 * margin << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  out << "<rect x=\"" << margin << "\" y=\"" << margin << "\" width=\"" << size << "\" height=\"" << size
      << "\" fill=\"none\" stroke=\"#888\"/>\n";
  out << "<text x=\"" << margin + size / 2 - 15 << "\" y=\"" << size + margin + 28 << "\">recall</text>\n";
  out << "<text x=\"4\" y=\"" << margin - 10 << "\">precision</text>\n";
  auto px = [&](double r) { return margin + r * size; };
  auto py = [&](double p) { return margin + (1.0 - p) * size; };
  out << std::fixed << std::setprecision(2);
  for (std::size_t c = 0; c < curves.size(); ++c) {
    const char* color = colors[c % 6];
    out << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
    double last_r = 0.0, last_p = 1.0;
    for (const auto& pt : curves[c]) {
      out << px(last_r) << ',' << py(last_p) << ' ' << px(pt.x()) << ',' << py(last_p) << ' ';
      last_r = pt.x();
      last_p = pt.y();
    }
    out << px(last_r) << ',' << py(last_p) << "\"/>\n";
    const int ly = margin + 14 * static_cast<int>(c);
    out << "<rect x=\"" << size + margin + 12 << "\" y=\"" << ly << "\" width=\"10\" height=\"10\" fill=\"" << color
        << "\"/><text x=\"" << size + margin + 26 << "\" y=\"" << ly + 9 << "\">" << names[c] << "</text>\n";
  }
  out << "</svg>\n";
}

struct Common {
  std::string config;
  std::uint64_t seed = 0;
  bool seed_set = false;
  int workers = 0;
  std::string out;
};

class Runner {
 public:
  Runner(std::ostream& out, std::ostream& err) : out_(out), err_(err) {}

  RunConfig effective(const Common& c) const {
    RunConfig cfg = c.config.empty() ? RunConfig{} : load_config(c.config);
    if (c.seed_set) cfg.seed = c.seed;
    if (c.workers > 0) cfg.workers = c.workers;
    validate_config(cfg);
    return cfg;
  }

  std::ostream& out_;
  std::ostream& err_;
};

}  // namespace

SceneSpec spec_for(const RunConfig& cfg) {
  SceneSpec spec = cfg.data.spec.empty() ? SceneSpec::standard() : load_spec(cfg.data.spec);
  if (spec.image_size != cfg.model.unet.image_size) {
    throw Error(Errc::ResolutionMismatch, "scene spec image size " + std::to_string(spec.image_size) +
                                              " differs from model image size " +
                                              std::to_string(cfg.model.unet.image_size));
  }
  return spec;
}

std::vector<SceneSample> training_set(const RunConfig& cfg, const SceneSpec& spec) {
  return generate_dataset(spec, static_cast<std::size_t>(cfg.data.n_train), cfg.seed, cfg.workers,
                          cfg.data.max_objects, cfg.data.max_overlap_iou, 0);
}

std::vector<SceneSample> held_out_set(const RunConfig& cfg, const SceneSpec& spec) {
  return generate_dataset(spec, static_cast<std::size_t>(cfg.data.n_eval), cfg.seed, cfg.workers,
                          cfg.data.max_objects, cfg.data.max_overlap_iou,
                          static_cast<std::uint64_t>(cfg.data.n_train));
}

std::string variant_name(bool context_bridge, bool fg_aware) {
  if (context_bridge && fg_aware) return "full";
  if (fg_aware) return "no-cb";
  if (context_bridge) return "no-fg";
  return "no-cb-no-fg";
}

void echo_config(const fs::path& dir, const RunConfig& cfg) {
  write_json(dir / "config.json", {{"config", config_to_json(cfg)},
                                   {"config_hash", hex64(config_hash(cfg))},
                                   {"architecture_hash", hex64(architecture_hash(cfg))}});
}

VariantResult run_variant(const RunConfig& cfg, const std::vector<SceneSample>& train_data,
                          const std::vector<SceneSample>& held_out, const SceneSpec& spec, const fs::path& out_dir,
                          std::ostream* log) {
  VariantResult r;
  r.seed = cfg.seed;
  r.context_bridge = cfg.model.resampler.context_bridge;
  r.fg_aware = cfg.model.unet.fg_aware;
  r.name = variant_name(r.context_bridge, r.fg_aware);
  fs::create_directories(out_dir);
  echo_config(out_dir, cfg);

  Model<float> model(cfg, vocabulary_for(spec));
  Trainer<float> trainer(model, cfg.train, cfg.seed);
  TrainOptions options;
  options.out_dir = out_dir;
  if (log) {
    options.on_log = [&](const TrainLogRow& row) {
      *log << r.name << " seed " << cfg.seed << " step " << row.step << " loss " << row.loss << " ("
           << std::fixed << std::setprecision(1) << row.wall_seconds << " s)" << std::defaultfloat << std::endl;
    };
  }
  auto start = Clock::now();
  const auto rows = train(model, trainer, train_data, options);
  r.train_seconds = seconds_since(start);
  r.final_loss = rows.empty() ? 0.0 : rows.back().loss;
  save_checkpoint(out_dir / "model.ckpt", model, &trainer);

  start = Clock::now();
  const std::vector<Image> generated =
      sample_images(model, layouts_of(held_out), captions_of(held_out), derive_seed(cfg.seed, 77), cfg.sample);
  r.sample_seconds = seconds_since(start);
  fs::create_directories(out_dir / "samples");
  for (std::size_t i = 0; i < std::min<std::size_t>(generated.size(), 16); ++i) {
    write_png(out_dir / "samples" / sample_name(i), generated[i]);
  }

  const std::vector<Layout> layouts = layouts_of(held_out);
  r.faithfulness =
      faithfulness_score(generated, layouts, spec, {cfg.eval.delta_e_tolerance, cfg.eval.ring_margin}).aggregate;
  r.coherence = coherence_score(generated, layouts, spec).score;
  const FeatureExtractor features(cfg.eval.feature_dim, cfg.eval.feature_seed);
  r.frechet = frechet_distance(features.stats(generated), features.stats(images_of(held_out)));
  write_json(out_dir / "metrics.json", {{"variant", r.name},
                                        {"seed", r.seed},
                                        {"final_loss", r.final_loss},
                                        {"faithfulness", r.faithfulness},
                                        {"coherence", r.coherence},
                                        {"frechet", r.frechet},
                                        {"train_seconds", r.train_seconds},
                                        {"sample_seconds", r.sample_seconds}});
  if (log) {
    *log << r.name << " seed " << r.seed << ": faithfulness " << r.faithfulness << ", coherence " << r.coherence
         << ", frechet " << r.frechet << std::endl;
  }
  return r;
}

void write_variant_csv(const fs::path& path, const std::vector<VariantResult>& rows) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw Error(Errc::IoError, "cannot write " + path.string());
  out << "variant,seed,context_bridge,fg_aware,final_loss,faithfulness,coherence,frechet,train_seconds,"
         "sample_seconds\n";
  for (const auto& r : rows) {
    out << r.name << ',' << r.seed << ',' << r.context_bridge << ',' << r.fg_aware << ',' << r.final_loss << ','
        << r.faithfulness << ',' << r.coherence << ',' << r.frechet << ',' << r.train_seconds << ','
        << r.sample_seconds << '\n';
  }
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  return run(static_cast<int>(argv.size()), argv.data(), out, err);
}

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Layout-to-image diffusion toolkit"};
  app.name("l2i");
  app.require_subcommand(1);
  Runner runner(out, err);

  Common common;
  auto add_common = [&](CLI::App* sub, bool with_out = true) {
    sub->add_option("--config", common.config, "JSON run config; flags override its values")->check(CLI::ExistingFile);
    sub->add_option_function<std::uint64_t>(
        "--seed", [&](const std::uint64_t& s) { common.seed = s, common.seed_set = true; }, "Seed for all randomness");
    sub->add_option("--workers", common.workers, "Worker threads (default 1)")->check(CLI::PositiveNumber);
    if (with_out) sub->add_option("--out", common.out, "Output directory")->required();
  };

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "Render a synthetic dataset (PNG + data.jsonl)");
  add_common(gen);
  std::string split = "train";
  int gen_n = 0;
  std::string spec_path;
  gen->add_option("--split", split, "train or eval; selects the seed-stream range")
      ->check(CLI::IsMember({"train", "eval"}));
  gen->add_option("--n", gen_n, "Sample count (default from config)")->check(CLI::PositiveNumber);
  gen->add_option("--spec", spec_path, "Scene spec JSON")->check(CLI::ExistingFile);

  // train
  auto* tr = app.add_subcommand("train", "Train the generator");
  add_common(tr);
  std::string data_dir, resume;
  int train_steps = 0;
  bool freeze = false, no_cb = false, no_fg = false;
  tr->add_option("--data", data_dir, "Dataset directory (default: generate from the seed)")
      ->check(CLI::ExistingDirectory);
  tr->add_option("--steps", train_steps, "Optimisation steps")->check(CLI::PositiveNumber);
  tr->add_option("--resume", resume, "Checkpoint to continue from")->check(CLI::ExistingFile);
  tr->add_flag("--freeze-encoder", freeze, "Freeze the text encoder (after encoder_warmup_steps)");
  tr->add_flag("--no-context-bridge", no_cb, "Disable the context bridge");
  tr->add_flag("--no-fg-aware", no_fg, "Background attention reads f instead of the fused map");

  // sample
  auto* sa = app.add_subcommand("sample", "Generate images for layouts");
  add_common(sa);
  std::string checkpoint, layout_path;
  double guidance = 0.0;
  int sample_steps = 0, sample_n = 0;
  bool ddim = false;
  sa->add_option("--checkpoint", checkpoint, "Trained checkpoint")->required()->check(CLI::ExistingFile);
  sa->add_option("--layout", layout_path, "Layout JSON (object, array or {\"layouts\": [...]})")
      ->check(CLI::ExistingFile);
  sa->add_option("--data", data_dir, "Take layouts and captions from a dataset")->check(CLI::ExistingDirectory);
  sa->add_option("--n", sample_n, "Use at most this many layouts")->check(CLI::PositiveNumber);
  sa->add_option("--guidance-scale", guidance, "Classifier-free guidance scale");
  sa->add_option("--steps", sample_steps, "Sampling steps")->check(CLI::PositiveNumber);
  sa->add_flag("--ddim", ddim, "Deterministic DDIM updates");

  // caption
  auto* ca = app.add_subcommand("caption", "Print the caption of a layout");
  std::string caption_layout;
  int grid_k = 4;
  ca->add_option("--layout", caption_layout, "Layout JSON")->required()->check(CLI::ExistingFile);
  ca->add_option("--grid", grid_k, "Region grid size K")->check(CLI::Range(3, 64));

  // plan-layout
  auto* pl = app.add_subcommand("plan-layout", "Print the layout-planner prompt for a caption");
  add_common(pl, false);
  std::string plan_caption, plan_layout_path, corpus_dir;
  int corpus_n = 200;
  pl->add_option("--caption", plan_caption, "Caption text");
  pl->add_option("--layout", plan_layout_path, "Derive the caption from this layout")->check(CLI::ExistingFile);
  pl->add_option("--corpus", corpus_dir, "Dataset used as the example corpus (default: generated)")
      ->check(CLI::ExistingDirectory);
  pl->add_option("--corpus-size", corpus_n, "Generated corpus size")->check(CLI::PositiveNumber);

  // parse-layout
  auto* pa = app.add_subcommand("parse-layout", "Validate a planner response and print it as layout JSON");
  std::string parse_in;
  int parse_size = kPlannerImageSize;
  pa->add_option("--in", parse_in, "Response text file")->required()->check(CLI::ExistingFile);
  pa->add_option("--image-size", parse_size, "Pixel space of the response")->check(CLI::PositiveNumber);

  // eval
  auto* ev = app.add_subcommand("eval", "Score generated images against their layouts");
  add_common(ev);
  std::string images_dir;
  ev->add_option("--data", data_dir, "Held-out dataset (layouts and real images)")->check(CLI::ExistingDirectory);
  ev->add_option("--images", images_dir, "Directory of sample_NNNNNN.png files")->check(CLI::ExistingDirectory);
  ev->add_option("--checkpoint", checkpoint, "Sample from this checkpoint instead")->check(CLI::ExistingFile);
  ev->add_option("--n", sample_n, "Use at most this many layouts")->check(CLI::PositiveNumber);
  ev->add_option("--guidance-scale", guidance, "Classifier-free guidance scale");
  ev->add_option("--steps", sample_steps, "Sampling steps")->check(CLI::PositiveNumber);
  ev->add_flag("--ddim", ddim, "Deterministic DDIM updates");

  // trainability
  auto* ta = app.add_subcommand("trainability", "Detector trainability with synthetic augmentation");
  add_common(ta);
  std::string sources = "noise,copies";
  int seeds = 3, real_n = 800;
  ta->add_option("--data", data_dir, "Real dataset (default: generated)")->check(CLI::ExistingDirectory);
  ta->add_option("--checkpoint", checkpoint, "Generator for the generator source")->check(CLI::ExistingFile);
  ta->add_option("--sources", sources, "Comma list of generator, copies, noise");
  ta->add_option("--seeds", seeds, "Number of consecutive seeds")->check(CLI::PositiveNumber);
  ta->add_option("--n", real_n, "Generated real-set size")->check(CLI::PositiveNumber);
  ta->add_option("--steps", sample_steps, "Sampling steps for the generator source")->check(CLI::PositiveNumber);

  // ablate
  auto* ab = app.add_subcommand("ablate", "Context bridge x FG-aware attention toggle matrix");
  add_common(ab);
  std::string variants = "full,no-cb,no-fg,no-cb-no-fg";
  ab->add_option("--variants", variants, "Comma list of full, no-cb, no-fg, no-cb-no-fg");
  ab->add_option("--seeds", seeds, "Number of consecutive seeds")->check(CLI::PositiveNumber);
  ab->add_option("--steps", train_steps, "Training steps per variant")->check(CLI::PositiveNumber);
  ab->add_option("--guidance-scale", guidance, "Classifier-free guidance scale");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, err, err);
    err << app.help();
    return 2;
  }

  auto split_list = [](const std::string& s) {
    std::vector<std::string> parts;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
      if (!item.empty()) parts.push_back(item);
    }
    return parts;
  };

  try {
    if (*gen) {
      RunConfig cfg = runner.effective(common);
      if (!spec_path.empty()) cfg.data.spec = spec_path;
      const SceneSpec spec = spec_for(cfg);
      const bool is_train = split == "train";
      const std::size_t n = static_cast<std::size_t>(gen_n > 0 ? gen_n : is_train ? cfg.data.n_train : cfg.data.n_eval);
      const std::uint64_t first = is_train ? 0 : static_cast<std::uint64_t>(cfg.data.n_train);
      const auto samples = generate_dataset(spec, n, cfg.seed, cfg.workers, cfg.data.max_objects,
                                            cfg.data.max_overlap_iou, first);
      write_dataset(common.out, samples);
      write_json(fs::path(common.out) / "spec.json", spec_to_json(spec));
      echo_config(common.out, cfg);
      out << "wrote " << samples.size() << " samples to " << common.out << '\n';
      return 0;
    }

    if (*tr) {
      RunConfig cfg = runner.effective(common);
      if (train_steps > 0) cfg.train.steps = train_steps;
      if (freeze) cfg.train.freeze_encoder = true;
      if (no_cb) cfg.model.resampler.context_bridge = false;
      if (no_fg) cfg.model.unet.fg_aware = false;
      validate_config(cfg);
      const SceneSpec spec = spec_for(cfg);
      const auto data = data_dir.empty() ? training_set(cfg, spec) : read_dataset(data_dir);
      std::unique_ptr<Model<float>> model;
      if (resume.empty()) {
        model = std::make_unique<Model<float>>(cfg, vocabulary_for(spec));
      } else {
        model = load_model<float>(resume, &cfg);
      }
      Trainer<float> trainer(*model, cfg.train, cfg.seed);
      if (!resume.empty()) load_trainer_state(resume, trainer);
      const fs::path dir = common.out;
      echo_config(dir, cfg);
      TrainOptions options;
      options.out_dir = dir;
      options.on_log = [&](const TrainLogRow& row) {
        out << "step " << row.step << " loss " << row.loss << " (" << std::fixed << std::setprecision(1)
            << row.wall_seconds << " s)" << std::defaultfloat << std::endl;
      };
      train(*model, trainer, data, options);
      save_checkpoint(dir / "model.ckpt", *model, &trainer);
      out << "saved " << (dir / "model.ckpt").string() << '\n';
      return 0;
    }

    if (*sa) {
      auto model = load_model<float>(checkpoint);
      RunConfig cfg = model->config();
      if (common.seed_set) cfg.seed = common.seed;
      if (!common.config.empty()) cfg.sample = load_config(common.config).sample;
      if (guidance != 0.0) cfg.sample.guidance_scale = guidance;
      if (sample_steps > 0) cfg.sample.steps = sample_steps;
      if (ddim) cfg.sample.ddim = true;
      std::vector<Layout> layouts;
      std::vector<Caption> captions;
      if (!layout_path.empty()) {
        layouts = read_layouts(layout_path);
        for (const auto& l : layouts) captions.push_back(build_caption(l));
      } else if (!data_dir.empty()) {
        const auto data = read_dataset(data_dir);
        layouts = layouts_of(data);
        captions = captions_of(data);
      } else {
        throw CLI::RequiredError("--layout or --data");
      }
      if (sample_n > 0 && layouts.size() > static_cast<std::size_t>(sample_n)) {
        layouts.resize(static_cast<std::size_t>(sample_n));
        captions.resize(static_cast<std::size_t>(sample_n));
      }
      const auto images = sample_images(*model, layouts, captions, cfg.seed, cfg.sample);
      const fs::path dir = common.out;
      fs::create_directories(dir);
      nlohmann::json list = nlohmann::json::array();
      for (std::size_t i = 0; i < images.size(); ++i) {
        write_png(dir / sample_name(i), images[i]);
        list.push_back({{"image", sample_name(i)}, {"caption", captions[i].text}, {"layout", layout_to_json(layouts[i])}});
      }
      write_json(dir / "samples.json", list);
      echo_config(dir, cfg);
      out << "wrote " << images.size() << " images to " << dir.string() << '\n';
      return 0;
    }

    if (*ca) {
      const auto layouts = read_layouts(caption_layout);
      CaptionOptions options;
      options.grid_k = grid_k;
      for (const auto& l : layouts) out << build_caption(l, options).text << '\n';
      return 0;
    }

    if (*pl) {
      const RunConfig cfg = runner.effective(common);
      Caption query;
      if (!plan_layout_path.empty()) {
        query = build_caption(read_layouts(plan_layout_path).front());
      } else if (!plan_caption.empty()) {
        query.text = plan_caption;
      } else {
        throw CLI::RequiredError("--caption or --layout");
      }
      std::vector<CorpusEntry> corpus;
      if (!corpus_dir.empty()) {
        for (auto& s : read_dataset(corpus_dir)) corpus.push_back({s.caption, s.layout});
      } else {
        const SceneSpec spec = spec_for(cfg);
        for (auto& s : generate_dataset(spec, static_cast<std::size_t>(corpus_n), cfg.seed, cfg.workers,
                                        cfg.data.max_objects, cfg.data.max_overlap_iou)) {
          corpus.push_back({s.caption, s.layout});
        }
      }
      const auto examples = retrieve_examples(query, corpus, kPlannerExamples);
      out << build_planner_prompt(query, examples).render();
      return 0;
    }

    if (*pa) {
      const Layout layout = parse_planner_response(read_text(parse_in), parse_size);
      out << layout_to_json(layout).dump(2) << '\n';
      return 0;
    }

    if (*ev) {
      RunConfig cfg = runner.effective(common);
      std::unique_ptr<Model<float>> model;
      if (!checkpoint.empty()) {
        model = load_model<float>(checkpoint);
        const RunConfig stored = model->config();
        cfg.model = stored.model;
        cfg.schedule = stored.schedule;
        if (common.config.empty()) {
          cfg.data = stored.data;
          cfg.sample = stored.sample;
          if (!common.seed_set) cfg.seed = stored.seed;
        }
      }
      if (guidance != 0.0) cfg.sample.guidance_scale = guidance;
      if (sample_steps > 0) cfg.sample.steps = sample_steps;
      if (ddim) cfg.sample.ddim = true;
      const SceneSpec spec = spec_for(cfg);
      std::vector<SceneSample> real = data_dir.empty() ? held_out_set(cfg, spec) : read_dataset(data_dir);
      if (sample_n > 0 && real.size() > static_cast<std::size_t>(sample_n)) real.resize(static_cast<std::size_t>(sample_n));
      std::vector<Image> generated;
      if (model) {
        generated = sample_images(*model, layouts_of(real), captions_of(real), derive_seed(cfg.seed, 77), cfg.sample);
      } else if (!images_dir.empty()) {
        for (std::size_t i = 0; i < real.size(); ++i) generated.push_back(read_png(fs::path(images_dir) / sample_name(i)));
      } else {
        throw CLI::RequiredError("--checkpoint or --images");
      }
      const auto layouts = layouts_of(real);
      const auto faith = faithfulness_score(generated, layouts, spec, {cfg.eval.delta_e_tolerance, cfg.eval.ring_margin});
      const auto coh = coherence_score(generated, layouts, spec);
      const FeatureExtractor features(cfg.eval.feature_dim, cfg.eval.feature_seed);
      const double fd = frechet_distance(features.stats(generated), features.stats(images_of(real)));
      nlohmann::json per_class;
      for (const auto& [name, c] : faith.per_class) {
        per_class[name] = {{"total", c.total}, {"accepted", c.accepted}, {"precision", c.precision()},
                           {"recall", c.recall()}};
      }
      const nlohmann::json metrics = {{"n", real.size()},
                                      {"faithfulness", faith.aggregate},
                                      {"faithfulness_per_class", per_class},
                                      {"coherence", coh.score},
                                      {"frechet", fd}};
      write_json(fs::path(common.out) / "metrics.json", metrics);
      echo_config(common.out, cfg);
      out << metrics.dump(2) << '\n';
      return 0;
    }

    if (*ta) {
      RunConfig cfg = runner.effective(common);
      std::unique_ptr<Model<float>> model;
      if (!checkpoint.empty()) model = load_model<float>(checkpoint);
      if (sample_steps > 0) cfg.sample.steps = sample_steps;
      const SceneSpec spec = spec_for(cfg);
      RunConfig real_cfg = cfg;
      real_cfg.data.n_train = real_n;
      const auto real = data_dir.empty() ? training_set(real_cfg, spec) : read_dataset(data_dir);
      Synthesizer synth;
      if (model) {
        synth = [&](const std::vector<Layout>& l, const std::vector<Caption>& c, std::uint64_t s) {
          return sample_images(*model, l, c, s, cfg.sample);
        };
      }
      std::vector<TrainabilityReport> reports;
      nlohmann::json summary;
      for (const std::string& name : split_list(sources)) {
        const SyntheticSource source = synthetic_source_from_string(name);
        std::vector<double> deltas;
        for (int k = 0; k < seeds; ++k) {
          reports.push_back(trainability_run(real, spec, source, synth, {}, cfg.seed + static_cast<std::uint64_t>(k)));
          const auto& r = reports.back();
          deltas.push_back(r.delta());
          out << name << " seed " << r.seed << ": baseline mAP " << r.baseline.map << ", augmented mAP "
              << r.augmented.map << ", delta " << r.delta() << std::endl;
        }
        summary[name] = {{"median_delta", median(deltas)}, {"deltas", deltas}};
      }
      write_trainability_csv(fs::path(common.out) / "trainability.csv", reports);
      // Plots use the first seed of every source.
      std::vector<std::string> groups, curve_names;
      std::vector<std::vector<double>> bars;
      std::vector<std::vector<Eigen::Vector2d>> curves;
      for (std::size_t i = 0; i < reports.size(); i += static_cast<std::size_t>(seeds)) {
        const auto& r = reports[i];
        const std::string source = to_string(r.source);
        groups.push_back(source);
        bars.push_back({r.baseline.map, r.augmented.map, r.baseline.map50, r.augmented.map50});
        for (const auto& [cls, curve] : r.augmented.pr50) {
          if (i == 0) {
            curve_names.push_back("baseline " + cls);
            curves.push_back(r.baseline.pr50.at(cls));
          }
          curve_names.push_back(source + " " + cls);
          curves.push_back(curve);
        }
      }
      write_bar_svg(fs::path(common.out) / "trainability.svg", groups,
                    {"baseline mAP", "augmented mAP", "baseline mAP50", "augmented mAP50"}, bars);
      write_pr_svg(fs::path(common.out) / "pr_curves.svg", curve_names, curves);
      write_json(fs::path(common.out) / "summary.json", summary);
      echo_config(common.out, cfg);
      return 0;
    }

    if (*ab) {
      RunConfig base = runner.effective(common);
      if (train_steps > 0) base.train.steps = train_steps;
      if (guidance != 0.0) base.sample.guidance_scale = guidance;
      const SceneSpec spec = spec_for(base);
      std::vector<VariantResult> rows;
      std::vector<std::string> names = split_list(variants);
      for (int k = 0; k < seeds; ++k) {
        RunConfig cfg = base;
        cfg.seed = base.seed + static_cast<std::uint64_t>(k);
        const auto train_data = training_set(cfg, spec);
        const auto held = held_out_set(cfg, spec);
        for (const std::string& v : names) {
          RunConfig vc = cfg;
          if (v == "full") {
          } else if (v == "no-cb") {
            vc.model.resampler.context_bridge = false;
          } else if (v == "no-fg") {
            vc.model.unet.fg_aware = false;
          } else if (v == "no-cb-no-fg") {
            vc.model.resampler.context_bridge = false;
            vc.model.unet.fg_aware = false;
          } else {
            throw Error(Errc::InvalidConfig, "unknown variant '" + v + "'");
          }
          rows.push_back(run_variant(vc, train_data, held, spec,
                                     fs::path(common.out) / ("seed_" + std::to_string(vc.seed)) / v, &out));
        }
      }
      write_variant_csv(fs::path(common.out) / "ablation.csv", rows);
      nlohmann::json summary;
      std::vector<std::vector<double>> bars;
      for (const std::string& v : names) {
        std::vector<double> f, c;
        for (const auto& r : rows) {
          if (r.name == v) f.push_back(r.faithfulness), c.push_back(r.coherence);
        }
        summary[v] = {{"median_faithfulness", median(f)}, {"median_coherence", median(c)}};
        bars.push_back({median(f), median(c)});
      }
      write_json(fs::path(common.out) / "summary.json", summary);
      write_bar_svg(fs::path(common.out) / "ablation.svg", names, {"faithfulness", "coherence"}, bars);
      echo_config(common.out, base);
      out << summary.dump(2) << '\n';
      return 0;
    }
  } catch (const CLI::Error& e) {
    err << e.what() << '\n';
    return 2;
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
  return 2;
}

}  // namespace l2i
