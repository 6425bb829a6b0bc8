#include "l2i/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <thread>

#include "l2i/errors.hpp"

namespace l2i {

SceneSpec SceneSpec::standard() {
  SceneSpec s;
  s.classes = {
      {"airplane", ShapeKind::Ellipse, {0.95, 0.95, 0.95}, 12.0, 18.0, 0.70, 0.90, {"tarmac"}},
      {"ship", ShapeKind::Rectangle, {1.00, 0.55, 0.00}, 12.0, 20.0, 0.30, 0.45, {"water"}},
      {"vehicle", ShapeKind::Rectangle, {0.90, 0.10, 0.20}, 8.0, 12.0, 0.45, 0.60, {"tarmac", "field"}},
      {"tank", ShapeKind::Ellipse, {1.00, 0.95, 0.20}, 9.0, 13.0, 0.85, 0.95, {"field"}},
      {"court", ShapeKind::Rectangle, {0.75, 0.25, 0.95}, 12.0, 18.0, 0.50, 0.65, {"field"}},
  };
  s.backgrounds = {
      {"water", TextureKind::Waves, {0.12, 0.28, 0.55}, {0.03, 0.05, 0.08}},
      {"tarmac", TextureKind::Noise, {0.42, 0.42, 0.44}, {0.05, 0.05, 0.05}},
      {"field", TextureKind::Stripes, {0.28, 0.50, 0.18}, {0.05, 0.07, 0.03}},
  };
  return s;
}

const ClassSignature& SceneSpec::signature(const std::string& name) const {
  const int i = class_index(name);
  if (i < 0) throw Error(Errc::UnknownClass, "class '" + name + "' is not in the scene spec");
  return classes[static_cast<std::size_t>(i)];
}

int SceneSpec::class_index(const std::string& name) const {
  for (std::size_t i = 0; i < classes.size(); ++i) {
    if (classes[i].name == name) return static_cast<int>(i);
  }
  return -1;
}

int SceneSpec::background_index(const std::string& name) const {
  for (std::size_t i = 0; i < backgrounds.size(); ++i) {
    if (backgrounds[i].name == name) return static_cast<int>(i);
  }
  return -1;
}

bool SceneSpec::admissible(const std::string& class_name, const std::string& family) const {
  const auto& bg = signature(class_name).backgrounds;
  return std::find(bg.begin(), bg.end(), family) != bg.end();
}

std::vector<std::string> SceneSpec::class_names() const {
  std::vector<std::string> out;
  for (const auto& c : classes) out.push_back(c.name);
  return out;
}

std::vector<std::string> SceneSpec::background_names() const {
  std::vector<std::string> out;
  for (const auto& b : backgrounds) out.push_back(b.name);
  return out;
}

void validate_spec(const SceneSpec& spec) {
  auto fail = [](const std::string& what) { throw Error(Errc::InvalidConfig, "scene spec: " + what); };
  if (spec.classes.empty()) fail("no classes");
  if (spec.backgrounds.empty()) fail("no background families");
  if (spec.image_size < 8) fail("image size too small");
  for (const auto& c : spec.classes) {
    if (c.name.empty()) fail("class without a name");
    if (c.backgrounds.empty()) fail("class '" + c.name + "' has no admissible background");
    for (const auto& b : c.backgrounds) {
      if (spec.background_index(b) < 0) fail("class '" + c.name + "' names unknown background '" + b + "'");
    }
    if (!(c.min_length > 0 && c.min_length <= c.max_length && c.max_length < spec.image_size)) {
      fail("class '" + c.name + "' has invalid lengths");
    }
    if (!(c.min_aspect > 0 && c.min_aspect <= c.max_aspect && c.max_aspect < 1.0)) {
      fail("class '" + c.name + "' aspect must lie in (0, 1)");
    }
  }
  for (std::size_t i = 0; i < spec.classes.size(); ++i) {
    for (std::size_t j = i + 1; j < spec.classes.size(); ++j) {
      if (spec.classes[i].name == spec.classes[j].name) fail("duplicate class '" + spec.classes[i].name + "'");
      if (delta_e(spec.classes[i].color, spec.classes[j].color) <= spec.min_class_delta_e) {
        fail("classes '" + spec.classes[i].name + "' and '" + spec.classes[j].name + "' are too close in colour");
      }
    }
  }
}

namespace {

const char* shape_name(ShapeKind k) { return k == ShapeKind::Ellipse ? "ellipse" : "rectangle"; }

const char* texture_name(TextureKind k) {
  switch (k) {
    case TextureKind::Waves: return "waves";
    case TextureKind::Noise: return "noise";
    case TextureKind::Stripes: return "stripes";
  }
  return "noise";
}

ShapeKind shape_from(const std::string& s) {
  if (s == "ellipse") return ShapeKind::Ellipse;
  if (s == "rectangle") return ShapeKind::Rectangle;
  throw Error(Errc::InvalidConfig, "unknown shape '" + s + "'");
}

TextureKind texture_from(const std::string& s) {
  if (s == "waves") return TextureKind::Waves;
  if (s == "noise") return TextureKind::Noise;
  if (s == "stripes") return TextureKind::Stripes;
  throw Error(Errc::InvalidConfig, "unknown texture '" + s + "'");
}

nlohmann::json vec3(const Eigen::Vector3d& v) { return {v(0), v(1), v(2)}; }

Eigen::Vector3d vec3(const nlohmann::json& j) {
  if (!j.is_array() || j.size() != 3) throw Error(Errc::InvalidConfig, "colour must be a 3-element array");
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

bool corners_inside(const OrientedBox& b, double size) {
  for (const auto& p : obb_corners(b)) {
    if (p.x() < 0.0 || p.x() > size || p.y() < 0.0 || p.y() > size) return false;
  }
  return true;
}

}  // namespace

nlohmann::json spec_to_json(const SceneSpec& spec) {
  nlohmann::json classes = nlohmann::json::array();
  for (const auto& c : spec.classes) {
    classes.push_back({{"name", c.name},
                       {"shape", shape_name(c.shape)},
                       {"color", vec3(c.color)},
                       {"min_length", c.min_length},
                       {"max_length", c.max_length},
                       {"min_aspect", c.min_aspect},
                       {"max_aspect", c.max_aspect},
                       {"backgrounds", c.backgrounds}});
  }
  nlohmann::json backgrounds = nlohmann::json::array();
  for (const auto& b : spec.backgrounds) {
    backgrounds.push_back({{"name", b.name},
                           {"texture", texture_name(b.texture)},
                           {"base", vec3(b.base)},
                           {"variation", vec3(b.variation)}});
  }
  return {{"image_size", spec.image_size},
          {"color_jitter", spec.color_jitter},
          {"min_class_delta_e", spec.min_class_delta_e},
          {"classes", classes},
          {"backgrounds", backgrounds}};
}

SceneSpec spec_from_json(const nlohmann::json& j) {
  SceneSpec s;
  try {
    s.image_size = j.value("image_size", s.image_size);
    s.color_jitter = j.value("color_jitter", s.color_jitter);
    s.min_class_delta_e = j.value("min_class_delta_e", s.min_class_delta_e);
    for (const auto& c : j.at("classes")) {
      ClassSignature sig;
      sig.name = c.at("name").get<std::string>();
      sig.shape = shape_from(c.at("shape").get<std::string>());
      sig.color = vec3(c.at("color"));
      sig.min_length = c.at("min_length").get<double>();
      sig.max_length = c.at("max_length").get<double>();
      sig.min_aspect = c.at("min_aspect").get<double>();
      sig.max_aspect = c.at("max_aspect").get<double>();
      sig.backgrounds = c.at("backgrounds").get<std::vector<std::string>>();
      s.classes.push_back(std::move(sig));
    }
    for (const auto& b : j.at("backgrounds")) {
      BackgroundFamily fam;
      fam.name = b.at("name").get<std::string>();
      fam.texture = texture_from(b.at("texture").get<std::string>());
      fam.base = vec3(b.at("base"));
      fam.variation = vec3(b.at("variation"));
      s.backgrounds.push_back(std::move(fam));
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::InvalidConfig, std::string("scene spec: ") + e.what());
  }
  validate_spec(s);
  return s;
}

SceneSpec load_spec(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::IoError, "cannot open scene spec " + path.string());
  try {
    return spec_from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(Errc::InvalidConfig, path.string() + ": " + e.what());
  }
}

std::string majority_class(const Layout& layout) {
  std::map<std::string, int> counts;
  for (const Instance& inst : layout.instances) ++counts[inst.label];
  std::string best;
  int best_count = 0;
  for (const auto& [name, n] : counts) {
    if (n > best_count) {
      best = name;
      best_count = n;
    }
  }
  return best;
}

Layout sample_layout(const SceneSpec& spec, Rng& rng, int max_objects, double max_iou) {
  if (max_objects < 1) throw Error(Errc::InvalidLayout, "max_objects must be at least 1");
  constexpr int kLayoutAttempts = 50;
  constexpr int kInstanceAttempts = 200;
  const double size = spec.image_size;
  std::uniform_int_distribution<int> count_dist(1, max_objects);
  std::uniform_int_distribution<std::size_t> class_dist(0, spec.classes.size() - 1);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  const int n = count_dist(rng);
  std::vector<std::size_t> classes(static_cast<std::size_t>(n));
  for (auto& c : classes) c = class_dist(rng);

  for (int attempt = 0; attempt < kLayoutAttempts; ++attempt) {
    Layout layout;
    layout.image_size = spec.image_size;
    bool ok = true;
    for (std::size_t ci : classes) {
      const ClassSignature& sig = spec.classes[ci];
      bool placed = false;
      for (int k = 0; k < kInstanceAttempts && !placed; ++k) {
        const double w = sig.min_length + unit(rng) * (sig.max_length - sig.min_length);
        const double h = w * (sig.min_aspect + unit(rng) * (sig.max_aspect - sig.min_aspect));
        const double theta = -kPi / 2 + unit(rng) * kPi;
        const double cx = unit(rng) * size;
        const double cy = unit(rng) * size;
        const OrientedBox box = canonicalize_obb(cx, cy, w, h, theta);
        if (!corners_inside(box, size)) continue;
        bool clear = true;
        for (const Instance& other : layout.instances) {
          if (rotated_iou(box, other.box) >= max_iou) {
            clear = false;
            break;
          }
        }
        if (!clear) continue;
        layout.instances.push_back({sig.name, box});
        placed = true;
      }
      if (!placed) {
        ok = false;
        break;
      }
    }
    if (ok) {
      layout.scene_class = majority_class(layout);
      return layout;
    }
  }
  throw Error(Errc::PlacementFailure, "could not place " + std::to_string(n) + " instances without overlap after " +
                                          std::to_string(kLayoutAttempts) + " attempts");
}

Image render_background(const BackgroundFamily& family, int size, Rng& rng) {
  Image img(size, size);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);
  const double angle = unit(rng) * kPi;
  const double phase = unit(rng) * 2.0 * kPi;
  const double ca = std::cos(angle);
  const double sa = std::sin(angle);
  for (int r = 0; r < size; ++r) {
    for (int c = 0; c < size; ++c) {
      const double u = (c + 0.5) * ca + (r + 0.5) * sa;
      double v = 0.0;
      switch (family.texture) {
        case TextureKind::Waves: v = std::sin(2.0 * kPi * u / 8.0 + phase) + 0.2 * normal(rng); break;
        case TextureKind::Noise: v = normal(rng); break;
        case TextureKind::Stripes: v = (static_cast<long>(std::floor(u / 4.0 + phase)) % 2 == 0 ? 1.0 : -1.0); break;
      }
      const Eigen::Vector3d px = family.base + family.variation * v;
      img.at(r, c) = px.cwiseMax(0.0).cwiseMin(1.0).transpose();
    }
  }
  return img;
}

void paint_instance(Image& image, const OrientedBox& box, ShapeKind shape, const Eigen::Vector3d& color) {
  constexpr int kSub = 4;
  const auto corners = obb_corners(box);
  double x0 = image.width, x1 = 0, y0 = image.height, y1 = 0;
  for (const auto& p : corners) {
    x0 = std::min(x0, p.x());
    x1 = std::max(x1, p.x());
    y0 = std::min(y0, p.y());
    y1 = std::max(y1, p.y());
  }
  const int c0 = std::max(0, static_cast<int>(std::floor(x0)));
  const int c1 = std::min(image.width - 1, static_cast<int>(std::ceil(x1)));
  const int r0 = std::max(0, static_cast<int>(std::floor(y0)));
  const int r1 = std::min(image.height - 1, static_cast<int>(std::ceil(y1)));
  const double hw = box.w / 2.0;
  const double hh = box.h / 2.0;
  for (int r = r0; r <= r1; ++r) {
    for (int c = c0; c <= c1; ++c) {
      int hits = 0;
      for (int sy = 0; sy < kSub; ++sy) {
        for (int sx = 0; sx < kSub; ++sx) {
          const Eigen::Vector2d d = to_box_frame(box, c + (sx + 0.5) / kSub, r + (sy + 0.5) / kSub);
          const bool inside = shape == ShapeKind::Ellipse
                                  ? (d.x() * d.x()) / (hw * hw) + (d.y() * d.y()) / (hh * hh) <= 1.0
                                  : std::abs(d.x()) <= hw && std::abs(d.y()) <= hh;
          hits += inside;
        }
      }
      if (hits == 0) continue;
      const double a = static_cast<double>(hits) / (kSub * kSub);
      image.at(r, c) = ((1.0 - a) * image.at(r, c).transpose() + a * color).transpose();
    }
  }
}

SceneSample render_scene(const Layout& layout, const SceneSpec& spec, Rng& rng) {
  if (layout.instances.empty()) throw Error(Errc::InvalidLayout, "scenes need at least one instance");
  validate_layout(layout, std::max<int>(kDefaultMaxObjects, static_cast<int>(layout.instances.size())));
  const Layout scaled = layout.image_size == spec.image_size ? layout : rescale_layout(layout, spec.image_size);
  const std::string majority = majority_class(scaled);
  const auto& admissible = spec.signature(majority).backgrounds;
  std::uniform_int_distribution<std::size_t> pick(0, admissible.size() - 1);
  const std::string family = admissible[pick(rng)];

  SceneSample s;
  s.image = render_background(spec.backgrounds[static_cast<std::size_t>(spec.background_index(family))],
                              spec.image_size, rng);
  std::uniform_real_distribution<double> jitter(-spec.color_jitter, spec.color_jitter);
  for (const Instance& inst : scaled.instances) {
    const ClassSignature& sig = spec.signature(inst.label);
    Eigen::Vector3d color = sig.color;
    for (int ch = 0; ch < 3; ++ch) color(ch) = std::clamp(color(ch) + jitter(rng), 0.0, 1.0);
    paint_instance(s.image, inst.box, sig.shape, color);
  }
  s.layout = layout;
  if (s.layout.scene_class.empty()) s.layout.scene_class = majority;
  s.caption = build_caption(s.layout);
  s.background_family = family;
  return s;
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index) { return splitmix64(seed ^ splitmix64(index)); }

SceneSample generate_sample(const SceneSpec& spec, std::uint64_t seed, std::uint64_t index, int max_objects,
                            double max_iou) {
  Rng rng(derive_seed(seed, index));
  const Layout layout = sample_layout(spec, rng, max_objects, max_iou);
  return render_scene(layout, spec, rng);
}

std::vector<SceneSample> generate_dataset(const SceneSpec& spec, std::size_t n, std::uint64_t seed, int workers,
                                          int max_objects, double max_iou, std::uint64_t first) {
  std::vector<SceneSample> out(n);
  const std::size_t w = static_cast<std::size_t>(std::max(1, workers));
  auto run = [&](std::size_t shard) {
    for (std::size_t i = shard; i < n; i += w) out[i] = generate_sample(spec, seed, first + i, max_objects, max_iou);
  };
  if (w == 1) {
    run(0);
  } else {
    std::vector<std::thread> threads;
    std::vector<std::exception_ptr> errors(w);
    for (std::size_t s = 0; s < w; ++s) {
      threads.emplace_back([&, s] {
        try {
          run(s);
        } catch (...) {
          errors[s] = std::current_exception();
        }
      });
    }
    for (auto& t : threads) t.join();
    for (auto& e : errors) {
      if (e) std::rethrow_exception(e);
    }
  }
  return out;
}

namespace {

std::string image_name(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "images/%06zu.png", i);
  return buf;
}

}  // namespace

void write_dataset(const std::filesystem::path& dir, const std::vector<SceneSample>& samples) {
  std::error_code ec;
  std::filesystem::create_directories(dir / "images", ec);
  if (ec) throw Error(Errc::IoError, "cannot create " + (dir / "images").string() + ": " + ec.message());
  std::ofstream out(dir / "data.jsonl");
  if (!out) throw Error(Errc::IoError, "cannot write " + (dir / "data.jsonl").string());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const SceneSample& s = samples[i];
    const std::string name = image_name(i);
    write_png(dir / name, s.image);
    const nlohmann::json rec = {{"schema", kDatasetSchema},
                                {"id", i},
                                {"image", name},
                                {"caption", s.caption.text},
                                {"layout", layout_to_json(s.layout)},
                                {"background_family", s.background_family}};
    out << rec.dump() << '\n';
  }
  if (!out) throw Error(Errc::IoError, "write failed for " + (dir / "data.jsonl").string());
}

std::vector<SceneSample> read_dataset(const std::filesystem::path& dir) {
  const auto index = dir / "data.jsonl";
  std::ifstream in(index);
  if (!in) throw Error(Errc::IoError, "cannot open " + index.string());
  std::vector<SceneSample> out;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const std::string where = index.string() + ":" + std::to_string(line_no);
    nlohmann::json rec;
    try {
      rec = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw Error(Errc::ParseError, where + ": " + e.what());
    }
    if (!rec.is_object() || !rec.contains("schema")) throw Error(Errc::ParseError, where + ": missing schema field");
    if (rec["schema"] != kDatasetSchema) {
      throw Error(Errc::SchemaVersionMismatch, where + ": schema " + rec["schema"].dump() + ", expected " +
                                                   std::to_string(kDatasetSchema));
    }
    SceneSample s;
    try {
      s.layout = layout_from_json(rec.at("layout"));
      s.caption.text = rec.at("caption").get<std::string>();
      s.background_family = rec.at("background_family").get<std::string>();
      s.image = read_png(dir / rec.at("image").get<std::string>());
    } catch (const nlohmann::json::exception& e) {
      throw Error(Errc::ParseError, where + ": " + e.what());
    } catch (const Error& e) {
      throw Error(e.code(), where + ": " + e.detail());
    }
    const Caption rebuilt = build_caption(s.layout);
    if (rebuilt.text == s.caption.text) s.caption.sentences = rebuilt.sentences;
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace l2i
