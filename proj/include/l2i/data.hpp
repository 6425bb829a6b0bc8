#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "l2i/image.hpp"
#include "l2i/layout_text.hpp"
#include "l2i/nn.hpp"

namespace l2i {

enum class ShapeKind { Ellipse, Rectangle };
enum class TextureKind { Waves, Noise, Stripes };

/// Foreground class: a solid shape of one colour inside its box.
struct ClassSignature {
  std::string name;
  ShapeKind shape = ShapeKind::Rectangle;
  Eigen::Vector3d color = Eigen::Vector3d::Ones();
  double min_length = 8.0;  // long edge, pixels at the spec image size
  double max_length = 16.0;
  double min_aspect = 0.4;  // h / w
  double max_aspect = 0.8;
  std::vector<std::string> backgrounds;  // admissible families
};

struct BackgroundFamily {
  std::string name;
  TextureKind texture = TextureKind::Noise;
  Eigen::Vector3d base = Eigen::Vector3d::Constant(0.5);
  Eigen::Vector3d variation = Eigen::Vector3d::Constant(0.05);
};

struct SceneSpec {
  std::vector<ClassSignature> classes;
  std::vector<BackgroundFamily> backgrounds;
  int image_size = 64;
  double color_jitter = 0.03;
  /// Minimum pairwise CIE76 distance between class colours.
  double min_class_delta_e = 25.0;

  /// Five classes over water, tarmac and field backgrounds.
  static SceneSpec standard();

  const ClassSignature& signature(const std::string& name) const;
  int class_index(const std::string& name) const;  // -1 when absent
  int background_index(const std::string& name) const;
  bool admissible(const std::string& class_name, const std::string& family) const;
  std::vector<std::string> class_names() const;
  std::vector<std::string> background_names() const;
};

void validate_spec(const SceneSpec& spec);
nlohmann::json spec_to_json(const SceneSpec& spec);
SceneSpec spec_from_json(const nlohmann::json& j);
SceneSpec load_spec(const std::filesystem::path& path);

struct SceneSample {
  Image image;
  Layout layout;
  Caption caption;
  std::string background_family;
};

/// Most frequent class; ties go to the lexicographically smallest name.
std::string majority_class(const Layout& layout);

Layout sample_layout(const SceneSpec& spec, Rng& rng, int max_objects = kDefaultMaxObjects, double max_iou = 0.3);

/// Background texture only, for an explicit family.
Image render_background(const BackgroundFamily& family, int size, Rng& rng);

/// Composites one instance shape into an image (anti-aliased, 4x4 coverage).
void paint_instance(Image& image, const OrientedBox& box, ShapeKind shape, const Eigen::Vector3d& color);

SceneSample render_scene(const Layout& layout, const SceneSpec& spec, Rng& rng);

/// Seed for the index-th item of a stream; lets shards run in any order.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index);

SceneSample generate_sample(const SceneSpec& spec, std::uint64_t seed, std::uint64_t index,
                            int max_objects = kDefaultMaxObjects, double max_iou = 0.3);

/// Samples [first, first + n) of the seed stream, split across worker threads.
std::vector<SceneSample> generate_dataset(const SceneSpec& spec, std::size_t n, std::uint64_t seed, int workers = 1,
                                          int max_objects = kDefaultMaxObjects, double max_iou = 0.3,
                                          std::uint64_t first = 0);

inline constexpr int kDatasetSchema = 1;

/// Writes <dir>/data.jsonl plus <dir>/images/NNNNNN.png.
void write_dataset(const std::filesystem::path& dir, const std::vector<SceneSample>& samples);
std::vector<SceneSample> read_dataset(const std::filesystem::path& dir);

}  // namespace l2i
