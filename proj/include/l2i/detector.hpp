#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "l2i/data.hpp"
#include "l2i/evaluation.hpp"

namespace l2i {

struct DetectorConfig {
  int epochs = 4;
  int batch_pixels = 512;
  double lr = 0.05;
  /// Foreground pixels kept per training image; background is matched 1:1.
  int pixels_per_image = 160;
  /// Connected components smaller than this are discarded.
  int min_area = 6;
  /// A component of area A splits into round(A / typical - split_bias) parts
  /// when that is at least two; typical is the class's calibrated area.
  double split_bias = 0.2;
  int max_parts = 6;
};

/// Toy oriented-box detector: per-pixel softmax regression over colour
/// features, connected components, and moment-based boxes whose extents are
/// calibrated per class on the training set.
class PixelDetector {
 public:
  static constexpr int kFeatures = 13;

  PixelDetector() = default;
  PixelDetector(std::vector<std::string> class_names, const DetectorConfig& cfg);

  void fit(const std::vector<const SceneSample*>& data, std::uint64_t seed);
  std::vector<Detection> detect(const Image& image) const;
  DetectionResult detect(const std::vector<Image>& images) const;

  /// (H*W) x (classes + 1) probabilities; column 0 is background.
  Eigen::MatrixXd pixel_probabilities(const Image& image) const;
  const std::vector<std::string>& class_names() const { return names_; }

  /// kFeatures columns per pixel.
  static Eigen::MatrixXd pixel_features(const Image& image);

 private:
  struct Component {
    int label = 0;
    std::vector<int> pixels;
  };
  std::vector<Component> components(const Image& image, const Eigen::MatrixXd& probs) const;
  static Eigen::Vector2d component_spread(const std::vector<int>& pixels, int width, Eigen::Vector2d* center,
                                          double* theta);
  /// Splits components much larger than one instance by k-means on pixel
  /// coordinates.
  std::vector<Component> split_merged(Component comp, int width) const;

  std::vector<std::string> names_;
  DetectorConfig cfg_;
  Eigen::RowVectorXd feature_mean_;
  Eigen::RowVectorXd feature_scale_;
  Eigen::MatrixXd weights_;  // kFeatures x (classes + 1), on standardised features
  std::vector<Eigen::Vector2d> extent_scale_;
  std::vector<double> typical_area_;  // 0 disables splitting for the class
};

enum class SyntheticSource { Generator, Copies, Noise };
std::string to_string(SyntheticSource source);
SyntheticSource synthetic_source_from_string(const std::string& name);

/// Renders one image per (layout, caption); image i must depend only on
/// (seed, i).
using Synthesizer =
    std::function<std::vector<Image>(const std::vector<Layout>&, const std::vector<Caption>&, std::uint64_t seed)>;

struct TrainabilityConfig {
  DetectorConfig detector;
  double held_out_fraction = 0.25;
};

struct TrainabilityReport {
  std::uint64_t seed = 0;
  SyntheticSource source = SyntheticSource::Copies;
  std::size_t n_train = 0;
  std::size_t n_synthetic = 0;
  std::size_t n_eval = 0;
  MapReport baseline;
  MapReport augmented;
  double delta() const { return augmented.map - baseline.map; }
};

/// Trains the detector on the real training split alone and again with one
/// synthetic image per real training layout, then scores both on the
/// held-out real split. `synth` is required for the generator source.
TrainabilityReport trainability_run(const std::vector<SceneSample>& real, const SceneSpec& spec,
                                    SyntheticSource source, const Synthesizer& synth,
                                    const TrainabilityConfig& cfg, std::uint64_t seed);

void write_trainability_csv(const std::filesystem::path& path, const std::vector<TrainabilityReport>& reports);

}  // namespace l2i
