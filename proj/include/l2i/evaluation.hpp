#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "l2i/data.hpp"
#include "l2i/encoder.hpp"
#include "l2i/geometry.hpp"
#include "l2i/image.hpp"
#include "l2i/layout_text.hpp"

namespace l2i {

// ---------------------------------------------------------------------------
// Colour-signature oracles

struct OracleOptions {
  /// CIE76 distance under which a region counts as the class colour.
  double delta_e_tolerance = 25.0;
  /// Width in pixels of the band just outside each box.
  int ring_margin = 3;
};

struct ClassFaithfulness {
  int total = 0;      // instances labelled with the class
  int accepted = 0;   // of those, accepted by the oracle
  int claimed = 0;    // instances of any label whose region reads as this class
  double recall() const { return total ? static_cast<double>(accepted) / total : 0.0; }
  double precision() const { return claimed ? static_cast<double>(accepted) / claimed : 0.0; }
};

struct FaithfulnessReport {
  std::map<std::string, ClassFaithfulness> per_class;
  int total = 0;
  int accepted = 0;
  double aggregate = 0.0;
};

/// Mean colour of a box's inner mask region (mask > 0.5, excluding other
/// boxes) and of the ring around it. Missing regions come back as NaN.
struct InstanceColors {
  Eigen::Vector3d inside;
  Eigen::Vector3d ring;
};
InstanceColors instance_colors(const Image& image, const Layout& layout, std::size_t index, int ring_margin);

/// An instance is accepted when its inner region matches its class colour and
/// the surrounding ring does not. Layouts are rescaled to the image size.
FaithfulnessReport faithfulness_score(const std::vector<Image>& images, const std::vector<Layout>& layouts,
                                      const SceneSpec& spec, const OracleOptions& options = {});

/// Background texture descriptor: Lab mean and Lab standard deviation over
/// pixels outside every (slightly dilated) box.
Eigen::Matrix<double, 6, 1> background_statistics(const Image& image, const Layout& layout);

/// Nearest-centroid background family classifier fitted on clean renders of
/// each family.
class BackgroundClassifier {
 public:
  explicit BackgroundClassifier(const SceneSpec& spec, int renders_per_family = 16, std::uint64_t seed = 99);
  std::string classify(const Image& image, const Layout& layout) const;

 private:
  std::vector<std::string> names_;
  std::vector<Eigen::Matrix<double, 6, 1>> centroids_;
  Eigen::Matrix<double, 6, 1> scale_;
};

struct CoherenceReport {
  double score = 0.0;
  std::vector<std::string> predicted;
  std::vector<bool> admissible;
};

/// Fraction of images whose predicted background family is admissible for
/// the layout's majority class.
CoherenceReport coherence_score(const std::vector<Image>& images, const std::vector<Layout>& layouts,
                                const SceneSpec& spec);

// ---------------------------------------------------------------------------
// Feature statistics and Frechet distance

struct FeatureStats {
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;
};

/// Sample mean and unbiased covariance of the rows of `features`.
FeatureStats feature_stats(const Eigen::MatrixXd& features);

/// Fixed-seed random convolutional stack: three 3x3 stride-2 ReLU layers and
/// global average pooling.
class FeatureExtractor {
 public:
  explicit FeatureExtractor(int feature_dim = 64, std::uint64_t seed = 1234);
  int dim() const { return dim_; }
  Eigen::VectorXd extract(const Image& image) const;
  Eigen::MatrixXd extract(const std::vector<Image>& images) const;
  FeatureStats stats(const std::vector<Image>& images) const;

 private:
  struct Layer {
    ad::Matrix<double> weight;
    ad::Matrix<double> bias;
  };
  int dim_;
  std::vector<Layer> layers_;
};

/// Symmetric PSD square root; eigenvalues below -1e-10 raise NonPSD.
Eigen::MatrixXd sqrt_psd(const Eigen::MatrixXd& m);

double frechet_distance(const FeatureStats& a, const FeatureStats& b);

// ---------------------------------------------------------------------------
// Detection metrics

struct Detection {
  std::string label;
  OrientedBox box;
  double confidence = 1.0;
};

/// One detection list per image.
using DetectionResult = std::vector<std::vector<Detection>>;

/// 0.50, 0.55, ..., 0.95.
std::vector<double> coco_thresholds();

/// 101-point interpolated AP from confidence-sorted match flags.
double interpolated_ap(const std::vector<bool>& true_positive, int num_gt);

struct MapReport {
  double map = 0.0;
  double map50 = 0.0;
  double map75 = 0.0;
  std::map<std::string, double> per_class;    // averaged over thresholds
  std::map<std::string, double> per_class50;
  /// Raw (recall, precision) after each ranked prediction at IoU 0.5.
  std::map<std::string, std::vector<Eigen::Vector2d>> pr50;
};

/// Greedy one-to-one rotated-IoU matching in descending confidence; ties go
/// to the higher IoU, then the lower ground-truth index. Classes without
/// ground truth are left out of the mean.
MapReport map_metric(const DetectionResult& preds, const std::vector<Layout>& gts,
                     const std::vector<std::string>& class_names,
                     const std::vector<double>& thresholds = coco_thresholds());

/// Cosine similarity between encoder cls vectors of a caption and of the
/// caption rebuilt from detected instances. A text-side analog only.
template <typename Scalar>
double semantic_agreement_score(const TextEncoder<Scalar>& encoder, const Caption& caption,
                                const std::vector<Detection>& detections, int image_size);

}  // namespace l2i
