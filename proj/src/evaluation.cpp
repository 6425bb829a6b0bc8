#include "l2i/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "l2i/autodiff.hpp"
#include "l2i/errors.hpp"

namespace l2i {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

void check_aligned(std::size_t images, std::size_t layouts) {
  if (images != layouts) {
    throw Error(Errc::MismatchedLengths,
                std::to_string(images) + " images but " + std::to_string(layouts) + " layouts");
  }
}

Layout at_image_size(const Layout& layout, int size) {
  return layout.image_size == size ? layout : rescale_layout(layout, size);
}

// Inside the box grown by `margin` pixels on every side.
bool in_dilated(const OrientedBox& box, double x, double y, double margin) {
  const Eigen::Vector2d d = to_box_frame(box, x, y);
  return std::abs(d.x()) <= box.w / 2.0 + margin && std::abs(d.y()) <= box.h / 2.0 + margin;
}

bool near_other(const Layout& layout, std::size_t self, double x, double y) {
  for (std::size_t j = 0; j < layout.instances.size(); ++j) {
    if (j != self && in_dilated(layout.instances[j].box, x, y, 1.0)) return true;
  }
  return false;
}

}  // namespace

InstanceColors instance_colors(const Image& image, const Layout& layout, std::size_t index, int ring_margin) {
  const OrientedBox& box = layout.instances.at(index).box;
  Eigen::Vector3d in_sum = Eigen::Vector3d::Zero(), ring_sum = Eigen::Vector3d::Zero();
  int in_n = 0, ring_n = 0;
  for (int r = 0; r < image.height; ++r) {
    for (int c = 0; c < image.width; ++c) {
      const double x = c + 0.5, y = r + 0.5;
      if (!in_dilated(box, x, y, ring_margin + 1.0)) continue;
      if (near_other(layout, index, x, y)) continue;
      if (sigmoid_mask_value(box, x, y) > 0.5) {
        in_sum += image.at(r, c).transpose();
        ++in_n;
      } else if (!in_dilated(box, x, y, 1.0) && in_dilated(box, x, y, ring_margin + 1.0)) {
        ring_sum += image.at(r, c).transpose();
        ++ring_n;
      }
    }
  }
  InstanceColors out;
  out.inside = in_n ? Eigen::Vector3d(in_sum / in_n) : Eigen::Vector3d::Constant(kNaN);
  out.ring = ring_n ? Eigen::Vector3d(ring_sum / ring_n) : Eigen::Vector3d::Constant(kNaN);
  return out;
}

FaithfulnessReport faithfulness_score(const std::vector<Image>& images, const std::vector<Layout>& layouts,
                                      const SceneSpec& spec, const OracleOptions& options) {
  check_aligned(images.size(), layouts.size());
  FaithfulnessReport report;
  for (const auto& sig : spec.classes) report.per_class[sig.name];
  auto matches = [&](const Eigen::Vector3d& color, const ClassSignature& sig) {
    return color.allFinite() && delta_e(color, sig.color) <= options.delta_e_tolerance;
  };
  for (std::size_t i = 0; i < images.size(); ++i) {
    const Layout layout = at_image_size(layouts[i], images[i].height);
    for (std::size_t k = 0; k < layout.instances.size(); ++k) {
      const ClassSignature& sig = spec.signature(layout.instances[k].label);
      const InstanceColors colors = instance_colors(images[i], layout, k, options.ring_margin);
      ClassFaithfulness& entry = report.per_class[sig.name];
      ++entry.total;
      ++report.total;
      if (matches(colors.inside, sig) && !matches(colors.ring, sig)) {
        ++entry.accepted;
        ++report.accepted;
      }
      // Precision credits the class whose colour the region actually shows.
      for (const auto& other : spec.classes) {
        if (matches(colors.inside, other) && !matches(colors.ring, other)) ++report.per_class[other.name].claimed;
      }
    }
  }
  report.aggregate = report.total ? static_cast<double>(report.accepted) / report.total : 0.0;
  return report;
}

Eigen::Matrix<double, 6, 1> background_statistics(const Image& image, const Layout& layout_in) {
  const Layout layout = at_image_size(layout_in, image.height);
  Eigen::Vector3d sum = Eigen::Vector3d::Zero(), sq = Eigen::Vector3d::Zero();
  int n = 0;
  for (int r = 0; r < image.height; ++r) {
    for (int c = 0; c < image.width; ++c) {
      const double x = c + 0.5, y = r + 0.5;
      bool covered = false;
      for (const auto& inst : layout.instances) covered = covered || in_dilated(inst.box, x, y, 1.0);
      if (covered) continue;
      const Eigen::Vector3d lab = rgb_to_lab(image.at(r, c).transpose());
      sum += lab;
      sq += lab.cwiseProduct(lab);
      ++n;
    }
  }
  Eigen::Matrix<double, 6, 1> out;
  if (n == 0) {
    out.setConstant(kNaN);
    return out;
  }
  const Eigen::Vector3d mean = sum / n;
  out.head<3>() = mean;
  out.tail<3>() = (sq / n - mean.cwiseProduct(mean)).cwiseMax(0.0).cwiseSqrt();
  return out;
}

BackgroundClassifier::BackgroundClassifier(const SceneSpec& spec, int renders_per_family, std::uint64_t seed) {
  Rng rng(seed);
  const Layout empty{{}, "", spec.image_size};
  for (const auto& family : spec.backgrounds) {
    Eigen::Matrix<double, 6, 1> acc = Eigen::Matrix<double, 6, 1>::Zero();
    for (int k = 0; k < renders_per_family; ++k) {
      acc += background_statistics(render_background(family, spec.image_size, rng), empty);
    }
    names_.push_back(family.name);
    centroids_.push_back(acc / renders_per_family);
  }
  // Lab means span tens of units while texture spreads are a few; weight the
  // spread features up so both matter.
  scale_ << 1.0, 1.0, 1.0, 3.0, 3.0, 3.0;
}

std::string BackgroundClassifier::classify(const Image& image, const Layout& layout) const {
  const Eigen::Matrix<double, 6, 1> s = background_statistics(image, layout);
  if (!s.allFinite()) return {};
  std::size_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < centroids_.size(); ++k) {
    const double d = (s - centroids_[k]).cwiseProduct(scale_).squaredNorm();
    if (d < best_d) {
      best_d = d;
      best = k;
    }
  }
  return names_[best];
}

CoherenceReport coherence_score(const std::vector<Image>& images, const std::vector<Layout>& layouts,
                                const SceneSpec& spec) {
  check_aligned(images.size(), layouts.size());
  if (images.empty()) throw Error(Errc::EmptyInput, "coherence needs at least one image");
  const BackgroundClassifier classifier(spec);
  CoherenceReport report;
  int hits = 0;
  for (std::size_t i = 0; i < images.size(); ++i) {
    const std::string family = classifier.classify(images[i], layouts[i]);
    const bool ok = !family.empty() && !layouts[i].instances.empty() &&
                    spec.admissible(majority_class(layouts[i]), family);
    report.predicted.push_back(family);
    report.admissible.push_back(ok);
    hits += ok;
  }
  report.score = static_cast<double>(hits) / static_cast<double>(images.size());
  return report;
}

FeatureStats feature_stats(const Eigen::MatrixXd& features) {
  if (features.rows() == 0) throw Error(Errc::EmptyInput, "no feature rows");
  FeatureStats s;
  s.mean = features.colwise().mean().transpose();
  const Eigen::MatrixXd centered = features.rowwise() - s.mean.transpose();
  const double denom = features.rows() > 1 ? static_cast<double>(features.rows() - 1) : 1.0;
  s.cov = (centered.transpose() * centered) / denom;
  s.cov = 0.5 * (s.cov + s.cov.transpose());
  return s;
}

FeatureExtractor::FeatureExtractor(int feature_dim, std::uint64_t seed) : dim_(feature_dim) {
  if (feature_dim < 1) throw Error(Errc::InvalidConfig, "feature dimension must be positive");
  Rng rng(seed);
  const int widths[4] = {3, std::max(1, feature_dim / 4), std::max(1, feature_dim / 2), feature_dim};
  for (int l = 0; l < 3; ++l) {
    const int fan_in = 9 * widths[l];
    Layer layer;
    layer.weight = nn::normal_matrix<double>(fan_in, widths[l + 1], std::sqrt(2.0 / fan_in), rng);
    layer.bias = nn::normal_matrix<double>(1, widths[l + 1], 0.1, rng);
    layers_.push_back(std::move(layer));
  }
}

Eigen::VectorXd FeatureExtractor::extract(const Image& image) const {
  ad::Matrix<double> x = image.pixels;
  ad::ImageShape shape{1, image.height, image.width};
  for (const Layer& layer : layers_) {
    const ad::Var<double> out = ad::conv2d(ad::constant<double>(x), shape, ad::constant<double>(layer.weight),
                                           ad::constant<double>(layer.bias), 3, 2, 1);
    x = out.value().cwiseMax(0.0);
    shape = {1, ad::conv_out_size(shape.height, 3, 2, 1), ad::conv_out_size(shape.width, 3, 2, 1)};
  }
  return x.colwise().mean().transpose();
}

Eigen::MatrixXd FeatureExtractor::extract(const std::vector<Image>& images) const {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(images.size()), dim_);
  for (std::size_t i = 0; i < images.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = extract(images[i]).transpose();
  return out;
}

FeatureStats FeatureExtractor::stats(const std::vector<Image>& images) const { return feature_stats(extract(images)); }

Eigen::MatrixXd sqrt_psd(const Eigen::MatrixXd& m) {
  if (m.rows() != m.cols()) throw Error(Errc::DimensionMismatch, "square root needs a square matrix");
  if (!m.allFinite()) throw Error(Errc::NonFiniteInput, "matrix has non-finite entries");
  if ((m - m.transpose()).cwiseAbs().maxCoeff() > 1e-8 * std::max(1.0, m.cwiseAbs().maxCoeff())) {
    throw Error(Errc::NonPSD, "matrix is not symmetric");
  }
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(0.5 * (m + m.transpose()));
  Eigen::VectorXd values = eig.eigenvalues();
  if (values.size() && values.minCoeff() < -1e-10) {
    throw Error(Errc::NonPSD, "eigenvalue " + std::to_string(values.minCoeff()) + " below clamp tolerance");
  }
  values = values.cwiseMax(0.0).cwiseSqrt();
  return eig.eigenvectors() * values.asDiagonal() * eig.eigenvectors().transpose();
}

double frechet_distance(const FeatureStats& a, const FeatureStats& b) {
  const auto d = a.mean.size();
  if (b.mean.size() != d || a.cov.rows() != d || a.cov.cols() != d || b.cov.rows() != d || b.cov.cols() != d) {
    throw Error(Errc::DimensionMismatch, "feature statistics differ in dimension");
  }
  const Eigen::MatrixXd ra = sqrt_psd(a.cov);
  Eigen::MatrixXd inner = ra * b.cov * ra;
  inner = 0.5 * (inner + inner.transpose());
  const Eigen::MatrixXd cross = sqrt_psd(inner);
  sqrt_psd(b.cov);  // validates b
  const double value = (a.mean - b.mean).squaredNorm() + a.cov.trace() + b.cov.trace() - 2.0 * cross.trace();
  return std::max(0.0, value);
}

std::vector<double> coco_thresholds() {
  std::vector<double> t;
  for (int k = 0; k < 10; ++k) t.push_back(0.5 + 0.05 * k);
  return t;
}

double interpolated_ap(const std::vector<bool>& true_positive, int num_gt) {
  if (num_gt <= 0) return 0.0;
  std::vector<double> precision, recall;
  int tp = 0;
  for (std::size_t i = 0; i < true_positive.size(); ++i) {
    tp += true_positive[i];
    precision.push_back(static_cast<double>(tp) / static_cast<double>(i + 1));
    recall.push_back(static_cast<double>(tp) / num_gt);
  }
  // Running max from the right gives the interpolated envelope.
  for (std::size_t i = precision.size(); i-- > 1;) precision[i - 1] = std::max(precision[i - 1], precision[i]);
  double sum = 0.0;
  std::size_t j = 0;
  for (int k = 0; k <= 100; ++k) {
    const double r = k / 100.0;
    while (j < recall.size() && recall[j] < r - 1e-12) ++j;
    if (j < recall.size()) sum += precision[j];
  }
  return sum / 101.0;
}

MapReport map_metric(const DetectionResult& preds, const std::vector<Layout>& gts,
                     const std::vector<std::string>& class_names, const std::vector<double>& thresholds) {
  if (preds.size() != gts.size()) {
    throw Error(Errc::MismatchedLengths, "one detection list per ground-truth layout required");
  }
  if (thresholds.empty()) throw Error(Errc::EmptyInput, "no IoU thresholds");
  auto known = [&](const std::string& name) {
    if (std::find(class_names.begin(), class_names.end(), name) == class_names.end()) {
      throw Error(Errc::UnknownClass, "class '" + name + "' is not in the class table");
    }
  };
  for (const auto& list : preds) {
    for (const auto& d : list) known(d.label);
  }
  for (const auto& layout : gts) {
    for (const auto& inst : layout.instances) known(inst.label);
  }

  MapReport report;
  std::vector<double> class_maps, class_ap50, class_ap75;
  for (const std::string& cls : class_names) {
    struct Candidate {
      std::size_t image;
      std::size_t order;
      const Detection* det;
    };
    std::vector<Candidate> cands;
    int num_gt = 0;
    for (std::size_t i = 0; i < gts.size(); ++i) {
      for (const auto& inst : gts[i].instances) num_gt += inst.label == cls;
      for (std::size_t k = 0; k < preds[i].size(); ++k) {
        if (preds[i][k].label == cls) cands.push_back({i, k, &preds[i][k]});
      }
    }
    if (num_gt == 0) continue;
    std::stable_sort(cands.begin(), cands.end(),
                     [](const Candidate& a, const Candidate& b) { return a.det->confidence > b.det->confidence; });
    // IoU of each candidate against the same-class ground truth of its image.
    std::vector<std::vector<std::pair<std::size_t, double>>> ious(cands.size());
    for (std::size_t c = 0; c < cands.size(); ++c) {
      const auto& instances = gts[cands[c].image].instances;
      for (std::size_t g = 0; g < instances.size(); ++g) {
        if (instances[g].label == cls) ious[c].push_back({g, rotated_iou(cands[c].det->box, instances[g].box)});
      }
    }
    double sum = 0.0;
    for (double thr : thresholds) {
      std::vector<std::vector<bool>> used(gts.size());
      for (std::size_t i = 0; i < gts.size(); ++i) used[i].assign(gts[i].instances.size(), false);
      std::vector<bool> tp;
      for (std::size_t c = 0; c < cands.size(); ++c) {
        std::size_t best = std::numeric_limits<std::size_t>::max();
        double best_iou = -1.0;
        for (const auto& [g, iou] : ious[c]) {
          if (used[cands[c].image][g] || iou < thr) continue;
          if (iou > best_iou) {  // strict: equal IoU keeps the lower index
            best_iou = iou;
            best = g;
          }
        }
        const bool hit = best != std::numeric_limits<std::size_t>::max();
        if (hit) used[cands[c].image][best] = true;
        tp.push_back(hit);
      }
      const double ap = interpolated_ap(tp, num_gt);
      sum += ap;
      if (std::abs(thr - 0.5) < 1e-9) {
        report.per_class50[cls] = ap;
        auto& curve = report.pr50[cls];
        int hits = 0;
        for (std::size_t i = 0; i < tp.size(); ++i) {
          hits += tp[i];
          curve.emplace_back(static_cast<double>(hits) / num_gt, static_cast<double>(hits) / static_cast<double>(i + 1));
        }
      }
    }
    report.per_class[cls] = sum / static_cast<double>(thresholds.size());
    class_maps.push_back(report.per_class[cls]);
  }
  auto mean = [](const std::vector<double>& v) {
    return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  };
  report.map = mean(class_maps);
  if (thresholds.size() > 1) {
    const MapReport at50 = map_metric(preds, gts, class_names, {0.5});
    report.map50 = at50.map;
    report.pr50 = at50.pr50;
    report.map75 = map_metric(preds, gts, class_names, {0.75}).map;
  } else {
    report.map50 = std::abs(thresholds[0] - 0.5) < 1e-9 ? report.map : 0.0;
    report.map75 = std::abs(thresholds[0] - 0.75) < 1e-9 ? report.map : 0.0;
  }
  return report;
}

template <typename Scalar>
double semantic_agreement_score(const TextEncoder<Scalar>& encoder, const Caption& caption,
                                const std::vector<Detection>& detections, int image_size) {
  Layout detected;
  detected.image_size = image_size;
  for (const auto& d : detections) detected.instances.push_back({d.label, d.box});
  if (!detected.instances.empty()) detected.scene_class = majority_class(detected);
  const Caption rebuilt = build_caption(detected);
  const auto a = encoder.encode(caption.text).cls.value().template cast<double>();
  const auto b = encoder.encode(rebuilt.text).cls.value().template cast<double>();
  const double na = a.norm(), nb = b.norm();
  if (na == 0.0 || nb == 0.0) return 0.0;
  return a.cwiseProduct(b).sum() / (na * nb);
}

template double semantic_agreement_score(const TextEncoder<float>&, const Caption&, const std::vector<Detection>&, int);
template double semantic_agreement_score(const TextEncoder<double>&, const Caption&, const std::vector<Detection>&,
                                         int);

}  // namespace l2i
