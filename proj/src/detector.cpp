#include "l2i/detector.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "l2i/errors.hpp"

namespace l2i {

namespace {

constexpr double kDefaultExtentScale = 3.7;

bool in_dilated(const OrientedBox& box, double x, double y, double margin) {
  const Eigen::Vector2d d = to_box_frame(box, x, y);
  return std::abs(d.x()) <= box.w / 2.0 + margin && std::abs(d.y()) <= box.h / 2.0 + margin;
}

Layout at_image_size(const Layout& layout, int size) {
  return layout.image_size == size ? layout : rescale_layout(layout, size);
}

// Per-pixel training label: 0 background, k + 1 class k, -1 ignored.
std::vector<int> pixel_labels(const SceneSample& s, const std::vector<std::string>& names) {
  const Layout layout = at_image_size(s.layout, s.image.height);
  std::vector<int> labels(static_cast<std::size_t>(s.image.height) * s.image.width, 0);
  for (int r = 0; r < s.image.height; ++r) {
    for (int c = 0; c < s.image.width; ++c) {
      const double x = c + 0.5, y = r + 0.5;
      int label = 0;
      int inside = 0;
      for (const auto& inst : layout.instances) {
        if (!in_dilated(inst.box, x, y, 1.0)) continue;
        ++inside;
        label = -1;
        if (sigmoid_mask_value(inst.box, x, y) > 0.5) {
          const auto it = std::find(names.begin(), names.end(), inst.label);
          if (it == names.end()) throw Error(Errc::UnknownClass, "class '" + inst.label + "' unknown to the detector");
          label = static_cast<int>(it - names.begin()) + 1;
        }
      }
      labels[static_cast<std::size_t>(r) * s.image.width + c] = inside > 1 ? -1 : label;
    }
  }
  return labels;
}

Eigen::MatrixXd softmax_rows(const Eigen::MatrixXd& logits) {
  Eigen::MatrixXd p = logits.colwise() - logits.rowwise().maxCoeff();
  p = p.array().exp().matrix();
  p.array().colwise() /= p.rowwise().sum().array();
  return p;
}

}  // namespace

PixelDetector::PixelDetector(std::vector<std::string> class_names, const DetectorConfig& cfg)
    : names_(std::move(class_names)), cfg_(cfg) {
  if (names_.empty()) throw Error(Errc::EmptyInput, "detector needs at least one class");
  extent_scale_.assign(names_.size(), Eigen::Vector2d::Constant(kDefaultExtentScale));
}

Eigen::MatrixXd PixelDetector::pixel_features(const Image& image) {
  const Eigen::Index n = static_cast<Eigen::Index>(image.height) * image.width;
  Eigen::MatrixXd lab(n, 3);
  for (Eigen::Index i = 0; i < n; ++i) lab.row(i) = rgb_to_lab(image.pixels.row(i).transpose()).transpose() / 100.0;
  Eigen::MatrixXd f(n, kFeatures);
  for (int r = 0; r < image.height; ++r) {
    for (int c = 0; c < image.width; ++c) {
      const Eigen::Index i = image.index(r, c);
      const double L = lab(i, 0), a = lab(i, 1), b = lab(i, 2);
      Eigen::RowVector3d local = Eigen::RowVector3d::Zero();
      int count = 0;
      for (int dr = -1; dr <= 1; ++dr) {
        for (int dc = -1; dc <= 1; ++dc) {
          const int rr = r + dr, cc = c + dc;
          if (rr < 0 || cc < 0 || rr >= image.height || cc >= image.width) continue;
          local += lab.row(image.index(rr, cc));
          ++count;
        }
      }
      local /= count;
      f.row(i) << 1.0, L, a, b, L * L, a * a, b * b, L * a, L * b, a * b, local(0), local(1), local(2);
    }
  }
  return f;
}

void PixelDetector::fit(const std::vector<const SceneSample*>& data, std::uint64_t seed) {
  if (data.empty()) throw Error(Errc::EmptyInput, "detector training set is empty");
  Rng rng(seed);
  std::vector<Eigen::RowVectorXd> rows;
  std::vector<int> targets;
  for (const SceneSample* s : data) {
    const Eigen::MatrixXd f = pixel_features(s->image);
    const std::vector<int> labels = pixel_labels(*s, names_);
    std::vector<int> fg, bg;
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (labels[i] > 0) fg.push_back(static_cast<int>(i));
      if (labels[i] == 0) bg.push_back(static_cast<int>(i));
    }
    std::shuffle(fg.begin(), fg.end(), rng);
    std::shuffle(bg.begin(), bg.end(), rng);
    fg.resize(std::min<std::size_t>(fg.size(), static_cast<std::size_t>(cfg_.pixels_per_image)));
    bg.resize(std::min(bg.size(), std::max<std::size_t>(fg.size(), 16)));
    for (int i : fg) {
      rows.push_back(f.row(i));
      targets.push_back(labels[static_cast<std::size_t>(i)]);
    }
    for (int i : bg) {
      rows.push_back(f.row(i));
      targets.push_back(0);
    }
  }
  const Eigen::Index n = static_cast<Eigen::Index>(rows.size());
  Eigen::MatrixXd x(n, kFeatures);
  for (Eigen::Index i = 0; i < n; ++i) x.row(i) = rows[static_cast<std::size_t>(i)];
  feature_mean_ = x.colwise().mean();
  feature_mean_(0) = 0.0;
  feature_scale_ = ((x.rowwise() - feature_mean_).array().square().colwise().mean().sqrt()).matrix();
  feature_scale_(0) = 1.0;
  for (Eigen::Index j = 0; j < kFeatures; ++j) feature_scale_(j) = std::max(feature_scale_(j), 1e-6);
  x = ((x.rowwise() - feature_mean_).array().rowwise() / feature_scale_.array()).matrix();

  const Eigen::Index k = static_cast<Eigen::Index>(names_.size()) + 1;
  weights_ = Eigen::MatrixXd::Zero(kFeatures, k);
  Eigen::MatrixXd m = weights_, v = weights_;
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  int t = 0;
  const Eigen::Index batch = std::max(1, cfg_.batch_pixels);
  for (int epoch = 0; epoch < cfg_.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (Eigen::Index start = 0; start < n; start += batch) {
      const Eigen::Index len = std::min(batch, n - start);
      Eigen::MatrixXd xb(len, kFeatures);
      Eigen::MatrixXd yb = Eigen::MatrixXd::Zero(len, k);
      for (Eigen::Index i = 0; i < len; ++i) {
        const Eigen::Index src = order[static_cast<std::size_t>(start + i)];
        xb.row(i) = x.row(src);
        yb(i, targets[static_cast<std::size_t>(src)]) = 1.0;
      }
      const Eigen::MatrixXd g = xb.transpose() * (softmax_rows(xb * weights_) - yb) / static_cast<double>(len);
      ++t;
      m = 0.9 * m + 0.1 * g;
      v = 0.999 * v + 0.001 * g.cwiseProduct(g);
      const double c1 = 1.0 - std::pow(0.9, t), c2 = 1.0 - std::pow(0.999, t);
      weights_.array() -= cfg_.lr * (m.array() / c1) / ((v.array() / c2).sqrt() + 1e-8);
    }
  }

  // Extent calibration: true box size over the spread of the matched component.
  // Components holding exactly one instance centre also give the typical area.
  std::vector<std::vector<Eigen::Vector2d>> ratios(names_.size());
  std::vector<std::vector<double>> areas(names_.size());
  const std::size_t calib = std::min<std::size_t>(data.size(), 400);
  for (std::size_t d = 0; d < calib; ++d) {
    const SceneSample& s = *data[d];
    const Layout layout = at_image_size(s.layout, s.image.height);
    for (const Component& comp : components(s.image, pixel_probabilities(s.image))) {
      Eigen::Vector2d center;
      double theta = 0.0;
      const Eigen::Vector2d spread = component_spread(comp.pixels, s.image.width, &center, &theta);
      int centres = 0;
      for (const auto& inst : layout.instances) {
        if (inst.label != names_[static_cast<std::size_t>(comp.label - 1)]) continue;
        const int c = static_cast<int>(std::floor(inst.box.cx)), r = static_cast<int>(std::floor(inst.box.cy));
        centres += std::find(comp.pixels.begin(), comp.pixels.end(), r * s.image.width + c) != comp.pixels.end();
      }
      if (centres == 1) areas[static_cast<std::size_t>(comp.label - 1)].push_back(static_cast<double>(comp.pixels.size()));
      for (const auto& inst : layout.instances) {
        if (inst.label != names_[static_cast<std::size_t>(comp.label - 1)]) continue;
        if (!point_in_box(inst.box, center.x(), center.y())) continue;
        ratios[static_cast<std::size_t>(comp.label - 1)].push_back({inst.box.w / spread.x(), inst.box.h / spread.y()});
        break;
      }
    }
  }
  for (std::size_t c = 0; c < names_.size(); ++c) {
    auto& r = ratios[c];
    if (r.size() < 3) continue;
    for (int axis = 0; axis < 2; ++axis) {
      std::vector<double> vals;
      for (const auto& e : r) vals.push_back(e(axis));
      std::nth_element(vals.begin(), vals.begin() + static_cast<long>(vals.size() / 2), vals.end());
      extent_scale_[c](axis) = vals[vals.size() / 2];
    }
  }
  typical_area_.assign(names_.size(), 0.0);
  for (std::size_t c = 0; c < names_.size(); ++c) {
    auto& a = areas[c];
    if (a.size() < 3) continue;
    std::nth_element(a.begin(), a.begin() + static_cast<long>(a.size() / 2), a.end());
    typical_area_[c] = a[a.size() / 2];
  }
}

Eigen::MatrixXd PixelDetector::pixel_probabilities(const Image& image) const {
  if (weights_.size() == 0) throw Error(Errc::InvalidConfig, "detector used before fit");
  Eigen::MatrixXd f = pixel_features(image);
  f = ((f.rowwise() - feature_mean_).array().rowwise() / feature_scale_.array()).matrix();
  return softmax_rows(f * weights_);
}

std::vector<PixelDetector::Component> PixelDetector::components(const Image& image,
                                                                const Eigen::MatrixXd& probs) const {
  const int h = image.height, w = image.width;
  std::vector<int> label(static_cast<std::size_t>(h) * w);
  for (Eigen::Index i = 0; i < probs.rows(); ++i) {
    Eigen::Index best = 0;
    probs.row(i).maxCoeff(&best);
    label[static_cast<std::size_t>(i)] = static_cast<int>(best);
  }
  std::vector<bool> seen(label.size(), false);
  std::vector<Component> out;
  for (std::size_t start = 0; start < label.size(); ++start) {
    if (seen[start] || label[start] == 0) continue;
    Component comp;
    comp.label = label[start];
    std::vector<int> stack{static_cast<int>(start)};
    seen[start] = true;
    while (!stack.empty()) {
      const int p = stack.back();
      stack.pop_back();
      comp.pixels.push_back(p);
      const int r = p / w, c = p % w;
      for (int dr = -1; dr <= 1; ++dr) {
        for (int dc = -1; dc <= 1; ++dc) {
          const int rr = r + dr, cc = c + dc;
          if (rr < 0 || cc < 0 || rr >= h || cc >= w) continue;
          const std::size_t q = static_cast<std::size_t>(rr) * w + cc;
          if (seen[q] || label[q] != comp.label) continue;
          seen[q] = true;
          stack.push_back(static_cast<int>(q));
        }
      }
    }
    if (static_cast<int>(comp.pixels.size()) >= cfg_.min_area) out.push_back(std::move(comp));
  }
  return out;
}

std::vector<PixelDetector::Component> PixelDetector::split_merged(Component comp, int width) const {
  const std::size_t cls = static_cast<std::size_t>(comp.label - 1);
  const double typical = cls < typical_area_.size() ? typical_area_[cls] : 0.0;
  const int k = typical > 0.0 ? std::min(cfg_.max_parts, static_cast<int>(std::lround(
                                                             static_cast<double>(comp.pixels.size()) / typical -
                                                             cfg_.split_bias)))
                              : 1;
  if (k < 2) return {std::move(comp)};
  const auto n = static_cast<Eigen::Index>(comp.pixels.size());
  Eigen::MatrixX2d pts(n, 2);
  for (Eigen::Index i = 0; i < n; ++i) {
    const int p = comp.pixels[static_cast<std::size_t>(i)];
    pts.row(i) << p % width + 0.5, p / width + 0.5;
  }
  // Farthest-point seeding keeps the result deterministic.
  Eigen::MatrixX2d centres(k, 2);
  centres.row(0) = pts.row(0);
  Eigen::VectorXd nearest = (pts.rowwise() - centres.row(0)).rowwise().squaredNorm();
  for (int j = 1; j < k; ++j) {
    Eigen::Index far = 0;
    nearest.maxCoeff(&far);
    centres.row(j) = pts.row(far);
    nearest = nearest.cwiseMin((pts.rowwise() - centres.row(j)).rowwise().squaredNorm());
  }
  std::vector<int> assign(static_cast<std::size_t>(n), 0);
  for (int iter = 0; iter < 20; ++iter) {
    bool changed = false;
    for (Eigen::Index i = 0; i < n; ++i) {
      Eigen::Index best = 0;
      (centres.rowwise() - pts.row(i)).rowwise().squaredNorm().minCoeff(&best);
      changed |= assign[static_cast<std::size_t>(i)] != static_cast<int>(best);
      assign[static_cast<std::size_t>(i)] = static_cast<int>(best);
    }
    if (!changed && iter > 0) break;
    Eigen::MatrixX2d sum = Eigen::MatrixX2d::Zero(k, 2);
    Eigen::VectorXd count = Eigen::VectorXd::Zero(k);
    for (Eigen::Index i = 0; i < n; ++i) {
      sum.row(assign[static_cast<std::size_t>(i)]) += pts.row(i);
      count(assign[static_cast<std::size_t>(i)]) += 1.0;
    }
    for (int j = 0; j < k; ++j) {
      if (count(j) > 0) centres.row(j) = sum.row(j) / count(j);
    }
  }
  std::vector<Component> out(static_cast<std::size_t>(k));
  for (auto& part : out) part.label = comp.label;
  for (Eigen::Index i = 0; i < n; ++i) {
    out[static_cast<std::size_t>(assign[static_cast<std::size_t>(i)])].pixels.push_back(
        comp.pixels[static_cast<std::size_t>(i)]);
  }
  std::erase_if(out, [&](const Component& c) { return static_cast<int>(c.pixels.size()) < cfg_.min_area; });
  return out;
}

Eigen::Vector2d PixelDetector::component_spread(const std::vector<int>& pixels, int width, Eigen::Vector2d* center,
                                                double* theta) {
  Eigen::Vector2d mean = Eigen::Vector2d::Zero();
  for (int p : pixels) mean += Eigen::Vector2d(p % width + 0.5, p / width + 0.5);
  mean /= static_cast<double>(pixels.size());
  Eigen::Matrix2d cov = Eigen::Matrix2d::Zero();
  for (int p : pixels) {
    const Eigen::Vector2d d = Eigen::Vector2d(p % width + 0.5, p / width + 0.5) - mean;
    cov += d * d.transpose();
  }
  cov /= static_cast<double>(pixels.size());
  // Each pixel covers a unit square, which adds 1/12 variance per axis.
  cov += Eigen::Matrix2d::Identity() / 12.0;
  const Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> eig(cov);
  const Eigen::Vector2d major = eig.eigenvectors().col(1);
  *center = mean;
  *theta = std::atan2(major.y(), major.x());
  return {std::sqrt(eig.eigenvalues()(1)), std::sqrt(eig.eigenvalues()(0))};
}

std::vector<Detection> PixelDetector::detect(const Image& image) const {
  const Eigen::MatrixXd probs = pixel_probabilities(image);
  std::vector<Detection> out;
  std::vector<Component> parts;
  for (Component& comp : components(image, probs)) {
    for (Component& part : split_merged(std::move(comp), image.width)) parts.push_back(std::move(part));
  }
  for (const Component& comp : parts) {
    Eigen::Vector2d center;
    double theta = 0.0;
    const Eigen::Vector2d spread = component_spread(comp.pixels, image.width, &center, &theta);
    const Eigen::Vector2d& k = extent_scale_[static_cast<std::size_t>(comp.label - 1)];
    double conf = 0.0;
    for (int p : comp.pixels) conf += probs(p, comp.label);
    conf /= static_cast<double>(comp.pixels.size());
    out.push_back({names_[static_cast<std::size_t>(comp.label - 1)],
                   canonicalize_obb(center.x(), center.y(), k.x() * spread.x(), k.y() * spread.y(), theta), conf});
  }
  std::stable_sort(out.begin(), out.end(),
                   [](const Detection& a, const Detection& b) { return a.confidence > b.confidence; });
  return out;
}

DetectionResult PixelDetector::detect(const std::vector<Image>& images) const {
  DetectionResult out;
  out.reserve(images.size());
  for (const Image& img : images) out.push_back(detect(img));
  return out;
}

std::string to_string(SyntheticSource source) {
  switch (source) {
    case SyntheticSource::Generator: return "generator";
    case SyntheticSource::Copies: return "copies";
    case SyntheticSource::Noise: return "noise";
  }
  return "unknown";
}

SyntheticSource synthetic_source_from_string(const std::string& name) {
  if (name == "generator") return SyntheticSource::Generator;
  if (name == "copies") return SyntheticSource::Copies;
  if (name == "noise") return SyntheticSource::Noise;
  throw Error(Errc::InvalidConfig, "unknown synthetic source '" + name + "'");
}

TrainabilityReport trainability_run(const std::vector<SceneSample>& real, const SceneSpec& spec,
                                    SyntheticSource source, const Synthesizer& synth,
                                    const TrainabilityConfig& cfg, std::uint64_t seed) {
  if (real.size() < 2) throw Error(Errc::EmptyInput, "trainability needs at least two real samples");
  if (!(cfg.held_out_fraction > 0.0 && cfg.held_out_fraction < 1.0)) {
    throw Error(Errc::InvalidConfig, "held-out fraction must lie in (0, 1)");
  }
  std::vector<std::size_t> order(real.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng split_rng(derive_seed(seed, 1));
  std::shuffle(order.begin(), order.end(), split_rng);
  const std::size_t n_eval = std::clamp<std::size_t>(
      static_cast<std::size_t>(std::lround(cfg.held_out_fraction * static_cast<double>(real.size()))), 1,
      real.size() - 1);

  std::vector<const SceneSample*> train, eval;
  for (std::size_t i = 0; i < order.size(); ++i) (i < n_eval ? eval : train).push_back(&real[order[i]]);

  std::vector<SceneSample> synthetic(train.size());
  std::vector<Layout> layouts;
  std::vector<Caption> captions;
  for (std::size_t i = 0; i < train.size(); ++i) {
    synthetic[i].layout = train[i]->layout;
    synthetic[i].caption = train[i]->caption;
    layouts.push_back(train[i]->layout);
    captions.push_back(train[i]->caption);
  }
  const std::uint64_t synth_seed = derive_seed(seed, 3);
  switch (source) {
    case SyntheticSource::Copies:
      for (std::size_t i = 0; i < train.size(); ++i) synthetic[i].image = train[i]->image;
      break;
    case SyntheticSource::Noise:
      for (std::size_t i = 0; i < train.size(); ++i) {
        Rng rng(derive_seed(synth_seed, i));
        std::uniform_real_distribution<double> unit(0.0, 1.0);
        Image img(train[i]->image.height, train[i]->image.width);
        for (Eigen::Index k = 0; k < img.pixels.size(); ++k) img.pixels.data()[k] = unit(rng);
        synthetic[i].image = std::move(img);
      }
      break;
    case SyntheticSource::Generator: {
      if (!synth) throw Error(Errc::InvalidConfig, "generator source needs a synthesizer");
      std::vector<Image> images = synth(layouts, captions, synth_seed);
      if (images.size() != train.size()) throw Error(Errc::MismatchedLengths, "synthesizer returned wrong count");
      for (std::size_t i = 0; i < train.size(); ++i) synthetic[i].image = std::move(images[i]);
      break;
    }
  }

  const std::vector<std::string> names = spec.class_names();
  std::vector<Image> eval_images;
  std::vector<Layout> eval_layouts;
  for (const SceneSample* s : eval) {
    eval_images.push_back(s->image);
    eval_layouts.push_back(at_image_size(s->layout, s->image.height));
  }

  TrainabilityReport report;
  report.seed = seed;
  report.source = source;
  report.n_train = train.size();
  report.n_synthetic = synthetic.size();
  report.n_eval = eval.size();

  const std::uint64_t fit_seed = derive_seed(seed, 2);
  PixelDetector baseline(names, cfg.detector);
  baseline.fit(train, fit_seed);
  report.baseline = map_metric(baseline.detect(eval_images), eval_layouts, names);

  std::vector<const SceneSample*> augmented_set = train;
  for (const SceneSample& s : synthetic) augmented_set.push_back(&s);
  PixelDetector augmented(names, cfg.detector);
  augmented.fit(augmented_set, fit_seed);
  report.augmented = map_metric(augmented.detect(eval_images), eval_layouts, names);
  return report;
}

void write_trainability_csv(const std::filesystem::path& path, const std::vector<TrainabilityReport>& reports) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw Error(Errc::IoError, "cannot write " + path.string());
  out << "seed,source,n_train,n_synthetic,n_eval,baseline_map,baseline_map50,baseline_map75,"
         "augmented_map,augmented_map50,augmented_map75,delta\n";
  for (const auto& r : reports) {
    out << r.seed << ',' << to_string(r.source) << ',' << r.n_train << ',' << r.n_synthetic << ',' << r.n_eval << ','
        << r.baseline.map << ',' << r.baseline.map50 << ',' << r.baseline.map75 << ',' << r.augmented.map << ','
        << r.augmented.map50 << ',' << r.augmented.map75 << ',' << r.delta() << '\n';
  }
}

}  // namespace l2i
