// Acceptance report: one PASS/FAIL line per criterion. The process exits 0
// once every requested criterion has been evaluated; --strict makes any FAIL
// a non-zero exit.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <optional>
#include <random>
#include <set>
#include <sstream>

#include <CLI11.hpp>

#include "gradcheck.hpp"
#include "l2i/cli.hpp"
#include "l2i/conditioning.hpp"
#include "l2i/detector.hpp"
#include "l2i/errors.hpp"
#include "l2i/evaluation.hpp"
#include "l2i/layout_text.hpp"
#include "l2i/model.hpp"
#include "metric_properties.hpp"
#include "oracles.hpp"

using namespace l2i;
namespace fs = std::filesystem;
using Mat = Eigen::MatrixXd;

namespace {

struct Outcome {
  bool pass = true;
  std::ostringstream detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail << "[failed: " << what << "] ";
    }
  }
};

double max_abs(const Mat& a) { return a.size() ? a.cwiseAbs().maxCoeff() : 0.0; }

// ---------------------------------------------------------------------------
// 1. Masks

double bilinear(const Mat& img, double x, double y) {
  // Pixel centres sit at integer + 0.5; samples clamp to the border.
  const double fx = std::clamp(x - 0.5, 0.0, static_cast<double>(img.cols() - 1));
  const double fy = std::clamp(y - 0.5, 0.0, static_cast<double>(img.rows() - 1));
  const Eigen::Index x0 = static_cast<Eigen::Index>(std::floor(fx)), y0 = static_cast<Eigen::Index>(std::floor(fy));
  const Eigen::Index x1 = std::min<Eigen::Index>(x0 + 1, img.cols() - 1), y1 = std::min<Eigen::Index>(y0 + 1, img.rows() - 1);
  const double ax = fx - static_cast<double>(x0), ay = fy - static_cast<double>(y0);
  return (1 - ay) * ((1 - ax) * img(y0, x0) + ax * img(y0, x1)) + ay * ((1 - ax) * img(y1, x0) + ax * img(y1, x1));
}

void masks(Outcome& o) {
  Rng rng(1);
  std::uniform_real_distribution<double> ang(-kPi / 2, kPi / 2), len(10, 30), ratio(0.3, 0.9);
  double worst_center = 0.0, worst_boundary = 0.0, worst_mae = 0.0;
  int monotone_breaks = 0;
  const int size = 64;
  for (int trial = 0; trial < 40; ++trial) {
    const double w = len(rng);
    const OrientedBox b = canonicalize_obb(32, 32, w, w * ratio(rng), ang(rng));
    worst_center = std::max(worst_center, std::abs(sigmoid_mask_value(b, b.cx, b.cy) - 0.7310586));
    const double c = std::cos(b.theta), s = std::sin(b.theta);
    for (int k = 0; k < 16; ++k) {
      // Point on the unit ellipse in the box frame, mapped to the image.
      const double t = 2 * kPi * k / 16;
      const double u = b.w / 2 * std::cos(t), v = b.h / 2 * std::sin(t);
      worst_boundary =
          std::max(worst_boundary, std::abs(sigmoid_mask_value(b, b.cx + c * u - s * v, b.cy + s * u + c * v) - 0.5));
      double prev = sigmoid_mask_value(b, b.cx, b.cy);
      for (double r = 0.25; r < 40; r += 0.25) {
        const double val = sigmoid_mask_value(b, b.cx + r * std::cos(t + 0.1), b.cy + r * std::sin(t + 0.1));
        if (val > prev) ++monotone_breaks;
        prev = val;
      }
    }
    const OrientedBox flat{b.cx, b.cy, b.w, b.h, 0.0};
    const Mat base = rasterize_sigmoid_mask(flat, size, size).values;
    const Mat rotated = rasterize_sigmoid_mask(b, size, size).values;
    double mae = 0.0;
    for (int y = 0; y < size; ++y) {
      for (int x = 0; x < size; ++x) {
        const double dx = x + 0.5 - b.cx, dy = y + 0.5 - b.cy;
        const double sx = b.cx + c * dx + s * dy, sy = b.cy - s * dx + c * dy;
        mae += std::abs(rotated(y, x) - bilinear(base, sx, sy));
      }
    }
    worst_mae = std::max(worst_mae, mae / (size * size));
  }
  o.require(worst_center <= 1e-6, "center value");
  o.require(worst_boundary <= 1e-6, "boundary value");
  o.require(monotone_breaks == 0, "monotone decay");
  o.require(worst_mae <= 2e-2, "rotation equivariance");
  o.detail << "center err " << worst_center << ", boundary err " << worst_boundary << ", monotone breaks "
           << monotone_breaks << ", rotation MAE " << worst_mae;
}

// ---------------------------------------------------------------------------
// 2 and 3. Conditioning

const std::vector<std::string> kClasses = {"airplane", "ship", "vehicle", "storage tank", "harbor"};

struct Stack {
  nn::ParamStore<double> store;
  TextEncoder<double> encoder;
  DualResampler<double> resampler;

  explicit Stack(const ResamplerConfig& rc, std::uint64_t seed = 7) {
    Rng erng(seed), rrng(seed + 1);
    encoder = TextEncoder<double>(store, "encoder", Vocabulary::for_captions(kClasses, kClasses),
                                  {12, rc.width, 1, 2, 2}, erng);
    resampler = DualResampler<double>(store, "resampler", rc, rrng);
  }
};

Layout random_layout(Rng& rng, int n) {
  std::uniform_real_distribution<double> pos(10, 54), len(4, 16), ang(-kPi / 2, kPi / 2);
  std::uniform_int_distribution<std::size_t> cls(0, kClasses.size() - 1);
  Layout l;
  l.image_size = 64;
  for (int i = 0; i < n; ++i) {
    l.instances.push_back({kClasses[cls(rng)], canonicalize_obb(pos(rng), pos(rng), len(rng), len(rng), ang(rng))});
  }
  l.scene_class = majority_class(l);
  return l;
}

std::vector<ad::Var<double>> random_embeddings(int n, int rows, int width, Rng& rng) {
  std::vector<ad::Var<double>> out;
  for (int i = 0; i < n; ++i) out.push_back(ad::constant(nn::normal_matrix<double>(rows, width, 1.0, rng)));
  return out;
}

void conditioning_oracles(Outcome& o) {
  Rng rng(2);
  std::uniform_int_distribution<int> pick_nq(1, 6), pick_n(1, 6);
  double worst_resampler = 0.0, worst_cgm = 0.0;
  int count_breaks = 0;
  for (int trial = 0; trial < 30; ++trial) {
    const int nq = pick_nq(rng), n = pick_n(rng);
    Stack s({nq, 8, 1 + trial % 2, 3, 2, 2, true}, 100 + static_cast<std::uint64_t>(trial));
    s.store.get("resampler.gamma").node()->value(0, 0) = 0.7;
    const Layout layout = random_layout(rng, n);
    const Caption caption = build_caption(layout);
    const auto e = assemble_conditions(layout, s.encoder, s.resampler, caption);
    std::vector<Mat> tokens, cls;
    std::vector<OrientedBox> boxes;
    for (const Instance& inst : layout.instances) {
      const auto t = s.encoder.encode(inst.label);
      tokens.push_back(oracle::val(t.tokens));
      cls.push_back(oracle::val(t.cls));
      boxes.push_back(inst.box);
    }
    const auto g = s.encoder.encode(caption.text);
    const auto ref =
        oracle::dual_resample(s.resampler, tokens, cls, boxes, 64, oracle::val(g.tokens), oracle::val(g.cls));
    if (e.e_fg.size() != static_cast<std::size_t>(n)) ++count_breaks;
    for (int i = 0; i < n && i < static_cast<int>(e.e_fg.size()); ++i) {
      if (e.e_fg[i].rows() != nq + 2) ++count_breaks;
      worst_resampler = std::max(worst_resampler, max_abs(oracle::val(e.e_fg[i]) - ref.e_fg[i]));
    }
    if (e.e_bg.rows() != 2 * nq + 1) ++count_breaks;
    worst_resampler = std::max(worst_resampler, max_abs(oracle::val(e.e_bg) - ref.e_bg));
  }
  for (int trial = 0; trial < 12; ++trial) {
    nn::ParamStore<double> store;
    const int height = 1 + trial % 3, width = 4, pixels = height * width, n = trial % 4;
    const CGMSite<double> site(store, "site", 5, 6, height, width, rng);
    const Mat f = nn::normal_matrix<double>(pixels, 5, 1.0, rng);
    const auto e_fg = random_embeddings(n, 4, 6, rng);
    const auto e_bg = random_embeddings(1, 7, 6, rng).front();
    std::vector<MaskVector<double>> m;
    std::vector<Eigen::VectorXd> ref_masks;
    std::vector<Mat> ref_fg;
    for (int i = 0; i < n; ++i) {
      m.push_back(Eigen::VectorXd::Random(pixels).cwiseAbs());
      ref_masks.push_back(m.back());
      ref_fg.push_back(oracle::val(e_fg[i]));
    }
    const bool aware = trial % 2 == 0;
    const Mat out = oracle::val(cgm_forward(ad::constant(ad::Matrix<double>(f)), e_fg, e_bg, m, site, aware));
    worst_cgm = std::max(worst_cgm, max_abs(out - oracle::cgm(f, ref_fg, oracle::val(e_bg), ref_masks, site, aware)));
  }
  o.require(worst_resampler <= 1e-6, "resampler oracle");
  o.require(worst_cgm <= 1e-6, "cgm oracle");
  o.require(count_breaks == 0, "token counts");
  o.detail << "resampler max err " << worst_resampler << ", cgm max err " << worst_cgm << ", token-count breaks "
           << count_breaks << " over 30 draws";
}

void gating_ablation(Outcome& o) {
  Rng rng(3);
  bool identical = true;
  for (int trial = 0; trial < 10; ++trial) {
    const Layout layout = random_layout(rng, 1 + trial % 5);
    const Caption caption = build_caption(layout);
    Stack with({1 + trial % 4, 8, 2, 3, 2, 2, true}, 50 + static_cast<std::uint64_t>(trial));
    Stack without({1 + trial % 4, 8, 2, 3, 2, 2, false}, 50 + static_cast<std::uint64_t>(trial));
    const auto a = assemble_conditions(layout, with.encoder, with.resampler, caption);
    const auto b = assemble_conditions(layout, without.encoder, without.resampler, caption);
    identical &= oracle::val(a.e_bg) == oracle::val(b.e_bg);
  }
  o.require(identical, "gamma 0 identity");

  // Background attention input: f without fg awareness, the fused map with it.
  nn::ParamStore<double> store;
  const CGMSite<double> site(store, "site", 5, 6, 2, 3, rng);
  const auto f = ad::constant(nn::normal_matrix<double>(6, 5, 1.0, rng));
  const auto e_bg = random_embeddings(1, 3, 6, rng).front();
  const auto e1 = random_embeddings(1, 4, 6, rng), e2 = random_embeddings(1, 4, 6, rng);
  const std::vector<MaskVector<double>> m{Eigen::VectorXd::Constant(6, 0.6)};
  auto background = [&](const std::vector<ad::Var<double>>& e, bool aware) {
    return Mat(oracle::val(cgm_forward(f, e, e_bg, m, site, aware)) - 0.6 * oracle::val(site.fg(f, e.front())));
  };
  const double plain_gap = max_abs(background(e1, false) - background(e2, false));
  const double aware_gap = max_abs(background(e1, true) - background(e2, true));
  o.require(plain_gap < 1e-12, "no-fg-aware path ignores fg embeddings");
  o.require(aware_gap > 1e-6, "fg-aware path reads fg output");

  // Four-architecture matrix: bridge parameters exist exactly when enabled.
  RunConfig cfg;
  cfg.model.width = 16;
  cfg.model.encoder = {24, 16, 1, 2, 2};
  cfg.model.resampler.num_queries = 2;
  cfg.model.resampler.layers = 1;
  cfg.model.unet.image_size = 16;
  cfg.model.unet.channels = {8, 16};
  cfg.model.unet.cgm_levels = {1};
  cfg.model.unet.time_dim = 16;
  cfg.model.unet.groups = 4;
  const Vocabulary vocab = vocabulary_for(SceneSpec::standard());
  int matrix_ok = 0;
  for (bool cb : {true, false}) {
    for (bool fg : {true, false}) {
      RunConfig v = cfg;
      v.model.resampler.context_bridge = cb;
      v.model.unet.fg_aware = fg;
      const Model<double> model(v, vocab);
      const bool has_bridge = model.params().parameter_count("resampler.bridge") > 0;
      matrix_ok += has_bridge == cb && model.params().contains("resampler.gamma") == cb &&
                   model.unet().config().fg_aware == fg;
    }
  }
  o.require(matrix_ok == 4, "four-variant matrix");
  o.detail << "gamma 0 bitwise identity " << (identical ? "yes" : "no") << ", fg-embedding effect on bg path "
           << plain_gap << " (plain) vs " << aware_gap << " (fg-aware), variants built " << matrix_ok << "/4";
}

// ---------------------------------------------------------------------------
// 4. Gradients

double check_prefix(nn::ParamStore<double>& store, const std::string& prefix,
                    const std::function<ad::Var<double>()>& loss, Rng& pick, int& checked) {
  double worst = 0.0;
  for (const auto& [name, v] : store.entries()) {
    if (name.rfind(prefix, 0) != 0) continue;
    worst = std::max(worst, gradcheck::max_relative_error(store, v, loss, 3, pick));
    ++checked;
  }
  return worst;
}

void gradients(Outcome& o) {
  Rng rng(4), pick(5);
  const Layout layout = random_layout(rng, 3);
  const Caption caption = build_caption(layout);
  Stack s({3, 8, 1, 3, 2, 2, true}, 60);
  s.store.get("resampler.gamma").node()->value(0, 0) = 0.4;
  auto cond_loss = [&] {
    const auto e = assemble_conditions(layout, s.encoder, s.resampler, caption);
    ad::Var<double> total = gradcheck::project(e.e_bg, 1);
    for (std::size_t i = 0; i < e.e_fg.size(); ++i) total = ad::add(total, gradcheck::project(e.e_fg[i], 2 + i));
    return total;
  };
  int checked = 0;
  const double enc = check_prefix(s.store, "encoder.", cond_loss, pick, checked);
  const double res = check_prefix(s.store, "resampler.", cond_loss, pick, checked);

  nn::ParamStore<double> store;
  UNetConfig ucfg;
  ucfg.image_size = 8;
  ucfg.channels = {4, 8};
  ucfg.cgm_levels = {0, 1};
  ucfg.time_dim = 8;
  ucfg.groups = 2;
  ucfg.context_dim = 6;
  const UNet<double> unet(store, "unet", ucfg, rng);
  SampleCondition<double> c;
  c.embeddings.e_fg = random_embeddings(2, 4, 6, rng);
  c.embeddings.e_bg = random_embeddings(1, 5, 6, rng).front();
  c.boxes = {OrientedBox{3, 3, 4, 2, 0.4}, OrientedBox{5, 5, 3, 2, -0.7}};
  const ad::Matrix<double> x = nn::normal_matrix<double>(64, 3, 1.0, rng);
  auto unet_loss = [&] { return gradcheck::project(unet.forward(ad::constant(x), {9}, {c}), 7); };
  const double micro = check_prefix(store, "unet.", unet_loss, pick, checked);

  o.require(enc < 1e-4, "encoder");
  o.require(res < 1e-4, "resampler");
  o.require(micro < 1e-4, "8x8 cgm model");
  o.detail << "max relative error: encoder " << enc << ", resampler " << res << ", 8x8 cgm model " << micro << " ("
           << checked << " tensors)";
}

// ---------------------------------------------------------------------------
// 5. Geometry

double corner_set_distance(const Corners& a, const Corners& b) {
  double worst = 0.0;
  for (const auto& p : a) {
    double best = 1e300;
    for (const auto& q : b) best = std::min(best, (p - q).norm());
    worst = std::max(worst, best);
  }
  return worst;
}

void geometry(Outcome& o) {
  Rng rng(6);
  std::uniform_real_distribution<double> ext(0.5, 50.0), ang(-10.0, 10.0), pos(-100.0, 100.0);
  int not_idempotent = 0;
  double worst_corner = 0.0;
  for (int i = 0; i < 2000; ++i) {
    const OrientedBox raw{pos(rng), pos(rng), ext(rng), ext(rng), ang(rng)};
    const OrientedBox c = canonicalize_obb(raw);
    const OrientedBox again = canonicalize_obb(c);
    not_idempotent += !(again.cx == c.cx && again.cy == c.cy && again.w == c.w && again.h == c.h &&
                        again.theta == c.theta);
    worst_corner = std::max(worst_corner, corner_set_distance(obb_corners(raw), obb_corners(c)));
  }
  std::uniform_real_distribution<double> p2(20, 40), e2(4, 20), a2(-kPi / 2, kPi / 2);
  double worst_iou = 0.0;
  int overlapping = 0;
  for (int i = 0; i < 200; ++i) {
    const OrientedBox a = canonicalize_obb(p2(rng), p2(rng), e2(rng), e2(rng), a2(rng));
    const OrientedBox b = canonicalize_obb(p2(rng), p2(rng), e2(rng), e2(rng), a2(rng));
    const double exact = rotated_iou(a, b);
    overlapping += exact > 0;
    worst_iou = std::max(worst_iou, std::abs(exact - oracle::raster_iou(a, b, 1500)));
  }
  o.require(not_idempotent == 0, "idempotence");
  o.require(worst_corner <= 1e-9, "corner sets");
  o.require(worst_iou <= 1e-3, "rotated iou");
  o.detail << "non-idempotent " << not_idempotent << "/2000, corner err " << worst_corner << ", iou vs raster max err "
           << worst_iou << " (" << overlapping << "/200 overlapping)";
}

// ---------------------------------------------------------------------------
// 6. Text protocol

void text_protocol(Outcome& o) {
  Layout example = parse_planner_response(
      "airplane: [247, 221, 121, 112, 30]\n"
      "airplane: [306, 357, 110, 105, 33]\n"
      "airplane: [207, 336, 120, 112, -36]\n");
  example.scene_class = "airplane";
  const std::string expected =
      "This is an aerial image of airplane. There are three airplanes, two towards the northwest-southeast "
      "direction, one towards the northeast-southwest direction in the center of the image.";
  o.require(build_caption(example).text == expected, "example caption");

  Rng rng(7);
  std::uniform_int_distribution<int> count(1, 8), cls(0, static_cast<int>(kClasses.size()) - 1);
  std::uniform_real_distribution<double> pos(100, 412), len(20, 80), ratio(0.3, 0.85), deg(-89.9, 89.9);
  double worst_angle = 0.0, worst_pos = 0.0;
  int mismatched = 0;
  for (int trial = 0; trial < 500; ++trial) {
    Layout l;
    l.image_size = kPlannerImageSize;
    const int n = count(rng);
    for (int i = 0; i < n; ++i) {
      const double w = len(rng);
      l.instances.push_back(
          {kClasses[cls(rng)], canonicalize_obb(pos(rng), pos(rng), w, w * ratio(rng), deg_to_rad(deg(rng)))});
    }
    const Layout back = parse_planner_response(render_planner_layout(l));
    if (back.instances.size() != l.instances.size()) {
      ++mismatched;
      continue;
    }
    for (std::size_t k = 0; k < l.instances.size(); ++k) {
      const auto &a = l.instances[k].box, &b = back.instances[k].box;
      mismatched += back.instances[k].label != l.instances[k].label;
      double d = std::fmod(std::abs(rad_to_deg(a.theta - b.theta)), 180.0);
      worst_angle = std::max(worst_angle, std::min(d, 180.0 - d));
      worst_pos = std::max({worst_pos, std::abs(a.cx - b.cx), std::abs(a.cy - b.cy)});
    }
  }
  o.require(worst_angle <= 0.5, "angle round trip");
  o.require(mismatched == 0, "labels and counts");

  auto code_of = [](const std::string& text) {
    try {
      parse_planner_response(text);
    } catch (const Error& e) {
      return std::string(to_string(e.code()));
    }
    return std::string("none");
  };
  const std::string c1 = code_of("ship: [100, 100, 20, 30, 10]");
  const std::string c2 = code_of("ship: [100, 100, 30, 20, 95]");
  const std::string c3 = code_of("ship: [5, 100, 30, 20, 0]");
  o.require(c1 == "WidthNotGreaterThanHeight" && c2 == "AngleOutOfRange" && c3 == "BoxOutOfBounds", "typed errors");
  o.detail << "example caption verbatim, round trip over 500 layouts: max angle gap " << worst_angle
           << " deg, max centre gap " << worst_pos << " px; errors " << c1 << ", " << c2 << ", " << c3;
}

// ---------------------------------------------------------------------------
// 7. Metrics

void metrics(Outcome& o) {
  const FeatureStats id{Eigen::Vector2d::Zero(), Mat::Identity(2, 2)};
  const FeatureStats shifted{Eigen::Vector2d(3, -1), Mat::Identity(2, 2)};
  const FeatureStats d14{Eigen::Vector2d::Zero(), Eigen::Vector2d(1, 4).asDiagonal()};
  const FeatureStats d41{Eigen::Vector2d::Zero(), Eigen::Vector2d(4, 1).asDiagonal()};
  const double f0 = frechet_distance(id, id), fv = frechet_distance(id, shifted), fd = frechet_distance(d14, d41);
  o.require(std::abs(f0) <= 1e-8 && std::abs(fv - 10.0) <= 1e-8 && std::abs(fd - 2.0) <= 1e-8, "frechet closed forms");

  Rng rng(8);
  double worst_sym = 0.0, lowest = 1e300;
  for (int trial = 0; trial < 50; ++trial) {
    const FeatureStats p = feature_stats(nn::normal_matrix<double>(40, 5, 1.0, rng));
    const FeatureStats q = feature_stats(nn::normal_matrix<double>(30, 5, 1.5, rng));
    worst_sym = std::max(worst_sym, std::abs(frechet_distance(p, q) - frechet_distance(q, p)));
    lowest = std::min(lowest, frechet_distance(p, q));
  }
  o.require(worst_sym <= 1e-8 && lowest >= 0.0, "frechet symmetry");

  const std::vector<std::string> names = {"ship"};
  Layout gt;
  gt.image_size = 64;
  gt.instances = {{"ship", {20, 20, 10, 6, 0.2}}};
  const OrientedBox away{48, 48, 10, 6, 0.2};
  const double forward = map_metric({{{"ship", gt.instances[0].box, 0.9}, {"ship", away, 0.8}}}, {gt}, names).map50;
  const double reversed = map_metric({{{"ship", gt.instances[0].box, 0.8}, {"ship", away, 0.9}}}, {gt}, names).map50;
  o.require(forward == 1.0 && reversed == 0.5, "hand-walked AP50");

  const props::MonotonicityTally t = props::map_monotonicity(1000, 9);
  o.require(t.correct_violations == 0 && t.spurious_violations == 0, "map monotonicity");
  o.detail << "frechet 0/|v|^2/diag = " << f0 << "/" << fv << "/" << fd << ", symmetry err " << worst_sym
           << "; AP50 " << forward << " and " << reversed << "; monotonicity violations " << t.correct_violations
           << "/" << t.correct_trials << " correct, " << t.spurious_violations << "/" << t.spurious_trials
           << " spurious";
}

// ---------------------------------------------------------------------------
// 8. Scaled experiment

constexpr int kExperimentSeeds = 3;

RunConfig experiment_config(std::uint64_t seed) {
  RunConfig cfg;
  cfg.seed = seed;
  cfg.model.width = 32;
  cfg.model.unet.channels = {16, 32, 64};
  cfg.model.unet.time_dim = 64;
  cfg.model.unet.groups = 4;
  cfg.train.steps = 2400;
  cfg.train.batch_size = 8;
  cfg.train.lr = 1e-3;
  cfg.train.log_every = 250;
  cfg.sample.steps = 40;
  cfg.data.n_train = 4000;
  cfg.data.n_eval = 256;
  return cfg;
}

std::optional<VariantResult> cached_result(const fs::path& dir, const RunConfig& cfg) {
  std::ifstream meta(dir / "config.json"), metrics(dir / "metrics.json");
  if (!meta || !metrics) return std::nullopt;
  try {
    const auto m = nlohmann::json::parse(meta);
    if (m.at("config_hash").get<std::string>() != hex64(config_hash(cfg))) return std::nullopt;
    const auto j = nlohmann::json::parse(metrics);
    VariantResult r;
    r.name = j.at("variant");
    r.seed = j.at("seed");
    r.faithfulness = j.at("faithfulness");
    r.coherence = j.at("coherence");
    r.frechet = j.at("frechet");
    r.final_loss = j.at("final_loss");
    r.train_seconds = j.at("train_seconds");
    r.sample_seconds = j.at("sample_seconds");
    return r;
  } catch (const std::exception&) {
    return std::nullopt;
  }
}

double median_of(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

void experiment(Outcome& o, const fs::path& root, bool allow_training) {
  const SceneSpec spec = SceneSpec::standard();
  std::vector<double> faith, coh, faith_abl, coh_abl;
  double cpu_seconds = 0.0;
  int steps = 0;
  for (int k = 0; k < kExperimentSeeds; ++k) {
    const RunConfig base = experiment_config(static_cast<std::uint64_t>(k));
    steps = base.train.steps;
    std::vector<SceneSample> train_data, held;
    for (bool full : {true, false}) {
      RunConfig cfg = base;
      cfg.model.resampler.context_bridge = full;
      cfg.model.unet.fg_aware = full;
      const fs::path dir = root / ("seed_" + std::to_string(k)) / variant_name(full, full);
      std::optional<VariantResult> r = cached_result(dir, cfg);
      if (!r) {
        if (!allow_training) {
          o.require(false, "missing results in " + dir.string());
          return;
        }
        if (train_data.empty()) {
          train_data = training_set(cfg, spec);
          held = held_out_set(cfg, spec);
        }
        r = run_variant(cfg, train_data, held, spec, dir, &std::cout);
      }
      cpu_seconds += r->train_seconds + r->sample_seconds;
      (full ? faith : faith_abl).push_back(r->faithfulness);
      (full ? coh : coh_abl).push_back(r->coherence);
      std::cout << "  seed " << k << " " << r->name << ": faithfulness " << r->faithfulness << ", coherence "
                << r->coherence << ", frechet " << r->frechet << std::endl;
    }
  }
  const double f = median_of(faith), c = median_of(coh), fa = median_of(faith_abl), ca = median_of(coh_abl);
  o.require(f >= 0.70, "faithfulness >= 0.70");
  o.require(c >= 0.60, "coherence >= 0.60");
  o.require(f - ca >= 0.05 && c - ca >= 0.05, "margin over ablation coherence");
  o.require(cpu_seconds <= 6 * 3600.0, "6 h CPU budget");
  o.detail << "medians over " << kExperimentSeeds << " seeds at " << steps << " steps: full faithfulness " << f
           << ", coherence " << c << "; no-cb-no-fg faithfulness " << fa << ", coherence " << ca
           << "; recorded compute " << std::fixed << std::setprecision(0) << cpu_seconds << " s"
           << std::defaultfloat;
}

// ---------------------------------------------------------------------------
// 9. Trainability

void trainability(Outcome& o) {
  const SceneSpec spec = SceneSpec::standard();
  const auto real = generate_dataset(spec, 800, 2024);
  std::vector<double> deltas;
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    const TrainabilityReport r = trainability_run(real, spec, SyntheticSource::Noise, {}, {}, seed);
    deltas.push_back(r.delta());
    o.detail << "seed " << seed << " baseline " << r.baseline.map << " augmented " << r.augmented.map << "; ";
  }
  const double m = median_of(deltas);
  o.require(m <= 0.0, "noise-control delta <= 0");
  o.detail << "median noise delta " << m;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance report"};
  std::vector<int> only;
  std::string experiment_dir = "acceptance_runs";
  bool strict = false, no_train = false;
  app.add_option("--criteria", only, "Criteria to evaluate (default: all)")->check(CLI::Range(1, 9));
  app.add_option("--experiment-dir", experiment_dir, "Cache for the scaled experiment runs");
  app.add_flag("--no-train", no_train, "Fail criterion 8 instead of training missing runs");
  app.add_flag("--strict", strict, "Exit non-zero when any criterion fails");
  CLI11_PARSE(app, argc, argv);

  struct Criterion {
    int id;
    const char* name;
    double budget_seconds;
    std::function<void(Outcome&)> run;
  };
  const std::vector<Criterion> criteria = {
      {1, "mask suite", 10, masks},
      {2, "conditioning oracles", 60, conditioning_oracles},
      {3, "gating and ablation exactness", 60, gating_ablation},
      {4, "gradient suite", 300, gradients},
      {5, "geometry suite", 120, geometry},
      {6, "text protocol suite", 30, text_protocol},
      {7, "metric suite", 120, metrics},
      {8, "scaled experiment", 6 * 3600.0,
       [&](Outcome& o) { experiment(o, experiment_dir, !no_train); }},
      {9, "trainability smoke", 1800, trainability},
  };
  const std::set<int> wanted(only.begin(), only.end());
  int failures = 0;
  for (const auto& c : criteria) {
    if (!wanted.empty() && !wanted.count(c.id)) continue;
    Outcome o;
    const auto start = std::chrono::steady_clock::now();
    try {
      c.run(o);
    } catch (const std::exception& e) {
      o.require(false, std::string("exception: ") + e.what());
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    // The experiment's budget is checked against its recorded compute.
    if (c.id != 8) o.require(secs <= c.budget_seconds, "runtime budget");
    failures += !o.pass;
    std::cout << "criterion " << c.id << " (" << c.name << "): " << (o.pass ? "PASS" : "FAIL") << " | "
              << o.detail.str() << " | " << std::fixed << std::setprecision(2) << secs << " s" << std::defaultfloat
              << std::endl;
  }
  return strict && failures ? 1 : 0;
}
