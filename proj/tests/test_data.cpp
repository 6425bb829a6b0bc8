#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "fixtures.hpp"
#include "l2i/data.hpp"
#include "l2i/image.hpp"

using namespace l2i;
namespace fs = std::filesystem;

namespace {

// Reference splitmix64 output function.
std::uint64_t mix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / "l2i_unit" / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

}  // namespace

TEST_CASE("seed derivation") {
  CHECK(mix(0) == 0xe220a8397b1dcdafull);
  CHECK(derive_seed(0, 0) == mix(0xe220a8397b1dcdafull));
  CHECK(derive_seed(7, 3) == mix(7 ^ mix(3)));
  CHECK(derive_seed(7, 3) != derive_seed(7, 4));
  CHECK(derive_seed(7, 3) != derive_seed(8, 3));
}

TEST_CASE("colour conversion reference values") {
  const Eigen::Vector3d white = rgb_to_lab({1, 1, 1});
  CHECK(white(0) == doctest::Approx(100.0).epsilon(1e-4));
  CHECK(std::abs(white(1)) < 1e-3);
  CHECK(std::abs(white(2)) < 1e-3);
  const Eigen::Vector3d red = rgb_to_lab({1, 0, 0});
  CHECK(red(0) == doctest::Approx(53.24).epsilon(1e-3));
  CHECK(red(1) == doctest::Approx(80.09).epsilon(1e-3));
  CHECK(red(2) == doctest::Approx(67.20).epsilon(1e-3));
  CHECK(delta_e({0, 0, 0}, {1, 1, 1}) == doctest::Approx(100.0).epsilon(1e-4));
}

TEST_CASE("standard spec is valid and its class colours are separable") {
  const SceneSpec spec = SceneSpec::standard();
  CHECK_NOTHROW(validate_spec(spec));
  for (std::size_t i = 0; i < spec.classes.size(); ++i) {
    for (std::size_t j = i + 1; j < spec.classes.size(); ++j) {
      CHECK(delta_e(spec.classes[i].color, spec.classes[j].color) >= spec.min_class_delta_e);
    }
  }
  CHECK(spec_from_json(spec_to_json(spec)).class_names() == spec.class_names());
  SceneSpec bad = spec;
  bad.classes[0].backgrounds = {"lava"};
  CHECK_THROWS_AS(validate_spec(bad), Error);
  CHECK(spec.class_index("submarine") == -1);
  try {
    spec.signature("submarine");
    FAIL("expected UnknownClass");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::UnknownClass);
  }
}

TEST_CASE("majority class breaks ties by name") {
  Layout l;
  l.instances = {{"ship", {}}, {"airplane", {}}, {"ship", {}}, {"airplane", {}}, {"vehicle", {}}};
  CHECK(majority_class(l) == "airplane");
  l.instances.push_back({"ship", {}});
  CHECK(majority_class(l) == "ship");
}

TEST_CASE("generated scenes respect the spec") {
  const SceneSpec spec = SceneSpec::standard();
  const auto samples = generate_dataset(spec, 40, 9);
  for (const SceneSample& s : samples) {
    const Layout& l = s.layout;
    REQUIRE(!l.instances.empty());
    CHECK(l.instances.size() <= 6);
    CHECK(l.image_size == 64);
    CHECK_NOTHROW(validate_layout(l));
    CHECK(l.scene_class == majority_class(l));
    CHECK(spec.admissible(l.scene_class, s.background_family));
    CHECK(s.caption.text == build_caption(l).text);
    for (std::size_t i = 0; i < l.instances.size(); ++i) {
      const auto& inst = l.instances[i];
      const ClassSignature& sig = spec.signature(inst.label);
      CHECK(inst.box.w >= sig.min_length - 1e-9);
      CHECK(inst.box.w <= sig.max_length + 1e-9);
      CHECK(inst.box.h / inst.box.w >= sig.min_aspect - 1e-9);
      CHECK(inst.box.h / inst.box.w <= sig.max_aspect + 1e-9);
      for (const auto& p : obb_corners(inst.box)) {
        CHECK(p.x() >= 0);
        CHECK(p.x() <= 64);
      }
      for (std::size_t j = i + 1; j < l.instances.size(); ++j) CHECK(rotated_iou(inst.box, l.instances[j].box) < 0.3);
      // The shape is painted at its centre in the class colour, up to jitter.
      const int r = static_cast<int>(inst.box.cy), c = static_cast<int>(inst.box.cx);
      const Eigen::Vector3d px = s.image.at(r, c).transpose();
      bool covered_by_other = false;
      for (std::size_t j = 0; j < l.instances.size(); ++j) {
        if (j != i && rotated_iou(OrientedBox{c + 0.5, r + 0.5, 1, 1, 0}, l.instances[j].box) > 0) covered_by_other = true;
      }
      if (!covered_by_other) CHECK(delta_e(px, sig.color) < 12.0);
    }
  }
}

TEST_CASE("dataset streams are order and worker independent") {
  const SceneSpec spec = fixture::small_spec();
  const auto one = generate_dataset(spec, 10, 4, 1);
  const auto three = generate_dataset(spec, 10, 4, 3);
  const auto tail = generate_dataset(spec, 4, 4, 2, 6, 0.3, 6);
  for (int i = 0; i < 10; ++i) {
    CHECK(one[i].layout == three[i].layout);
    CHECK(one[i].image.pixels == three[i].image.pixels);
  }
  for (int i = 0; i < 4; ++i) CHECK(tail[i].layout == one[6 + i].layout);
  CHECK(generate_sample(spec, 4, 7).image.pixels == one[7].image.pixels);
}

TEST_CASE("dataset files round trip") {
  const SceneSpec spec = fixture::small_spec();
  const auto samples = generate_dataset(spec, 3, 1);
  const fs::path dir = scratch("dataset");
  write_dataset(dir, samples);
  const auto back = read_dataset(dir);
  REQUIRE(back.size() == 3);
  for (int i = 0; i < 3; ++i) {
    CHECK(back[i].layout == samples[i].layout);
    CHECK(back[i].caption.text == samples[i].caption.text);
    CHECK(back[i].background_family == samples[i].background_family);
    CHECK((back[i].image.pixels - quantize_8bit(samples[i].image).pixels).cwiseAbs().maxCoeff() < 1e-12);
  }

  std::ofstream(dir / "data.jsonl", std::ios::app) << R"({"schema": 99, "id": 3})" << '\n';
  try {
    read_dataset(dir);
    FAIL("expected SchemaVersionMismatch");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::SchemaVersionMismatch);
  }
  CHECK_THROWS_AS(read_dataset(dir / "absent"), Error);
}

TEST_CASE("png round trip is exact at 8 bits") {
  Image img(3, 4);
  Rng rng(2);
  img.pixels = nn::normal_matrix<double>(12, 3, 0.3, rng).array().abs().min(1.0).matrix();
  const fs::path dir = scratch("png");
  write_png(dir / "x.png", img);
  const Image back = read_png(dir / "x.png");
  CHECK(back.height == 3);
  CHECK(back.width == 4);
  CHECK(back.pixels == quantize_8bit(img).pixels);
  CHECK_THROWS_AS(read_png(dir / "none.png"), Error);
}

TEST_CASE("crowded specs fail placement with a typed error") {
  SceneSpec spec = fixture::small_spec();
  for (auto& c : spec.classes) {
    c.min_length = 30;
    c.max_length = 31;
  }
  Rng rng(1);
  int failures = 0;
  for (int i = 0; i < 5; ++i) {
    try {
      sample_layout(spec, rng, 6, 0.01);
    } catch (const Error& e) {
      CHECK(e.code() == Errc::PlacementFailure);
      ++failures;
    }
  }
  CHECK(failures > 0);
}
