#include <doctest.h>

#include <cmath>
#include <random>

#include "l2i/errors.hpp"
#include "l2i/layout_text.hpp"
#include "l2i/nn.hpp"

using namespace l2i;

namespace {

const char* kExampleResponse =
    "airplane: [247, 221, 121, 112, 30]\n"
    "airplane: [306, 357, 110, 105, 33]\n"
    "airplane: [207, 336, 120, 112, -36]\n";

const char* kExampleCaption =
    "This is an aerial image of airplane. There are three airplanes, two towards the northwest-southeast "
    "direction, one towards the northeast-southwest direction in the center of the image.";

Errc parse_error_code(const std::string& text) {
  try {
    parse_planner_response(text);
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("no error raised");
  return Errc::ParseError;
}

Layout random_planner_layout(Rng& rng) {
  std::uniform_int_distribution<int> count(1, 6), cls(0, 2);
  std::uniform_real_distribution<double> pos(100, 412), len(20, 80), ratio(0.3, 0.85), deg(-89.4, 89.4);
  const char* names[] = {"ship", "airplane", "vehicle"};
  Layout l;
  l.image_size = 512;
  const int n = count(rng);
  for (int i = 0; i < n; ++i) {
    const double w = len(rng);
    l.instances.push_back({names[cls(rng)], canonicalize_obb(pos(rng), pos(rng), w, w * ratio(rng), deg_to_rad(deg(rng)))});
  }
  return l;
}

double angle_gap_deg(double a, double b) {
  double d = std::fmod(std::abs(rad_to_deg(a - b)), 180.0);
  return std::min(d, 180.0 - d);
}

}  // namespace

TEST_CASE("example planner layout reproduces the reference caption") {
  Layout l = parse_planner_response(kExampleResponse);
  l.scene_class = "airplane";
  CHECK(build_caption(l).text == kExampleCaption);
}

TEST_CASE("caption wording helpers") {
  CHECK(number_word(3) == "three");
  CHECK(number_word(12) == "12");
  CHECK(pluralize("ship") == "ships");
  CHECK(pluralize("aircraft") == "aircraft");
}

TEST_CASE("caption orders central classes first and by count, capped at five sentences") {
  Layout l;
  l.image_size = 64;
  l.scene_class = "ship";
  l.instances = {{"ship", {8, 8, 6, 2, 0}},    {"ship", {56, 8, 6, 2, 0}},  {"tank", {32, 32, 6, 4, 0}},
                 {"court", {8, 56, 6, 4, 0}},  {"vehicle", {56, 56, 6, 2, 0}}, {"airplane", {32, 4, 6, 4, 0}},
                 {"boat", {4, 32, 6, 2, 0}}};
  const Caption c = build_caption(l);
  REQUIRE(c.sentences.size() == 5);
  CHECK(c.sentences[0].kind == CaptionSentence::Kind::Scene);
  CHECK(c.sentences[1].class_name == "tank");
  CHECK(c.sentences[1].central);
  CHECK(c.sentences[2].class_name == "ship");
  CHECK(c.sentences[2].text == "There are two ships towards the east-west direction in the upper-left and upper-right of the image.");
  CHECK(c.sentences[3].class_name == "airplane");  // ties broken by name
  CHECK(c.sentences[4].class_name == "boat");
}

TEST_CASE("caption without scene class") {
  Layout l;
  l.image_size = 64;
  l.instances = {{"ship", {32, 32, 6, 2, deg_to_rad(90 - 1e-9)}}};
  CHECK(build_caption(l).text ==
        "This is an aerial image. There is one ship towards the north-south direction in the center of the image.");
}

TEST_CASE("planner render then parse is the identity up to rounding") {
  Rng rng(17);
  for (int i = 0; i < 50; ++i) {
    const Layout l = random_planner_layout(rng);
    const Layout back = parse_planner_response(render_planner_layout(l));
    REQUIRE(back.instances.size() == l.instances.size());
    for (std::size_t k = 0; k < l.instances.size(); ++k) {
      CHECK(back.instances[k].label == l.instances[k].label);
      CHECK(back.instances[k].box.cx == doctest::Approx(l.instances[k].box.cx));
      CHECK(back.instances[k].box.w == doctest::Approx(l.instances[k].box.w));
      CHECK(angle_gap_deg(back.instances[k].box.theta, l.instances[k].box.theta) <= 0.5);
    }
  }
}

TEST_CASE("planner constraint violations raise typed errors") {
  CHECK(parse_error_code("ship: [100, 100, 20, 30, 10]") == Errc::WidthNotGreaterThanHeight);
  CHECK(parse_error_code("ship: [100, 100, 20, 20, 10]") == Errc::WidthNotGreaterThanHeight);
  CHECK(parse_error_code("ship: [100, 100, 30, 20, 95]") == Errc::AngleOutOfRange);
  CHECK(parse_error_code("ship: [5, 100, 30, 20, 0]") == Errc::BoxOutOfBounds);
  CHECK(parse_error_code("ship: [100, 100, 30, 20]") == Errc::ParseError);
  CHECK(parse_error_code("ship [100, 100, 30, 20, 0]") == Errc::ParseError);
  CHECK(parse_error_code("ship: [100, 1e, 30, 20, 0]") == Errc::ParseError);
  CHECK(parse_error_code("\n  \n") == Errc::EmptyResponse);
}

TEST_CASE("planner accepts the closed angle range and canonicalizes 90 degrees") {
  const Layout l = parse_planner_response("ship: [100, 100, 30, 20, 90]");
  CHECK(l.instances[0].box.theta == doctest::Approx(-kPi / 2));
}

TEST_CASE("layout json round trip") {
  Layout l = parse_planner_response(kExampleResponse);
  l.scene_class = "airplane";
  CHECK(layout_from_json(layout_to_json(l)) == l);
  CHECK_THROWS_AS(layout_from_json(nlohmann::json::parse(R"({"image_size": 64, "instances": [{"cls": "a"}]})")),
                  Error);
}

TEST_CASE("rescale keeps relative geometry") {
  const Layout l = parse_planner_response(kExampleResponse);
  const Layout s = rescale_layout(l, 64);
  CHECK(s.image_size == 64);
  CHECK(s.instances[0].box.cx == doctest::Approx(247.0 / 8));
  CHECK(s.instances[0].box.theta == l.instances[0].box.theta);
}

TEST_CASE("validate layout") {
  Layout l;
  l.image_size = 64;
  l.instances = {{"ship", {32, 32, 2, 6, 0}}};
  CHECK_THROWS_AS(validate_layout(l), Error);
  l.instances = {{"ship", {70, 32, 6, 2, 0}}};
  CHECK_THROWS_AS(validate_layout(l), Error);
}

TEST_CASE("bag of words similarity and retrieval") {
  Caption a{"There are two ships in the harbor.", {}};
  Caption b{"Two ships near the harbor!", {}};
  Caption c{"One airplane on the runway.", {}};
  CHECK(bag_of_words_cosine(a, a) == doctest::Approx(1.0));
  CHECK(bag_of_words_cosine(a, b) > bag_of_words_cosine(a, c));
  std::vector<CorpusEntry> corpus;
  for (int i = 0; i < 6; ++i) corpus.push_back({i == 4 ? b : c, Layout{}});
  const auto top = retrieve_examples(a, corpus, 5);
  REQUIRE(top.size() == 5);
  CHECK(top[0].caption.text == b.text);
  CHECK_THROWS_AS(retrieve_examples(a, corpus, 7), Error);
}

TEST_CASE("planner prompt carries the protocol text and five examples") {
  Layout l = parse_planner_response(kExampleResponse);
  l.scene_class = "airplane";
  const Caption cap = build_caption(l);
  std::vector<CorpusEntry> examples(5, CorpusEntry{cap, l});
  const std::string text = build_planner_prompt(cap, examples).render();
  CHECK(text.find("You are an intelligent research assistant.") == 0);
  CHECK(text.find("Image size is 512x512, with the top-left at [0, 0] and the bottom-right at [512, 512].") !=
        std::string::npos);
  CHECK(text.find("Example #5:") != std::string::npos);
  CHECK(text.find("airplane: [247, 221, 121, 112, 30]") != std::string::npos);
  CHECK(build_planner_prompt(cap, examples).render() == text);
  examples.pop_back();
  try {
    build_planner_prompt(cap, examples);
    FAIL("expected WrongExampleCount");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::WrongExampleCount);
  }
}

TEST_CASE("plan_layout drives the transport and rescales") {
  Layout l = parse_planner_response(kExampleResponse);
  l.scene_class = "airplane";
  const Caption cap = build_caption(l);
  std::vector<CorpusEntry> corpus(8, CorpusEntry{cap, l});
  MockPlannerTransport transport(kExampleResponse);
  const Layout planned = plan_layout(cap, corpus, transport, 64);
  CHECK(planned.image_size == 64);
  CHECK(planned.scene_class == "airplane");
  CHECK(planned.instances.size() == 3);
  CHECK(transport.last_prompt().find(cap.text) != std::string::npos);
}
