#pragma once

#include <functional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "l2i/geometry.hpp"

namespace l2i {

struct Instance {
  std::string label;
  OrientedBox box;

  bool operator==(const Instance&) const = default;
};

/// Foreground instances in a square image. Boxes are canonical le90 with
/// centers inside [0, image_size]^2.
struct Layout {
  std::vector<Instance> instances;
  std::string scene_class;
  int image_size = 512;

  bool operator==(const Layout&) const = default;
};

inline constexpr int kDefaultMaxObjects = 6;

/// Throws InvalidLayout when a box is non-canonical, a center lies outside
/// the image, or the instance count exceeds max_objects.
void validate_layout(const Layout& layout, int max_objects = kDefaultMaxObjects);

/// Coordinates and extents scaled to a new square image size; angles kept.
Layout rescale_layout(const Layout& layout, int image_size);

nlohmann::json layout_to_json(const Layout& layout);
Layout layout_from_json(const nlohmann::json& j);

/// {"cls": label, "obb": [cx, cy, w, h, theta_rad]}
nlohmann::json instance_to_json(const Instance& inst);
Instance instance_from_json(const nlohmann::json& j);

/// One caption sentence with the slot values it was rendered from.
struct CaptionSentence {
  enum class Kind { Scene, Objects };

  Kind kind = Kind::Scene;
  std::string text;
  std::string class_name;  // Objects: class; Scene: scene class
  int count = 0;
  bool central = false;
  std::vector<std::pair<OrientationAxis, int>> orientations;
  std::vector<BlockLabel> positions;
};

struct Caption {
  std::string text;
  std::vector<CaptionSentence> sentences;
};

inline constexpr int kMaxCaptionSentences = 5;

struct CaptionOptions {
  int grid_k = 4;
  int max_sentences = kMaxCaptionSentences;
};

std::string number_word(int n);
std::string pluralize(const std::string& noun);

Caption build_caption(const Layout& layout, const CaptionOptions& options = {});

/// Caption similarity, larger is closer.
using CaptionSimilarity = std::function<double(const Caption&, const Caption&)>;

/// Cosine similarity of lowercase bag-of-words vectors after stopword removal.
double bag_of_words_cosine(const Caption& a, const Caption& b);

std::vector<std::string> tokenize_words(const std::string& text);

struct CorpusEntry {
  Caption caption;
  Layout layout;
};

/// Top-k corpus entries by similarity; ties keep corpus order.
std::vector<CorpusEntry> retrieve_examples(const Caption& query, const std::vector<CorpusEntry>& corpus,
                                           int k = 5, const CaptionSimilarity& similarity = bag_of_words_cosine);

inline constexpr int kPlannerExamples = 5;
inline constexpr int kPlannerImageSize = 512;

struct PlannerPrompt {
  std::string instruction;
  std::string constraints;
  std::string role;
  std::vector<std::pair<std::string, std::string>> examples;  // (caption, layout text)
  std::string query;

  /// Full prompt text, byte-stable for fixed inputs.
  std::string render() const;
};

/// Planner text for a layout: one "<class>: [cx, cy, w, h, deg]" line per
/// instance, in planner pixel space with integer degrees.
std::string render_planner_layout(const Layout& layout, int planner_size = kPlannerImageSize);

PlannerPrompt build_planner_prompt(const Caption& caption, const std::vector<CorpusEntry>& examples);

/// Strict parse of a planner response. The returned layout lives in
/// image_size pixel space; scene_class is left empty.
Layout parse_planner_response(const std::string& text, int image_size = kPlannerImageSize);

/// Transport to an external layout planner. Only a mock is shipped.
class PlannerTransport {
 public:
  virtual ~PlannerTransport() = default;
  virtual std::string complete(const std::string& prompt) = 0;
};

class MockPlannerTransport : public PlannerTransport {
 public:
  explicit MockPlannerTransport(std::string canned) : canned_(std::move(canned)) {}
  std::string complete(const std::string& prompt) override {
    last_prompt_ = prompt;
    return canned_;
  }
  const std::string& last_prompt() const { return last_prompt_; }

 private:
  std::string canned_;
  std::string last_prompt_;
};

/// Caption -> retrieved examples -> prompt -> transport -> validated layout.
Layout plan_layout(const Caption& caption, const std::vector<CorpusEntry>& corpus, PlannerTransport& transport,
                   int image_size = kPlannerImageSize);

}  // namespace l2i
