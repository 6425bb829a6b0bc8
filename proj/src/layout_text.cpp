#include "l2i/layout_text.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdlib>
#include <map>
#include <set>
#include <sstream>

#include "l2i/errors.hpp"

namespace l2i {

void validate_layout(const Layout& layout, int max_objects) {
  if (layout.image_size < 1) throw Error(Errc::InvalidLayout, "image size must be positive");
  if (static_cast<int>(layout.instances.size()) > max_objects) {
    throw Error(Errc::InvalidLayout, "layout has more than " + std::to_string(max_objects) + " instances");
  }
  const double size = layout.image_size;
  for (const Instance& inst : layout.instances) {
    const OrientedBox& b = inst.box;
    if (inst.label.empty()) throw Error(Errc::InvalidLayout, "instance without class label");
    if (!(b.w > 0.0 && b.h > 0.0 && b.w >= b.h && b.theta >= -kPi / 2 && b.theta < kPi / 2)) {
      throw Error(Errc::InvalidLayout, "box for '" + inst.label + "' is not canonical le90");
    }
    if (!(b.cx >= 0.0 && b.cx <= size && b.cy >= 0.0 && b.cy <= size)) {
      throw Error(Errc::InvalidLayout, "box center for '" + inst.label + "' lies outside the image");
    }
  }
}

Layout rescale_layout(const Layout& layout, int image_size) {
  Layout out = layout;
  out.image_size = image_size;
  const double s = static_cast<double>(image_size) / layout.image_size;
  for (Instance& inst : out.instances) {
    inst.box.cx *= s;
    inst.box.cy *= s;
    inst.box.w *= s;
    inst.box.h *= s;
  }
  return out;
}

nlohmann::json instance_to_json(const Instance& inst) {
  const OrientedBox& b = inst.box;
  return {{"cls", inst.label}, {"obb", {b.cx, b.cy, b.w, b.h, b.theta}}};
}

Instance instance_from_json(const nlohmann::json& j) {
  try {
    const auto& obb = j.at("obb");
    if (!obb.is_array() || obb.size() != 5) throw Error(Errc::InvalidLayout, "obb must have 5 entries");
    Instance inst;
    inst.label = j.at("cls").get<std::string>();
    inst.box = canonicalize_obb(obb[0].get<double>(), obb[1].get<double>(), obb[2].get<double>(),
                                obb[3].get<double>(), obb[4].get<double>());
    return inst;
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::InvalidLayout, std::string("malformed instance record: ") + e.what());
  }
}

nlohmann::json layout_to_json(const Layout& layout) {
  nlohmann::json instances = nlohmann::json::array();
  for (const Instance& inst : layout.instances) instances.push_back(instance_to_json(inst));
  return {{"image_size", layout.image_size}, {"scene_class", layout.scene_class}, {"instances", instances}};
}

Layout layout_from_json(const nlohmann::json& j) {
  try {
    Layout layout;
    layout.image_size = j.value("image_size", kPlannerImageSize);
    layout.scene_class = j.value("scene_class", std::string());
    for (const auto& rec : j.at("instances")) layout.instances.push_back(instance_from_json(rec));
    return layout;
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::InvalidLayout, std::string("malformed layout record: ") + e.what());
  }
}

std::string number_word(int n) {
  static const char* words[] = {"zero", "one", "two", "three", "four", "five",
                                "six",  "seven", "eight", "nine", "ten"};
  if (n >= 0 && n <= 10) return words[n];
  return std::to_string(n);
}

std::string pluralize(const std::string& noun) {
  static const std::map<std::string, std::string> irregular = {
      {"person", "people"}, {"child", "children"}, {"man", "men"},     {"woman", "women"},
      {"sheep", "sheep"},   {"fish", "fish"},      {"bus", "buses"},   {"mouse", "mice"},
      {"goose", "geese"},   {"aircraft", "aircraft"}};
  if (auto it = irregular.find(noun); it != irregular.end()) return it->second;
  return noun + "s";
}

namespace {

struct InstanceFacts {
  const Instance* inst;
  bool central;
  OrientationAxis axis;
  BlockLabel block;
};

template <typename Key>
std::vector<std::pair<Key, int>> count_sorted(const std::vector<Key>& keys) {
  std::map<Key, int> counts;
  for (const Key& k : keys) ++counts[k];
  std::vector<std::pair<Key, int>> out(counts.begin(), counts.end());
  std::stable_sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  return out;
}

CaptionSentence object_sentence(const std::string& cls, const std::vector<const InstanceFacts*>& members,
                                bool central) {
  CaptionSentence s;
  s.kind = CaptionSentence::Kind::Objects;
  s.class_name = cls;
  s.count = static_cast<int>(members.size());
  s.central = central;

  std::vector<OrientationAxis> axes;
  std::vector<BlockLabel> blocks;
  for (const InstanceFacts* f : members) {
    axes.push_back(f->axis);
    blocks.push_back(f->block);
  }
  s.orientations = count_sorted(axes);
  for (const auto& [label, n] : count_sorted(blocks)) s.positions.push_back(label);

  std::ostringstream out;
  if (s.count == 1) {
    out << "There is one " << cls;
  } else {
    out << "There are " << number_word(s.count) << " " << pluralize(cls);
  }
  if (s.orientations.size() == 1) {
    out << " towards the " << to_string(s.orientations.front().first) << " direction";
  } else {
    for (const auto& [axis, n] : s.orientations) {
      out << ", " << number_word(n) << " towards the " << to_string(axis) << " direction";
    }
  }
  if (central) {
    out << " in the center of the image.";
  } else {
    out << " in the ";
    for (std::size_t i = 0; i < s.positions.size(); ++i) {
      if (i > 0) out << " and ";
      out << to_string(s.positions[i]);
    }
    out << " of the image.";
  }
  s.text = out.str();
  return s;
}

}  // namespace

Caption build_caption(const Layout& layout, const CaptionOptions& options) {
  validate_layout(layout, std::max<int>(kDefaultMaxObjects, static_cast<int>(layout.instances.size())));
  const RegionGrid grid(layout.image_size, options.grid_k);

  std::vector<InstanceFacts> facts;
  for (const Instance& inst : layout.instances) {
    const int bx = grid.block_index(inst.box.cx);
    const int by = grid.block_index(inst.box.cy);
    facts.push_back({&inst, grid.is_central(bx, by), quantize_orientation(inst.box.theta), grid.label(bx, by)});
  }

  Caption caption;
  CaptionSentence scene;
  scene.kind = CaptionSentence::Kind::Scene;
  scene.class_name = layout.scene_class;
  scene.text = layout.scene_class.empty() ? "This is an aerial image."
                                          : "This is an aerial image of " + layout.scene_class + ".";
  caption.sentences.push_back(scene);

  for (bool central : {true, false}) {
    std::map<std::string, std::vector<const InstanceFacts*>> by_class;
    for (const InstanceFacts& f : facts) {
      if (f.central == central) by_class[f.inst->label].push_back(&f);
    }
    std::vector<std::pair<std::string, std::vector<const InstanceFacts*>>> groups(by_class.begin(), by_class.end());
    // map order gives the lexicographic tie-break
    std::stable_sort(groups.begin(), groups.end(),
                     [](const auto& a, const auto& b) { return a.second.size() > b.second.size(); });
    for (const auto& [cls, members] : groups) {
      if (static_cast<int>(caption.sentences.size()) >= options.max_sentences) break;
      caption.sentences.push_back(object_sentence(cls, members, central));
    }
  }

  for (std::size_t i = 0; i < caption.sentences.size(); ++i) {
    if (i > 0) caption.text += " ";
    caption.text += caption.sentences[i].text;
  }
  return caption;
}

std::vector<std::string> tokenize_words(const std::string& text) {
  std::vector<std::string> words;
  std::string cur;
  for (unsigned char ch : text) {
    if (std::isalnum(ch)) {
      cur.push_back(static_cast<char>(std::tolower(ch)));
    } else if (!cur.empty()) {
      words.push_back(cur);
      cur.clear();
    }
  }
  if (!cur.empty()) words.push_back(cur);
  return words;
}

double bag_of_words_cosine(const Caption& a, const Caption& b) {
  static const std::set<std::string> stopwords = {"a",     "an",  "and", "are",       "at",    "aerial",
                                                  "image", "in",  "is",  "of",        "the",   "there",
                                                  "this",  "to",  "towards", "direction", "one"};
  auto bag = [&](const Caption& c) {
    std::map<std::string, double> counts;
    for (const std::string& w : tokenize_words(c.text)) {
      if (!stopwords.count(w)) counts[w] += 1.0;
    }
    return counts;
  };
  const auto ba = bag(a);
  const auto bb = bag(b);
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (const auto& [w, v] : ba) {
    na += v * v;
    if (auto it = bb.find(w); it != bb.end()) dot += v * it->second;
  }
  for (const auto& [w, v] : bb) nb += v * v;
  if (na == 0.0 || nb == 0.0) return 0.0;
  return dot / std::sqrt(na * nb);
}

std::vector<CorpusEntry> retrieve_examples(const Caption& query, const std::vector<CorpusEntry>& corpus, int k,
                                           const CaptionSimilarity& similarity) {
  if (k < 0 || static_cast<int>(corpus.size()) < k) {
    throw Error(Errc::CorpusTooSmall, "corpus has " + std::to_string(corpus.size()) + " entries, need " +
                                          std::to_string(k));
  }
  std::vector<std::pair<double, std::size_t>> scored;
  scored.reserve(corpus.size());
  for (std::size_t i = 0; i < corpus.size(); ++i) scored.emplace_back(similarity(query, corpus[i].caption), i);
  std::stable_sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
  std::vector<CorpusEntry> out;
  for (int i = 0; i < k; ++i) out.push_back(corpus[scored[i].second]);
  return out;
}

namespace {

const char* const kInstruction =
    "You are an intelligent research assistant. I will provide the caption of an aerial image captured by a "
    "satellite. Your task is to:\n"
    "(a) Identify the object categories mentioned in the caption.\n"
    "(b) Count the number of instances for each category.\n"
    "(c) Generate an oriented bounding box (OBB) for each instance in the format: (object name, [center x, "
    "center y, width, height, rotation angle]).";

const char* const kRole =
    "Validate that all bounding boxes meet the width > height and boundary conditions. If necessary, make "
    "reasonable assumptions for object layout based on common aerial imagery.\n"
    "Please refer to the example below for the desired output format.";

std::string constraints_text(int size) {
  const std::string s = std::to_string(size);
  std::ostringstream out;
  out << "- Image size is " << s << "x" << s << ", with the top-left at [0, 0] and the bottom-right at [" << s
      << ", " << s << "].\n"
      << "- The width must always be greater than the height.\n"
      << "- The rotation angle is the angle between the longer edge (width) and the positive x-axis, measured in "
         "degrees within [-90, 90].\n"
      << "- Bounding boxes must stay entirely within the image boundaries.\n"
      << "- Do not include objects not mentioned in the caption.";
  return out.str();
}

std::string format_number(double v) {
  const double r = std::round(v);
  if (std::abs(v - r) < 1e-9 && std::abs(r) < 1e15) return std::to_string(static_cast<long long>(r));
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

std::string render_planner_layout(const Layout& layout, int planner_size) {
  const double s = static_cast<double>(planner_size) / layout.image_size;
  std::ostringstream out;
  for (const Instance& inst : layout.instances) {
    const OrientedBox& b = inst.box;
    const long long deg = std::llround(rad_to_deg(b.theta));
    out << inst.label << ": [" << format_number(b.cx * s) << ", " << format_number(b.cy * s) << ", "
        << format_number(b.w * s) << ", " << format_number(b.h * s) << ", " << deg << "]\n";
  }
  return out.str();
}

PlannerPrompt build_planner_prompt(const Caption& caption, const std::vector<CorpusEntry>& examples) {
  if (examples.size() != static_cast<std::size_t>(kPlannerExamples)) {
    throw Error(Errc::WrongExampleCount,
                "expected " + std::to_string(kPlannerExamples) + " examples, got " + std::to_string(examples.size()));
  }
  PlannerPrompt prompt;
  prompt.instruction = kInstruction;
  prompt.constraints = constraints_text(kPlannerImageSize);
  prompt.role = kRole;
  for (const CorpusEntry& e : examples) {
    prompt.examples.emplace_back(e.caption.text, render_planner_layout(e.layout));
  }
  prompt.query = caption.text;
  return prompt;
}

std::string PlannerPrompt::render() const {
  std::ostringstream out;
  out << instruction << "\n\nConstraints:\n" << constraints << "\n\n" << role << "\n";
  for (std::size_t i = 0; i < examples.size(); ++i) {
    out << "\nExample #" << (i + 1) << ":\n<Input Caption>\n"
        << examples[i].first << "\n<Output Bounding Boxes>\n"
        << examples[i].second;
  }
  out << "\nQuery:\n<Input Caption>\n" << query << "\n<Output Bounding Boxes>\n";
  return out.str();
}

namespace {

std::string trim(const std::string& s) {
  std::size_t b = 0;
  std::size_t e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

[[noreturn]] void fail(Errc code, int line, const std::string& msg) {
  throw Error(code, "line " + std::to_string(line) + ": " + msg);
}

bool parse_real(const std::string& token, double& out) {
  const std::string t = trim(token);
  if (t.empty()) return false;
  char* end = nullptr;
  out = std::strtod(t.c_str(), &end);
  return end == t.c_str() + t.size() && std::isfinite(out);
}

}  // namespace

Layout parse_planner_response(const std::string& text, int image_size) {
  Layout layout;
  layout.image_size = image_size;
  std::istringstream in(text);
  std::string raw;
  int line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const std::string line = trim(raw);
    if (line.empty()) continue;

    const std::size_t colon = line.find(':');
    const std::size_t open = line.find('[');
    if (colon == std::string::npos || open == std::string::npos || open < colon || line.back() != ']') {
      fail(Errc::ParseError, line_no, "expected '<class>: [cx, cy, w, h, angle]'");
    }
    const std::string label = trim(line.substr(0, colon));
    if (label.empty() || label.find_first_of("[]") != std::string::npos) {
      fail(Errc::ParseError, line_no, "missing class name");
    }
    if (!trim(line.substr(colon + 1, open - colon - 1)).empty()) {
      fail(Errc::ParseError, line_no, "unexpected text before '['");
    }
    const std::string body = line.substr(open + 1, line.size() - open - 2);
    if (body.find_first_of("[]") != std::string::npos) fail(Errc::ParseError, line_no, "nested brackets");

    std::vector<double> values;
    std::size_t start = 0;
    while (true) {
      const std::size_t comma = body.find(',', start);
      double v = 0.0;
      if (!parse_real(body.substr(start, comma == std::string::npos ? std::string::npos : comma - start), v)) {
        fail(Errc::ParseError, line_no, "malformed number");
      }
      values.push_back(v);
      if (comma == std::string::npos) break;
      start = comma + 1;
    }
    if (values.size() != 5) fail(Errc::ParseError, line_no, "expected 5 numbers, got " + std::to_string(values.size()));

    const double cx = values[0], cy = values[1], w = values[2], h = values[3], deg = values[4];
    if (!(w > 0.0 && h > 0.0)) fail(Errc::ParseError, line_no, "extents must be positive");
    if (!(w > h)) fail(Errc::WidthNotGreaterThanHeight, line_no, "width must be greater than height");
    if (!(deg >= -90.0 && deg <= 90.0)) fail(Errc::AngleOutOfRange, line_no, "angle must lie in [-90, 90]");

    Instance inst;
    inst.label = label;
    inst.box = canonicalize_obb(cx, cy, w, h, deg_to_rad(deg));
    constexpr double tol = 1e-9;
    for (const Eigen::Vector2d& p : obb_corners(inst.box)) {
      if (p.x() < -tol || p.y() < -tol || p.x() > image_size + tol || p.y() > image_size + tol) {
        fail(Errc::BoxOutOfBounds, line_no, "box for '" + label + "' leaves the image");
      }
    }
    layout.instances.push_back(inst);
  }
  if (layout.instances.empty()) throw Error(Errc::EmptyResponse, "planner response contains no boxes");
  return layout;
}

Layout plan_layout(const Caption& caption, const std::vector<CorpusEntry>& corpus, PlannerTransport& transport,
                   int image_size) {
  const auto examples = retrieve_examples(caption, corpus, kPlannerExamples);
  const PlannerPrompt prompt = build_planner_prompt(caption, examples);
  Layout planned = parse_planner_response(transport.complete(prompt.render()), kPlannerImageSize);
  for (const CaptionSentence& s : caption.sentences) {
    if (s.kind == CaptionSentence::Kind::Scene) planned.scene_class = s.class_name;
  }
  return image_size == kPlannerImageSize ? planned : rescale_layout(planned, image_size);
}

}  // namespace l2i
