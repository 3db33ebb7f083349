#pragma once

// Instruction-record builders for the eight task formats, caption
// validation, and the 384-pixel tiling plan.

#include <algorithm>
#include <cstdint>
#include <map>
#include <optional>
#include <regex>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "rsvl/error.hpp"
#include "rsvl/grammar.hpp"

namespace rsvl {

enum class Task {
  scheduling,
  decision,
  decomposition,
  relation,
  detection,
  captioning,
  classification,
  vqa,
};

inline constexpr Task kAllTasks[] = {Task::scheduling,     Task::decision,  Task::decomposition,
                                     Task::relation,       Task::detection, Task::captioning,
                                     Task::classification, Task::vqa};

inline std::string_view to_string(Task t) noexcept {
  switch (t) {
    case Task::scheduling: return "scheduling";
    case Task::decision: return "decision";
    case Task::decomposition: return "decomposition";
    case Task::relation: return "relation";
    case Task::detection: return "detection";
    case Task::captioning: return "captioning";
    case Task::classification: return "classification";
    case Task::vqa: return "vqa";
  }
  return "";
}

inline std::optional<Task> parse_task(std::string_view s) noexcept {
  for (auto t : kAllTasks) {
    if (to_string(t) == s) return t;
  }
  return std::nullopt;
}

// The task token a prompt must open with, if the task defines one.
inline std::optional<TaskKind> task_token(Task t) noexcept {
  switch (t) {
    case Task::scheduling: return TaskKind::navigation;
    case Task::decision: return TaskKind::decision;
    case Task::decomposition: return TaskKind::decomposition;
    case Task::relation: return TaskKind::reasoning;
    default: return std::nullopt;
  }
}

struct ObjectAnnotation {
  std::string category;
  PixelBox px_box;
  std::optional<std::string> shape;
};

struct ImageAnnotation {
  std::string image_id;
  Modality modality = Modality::opt;
  std::int64_t width = 1;
  std::int64_t height = 1;
  std::vector<ObjectAnnotation> objects;
  std::optional<std::string> scene_label;
};

struct RelationAnnotation {
  ObjectAnnotation subject;
  ObjectAnnotation object;
  std::string relation;
};

struct SceneRecord {
  std::string image_id;
  Modality modality = Modality::opt;
  std::string description;
  std::string landmark_name;
  Pos3 landmark_pos;
  std::string target_name;
  Pos3 target_pos;
  std::vector<std::string> surroundings;
  Pose6 start_pose;
  std::vector<Pose6> trajectory;
};

struct InstructionRecord {
  std::vector<std::string> image_refs;
  Modality modality = Modality::opt;
  Task task = Task::detection;
  std::string prompt;
  std::string response;

  bool operator==(const InstructionRecord&) const = default;
};

namespace prompts {
inline constexpr std::string_view kDetection =
    "Detect all objects shown in the remote sensing image and describe using HBBs.";
inline constexpr std::string_view kCaption = "Please provide a short depiction of the picture:";
inline constexpr std::string_view kClassification =
    "Please output the scene corresponding to the image:";
}  // namespace prompts

// Accumulates markup nodes and emits them canonically.
class MarkupWriter {
 public:
  MarkupWriter& task(TaskKind k) {
    nodes_.push_back(node::Task{k});
    return *this;
  }
  MarkupWriter& text(std::string_view s) {
    detail::append_text(nodes_, s);
    return *this;
  }
  MarkupWriter& ref(std::string name) {
    nodes_.push_back(node::Ref{std::move(name)});
    return *this;
  }
  MarkupWriter& rel(std::string label) {
    nodes_.push_back(node::Rel{std::move(label)});
    return *this;
  }
  MarkupWriter& det(std::vector<Box> boxes) {
    nodes_.push_back(node::Det{std::move(boxes)});
    return *this;
  }
  MarkupWriter& pos(const Pos3& p) {
    nodes_.push_back(node::Pos{p});
    return *this;
  }
  MarkupWriter& poses(std::vector<Pose6> p) {
    nodes_.push_back(node::PoseSeq{std::move(p)});
    return *this;
  }
  std::string str() const { return emit(nodes_); }

 private:
  std::vector<MarkupNode> nodes_;
};

namespace detail {

struct CategoryGroup {
  std::string category;
  std::vector<const ObjectAnnotation*> members;
  // Shared by every member, otherwise empty.
  std::optional<std::string> shape;
};

// Groups objects by category in order of first appearance.
inline std::vector<CategoryGroup> group_by_category(const std::vector<ObjectAnnotation>& objs) {
  std::vector<CategoryGroup> groups;
  for (const auto& o : objs) {
    auto it = std::find_if(groups.begin(), groups.end(),
                           [&](const auto& g) { return g.category == o.category; });
    if (it == groups.end()) {
      groups.push_back({o.category, {}, {}});
      it = std::prev(groups.end());
    }
    it->members.push_back(&o);
  }
  for (auto& g : groups) {
    g.shape = g.members.front()->shape;
    for (const auto* m : g.members) {
      if (m->shape != g.shape) {
        g.shape.reset();
        break;
      }
    }
  }
  return groups;
}

inline std::string pluralize(const std::string& noun, std::size_t count) {
  return count == 1 ? noun : noun + "s";
}

inline std::string_view is_are(std::size_t count) { return count == 1 ? "is" : "are"; }

inline std::string strip_period(std::string_view s) {
  while (!s.empty() && s.back() == '.') s.remove_suffix(1);
  return std::string(s);
}

inline void require_category(const ObjectAnnotation& o) {
  if (o.category.empty()) throw Error(ErrorKind::InvalidArgument, "empty object category");
}

inline Box box_of(const ObjectAnnotation& o, const ImageAnnotation& img) {
  require_category(o);
  return normalize_box(o.px_box, img.width, img.height);
}

inline std::string pose_text(const Pose6& p) {
  std::string s = "[";
  for (std::size_t i = 0; i < 6; ++i) {
    if (i) s += ',';
    s += p.v[i].text();
  }
  return s + "]";
}

}  // namespace detail

inline InstructionRecord build_detection_record(const ImageAnnotation& ann) {
  if (ann.objects.empty()) throw Error(ErrorKind::EmptyAnnotation, ann.image_id);
  MarkupWriter w;
  w.text("There " + std::string(detail::is_are(ann.objects.size())) + " ");
  auto groups = detail::group_by_category(ann.objects);
  for (std::size_t g = 0; g < groups.size(); ++g) {
    if (g) w.text(", ");
    std::vector<Box> boxes;
    for (const auto* o : groups[g].members) boxes.push_back(detail::box_of(*o, ann));
    w.text(std::to_string(boxes.size()) + " ").ref(groups[g].category).det(std::move(boxes));
  }
  w.text(" in the image.");
  return {{ann.image_id}, ann.modality, Task::detection, std::string(prompts::kDetection),
          w.str()};
}

// One sentence per category:
//   "There are 2 aircrafts in the image, which are small in size."
// Object-free images fall back to "The image shows a <scene> scene."
inline std::string caption_text(const ImageAnnotation& ann) {
  if (ann.objects.empty()) {
    if (!ann.scene_label || ann.scene_label->empty()) {
      throw Error(ErrorKind::EmptyAnnotation, ann.image_id);
    }
    return "The image shows a " + *ann.scene_label + " scene.";
  }
  std::string out;
  for (const auto& g : detail::group_by_category(ann.objects)) {
    detail::require_category(*g.members.front());
    const auto n = g.members.size();
    if (!out.empty()) out += ' ';
    out += "There " + std::string(detail::is_are(n)) + " " + std::to_string(n) + " " +
           detail::pluralize(g.category, n) + " in the image";
    if (g.shape && !g.shape->empty()) {
      out += ", which " + std::string(detail::is_are(n)) + " " + *g.shape + " in size";
    }
    out += '.';
  }
  return out;
}

inline InstructionRecord build_caption_record(const ImageAnnotation& ann) {
  auto text = caption_text(ann);
  detail::check_free_text(text, "caption");
  return {{ann.image_id}, ann.modality, Task::captioning, std::string(prompts::kCaption),
          std::move(text)};
}

inline InstructionRecord build_classification_record(const ImageAnnotation& ann) {
  if (!ann.scene_label || detail::strip_period(*ann.scene_label).empty()) {
    throw Error(ErrorKind::EmptyLabel, ann.image_id);
  }
  detail::check_free_text(*ann.scene_label, "label");
  return {{ann.image_id}, ann.modality, Task::classification,
          std::string(prompts::kClassification), detail::strip_period(*ann.scene_label) + "."};
}

inline InstructionRecord build_vqa_record(const std::string& question, const std::string& answer,
                                          const std::string& image_id, Modality modality) {
  if (question.empty()) throw Error(ErrorKind::EmptyLabel, "question");
  if (detail::strip_period(answer).empty()) throw Error(ErrorKind::EmptyLabel, "answer");
  detail::check_free_text(question, "question");
  detail::check_free_text(answer, "answer");
  return {{image_id}, modality, Task::vqa, question, detail::strip_period(answer) + "."};
}

inline InstructionRecord build_relation_record(const RelationAnnotation& rel,
                                               const ImageAnnotation& img) {
  if (rel.relation.empty()) throw Error(ErrorKind::EmptyLabel, "relation");
  const Box sb = detail::box_of(rel.subject, img);
  const Box ob = detail::box_of(rel.object, img);
  MarkupWriter p;
  p.task(TaskKind::reasoning)
      .text("What is the relationship between ")
      .ref(rel.subject.category)
      .det({sb})
      .text(" and the object in ")
      .det({ob})
      .text(" in the image? And output their categories.");
  MarkupWriter r;
  const auto& s = rel.subject.category;
  const auto& o = rel.object.category;
  r.text("subject: " + s + ", object: " + o + ", the " + s + " is ")
      .rel(rel.relation)
      .text(" the " + o + ".");
  return {{img.image_id}, img.modality, Task::relation, p.str(), r.str()};
}

enum class Direction9 {
  upper_left,
  upper,
  upper_right,
  left,
  center,
  right,
  lower_left,
  lower,
  lower_right,
};

inline std::string_view to_string(Direction9 d) noexcept {
  switch (d) {
    case Direction9::upper_left: return "upper left";
    case Direction9::upper: return "upper";
    case Direction9::upper_right: return "upper right";
    case Direction9::left: return "left";
    case Direction9::center: return "center";
    case Direction9::right: return "right";
    case Direction9::lower_left: return "lower left";
    case Direction9::lower: return "lower";
    case Direction9::lower_right: return "lower right";
  }
  return "";
}

// 3x3 grid over [0, 999]^2 with cuts at 333 and 666, applied to the box
// centre. Cells are half-open: [0, 333), [333, 666), [666, 999].
inline Direction9 region_direction(const Box& box) noexcept {
  auto cell = [](int lo, int hi) {
    const int twice_center = lo + hi;
    if (twice_center < 2 * 333) return 0;
    if (twice_center < 2 * 666) return 1;
    return 2;
  };
  const int col = cell(box.x1, box.x2);
  const int row = cell(box.y1, box.y2);
  return static_cast<Direction9>(row * 3 + col);
}

namespace detail {
inline bool center_inside(const Box& b, const Box& region) noexcept {
  const int cx2 = b.x1 + b.x2, cy2 = b.y1 + b.y2;
  return cx2 >= 2 * region.x1 && cx2 <= 2 * region.x2 && cy2 >= 2 * region.y1 &&
         cy2 <= 2 * region.y2;
}
}  // namespace detail

inline InstructionRecord build_decomposition_record(const Box& region, const ImageAnnotation& ann,
                                                    const std::vector<RelationAnnotation>& rels) {
  if (!region.valid()) throw Error(ErrorKind::InvertedBox, "decomposition region");
  MarkupWriter p;
  p.task(TaskKind::decomposition).text("Analyze the region ").det({region}).text(" of the image.");

  std::vector<ObjectAnnotation> inside;
  for (const auto& o : ann.objects) {
    if (detail::center_inside(detail::box_of(o, ann), region)) inside.push_back(o);
  }
  auto groups = detail::group_by_category(inside);

  MarkupWriter r;
  r.text("Step1: Locate the target area: The target area locates at the " +
         std::string(to_string(region_direction(region))) + " of the image.\n");
  // Counts keep the template's plural wording for every N.
  r.text("Step2: Perform object detection: There are " + std::to_string(inside.size()) +
         " entities in the target area");
  if (groups.empty()) {
    r.text(".\n");
  } else {
    r.text(", including: ");
    for (std::size_t g = 0; g < groups.size(); ++g) {
      if (g) r.text(", ");
      std::vector<Box> boxes;
      for (const auto* o : groups[g].members) boxes.push_back(detail::box_of(*o, ann));
      r.text(std::to_string(boxes.size()) + " ").ref(groups[g].category).det(std::move(boxes));
    }
    r.text(".\n");
  }

  std::vector<const RelationAnnotation*> kept;
  for (const auto& rel : rels) {
    if (rel.relation.empty()) throw Error(ErrorKind::EmptyLabel, "relation");
    if (detail::center_inside(detail::box_of(rel.subject, ann), region) &&
        detail::center_inside(detail::box_of(rel.object, ann), region)) {
      kept.push_back(&rel);
    }
  }
  r.text("Step3: Perform relation analysis: There are " + std::to_string(kept.size()) +
         " relations found");
  if (kept.empty()) {
    r.text(".\n");
  } else {
    r.text(": ");
    for (std::size_t k = 0; k < kept.size(); ++k) {
      const auto& rel = *kept[k];
      if (k) r.text(" ");
      r.ref(rel.subject.category)
          .det({detail::box_of(rel.subject, ann)})
          .text(" is ")
          .rel(rel.relation)
          .text(" the ")
          .ref(rel.object.category)
          .det({detail::box_of(rel.object, ann)})
          .text(";");
    }
    r.text("\n");
  }
  r.text("Step4: Perform context summary: " + std::to_string(groups.size()) +
         " object types with " + std::to_string(kept.size()) + " interactions.");
  return {{ann.image_id}, ann.modality, Task::decomposition, p.str(), r.str()};
}

// Re-derives the Step2/Step3 counts of a decomposition response and checks
// them against its own Step2 totals and Step4 summary. Returns one message
// per inconsistency.
inline std::vector<std::string> check_decomposition_counts(const MarkupDoc& response) {
  std::vector<std::string> problems;
  int step = 0;
  std::set<std::string> categories;
  long per_category_sum = 0;
  long rel_count = 0;
  std::optional<long> entities, relations_claimed, types_claimed, interactions_claimed;
  static const std::regex kEntities(R"(There (?:is|are) (\d+) entities)");
  static const std::regex kRelations(R"(There (?:is|are) (\d+) relations found)");
  static const std::regex kSummary(R"((\d+) object types with (\d+) interactions)");
  static const std::regex kTrailingCount(R"((\d+) $)");
  std::string prev_text;
  for (const auto& n : response.nodes) {
    if (auto* t = std::get_if<node::Text>(&n)) {
      const auto& s = t->value;
      for (int k = 4; k >= 1; --k) {
        if (s.find("Step" + std::to_string(k) + ":") != std::string::npos) {
          step = std::max(step, k);
          break;
        }
      }
      std::smatch m;
      if (std::regex_search(s, m, kEntities)) entities = std::stol(m[1]);
      if (std::regex_search(s, m, kRelations)) relations_claimed = std::stol(m[1]);
      if (std::regex_search(s, m, kSummary)) {
        types_claimed = std::stol(m[1]);
        interactions_claimed = std::stol(m[2]);
      }
      prev_text = s;
    } else if (auto* r = std::get_if<node::Ref>(&n); r && step == 2) {
      categories.insert(r->name);
      std::smatch m;
      if (std::regex_search(prev_text, m, kTrailingCount)) per_category_sum += std::stol(m[1]);
      prev_text.clear();
    } else if (std::holds_alternative<node::Rel>(n) && step == 3) {
      ++rel_count;
    }
  }
  if (step < 4) problems.push_back("missing Step1-Step4 structure");
  if (!types_claimed || !interactions_claimed) {
    problems.push_back("missing Step4 summary");
    return problems;
  }
  if (*types_claimed != static_cast<long>(categories.size())) {
    problems.push_back("Step4 claims " + std::to_string(*types_claimed) + " object types, Step2 has " +
                       std::to_string(categories.size()));
  }
  if (*interactions_claimed != rel_count) {
    problems.push_back("Step4 claims " + std::to_string(*interactions_claimed) +
                       " interactions, Step3 has " + std::to_string(rel_count));
  }
  if (entities && *entities != per_category_sum) {
    problems.push_back("Step2 claims " + std::to_string(*entities) + " entities, counts sum to " +
                       std::to_string(per_category_sum));
  }
  if (relations_claimed && *relations_claimed != rel_count) {
    problems.push_back("Step3 claims " + std::to_string(*relations_claimed) +
                       " relations, lists " + std::to_string(rel_count));
  }
  return problems;
}

// Optional mapping of scene coordinates onto [0, 999], per axis.
struct SceneBounds {
  std::array<double, 3> lo{};
  std::array<double, 3> hi{};
};

namespace detail {
inline Pos3 scene_pos(const Pos3& p, const std::optional<SceneBounds>& bounds) {
  if (!bounds) return p;
  auto n = [&](const Decimal& d, int axis) {
    return Decimal(normalize_scalar(d.value(), bounds->lo[axis], bounds->hi[axis]));
  };
  return Pos3{n(p.x, 0), n(p.y, 1), n(p.z, 2)};
}

inline Pose6 scene_pose(const Pose6& p, const std::optional<SceneBounds>& bounds) {
  if (!bounds) return p;
  Pose6 out = p;
  for (int axis = 0; axis < 3; ++axis) {
    out.v[axis] = Decimal(normalize_scalar(p.v[axis].value(), bounds->lo[axis], bounds->hi[axis]));
  }
  return out;
}
}  // namespace detail

inline InstructionRecord build_scheduling_record(const SceneRecord& scene,
                                                 const std::optional<SceneBounds>& bounds = {}) {
  if (scene.trajectory.empty()) throw Error(ErrorKind::InvariantViolation, "empty trajectory");
  if (!(scene.trajectory.front() == scene.start_pose)) {
    throw Error(ErrorKind::InvariantViolation, "trajectory must start at the start pose");
  }
  std::vector<Pose6> traj;
  for (const auto& p : scene.trajectory) traj.push_back(detail::scene_pose(p, bounds));

  MarkupWriter p;
  p.task(TaskKind::navigation)
      .text(
          "You need to formulate a flight plan for a quadcopter based on this map, enabling it to "
          "fly over all the buildings and reach the destination. The target location is described "
          "as follows: " +
          detail::strip_period(scene.description) +
          ". The 3D coordinates of the landmark are as follows: ")
      .ref(scene.landmark_name)
      .pos(detail::scene_pos(scene.landmark_pos, bounds))
      .text(". Your starting 3D coordinates and orientation angles are ")
      .poses({traj.front()})
      .text(
          ". You need to provide a series of 3D waypoints and attitude angles for the quadcopter "
          "to reach the target location.");

  std::string surroundings;
  for (const auto& s : scene.surroundings) {
    if (!surroundings.empty()) surroundings += ", ";
    surroundings += s;
  }
  if (surroundings.empty()) surroundings = "none";

  MarkupWriter r;
  r.text("Step 1: Extract basic information as follows: Target: " + scene.target_name +
         ". Landmarks: " + scene.landmark_name + ". Surroundings: " + surroundings + ".\n")
      .text("Step 2: Get landmarks position: ")
      .ref(scene.landmark_name)
      .pos(detail::scene_pos(scene.landmark_pos, bounds))
      .text(".\nStep 3: Get target position: ")
      .ref(scene.target_name)
      .pos(detail::scene_pos(scene.target_pos, bounds))
      .text(".\nStep 4: Trajectory: ")
      .poses(std::move(traj))
      .text(".");
  return {{scene.image_id}, scene.modality, Task::scheduling, p.str(), r.str()};
}

inline InstructionRecord build_decision_record(const Pose6& start, const Pose6& goal,
                                               const std::vector<std::string>& steps,
                                               std::vector<std::string> image_refs = {},
                                               Modality modality = Modality::opt) {
  if (steps.empty()) throw Error(ErrorKind::EmptySteps, "decision plan");
  MarkupWriter p;
  p.task(TaskKind::decision)
      .text("How to fly from position ")
      .poses({start})
      .text(" to position ")
      .poses({goal})
      .text(", and provide a detailed plan.");
  std::string resp;
  for (std::size_t i = 0; i < steps.size(); ++i) {
    auto s = detail::strip_period(steps[i]);
    if (s.empty()) throw Error(ErrorKind::EmptySteps, "empty step " + std::to_string(i + 1));
    if (i) resp += '\n';
    resp += "Step" + std::to_string(i + 1) + ": " + s + ".";
  }
  detail::check_free_text(resp, "step");
  return {std::move(image_refs), modality, Task::decision, p.str(), std::move(resp)};
}

struct TilingPlan {
  int m = 1;  // rows of 384-pixel tiles
  int n = 1;  // columns
  int tile_count = 1;
  bool includes_global_thumbnail = true;

  bool operator==(const TilingPlan&) const = default;
};

inline constexpr int kTileSize = 384;
inline constexpr int kMaxTiles = 9;

// Smallest multiples of 384 covering the image, then the larger count is
// decremented (rows on ties) until the 9-tile budget holds.
inline TilingPlan plan_tiling(std::int64_t height, std::int64_t width) {
  check_extent(width, height);
  auto ceil_div = [](std::int64_t a, std::int64_t b) { return (a + b - 1) / b; };
  std::int64_t m = ceil_div(height, kTileSize);
  std::int64_t n = ceil_div(width, kTileSize);
  while (m * n > kMaxTiles) {
    if (m >= n) {
      --m;
    } else {
      --n;
    }
  }
  return TilingPlan{static_cast<int>(m), static_cast<int>(n), static_cast<int>(m * n), true};
}

// ---------------------------------------------------------------------------
// Caption validation

// Flat surface-form -> canonical table covering categories and shapes.
class SynonymTable {
 public:
  SynonymTable() = default;
  explicit SynonymTable(std::map<std::string, std::string> entries) {
    for (auto& [k, v] : entries) add(k, v);
  }

  void add(std::string_view surface, std::string_view canonical) {
    map_[lower(surface)].insert(lower(canonical));
  }

  // True when the surface form may denote `target`. The "+s" plural used by
  // the caption templates is accepted both directly and through the table.
  bool matches(std::string_view surface, std::string_view target) const {
    const auto s = lower(surface);
    const auto t = lower(target);
    if (s == t || s == t + "s") return true;
    if (hits(s, t)) return true;
    if (s.size() > 1 && s.back() == 's' && hits(s.substr(0, s.size() - 1), t)) return true;
    return false;
  }

  static std::string lower(std::string_view s) {
    std::string out(s);
    for (auto& c : out) {
      if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
    }
    return out;
  }

 private:
  bool hits(const std::string& s, const std::string& t) const {
    auto it = map_.find(s);
    return it != map_.end() && it->second.count(t);
  }

  std::map<std::string, std::set<std::string>> map_;
};

// score(caption, image_id); the production scorer is an external image-text
// model, so only the interface and a lookup-table implementation live here.
class SimilarityScorer {
 public:
  virtual ~SimilarityScorer() = default;
  virtual double score(std::string_view caption, std::string_view image_id) const = 0;
};

class TableScorer final : public SimilarityScorer {
 public:
  explicit TableScorer(std::map<std::string, double> by_image, double fallback = 0.0)
      : by_image_(std::move(by_image)), fallback_(fallback) {}

  double score(std::string_view, std::string_view image_id) const override {
    auto it = by_image_.find(std::string(image_id));
    return it == by_image_.end() ? fallback_ : it->second;
  }

 private:
  std::map<std::string, double> by_image_;
  double fallback_;
};

inline constexpr double kSimilarityFraction = 0.8;

enum class CaptionCheck { count, shape, category, similarity };

inline std::string_view to_string(CaptionCheck c) noexcept {
  switch (c) {
    case CaptionCheck::count: return "count";
    case CaptionCheck::shape: return "shape";
    case CaptionCheck::category: return "category";
    case CaptionCheck::similarity: return "similarity";
  }
  return "";
}

struct FailedCheck {
  CaptionCheck check;
  std::string detail;
};

struct ValidationResult {
  bool pass = true;
  std::vector<FailedCheck> failed;

  bool failed_on(CaptionCheck c) const {
    return std::any_of(failed.begin(), failed.end(), [&](const auto& f) { return f.check == c; });
  }
};

namespace detail {

inline std::optional<long> parse_count(const std::string& word) {
  static const std::map<std::string, long> kWords = {
      {"no", 0},  {"zero", 0}, {"one", 1},   {"two", 2},   {"three", 3}, {"four", 4},
      {"five", 5}, {"six", 6},  {"seven", 7}, {"eight", 8}, {"nine", 9},  {"ten", 10}};
  if (!word.empty() && std::all_of(word.begin(), word.end(), [](char c) {
        return c >= '0' && c <= '9';
      })) {
    if (word.size() > 9) return std::nullopt;
    return std::stol(word);
  }
  auto it = kWords.find(SynonymTable::lower(word));
  if (it == kWords.end()) return std::nullopt;
  return it->second;
}

}  // namespace detail

// Attribute gate plus optional similarity gate (score >= 0.8 * benchmark).
// Counts, categories and shapes stated in the caption have to agree with the
// annotation; synonyms only widen what agrees.
inline ValidationResult validate_caption(std::string_view caption, const ImageAnnotation& ann,
                                         const SynonymTable& synonyms,
                                         std::optional<double> score = std::nullopt,
                                         std::optional<double> benchmark = std::nullopt) {
  if (score && !(benchmark && *benchmark > 0.0)) {
    throw Error(ErrorKind::InvalidArgument, "similarity benchmark must be positive");
  }
  ValidationResult result;
  auto fail = [&](CaptionCheck c, std::string detail) {
    result.pass = false;
    result.failed.push_back({c, std::move(detail)});
  };

  static const std::regex kObjectClaim(
      R"((?:There|there) (?:is|are) (\w+) ([A-Za-z][A-Za-z \-]*?) in (?:the|this) (?:image|picture|scene)(?:, which (?:is|are) ([A-Za-z][A-Za-z \-]*?) in size)?[.])");
  static const std::regex kSceneClaim(R"((?:The|the) image shows an? ([A-Za-z][A-Za-z \-]*?) scene[.])");

  const std::string text(caption);
  const auto groups = detail::group_by_category(ann.objects);
  std::size_t claims = 0;

  for (auto it = std::sregex_iterator(text.begin(), text.end(), kObjectClaim);
       it != std::sregex_iterator(); ++it) {
    ++claims;
    const auto& m = *it;
    const auto count = detail::parse_count(m[1]);
    const std::string phrase = m[2];

    // Readings of the claim: the whole phrase as the category, and for
    // "2 small aircrafts" also a leading adjective as the shape.
    struct Reading {
      std::string category;
      std::optional<std::string> shape;
    };
    std::vector<Reading> readings{{phrase, m[3].matched ? std::optional(m[3].str()) : std::nullopt}};
    if (!m[3].matched) {
      if (auto sp = phrase.find(' '); sp != std::string::npos) {
        readings.push_back({phrase.substr(sp + 1), phrase.substr(0, sp)});
      }
    }

    // The claim stands if any reading agrees with any annotated group.
    bool any_category = false, any_count = false, any_all = false;
    std::size_t annotated = 0;
    for (const auto& rd : readings) {
      for (const auto& g : groups) {
        if (!synonyms.matches(rd.category, g.category)) continue;
        if (!any_category) annotated = g.members.size();
        any_category = true;
        const bool count_ok = count && *count == static_cast<long>(g.members.size());
        const bool shape_ok = !rd.shape || (g.shape && synonyms.matches(*rd.shape, *g.shape));
        any_count = any_count || count_ok;
        any_all = any_all || (count_ok && shape_ok);
      }
    }
    if (!any_category) {
      fail(CaptionCheck::category, "'" + phrase + "' not in annotation");
    } else if (!any_count) {
      fail(CaptionCheck::count, "'" + phrase + "' claimed " + std::string(m[1]) + ", annotated " +
                                    std::to_string(annotated));
    } else if (!any_all) {
      fail(CaptionCheck::shape, "'" + phrase + "' shape does not match");
    }
  }

  for (auto it = std::sregex_iterator(text.begin(), text.end(), kSceneClaim);
       it != std::sregex_iterator(); ++it) {
    ++claims;
    const std::string scene = (*it)[1];
    if (!ann.scene_label || !synonyms.matches(scene, *ann.scene_label)) {
      fail(CaptionCheck::category, "scene '" + scene + "' does not match the label");
    }
  }

  if (claims == 0) fail(CaptionCheck::category, "no object or scene claims found");

  if (score && *score < kSimilarityFraction * *benchmark) {
    fail(CaptionCheck::similarity, "score " + std::to_string(*score) + " below " +
                                       std::to_string(kSimilarityFraction * *benchmark));
  }
  return result;
}

}  // namespace rsvl
