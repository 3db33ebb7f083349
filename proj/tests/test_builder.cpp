#include <gtest/gtest.h>

#include <random>

#include "rsvl/builder.hpp"
#include "support.hpp"

using namespace rsvl;

namespace {

ObjectAnnotation obj(std::string cat, PixelBox b, std::optional<std::string> shape = std::nullopt) {
  return {std::move(cat), b, std::move(shape)};
}

ImageAnnotation image(std::vector<ObjectAnnotation> objs, std::int64_t w = 1000,
                      std::int64_t h = 1000) {
  ImageAnnotation a;
  a.image_id = "img";
  a.width = w;
  a.height = h;
  a.objects = std::move(objs);
  return a;
}

ImageAnnotation two_small_aircraft() {
  return image({obj("aircraft", {100, 100, 180, 170}, "small"),
                obj("aircraft", {600, 620, 690, 700}, "small")});
}

Pose6 pose(std::initializer_list<const char*> v) {
  Pose6 p;
  std::size_t i = 0;
  for (auto s : v) p.v[i++] = *Decimal::from_text(s);
  return p;
}

Pos3 pos(const char* x, const char* y, const char* z) {
  return {*Decimal::from_text(x), *Decimal::from_text(y), *Decimal::from_text(z)};
}

template <class F>
ErrorKind error_kind(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  return ErrorKind::InvariantViolation;
}

bool first_is_task(const std::string& prompt, TaskKind k) {
  auto d = parse(prompt);
  return !d.nodes.empty() && std::holds_alternative<node::Task>(d.nodes[0]) &&
         std::get<node::Task>(d.nodes[0]).kind == k;
}

}  // namespace

TEST(Detection, SingleShip) {
  auto r = build_detection_record(image({obj("ship", {0, 0, 100, 100})}));
  EXPECT_EQ(r.prompt, "Detect all objects shown in the remote sensing image and describe using HBBs.");
  EXPECT_EQ(r.response, "There is 1 <|ref|>ship<|/ref|><|det|>[[0,0,100,100]]<|/det|> in the image.");
  EXPECT_EQ(r.task, Task::detection);
}

TEST(Detection, GroupsByFirstAppearance) {
  auto r = build_detection_record(image({obj("vehicle", {0, 0, 10, 10}), obj("ship", {0, 0, 20, 20}),
                                         obj("vehicle", {50, 50, 60, 60})}));
  EXPECT_EQ(r.response,
            "There are 2 <|ref|>vehicle<|/ref|><|det|>[[0,0,10,10], [50,50,60,60]]<|/det|>, "
            "1 <|ref|>ship<|/ref|><|det|>[[0,0,20,20]]<|/det|> in the image.");
  auto doc = parse(r.response);
  for (const auto& n : doc.nodes) {
    if (auto* d = std::get_if<node::Det>(&n)) {
      for (const auto& b : d->boxes) EXPECT_TRUE(b.valid());
    }
  }
}

TEST(Detection, Empty) {
  EXPECT_EQ(error_kind([] { build_detection_record(image({})); }), ErrorKind::EmptyAnnotation);
}

TEST(Caption, TwoSmallAircraft) {
  auto r = build_caption_record(two_small_aircraft());
  EXPECT_EQ(r.prompt, "Please provide a short depiction of the picture:");
  EXPECT_EQ(r.response, "There are 2 aircrafts in the image, which are small in size.");
}

TEST(Caption, Variants) {
  EXPECT_EQ(caption_text(image({obj("ship", {0, 0, 1, 1})})), "There is 1 ship in the image.");
  auto scene = image({});
  scene.scene_label = "harbor";
  EXPECT_EQ(caption_text(scene), "The image shows a harbor scene.");
  EXPECT_EQ(error_kind([] { build_caption_record(image({})); }), ErrorKind::EmptyAnnotation);
}

TEST(Classification, SceneLabel) {
  auto a = image({});
  a.scene_label = "aircraft";
  auto r = build_classification_record(a);
  EXPECT_EQ(r.prompt, "Please output the scene corresponding to the image:");
  EXPECT_EQ(r.response, "aircraft.");
  a.scene_label = "";
  EXPECT_EQ(error_kind([&] { build_classification_record(a); }), ErrorKind::EmptyLabel);
}

TEST(Vqa, YesAnswer) {
  auto r = build_vqa_record("Is a small road present? The answer to this question is", "yes", "x",
                            Modality::opt);
  EXPECT_EQ(r.prompt, "Is a small road present? The answer to this question is");
  EXPECT_EQ(r.response, "yes.");
  EXPECT_EQ(error_kind([] { build_vqa_record("q", "", "x", Modality::opt); }), ErrorKind::EmptyLabel);
}

TEST(Relation, Template) {
  RelationAnnotation rel{obj("car", {10, 10, 50, 30}), obj("road", {0, 0, 1000, 100}), "driving on"};
  auto r = build_relation_record(rel, image({}));
  EXPECT_EQ(r.response, "subject: car, object: road, the car is <|rel|>driving on<|/rel|> the road.");
  EXPECT_EQ(r.prompt,
            "<|reasoning|>What is the relationship between <|ref|>car<|/ref|><|det|>[[10,10,50,30]]"
            "<|/det|> and the object in <|det|>[[0,0,999,100]]<|/det|> in the image? And output "
            "their categories.");
  auto doc = parse(r.response);
  int rels = 0;
  for (const auto& n : doc.nodes) rels += std::holds_alternative<node::Rel>(n);
  EXPECT_EQ(rels, 1);
}

TEST(Relation, SelfRelationAllowed) {
  RelationAnnotation rel{obj("ship", {10, 10, 50, 30}), obj("ship", {10, 10, 50, 30}), "same as"};
  EXPECT_NO_THROW(parse(build_relation_record(rel, image({})).response));
}

TEST(Direction, Examples) {
  EXPECT_EQ(to_string(region_direction({400, 400, 600, 600})), "center");
  EXPECT_EQ(to_string(region_direction({0, 0, 100, 100})), "upper left");
  EXPECT_EQ(to_string(region_direction({900, 400, 999, 600})), "right");
  EXPECT_EQ(to_string(region_direction({0, 900, 100, 999})), "lower left");
  EXPECT_EQ(to_string(region_direction({400, 0, 600, 100})), "upper");
  EXPECT_EQ(to_string(region_direction({0, 0, 999, 999})), "center");
}

// Brute-force grid: the centre (x1+x2)/2 falls in third floor(c/333), capped.
TEST(Direction, AgreesWithCentreThirds) {
  static const char* names[3][3] = {{"upper left", "upper", "upper right"},
                                    {"left", "center", "right"},
                                    {"lower left", "lower", "lower right"}};
  std::mt19937_64 rng(1);
  for (int i = 0; i < 5000; ++i) {
    auto b = test::random_box(rng);
    auto third = [](int lo, int hi) {
      const double c = (lo + hi) / 2.0;
      return c < 333 ? 0 : (c < 666 ? 1 : 2);
    };
    EXPECT_EQ(to_string(region_direction(b)), names[third(b.y1, b.y2)][third(b.x1, b.x2)]);
  }
}

TEST(Decomposition, EmptyRegion) {
  auto r = build_decomposition_record({700, 700, 999, 999}, image({obj("ship", {0, 0, 10, 10})}), {});
  EXPECT_TRUE(first_is_task(r.prompt, TaskKind::decomposition));
  EXPECT_NE(r.response.find("Step2: Perform object detection: There are 0 entities in the target area."),
            std::string::npos);
  EXPECT_NE(r.response.find("Step4: Perform context summary: 0 object types with 0 interactions."),
            std::string::npos);
  EXPECT_TRUE(check_decomposition_counts(parse(r.response)).empty());
}

TEST(Decomposition, TwoShipsOneRelation) {
  auto a = obj("ship", {100, 100, 200, 150});
  auto b = obj("ship", {250, 120, 330, 170});
  auto r = build_decomposition_record({0, 0, 499, 499}, image({a, b}), {{a, b, "next to"}});
  EXPECT_EQ(r.prompt, "<|decomposition|>Analyze the region <|det|>[[0,0,499,499]]<|/det|> of the image.");
  EXPECT_EQ(r.response,
            "Step1: Locate the target area: The target area locates at the upper left of the image.\n"
            "Step2: Perform object detection: There are 2 entities in the target area, including: 2 "
            "<|ref|>ship<|/ref|><|det|>[[100,100,200,150], [250,120,330,170]]<|/det|>.\n"
            "Step3: Perform relation analysis: There are 1 relations found: <|ref|>ship<|/ref|>"
            "<|det|>[[100,100,200,150]]<|/det|> is <|rel|>next to<|/rel|> the <|ref|>ship<|/ref|>"
            "<|det|>[[250,120,330,170]]<|/det|>;\n"
            "Step4: Perform context summary: 1 object types with 1 interactions.");
  EXPECT_TRUE(check_decomposition_counts(parse(r.response)).empty());
}

TEST(Decomposition, OutOfRegionRelationsDropped) {
  auto a = obj("ship", {100, 100, 200, 150});
  auto far = obj("harbor", {800, 800, 900, 900});
  auto r = build_decomposition_record({0, 0, 499, 499}, image({a, far}), {{a, far, "near"}});
  EXPECT_NE(r.response.find("1 object types with 0 interactions."), std::string::npos);
}

TEST(Decomposition, CountCheckFlagsTampering) {
  auto a = obj("ship", {100, 100, 200, 150});
  auto r = build_decomposition_record({0, 0, 499, 499}, image({a}), {});
  auto tampered = r.response;
  tampered.replace(tampered.find("1 object types"), 14, "2 object types");
  EXPECT_FALSE(check_decomposition_counts(parse(tampered)).empty());
}

// Counting consistency over random scenes.
TEST(Decomposition, CountsRandom) {
  std::mt19937_64 rng(2);
  const char* cats[] = {"ship", "harbor", "vehicle", "bridge"};
  for (int i = 0; i < 300; ++i) {
    std::vector<ObjectAnnotation> objs;
    std::uniform_int_distribution<std::int64_t> c(0, 1000);
    for (int k = static_cast<int>(rng() % 8); k > 0; --k) {
      auto x = c(rng), y = c(rng), x2 = c(rng), y2 = c(rng);
      objs.push_back(obj(cats[rng() % 4], {std::min(x, x2), std::min(y, y2), std::max(x, x2),
                                           std::max(y, y2)}));
    }
    std::vector<RelationAnnotation> rels;
    for (std::size_t k = 0; objs.size() >= 2 && k < 3; ++k) {
      rels.push_back({objs[rng() % objs.size()], objs[rng() % objs.size()], "near"});
    }
    auto r = build_decomposition_record(test::random_box(rng), image(objs), rels);
    ASSERT_TRUE(check_decomposition_counts(parse(r.response)).empty()) << r.response;
  }
}

TEST(Scheduling, Template) {
  SceneRecord s;
  s.image_id = "n";
  s.description = "The row of grayish brown houses on Leslie Road.";
  s.landmark_name = "Wellington Road";
  s.landmark_pos = pos("1.0", "2.0", "3.0");
  s.target_name = "house";
  s.target_pos = pos("4", "5", "6");
  s.surroundings = {"Leslie Road"};
  s.start_pose = pose({"0", "0", "50", "0", "0", "0"});
  s.trajectory = {s.start_pose};
  auto r = build_scheduling_record(s);
  EXPECT_TRUE(r.prompt.starts_with(
      "<|navigation|>You need to formulate a flight plan for a quadcopter based on this map, "
      "enabling it to fly over all the buildings and reach the destination. The target location is "
      "described as follows: The row of grayish brown houses on Leslie Road. The 3D coordinates of "
      "the landmark are as follows: <|ref|>Wellington Road<|/ref|><|pos|>[1.0,2.0,3.0]<|/pos|>. "
      "Your starting 3D coordinates and orientation angles are <|pose|>[[0,0,50,0,0,0]]<|/pose|>."));
  EXPECT_EQ(r.response,
            "Step 1: Extract basic information as follows: Target: house. Landmarks: Wellington "
            "Road. Surroundings: Leslie Road.\n"
            "Step 2: Get landmarks position: <|ref|>Wellington Road<|/ref|><|pos|>[1.0,2.0,3.0]<|/pos|>.\n"
            "Step 3: Get target position: <|ref|>house<|/ref|><|pos|>[4,5,6]<|/pos|>.\n"
            "Step 4: Trajectory: <|pose|>[[0,0,50,0,0,0]]<|/pose|>.");
  EXPECT_TRUE(first_is_task(r.prompt, TaskKind::navigation));
}

TEST(Scheduling, TrajectoryMustStartAtStart) {
  SceneRecord s;
  s.start_pose = pose({"0", "0", "0", "0", "0", "0"});
  s.trajectory = {pose({"1", "0", "0", "0", "0", "0"})};
  EXPECT_EQ(error_kind([&] { build_scheduling_record(s); }), ErrorKind::InvariantViolation);
  s.trajectory.clear();
  EXPECT_EQ(error_kind([&] { build_scheduling_record(s); }), ErrorKind::InvariantViolation);
}

TEST(Scheduling, OptionalNormalization) {
  SceneRecord s;
  s.landmark_name = "a";
  s.target_name = "b";
  s.description = "d";
  s.landmark_pos = pos("5", "50", "0");
  s.target_pos = pos("10", "100", "10");
  s.start_pose = pose({"0", "0", "0", "1.5", "0", "0"});
  s.trajectory = {s.start_pose};
  SceneBounds b{{0, 0, 0}, {10, 100, 10}};
  auto r = build_scheduling_record(s, b);
  EXPECT_NE(r.response.find("<|pos|>[500,500,0]<|/pos|>"), std::string::npos);
  EXPECT_NE(r.response.find("<|pos|>[999,999,999]<|/pos|>"), std::string::npos);
  EXPECT_NE(r.response.find("[[0,0,0,1.5,0,0]]"), std::string::npos);
}

TEST(Decision, Template) {
  auto start = pose({"0", "0", "30", "0", "0", "0"});
  auto goal = pose({"100", "50", "30", "0", "0", "1.57"});
  auto r = build_decision_record(start, goal, {"go straight"});
  EXPECT_EQ(r.prompt,
            "<|decision|>How to fly from position <|pose|>[[0,0,30,0,0,0]]<|/pose|> to position "
            "<|pose|>[[100,50,30,0,0,1.57]]<|/pose|>, and provide a detailed plan.");
  EXPECT_EQ(r.response, "Step1: go straight.");
  EXPECT_EQ(build_decision_record(start, start, {"hover", "land."}).response,
            "Step1: hover.\nStep2: land.");
  EXPECT_EQ(error_kind([&] { build_decision_record(start, goal, {}); }), ErrorKind::EmptySteps);
}

TEST(Tiling, Examples) {
  EXPECT_EQ(plan_tiling(384, 384), (TilingPlan{1, 1, 1, true}));
  EXPECT_EQ(plan_tiling(800, 800), (TilingPlan{3, 3, 9, true}));
  EXPECT_EQ(plan_tiling(4000, 500), (TilingPlan{4, 2, 8, true}));
  EXPECT_EQ(plan_tiling(1, 1), (TilingPlan{1, 1, 1, true}));
  EXPECT_EQ(plan_tiling(385, 384), (TilingPlan{2, 1, 2, true}));
  EXPECT_THROW(plan_tiling(0, 5), Error);
}

TEST(Tiling, BudgetAndExactCeil) {
  for (int h = 1; h <= 10000; h += 37) {
    for (int w = 1; w <= 10000; w += 41) {
      const auto p = plan_tiling(h, w);
      ASSERT_GE(p.m, 1);
      ASSERT_GE(p.n, 1);
      ASSERT_LE(p.m * p.n, 9);
      ASSERT_EQ(p.tile_count, p.m * p.n);
      const int cm = (h + 383) / 384, cn = (w + 383) / 384;
      if (cm * cn <= 9) {
        ASSERT_EQ(p.m, cm);
        ASSERT_EQ(p.n, cn);
      } else {
        ASSERT_LE(p.m, cm);
        ASSERT_LE(p.n, cn);
      }
    }
  }
}

TEST(CaptionCheck, TwoSmallAircraftPasses) {
  auto res = validate_caption("There are 2 aircrafts in the image, which are small in size.",
                              two_small_aircraft(), SynonymTable{});
  EXPECT_TRUE(res.pass);
  EXPECT_TRUE(res.failed.empty());
}

TEST(CaptionCheck, CountMismatch) {
  auto ann = image({obj("ship", {0, 0, 1, 1}), obj("ship", {2, 2, 3, 3})});
  auto res = validate_caption("There are 3 ships in the image.", ann, SynonymTable{});
  EXPECT_FALSE(res.pass);
  EXPECT_TRUE(res.failed_on(CaptionCheck::count));
}

TEST(CaptionCheck, ShapeAndCategory) {
  auto ann = two_small_aircraft();
  auto shape = validate_caption("There are 2 aircrafts in the image, which are large in size.", ann,
                                SynonymTable{});
  EXPECT_TRUE(shape.failed_on(CaptionCheck::shape));
  auto cat = validate_caption("There are 2 ships in the image.", ann, SynonymTable{});
  EXPECT_TRUE(cat.failed_on(CaptionCheck::category));
  auto none = validate_caption("A nice picture.", ann, SynonymTable{});
  EXPECT_TRUE(none.failed_on(CaptionCheck::category));
}

TEST(CaptionCheck, Synonyms) {
  auto ann = two_small_aircraft();
  const std::string caption = "There are two tiny planes in the image.";
  EXPECT_FALSE(validate_caption(caption, ann, SynonymTable{}).pass);
  SynonymTable syn({{"plane", "aircraft"}, {"tiny", "small"}});
  EXPECT_TRUE(validate_caption(caption, ann, syn).pass);
}

TEST(CaptionCheck, SimilarityGate) {
  auto ann = two_small_aircraft();
  const std::string caption = "There are 2 aircrafts in the image, which are small in size.";
  auto low = validate_caption(caption, ann, SynonymTable{}, 0.79 * 0.5, 0.5);
  EXPECT_FALSE(low.pass);
  EXPECT_TRUE(low.failed_on(CaptionCheck::similarity));
  EXPECT_EQ(low.failed.size(), 1u);
  EXPECT_TRUE(validate_caption(caption, ann, SynonymTable{}, 0.8 * 0.5, 0.5).pass);
  EXPECT_THROW(validate_caption(caption, ann, SynonymTable{}, 0.3, std::nullopt), Error);
  EXPECT_THROW(validate_caption(caption, ann, SynonymTable{}, 0.3, 0.0), Error);
}

TEST(CaptionCheck, SceneClaim) {
  auto ann = image({});
  ann.scene_label = "harbor";
  EXPECT_TRUE(validate_caption("The image shows a harbor scene.", ann, SynonymTable{}).pass);
  EXPECT_FALSE(validate_caption("The image shows a desert scene.", ann, SynonymTable{}).pass);
}

// Adding synonym entries never turns a pass into a fail.
TEST(CaptionCheck, MonotoneInSynonyms) {
  std::mt19937_64 rng(9);
  const std::vector<std::string> words = {"ship", "boat", "vessel", "aircraft", "plane", "small",
                                          "tiny", "large", "big", "car", "vehicle", "harbor"};
  const std::vector<std::string> counts = {"1", "2", "3", "two", "one"};
  auto pick = [&](const std::vector<std::string>& v) { return v[rng() % v.size()]; };
  int flips_checked = 0;
  for (int i = 0; i < 2000; ++i) {
    std::vector<ObjectAnnotation> objs;
    for (int k = 1 + static_cast<int>(rng() % 3); k > 0; --k) {
      objs.push_back(obj(pick({"ship", "aircraft", "vehicle"}), {0, 0, 1, 1},
                         rng() % 2 ? std::optional<std::string>(pick({"small", "large"}))
                                   : std::nullopt));
    }
    auto ann = image(objs);
    std::string caption = "There are " + pick(counts) + " " + pick(words) + "s in the image";
    if (rng() % 2) caption += ", which are " + pick(words) + " in size";
    caption += ".";
    SynonymTable base;
    std::map<std::string, std::string> entries;
    for (int k = static_cast<int>(rng() % 3); k > 0; --k) {
      auto a = pick(words), b = pick(words);
      base.add(a, b);
      entries[a] = b;
    }
    const bool before = validate_caption(caption, ann, base).pass;
    SynonymTable more = base;
    for (int k = 1 + static_cast<int>(rng() % 3); k > 0; --k) more.add(pick(words), pick(words));
    const bool after = validate_caption(caption, ann, more).pass;
    if (before) {
      ++flips_checked;
      ASSERT_TRUE(after) << caption;
    }
  }
  EXPECT_GT(flips_checked, 20);
}

TEST(Builders, Deterministic) {
  auto a = build_caption_record(two_small_aircraft());
  auto b = build_caption_record(two_small_aircraft());
  EXPECT_EQ(a, b);
}
