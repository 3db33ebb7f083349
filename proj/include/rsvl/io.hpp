#pragma once

// JSON / JSONL file formats: instruction records, per-task annotation
// schemas, decoder weight files, and the line reader shared by the CLI.

#include <fstream>
#include <iterator>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "rsvl/builder.hpp"
#include "rsvl/error.hpp"
#include "rsvl/grammar.hpp"
#include "rsvl/trajdec.hpp"

namespace rsvl::io {

using json = nlohmann::json;
using ordered_json = nlohmann::ordered_json;

inline Error schema_error(const std::string& what) { return Error(ErrorKind::Schema, what); }

// One non-empty line of a JSONL file; `line` is 1-based.
struct JsonLine {
  std::size_t line = 0;
  json value;
};

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

// Splits on LF; blank lines are skipped. Throws Schema with the line number
// when a line is not valid JSON (including invalid UTF-8).
inline std::vector<JsonLine> parse_jsonl(std::string_view content) {
  std::vector<JsonLine> out;
  std::size_t pos = 0, line = 0;
  while (pos < content.size()) {
    ++line;
    auto nl = content.find('\n', pos);
    if (nl == std::string_view::npos) nl = content.size();
    auto text = content.substr(pos, nl - pos);
    if (!text.empty() && text.back() == '\r') text.remove_suffix(1);
    pos = nl + 1;
    if (text.find_first_not_of(" \t") == std::string_view::npos) continue;
    try {
      out.push_back({line, json::parse(text)});
    } catch (const json::exception& e) {
      throw schema_error("line " + std::to_string(line) + ": " + e.what());
    }
  }
  return out;
}

inline std::vector<JsonLine> read_jsonl(const std::string& path) {
  return parse_jsonl(read_file(path));
}

// Reports keys outside `known` to `warn`, once per key per call.
inline void warn_unknown_keys(const json& obj, const std::set<std::string>& known,
                              std::ostream* warn, std::string_view where) {
  if (!warn || !obj.is_object()) return;
  for (const auto& [k, v] : obj.items()) {
    if (!known.count(k)) *warn << "warning: " << where << ": ignoring unknown key '" << k << "'\n";
  }
}

namespace detail {

inline const json& need(const json& obj, const char* key) {
  if (!obj.is_object() || !obj.contains(key)) {
    throw schema_error(std::string("missing key '") + key + "'");
  }
  return obj.at(key);
}

inline std::string need_string(const json& obj, const char* key) {
  const auto& v = need(obj, key);
  if (!v.is_string()) throw schema_error(std::string("'") + key + "' must be a string");
  return v.get<std::string>();
}

inline std::optional<std::string> opt_string(const json& obj, const char* key) {
  if (!obj.contains(key) || obj.at(key).is_null()) return std::nullopt;
  if (!obj.at(key).is_string()) throw schema_error(std::string("'") + key + "' must be a string");
  return obj.at(key).get<std::string>();
}

inline double as_double(const json& v, const char* what) {
  if (!v.is_number()) throw schema_error(std::string(what) + " must be a number");
  return v.get<double>();
}

inline std::int64_t as_int(const json& v, const char* what) {
  if (!v.is_number_integer()) throw schema_error(std::string(what) + " must be an integer");
  return v.get<std::int64_t>();
}

// Numbers keep their spelling when given as strings ("1.0").
inline Decimal as_decimal(const json& v, const char* what) {
  if (v.is_string()) {
    auto d = Decimal::from_text(v.get<std::string>());
    if (!d) throw schema_error(std::string(what) + ": '" + v.get<std::string>() + "' is not a decimal");
    return *d;
  }
  const double x = as_double(v, what);
  if (!std::isfinite(x)) throw schema_error(std::string(what) + " must be finite");
  return Decimal(x);
}

inline std::vector<json> as_array(const json& v, const char* what, std::size_t arity = 0) {
  if (!v.is_array()) throw schema_error(std::string(what) + " must be an array");
  if (arity && v.size() != arity) {
    throw schema_error(std::string(what) + " must have " + std::to_string(arity) + " elements");
  }
  return std::vector<json>(v.begin(), v.end());
}

}  // namespace detail

inline Modality modality_from(const json& obj, std::optional<Modality> fallback) {
  if (auto m = detail::opt_string(obj, "modality")) {
    auto parsed = parse_modality(*m);
    if (!parsed) throw schema_error("modality must be one of opt, sar, ir");
    return *parsed;
  }
  return fallback.value_or(Modality::opt);
}

inline PixelBox pixel_box_from(const json& v) {
  auto a = detail::as_array(v, "box", 4);
  return PixelBox{detail::as_int(a[0], "box"), detail::as_int(a[1], "box"),
                  detail::as_int(a[2], "box"), detail::as_int(a[3], "box")};
}

inline Box norm_box_from(const json& v) {
  auto a = detail::as_array(v, "box", 4);
  auto c = [&](int i) { return static_cast<int>(detail::as_int(a[i], "box")); };
  Box b{c(0), c(1), c(2), c(3)};
  if (!b.in_range()) throw schema_error("box coordinates must lie in [0, 999]");
  if (!b.ordered()) throw Error(ErrorKind::InvertedBox, "box corners out of order");
  return b;
}

inline json box_to_json(const Box& b) { return json::array({b.x1, b.y1, b.x2, b.y2}); }

inline Pos3 pos3_from(const json& v) {
  auto a = detail::as_array(v, "position", 3);
  return Pos3{detail::as_decimal(a[0], "position"), detail::as_decimal(a[1], "position"),
              detail::as_decimal(a[2], "position")};
}

inline Pose6 pose6_from(const json& v) {
  auto a = detail::as_array(v, "pose", 6);
  Pose6 p;
  for (std::size_t i = 0; i < 6; ++i) p.v[i] = detail::as_decimal(a[i], "pose");
  return p;
}

inline ObjectAnnotation object_from(const json& v, std::ostream* warn = nullptr) {
  warn_unknown_keys(v, {"category", "box", "shape"}, warn, "object");
  ObjectAnnotation o;
  o.category = detail::need_string(v, "category");
  if (o.category.empty()) throw schema_error("empty object category");
  o.px_box = pixel_box_from(detail::need(v, "box"));
  o.shape = detail::opt_string(v, "shape");
  return o;
}

inline ImageAnnotation image_from(const json& v, std::optional<Modality> modality,
                                  std::ostream* warn = nullptr,
                                  const std::set<std::string>& extra_keys = {}) {
  std::set<std::string> known{"image_id", "modality", "width", "height", "objects", "scene_label"};
  known.insert(extra_keys.begin(), extra_keys.end());
  warn_unknown_keys(v, known, warn, "annotation");
  ImageAnnotation a;
  a.image_id = detail::need_string(v, "image_id");
  a.modality = modality_from(v, modality);
  a.width = detail::as_int(detail::need(v, "width"), "width");
  a.height = detail::as_int(detail::need(v, "height"), "height");
  check_extent(a.width, a.height);
  if (v.contains("objects")) {
    for (const auto& o : detail::as_array(v.at("objects"), "objects")) {
      a.objects.push_back(object_from(o, warn));
    }
  }
  a.scene_label = detail::opt_string(v, "scene_label");
  return a;
}

// `check_keys` is off when the relation fields sit in an image annotation,
// whose own keys are checked there.
inline RelationAnnotation relation_from(const json& v, std::ostream* warn = nullptr,
                                        bool check_keys = true) {
  if (check_keys) warn_unknown_keys(v, {"subject", "object", "relation"}, warn, "relation");
  RelationAnnotation r;
  r.subject = object_from(detail::need(v, "subject"), warn);
  r.object = object_from(detail::need(v, "object"), warn);
  r.relation = detail::need_string(v, "relation");
  if (r.relation.empty()) throw schema_error("empty relation");
  return r;
}

inline std::optional<SceneBounds> bounds_from(const json& v) {
  if (!v.contains("bounds")) return std::nullopt;
  auto axes = detail::as_array(v.at("bounds"), "bounds", 3);
  SceneBounds b;
  for (std::size_t i = 0; i < 3; ++i) {
    auto lh = detail::as_array(axes[i], "bounds axis", 2);
    b.lo[i] = detail::as_double(lh[0], "bounds");
    b.hi[i] = detail::as_double(lh[1], "bounds");
  }
  return b;
}

inline SceneRecord scene_from(const json& v, std::optional<Modality> modality,
                              std::ostream* warn = nullptr) {
  warn_unknown_keys(v,
                    {"image_id", "modality", "description", "landmark", "target", "surroundings",
                     "start_pose", "trajectory", "bounds"},
                    warn, "scene");
  SceneRecord s;
  s.image_id = detail::need_string(v, "image_id");
  s.modality = modality_from(v, modality);
  s.description = detail::need_string(v, "description");
  const auto& lm = detail::need(v, "landmark");
  s.landmark_name = detail::need_string(lm, "name");
  s.landmark_pos = pos3_from(detail::need(lm, "pos"));
  const auto& tg = detail::need(v, "target");
  s.target_name = detail::need_string(tg, "name");
  s.target_pos = pos3_from(detail::need(tg, "pos"));
  if (v.contains("surroundings")) {
    for (const auto& x : detail::as_array(v.at("surroundings"), "surroundings")) {
      if (!x.is_string()) throw schema_error("surroundings must be strings");
      s.surroundings.push_back(x.get<std::string>());
    }
  }
  s.start_pose = pose6_from(detail::need(v, "start_pose"));
  for (const auto& p : detail::as_array(detail::need(v, "trajectory"), "trajectory")) {
    s.trajectory.push_back(pose6_from(p));
  }
  return s;
}

inline std::vector<std::string> image_refs_from(const json& v) {
  std::vector<std::string> refs;
  if (v.contains("image_refs")) {
    for (const auto& r : detail::as_array(v.at("image_refs"), "image_refs")) {
      if (!r.is_string()) throw schema_error("image_refs must be strings");
      refs.push_back(r.get<std::string>());
    }
  } else if (auto id = detail::opt_string(v, "image_id")) {
    refs.push_back(*id);
  }
  if (refs.empty()) throw schema_error("missing 'image_refs' or 'image_id'");
  return refs;
}

// Builds the record for one annotation line of the given task.
inline InstructionRecord build_from_json(Task task, const json& v, std::optional<Modality> modality,
                                         std::ostream* warn = nullptr,
                                         bool normalize_positions = false) {
  if (!v.is_object()) throw schema_error("annotation must be a JSON object");
  switch (task) {
    case Task::detection:
      return build_detection_record(image_from(v, modality, warn));
    case Task::captioning:
      return build_caption_record(image_from(v, modality, warn));
    case Task::classification:
      return build_classification_record(image_from(v, modality, warn));
    case Task::vqa: {
      warn_unknown_keys(v, {"image_id", "modality", "question", "answer", "type"}, warn, "vqa");
      return build_vqa_record(detail::need_string(v, "question"), detail::need_string(v, "answer"),
                              detail::need_string(v, "image_id"), modality_from(v, modality));
    }
    case Task::relation: {
      auto img = image_from(v, modality, warn, {"subject", "object", "relation"});
      return build_relation_record(relation_from(v, warn, false), img);
    }
    case Task::decomposition: {
      auto img = image_from(v, modality, warn, {"region", "relations"});
      std::vector<RelationAnnotation> rels;
      if (v.contains("relations")) {
        for (const auto& r : detail::as_array(v.at("relations"), "relations")) {
          rels.push_back(relation_from(r, warn));
        }
      }
      return build_decomposition_record(norm_box_from(detail::need(v, "region")), img, rels);
    }
    case Task::scheduling: {
      auto scene = scene_from(v, modality, warn);
      std::optional<SceneBounds> bounds;
      if (normalize_positions) {
        bounds = bounds_from(v);
        if (!bounds) throw schema_error("position normalization requires 'bounds'");
      }
      return build_scheduling_record(scene, bounds);
    }
    case Task::decision: {
      warn_unknown_keys(v, {"image_refs", "image_id", "modality", "start", "goal", "steps"}, warn,
                        "decision");
      std::vector<std::string> steps;
      for (const auto& s : detail::as_array(detail::need(v, "steps"), "steps")) {
        if (!s.is_string()) throw schema_error("steps must be strings");
        steps.push_back(s.get<std::string>());
      }
      return build_decision_record(pose6_from(detail::need(v, "start")),
                                   pose6_from(detail::need(v, "goal")), steps, image_refs_from(v),
                                   modality_from(v, modality));
    }
  }
  throw schema_error("unknown task");
}

// ---------------------------------------------------------------------------
// Instruction records

inline ordered_json record_to_json(const InstructionRecord& r) {
  ordered_json j;
  j["image_refs"] = r.image_refs;
  j["modality"] = std::string(to_string(r.modality));
  j["task"] = std::string(to_string(r.task));
  j["prompt"] = r.prompt;
  j["response"] = r.response;
  return j;
}

inline std::string record_line(const InstructionRecord& r) { return record_to_json(r).dump(); }

inline InstructionRecord record_from_json(const json& v) {
  if (!v.is_object()) throw schema_error("record must be a JSON object");
  InstructionRecord r;
  r.image_refs = image_refs_from(v);
  auto m = parse_modality(detail::need_string(v, "modality"));
  if (!m) throw schema_error("modality must be one of opt, sar, ir");
  r.modality = *m;
  auto t = parse_task(detail::need_string(v, "task"));
  if (!t) throw schema_error("unknown task '" + v.at("task").get<std::string>() + "'");
  r.task = *t;
  r.prompt = detail::need_string(v, "prompt");
  r.response = detail::need_string(v, "response");
  return r;
}

// ---------------------------------------------------------------------------
// Decoder weights

inline ordered_json weights_to_json(const DecoderWeights& w) {
  ordered_json j;
  j["d_e"] = w.d_e();
  j["d_h"] = w.d_h();
  w.for_each([&](std::string_view name, const auto& m) {
    const bool vector = name.front() == 'b';
    if (vector) {
      std::vector<double> v(m.data(), m.data() + m.size());
      j[std::string(name)] = v;
    } else {
      ordered_json rows = ordered_json::array();
      for (Eigen::Index r = 0; r < m.rows(); ++r) {
        std::vector<double> row;
        for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
        rows.push_back(row);
      }
      j[std::string(name)] = rows;
    }
  });
  return j;
}

// Validates shapes against d_e / d_h; throws DimensionMismatch naming the
// expected and actual sizes.
inline DecoderWeights weights_from_json(const json& j) {
  const auto de = detail::as_int(detail::need(j, "d_e"), "d_e");
  const auto dh = detail::as_int(detail::need(j, "d_h"), "d_h");
  if (de < 1 || dh < 1) throw Error(ErrorKind::DimensionMismatch, "d_e and d_h must be >= 1");
  auto w = DecoderWeights::zeros(de, dh);
  w.for_each([&](std::string_view name, auto& m) {
    const std::string key(name);
    const auto& v = detail::need(j, key.c_str());
    if (!v.is_array()) throw schema_error(key + " must be an array");
    const bool vector = name.front() == 'b';
    auto mismatch = [&](std::size_t got, Eigen::Index want, const char* what) {
      throw Error(ErrorKind::DimensionMismatch, key + " has " + std::to_string(got) + " " + what +
                                                    ", expected " + std::to_string(want));
    };
    if (vector) {
      if (static_cast<Eigen::Index>(v.size()) != m.size()) mismatch(v.size(), m.size(), "entries");
      for (std::size_t i = 0; i < v.size(); ++i) m(static_cast<Eigen::Index>(i)) = detail::as_double(v[i], key.c_str());
    } else {
      if (static_cast<Eigen::Index>(v.size()) != m.rows()) mismatch(v.size(), m.rows(), "rows");
      for (std::size_t r = 0; r < v.size(); ++r) {
        const auto& row = v[r];
        if (!row.is_array()) throw schema_error(key + " rows must be arrays");
        if (static_cast<Eigen::Index>(row.size()) != m.cols()) mismatch(row.size(), m.cols(), "columns");
        for (std::size_t c = 0; c < row.size(); ++c) {
          m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) =
              detail::as_double(row[c], key.c_str());
        }
      }
    }
  });
  w.validate();
  return w;
}

// A latent vector file is either a bare array or {"h_tra": [...]}.
inline Eigen::VectorXd vector_from_json(const json& j, const char* key = "h_tra") {
  const json& arr = j.is_object() ? detail::need(j, key) : j;
  auto a = detail::as_array(arr, key);
  if (a.empty()) throw schema_error(std::string(key) + " must not be empty");
  Eigen::VectorXd v(static_cast<Eigen::Index>(a.size()));
  for (std::size_t i = 0; i < a.size(); ++i) v(static_cast<Eigen::Index>(i)) = detail::as_double(a[i], key);
  return v;
}

}  // namespace rsvl::io
