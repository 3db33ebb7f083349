#pragma once

// Implementations behind the `rsvl` subcommands. Each returns the process
// exit status and writes only to the streams it is given, so they can be
// driven in-process by tests.

#include <charconv>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "rsvl/builder.hpp"
#include "rsvl/extract.hpp"
#include "rsvl/grammar.hpp"
#include "rsvl/io.hpp"
#include "rsvl/metrics.hpp"
#include "rsvl/parallel.hpp"
#include "rsvl/trajdec.hpp"

namespace rsvl::cli {

enum ExitStatus : int {
  kSuccess = 0,
  kValidationFailed = 1,
  kFormatError = 2,
  kInternalError = 3,
};

struct Streams {
  std::ostream& out;
  std::ostream& err;
};

namespace detail {

using io::json;
using io::ordered_json;

inline std::string shortest(double v) {
  char buf[32];
  auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

inline void write_file(const std::string& path, const std::string& content) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot write " + path);
  f << content;
  if (!f) throw std::runtime_error("write failed for " + path);
}

// Maps library failures onto exit codes: bad input is a format error,
// broken internal invariants and divergence are internal errors.
inline int exit_for(const Error& e) {
  switch (e.kind()) {
    case ErrorKind::InvariantViolation:
    case ErrorKind::DivergenceDetected:
      return kInternalError;
    default:
      return kFormatError;
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// validate

struct ValidateOptions {
  std::string input;
  bool strict = false;
  bool json = false;
  std::optional<std::string> relation_vocabulary;  // one label per line
};

struct RecordIssue {
  std::size_t line = 0;
  std::string field;
  std::string kind;
  std::optional<std::size_t> offset;
  std::string message;
};

// Grammar checks for one record; with `strict`, decomposition responses are
// also re-counted.
inline std::vector<RecordIssue> check_record(const InstructionRecord& r, std::size_t line,
                                             bool strict,
                                             const std::set<std::string>* rel_vocab = nullptr) {
  std::vector<RecordIssue> issues;
  auto check = [&](const std::string& field, const std::string& text) -> std::optional<MarkupDoc> {
    try {
      auto doc = parse(text);
      if (rel_vocab) {
        for (const auto& label : unknown_relations(doc, *rel_vocab)) {
          issues.push_back({line, field, "UnknownRelation", std::nullopt,
                            "relation '" + label + "' not in vocabulary"});
        }
      }
      return doc;
    } catch (const Error& e) {
      issues.push_back({line, field, std::string(to_string(e.kind())), e.offset(), e.what()});
      return std::nullopt;
    }
  };
  auto prompt = check("prompt", r.prompt);
  auto response = check("response", r.response);
  if (prompt) {
    const auto want = task_token(r.task);
    const node::Task* first =
        prompt->nodes.empty() ? nullptr : std::get_if<node::Task>(&prompt->nodes.front());
    if (want && (!first || first->kind != *want)) {
      issues.push_back({line, "prompt", "MissingTaskTag", 0,
                        "prompt must start with <|" + std::string(to_string(*want)) + "|>"});
    } else if (!want && first) {
      issues.push_back({line, "prompt", "MisplacedTaskTag", 0,
                        "task " + std::string(to_string(r.task)) + " takes no task tag"});
    }
  }
  if (strict && response && r.task == Task::decomposition) {
    for (const auto& p : check_decomposition_counts(*response)) {
      issues.push_back({line, "response", "CountMismatch", std::nullopt, p});
    }
  }
  return issues;
}

inline int cmd_validate(const ValidateOptions& opt, Streams io_) {
  std::vector<io::JsonLine> lines;
  std::set<std::string> vocab;
  try {
    lines = io::read_jsonl(opt.input);
    if (opt.relation_vocabulary) {
      std::istringstream in(io::read_file(*opt.relation_vocabulary));
      for (std::string l; std::getline(in, l);) {
        if (!l.empty()) vocab.insert(l);
      }
    }
  } catch (const std::exception& e) {
    io_.err << "error: " << e.what() << '\n';
    return kFormatError;
  }

  std::vector<InstructionRecord> records(lines.size());
  for (std::size_t i = 0; i < lines.size(); ++i) {
    try {
      records[i] = io::record_from_json(lines[i].value);
    } catch (const Error& e) {
      io_.err << "error: line " << lines[i].line << ": " << e.what() << '\n';
      return kFormatError;
    }
  }

  std::vector<std::vector<RecordIssue>> per_line(records.size());
  const auto* vocab_ptr = opt.relation_vocabulary ? &vocab : nullptr;
  parallel_for(records.size(), [&](std::size_t i) {
    per_line[i] = check_record(records[i], lines[i].line, opt.strict, vocab_ptr);
  });

  std::size_t n_issues = 0;
  detail::ordered_json errors = detail::ordered_json::array();
  for (const auto& issues : per_line) {
    for (const auto& is : issues) {
      ++n_issues;
      if (opt.json) {
        detail::ordered_json e;
        e["line"] = is.line;
        e["field"] = is.field;
        e["kind"] = is.kind;
        e["offset"] = is.offset ? detail::ordered_json(*is.offset) : detail::ordered_json(nullptr);
        e["message"] = is.message;
        errors.push_back(std::move(e));
      } else {
        io_.out << "line " << is.line << ": " << is.field << ": " << is.message << '\n';
      }
    }
  }
  if (opt.json) {
    detail::ordered_json report;
    report["records"] = records.size();
    report["errors"] = std::move(errors);
    io_.out << report.dump() << '\n';
  } else {
    io_.out << records.size() << " records, " << n_issues << " errors\n";
  }
  return n_issues ? kValidationFailed : kSuccess;
}

// ---------------------------------------------------------------------------
// build

struct BuildOptions {
  std::string annotations;
  Task task = Task::detection;
  std::string out;
  std::optional<Modality> modality;
  std::optional<std::string> synonyms;  // JSON object surface -> canonical
  bool validate_captions = false;
  std::optional<std::string> scores;  // JSON object image_id -> similarity
  std::optional<double> benchmark;
  std::optional<std::uint64_t> seed;  // builders are deterministic; accepted for uniformity
  bool normalize_positions = false;
  bool json = false;
};

inline std::string rejects_path(const std::string& out) { return out + ".rejects.jsonl"; }

inline int cmd_build(const BuildOptions& opt, Streams io_) {
  std::vector<io::JsonLine> lines;
  SynonymTable synonyms;
  std::optional<TableScorer> scorer;
  try {
    lines = io::read_jsonl(opt.annotations);
    if (opt.synonyms) {
      auto j = io::json::parse(io::read_file(*opt.synonyms));
      if (!j.is_object()) throw io::schema_error("synonym file must be a JSON object");
      for (const auto& [k, v] : j.items()) {
        if (!v.is_string()) throw io::schema_error("synonym values must be strings");
        synonyms.add(k, v.get<std::string>());
      }
    }
    if (opt.scores) {
      if (!opt.benchmark || !(*opt.benchmark > 0.0)) {
        throw io::schema_error("--scores requires a positive --benchmark");
      }
      auto j = io::json::parse(io::read_file(*opt.scores));
      if (!j.is_object()) throw io::schema_error("score file must be a JSON object");
      std::map<std::string, double> table;
      for (const auto& [k, v] : j.items()) table[k] = io::detail::as_double(v, "score");
      scorer.emplace(std::move(table));
    }
  } catch (const std::exception& e) {
    io_.err << "error: " << e.what() << '\n';
    return kFormatError;
  }
  if (opt.validate_captions && opt.task != Task::captioning) {
    io_.err << "error: --validate-captions applies to the captioning task only\n";
    return kFormatError;
  }

  struct Built {
    std::optional<InstructionRecord> record;
    std::optional<ValidationResult> validation;
    std::string error;
    int status = kSuccess;
  };
  std::vector<Built> built(lines.size());
  std::vector<std::ostringstream> warnings(lines.size());
  parallel_for(lines.size(), [&](std::size_t i) {
    auto& b = built[i];
    try {
      b.record = io::build_from_json(opt.task, lines[i].value, opt.modality, &warnings[i],
                                     opt.normalize_positions);
      if (opt.validate_captions) {
        auto ann = io::image_from(lines[i].value, opt.modality);
        std::optional<double> score;
        if (scorer) score = scorer->score(b.record->response, ann.image_id);
        b.validation = validate_caption(b.record->response, ann, synonyms, score,
                                        scorer ? opt.benchmark : std::nullopt);
      }
    } catch (const Error& e) {
      b.error = e.what();
      b.status = detail::exit_for(e);
    } catch (const std::exception& e) {
      b.error = e.what();
      b.status = kInternalError;
    }
  });

  std::string out, rejects;
  std::size_t kept = 0, rejected = 0;
  for (std::size_t i = 0; i < built.size(); ++i) {
    io_.err << warnings[i].str();
    if (built[i].status != kSuccess) {
      io_.err << "error: record " << i << " (line " << lines[i].line << "): " << built[i].error
              << '\n';
      return built[i].status;
    }
    const auto& rec = *built[i].record;
    if (built[i].validation && !built[i].validation->pass) {
      detail::ordered_json j;
      j["index"] = i;
      j["image_refs"] = rec.image_refs;
      j["caption"] = rec.response;
      detail::ordered_json failed = detail::ordered_json::array();
      for (const auto& f : built[i].validation->failed) {
        failed.push_back({{"check", std::string(to_string(f.check))}, {"detail", f.detail}});
      }
      j["failed"] = std::move(failed);
      rejects += j.dump() + "\n";
      ++rejected;
      continue;
    }
    out += io::record_line(rec) + "\n";
    ++kept;
  }
  try {
    detail::write_file(opt.out, out);
    if (opt.validate_captions) detail::write_file(rejects_path(opt.out), rejects);
  } catch (const std::exception& e) {
    io_.err << "error: " << e.what() << '\n';
    return kFormatError;
  }
  if (opt.json) {
    detail::ordered_json s;
    s["task"] = std::string(to_string(opt.task));
    s["records"] = kept;
    s["rejected"] = rejected;
    io_.out << s.dump() << '\n';
  } else {
    io_.err << "wrote " << kept << " records";
    if (opt.validate_captions) io_.err << ", rejected " << rejected;
    io_.err << '\n';
  }
  return kSuccess;
}

// ---------------------------------------------------------------------------
// eval

struct EvalOptions {
  Task task = Task::detection;
  std::string predictions;
  std::string ground_truth;
  std::optional<double> success_radius;
  double iou = 0.5;
  std::optional<double> relation_iou_gate;
  bool json = false;
};

namespace detail {

inline std::string id_of(const json& v) {
  if (v.contains("id") && v.at("id").is_string()) return v.at("id").get<std::string>();
  if (v.contains("image_id") && v.at("image_id").is_string()) {
    return v.at("image_id").get<std::string>();
  }
  if (v.contains("image_refs") && v.at("image_refs").is_array() && !v.at("image_refs").empty()) {
    std::string id;
    for (const auto& r : v.at("image_refs")) id += (id.empty() ? "" : "|") + r.get<std::string>();
    return id;
  }
  throw io::schema_error("record has no 'id', 'image_id' or 'image_refs'");
}

inline std::optional<MarkupDoc> response_of(const json& v) {
  if (!v.contains("response")) return std::nullopt;
  if (!v.at("response").is_string()) throw io::schema_error("'response' must be a string");
  return parse(v.at("response").get<std::string>());
}

inline std::string text_field(const json& v, std::initializer_list<const char*> keys) {
  for (const char* k : keys) {
    if (v.contains(k) && v.at(k).is_string()) return v.at(k).get<std::string>();
  }
  if (auto doc = response_of(v)) return extract::plain_text(*doc);
  std::string names;
  for (const char* k : keys) names += std::string(names.empty() ? "" : ", ") + k;
  throw io::schema_error("record needs one of " + names + " or 'response'");
}

inline std::vector<DetPrediction> detections_of(const json& v, bool prediction,
                                                std::optional<int> step = std::nullopt) {
  const char* key = prediction ? "detections" : "objects";
  std::vector<DetPrediction> out;
  if (v.contains(key)) {
    for (const auto& d : io::detail::as_array(v.at(key), key)) {
      DetPrediction p;
      p.category = io::detail::need_string(d, "category");
      p.box = io::norm_box_from(io::detail::need(d, "box"));
      if (d.contains("confidence")) p.confidence = io::detail::as_double(d.at("confidence"), "confidence");
      out.push_back(std::move(p));
    }
    return out;
  }
  auto doc = response_of(v);
  if (!doc) throw io::schema_error(std::string("record needs '") + key + "' or 'response'");
  double conf = 1.0;
  if (v.contains("confidence")) conf = io::detail::as_double(v.at("confidence"), "confidence");
  return extract::detections(*doc, conf, step);
}

inline std::vector<RelationTriple> triples_of(const json& v, bool decomposition) {
  std::vector<RelationTriple> out;
  if (v.contains("triples")) {
    for (const auto& t : io::detail::as_array(v.at("triples"), "triples")) {
      RelationTriple r{io::detail::need_string(t, "subject"), io::detail::need_string(t, "object"),
                       io::detail::need_string(t, "relation"), std::nullopt, std::nullopt};
      if (t.contains("subject_box")) r.subject_box = io::norm_box_from(t.at("subject_box"));
      if (t.contains("object_box")) r.object_box = io::norm_box_from(t.at("object_box"));
      out.push_back(std::move(r));
    }
    return out;
  }
  auto doc = response_of(v);
  if (!doc) throw io::schema_error("record needs 'triples' or 'response'");
  if (decomposition) return extract::relation_clauses(*doc, 3);
  if (auto t = extract::relation_answer(*doc)) out.push_back(*t);
  return out;
}

inline Point3 point_of(const json& v, const char* what) {
  auto a = io::detail::as_array(v, what, 3);
  return {io::detail::as_double(a[0], what), io::detail::as_double(a[1], what),
          io::detail::as_double(a[2], what)};
}

inline void print_table(const EvalReport& r, std::ostream& out) {
  std::size_t width = 6;
  for (const auto& [k, v] : r.metrics) width = std::max(width, k.size());
  for (const auto& [k, v] : r.per_class) width = std::max(width, k.size() + 2);
  out << "task: " << r.task << '\n';
  auto row = [&](const std::string& name, double v) {
    out << std::left << std::setw(static_cast<int>(width)) << name << "  " << std::right
        << std::fixed << std::setprecision(2) << std::setw(8) << v << '\n';
  };
  for (const auto& [k, v] : r.metrics) row(k, v);
  if (!r.per_class.empty()) {
    out << "per class:\n";
    for (const auto& [k, v] : r.per_class) row("  " + k, v);
  }
  for (const auto& [k, n] : r.counts) out << k << ": " << n << '\n';
  for (const auto& u : r.unsupported) out << u << ": unsupported\n";
  out.unsetf(std::ios::fixed);
}

}  // namespace detail

namespace detail {

struct Paired {
  std::vector<std::string> ids;
  std::vector<const json*> preds;
  std::vector<const json*> gts;
};

// Aligns prediction and ground-truth records by id; the order is the
// ground-truth file order.
inline Paired pair_records(const std::vector<io::JsonLine>& preds,
                           const std::vector<io::JsonLine>& gts) {
  std::map<std::string, const json*> by_id;
  for (const auto& p : preds) {
    auto id = id_of(p.value);
    if (!by_id.emplace(id, &p.value).second) {
      throw io::schema_error("duplicate prediction id '" + id + "'");
    }
  }
  Paired out;
  std::set<std::string> seen;
  for (const auto& g : gts) {
    auto id = id_of(g.value);
    if (!seen.insert(id).second) throw io::schema_error("duplicate ground truth id '" + id + "'");
    auto it = by_id.find(id);
    if (it == by_id.end()) throw io::schema_error("no prediction for id '" + id + "'");
    out.ids.push_back(id);
    out.preds.push_back(it->second);
    out.gts.push_back(&g.value);
  }
  if (by_id.size() != seen.size()) {
    for (const auto& [id, v] : by_id) {
      if (!seen.count(id)) throw io::schema_error("prediction id '" + id + "' not in ground truth");
    }
  }
  return out;
}

inline std::vector<Tokens> references_of(const json& g, std::initializer_list<const char*> keys) {
  std::vector<Tokens> refs;
  if (g.contains("references")) {
    for (const auto& r : io::detail::as_array(g.at("references"), "references")) {
      if (!r.is_string()) throw io::schema_error("references must be strings");
      refs.push_back(tokenize(r.get<std::string>()));
    }
    if (refs.empty()) throw io::schema_error("empty references");
    return refs;
  }
  refs.push_back(tokenize(text_field(g, keys)));
  return refs;
}

inline void add_detection_metrics(EvalReport& rep, const Paired& p, double iou_thr,
                                  std::optional<int> step) {
  std::vector<ImageDetections> preds;
  std::vector<ImageGroundTruth> gts;
  for (std::size_t i = 0; i < p.ids.size(); ++i) {
    preds.push_back({p.ids[i], detections_of(*p.preds[i], true, step)});
    ImageGroundTruth g{p.ids[i], {}};
    for (auto& d : detections_of(*p.gts[i], false, step)) g.objects.push_back({d.category, d.box});
    gts.push_back(std::move(g));
  }
  const auto res = map50(preds, gts, iou_thr);
  rep.metrics.push_back({"mAP@" + std::to_string(static_cast<int>(std::lround(iou_thr * 100))),
                         100.0 * res.map});
  for (const auto& [cls, ap] : res.ap) rep.per_class[cls] = 100.0 * ap;
  std::size_t n = 0;
  for (const auto& [cls, c] : res.gt_count) n += c;
  rep.counts["gt_objects"] = n;
}

inline void add_relation_metrics(EvalReport& rep, const Paired& p, bool decomposition,
                                 std::optional<double> gate) {
  std::size_t tp = 0, np = 0, ng = 0;
  for (std::size_t i = 0; i < p.ids.size(); ++i) {
    auto pr = triples_of(*p.preds[i], decomposition);
    auto gt = triples_of(*p.gts[i], decomposition);
    tp += count_relation_matches(pr, gt, gate);
    np += pr.size();
    ng += gt.size();
  }
  const auto r = precision_recall(tp, np, ng);
  rep.metrics.push_back({"Precision", 100.0 * r.precision});
  rep.metrics.push_back({"Recall", 100.0 * r.recall});
  rep.metrics.push_back({"F1", 100.0 * r.f1});
  rep.counts["predicted_triples"] = np;
  rep.counts["gt_triples"] = ng;
}

inline void add_text_metrics(EvalReport& rep, const Paired& p,
                             std::initializer_list<const char*> keys) {
  std::vector<Tokens> cands;
  std::vector<std::vector<Tokens>> refs;
  double rouge = 0.0;
  for (std::size_t i = 0; i < p.ids.size(); ++i) {
    cands.push_back(tokenize(text_field(*p.preds[i], keys)));
    refs.push_back(references_of(*p.gts[i], keys));
    double best = 0.0;
    for (const auto& r : refs.back()) best = std::max(best, rouge_l(cands.back(), r));
    rouge += best;
  }
  for (int n = 1; n <= 4; ++n) {
    rep.metrics.push_back({"BLEU-" + std::to_string(n), 100.0 * corpus_bleu(cands, refs, n)});
  }
  rep.metrics.push_back(
      {"ROUGE-L", p.ids.empty() ? 0.0 : 100.0 * rouge / static_cast<double>(p.ids.size())});
  for (auto u : kUnsupportedTextMetrics) rep.unsupported.emplace_back(u);
}

inline std::vector<Point3> path_of(const json& v) {
  std::vector<Point3> out;
  if (v.contains("path")) {
    for (const auto& pt : io::detail::as_array(v.at("path"), "path")) {
      out.push_back(point_of(pt, "path"));
    }
  } else if (auto doc = response_of(v)) {
    out = extract::trajectory_points(*doc);
  } else {
    throw io::schema_error("record needs 'path' or 'response'");
  }
  if (out.empty()) throw io::schema_error("empty path");
  return out;
}

inline double path_length(const std::vector<Point3>& path) {
  double l = 0.0;
  for (std::size_t i = 1; i < path.size(); ++i) l += distance(path[i - 1], path[i]);
  return l;
}

inline void add_navigation_metrics(EvalReport& rep, const Paired& p,
                                   std::optional<double> radius) {
  std::vector<NavEpisode> eps;
  for (std::size_t i = 0; i < p.ids.size(); ++i) {
    const json& g = *p.gts[i];
    NavEpisode ep;
    ep.predicted_path = path_of(*p.preds[i]);
    std::optional<std::vector<Point3>> gt_path;
    if (g.contains("goal")) {
      ep.goal = point_of(g.at("goal"), "goal");
    } else {
      gt_path = path_of(g);
      ep.goal = gt_path->back();
    }
    if (g.contains("shortest_path_length")) {
      ep.shortest_path_length = io::detail::as_double(g.at("shortest_path_length"),
                                                      "shortest_path_length");
    } else {
      if (!gt_path) gt_path = path_of(g);
      ep.shortest_path_length = path_length(*gt_path);
    }
    if (radius) {
      ep.success_radius = *radius;
    } else if (g.contains("success_radius")) {
      ep.success_radius = io::detail::as_double(g.at("success_radius"), "success_radius");
    } else {
      throw io::schema_error("no success radius for '" + p.ids[i] +
                             "'; pass --success-radius or set 'success_radius'");
    }
    eps.push_back(std::move(ep));
  }
  const auto m = nav_metrics(eps);
  rep.metrics.push_back({"NE", m.ne});
  rep.metrics.push_back({"SR", m.sr});
  rep.metrics.push_back({"OSR", m.osr});
  rep.metrics.push_back({"SPL", m.spl});
}

inline std::string answer_of(const json& v) {
  return text_field(v, {"answer", "label"});
}

}  // namespace detail

inline EvalReport evaluate(const EvalOptions& opt, const std::vector<io::JsonLine>& preds,
                           const std::vector<io::JsonLine>& gts) {
  const auto p = detail::pair_records(preds, gts);
  EvalReport rep;
  rep.task = std::string(to_string(opt.task));
  rep.counts["records"] = p.ids.size();
  switch (opt.task) {
    case Task::detection:
      detail::add_detection_metrics(rep, p, opt.iou, std::nullopt);
      break;
    case Task::decomposition:
      detail::add_detection_metrics(rep, p, opt.iou, 2);
      detail::add_relation_metrics(rep, p, true, opt.relation_iou_gate);
      break;
    case Task::relation:
      detail::add_relation_metrics(rep, p, false, opt.relation_iou_gate);
      break;
    case Task::captioning:
      detail::add_text_metrics(rep, p, {"caption", "text"});
      break;
    case Task::decision:
      detail::add_text_metrics(rep, p, {"plan", "text"});
      break;
    case Task::classification: {
      std::vector<std::string> a, b;
      for (std::size_t i = 0; i < p.ids.size(); ++i) {
        a.push_back(detail::answer_of(*p.preds[i]));
        b.push_back(detail::answer_of(*p.gts[i]));
      }
      rep.metrics.push_back({"Acc", 100.0 * accuracy(a, b)});
      break;
    }
    case Task::vqa: {
      std::vector<std::string> a, b, types;
      for (std::size_t i = 0; i < p.ids.size(); ++i) {
        a.push_back(detail::answer_of(*p.preds[i]));
        b.push_back(detail::answer_of(*p.gts[i]));
        types.push_back(io::detail::need_string(*p.gts[i], "type"));
      }
      const auto r = accuracy_by_type(a, b, types);
      for (const auto& [t, acc] : r.per_type) rep.metrics.push_back({t, 100.0 * acc});
      rep.metrics.push_back({"Avg. Acc", 100.0 * r.macro});
      rep.metrics.push_back({"Overall", 100.0 * r.overall});
      break;
    }
    case Task::scheduling:
      detail::add_navigation_metrics(rep, p, opt.success_radius);
      break;
  }
  return rep;
}

inline io::ordered_json report_to_json(const EvalReport& r) {
  io::ordered_json j;
  j["task"] = r.task;
  io::ordered_json m = io::ordered_json::object();
  for (const auto& [k, v] : r.metrics) m[k] = v;
  j["metrics"] = std::move(m);
  if (!r.per_class.empty()) {
    io::ordered_json pc = io::ordered_json::object();
    for (const auto& [k, v] : r.per_class) pc[k] = v;
    j["per_class"] = std::move(pc);
  }
  io::ordered_json c = io::ordered_json::object();
  for (const auto& [k, v] : r.counts) c[k] = v;
  j["counts"] = std::move(c);
  if (!r.unsupported.empty()) j["unsupported"] = r.unsupported;
  return j;
}

inline int cmd_eval(const EvalOptions& opt, Streams io_) {
  if (!(opt.iou > 0.0 && opt.iou <= 1.0)) {
    io_.err << "error: --iou must be in (0, 1]\n";
    return kFormatError;
  }
  if (opt.success_radius && !(*opt.success_radius > 0.0)) {
    io_.err << "error: --success-radius must be > 0\n";
    return kFormatError;
  }
  EvalReport rep;
  try {
    rep = evaluate(opt, io::read_jsonl(opt.predictions), io::read_jsonl(opt.ground_truth));
  } catch (const Error& e) {
    io_.err << "error: " << e.what() << '\n';
    return detail::exit_for(e);
  } catch (const std::exception& e) {
    io_.err << "error: " << e.what() << '\n';
    return kFormatError;
  }
  if (opt.json) {
    io_.out << report_to_json(rep).dump() << '\n';
  } else {
    detail::print_table(rep, io_.out);
  }
  return kSuccess;
}

// ---------------------------------------------------------------------------
// decode

struct DecodeOptions {
  std::string weights;
  std::string latent;
  int max_steps = 1;
  double threshold = 1e-3;
};

inline io::ordered_json trajectory_to_json(const Trajectory& t) {
  io::ordered_json j;
  j["steps"] = t.states.size();
  j["terminated_by"] = std::string(to_string(t.terminated_by));
  io::ordered_json states = io::ordered_json::array();
  for (const auto& s : t.states) {
    io::ordered_json row = io::ordered_json::array();
    for (int i = 0; i < kPoseDim; ++i) row.push_back(s[i]);
    states.push_back(std::move(row));
  }
  j["states"] = std::move(states);
  return j;
}

inline int cmd_decode(const DecodeOptions& opt, Streams io_) {
  try {
    const auto w = io::weights_from_json(io::json::parse(io::read_file(opt.weights)));
    const auto h = io::vector_from_json(io::json::parse(io::read_file(opt.latent)));
    DecoderConfig cfg{opt.max_steps, opt.threshold};
    cfg.validate();
    io_.out << trajectory_to_json(decode(h, w, cfg)).dump() << '\n';
  } catch (const Error& e) {
    io_.err << "error: " << e.what() << '\n';
    return detail::exit_for(e);
  } catch (const std::exception& e) {
    io_.err << "error: " << e.what() << '\n';
    return kFormatError;
  }
  return kSuccess;
}

// ---------------------------------------------------------------------------
// fit

struct FitOptions {
  std::string targets;  // {"h_tra": [...], "trajectory": [[6], ...]}
  std::string weights_out;
  std::string curve_out;
  double lr = 0.05;
  int iters = 500;
  std::uint64_t seed = 0;
  int d_h = 8;
  std::optional<int> max_steps;  // defaults to the target length
  double threshold = 1e-3;
  bool json = false;
};

struct FitTargets {
  Eigen::VectorXd h_tra;
  std::vector<TrajState> trajectory;
};

inline FitTargets targets_from_json(const io::json& j) {
  if (!j.is_object()) throw io::schema_error("targets must be a JSON object");
  FitTargets t;
  t.h_tra = io::vector_from_json(j, "h_tra");
  for (const auto& row : io::detail::as_array(io::detail::need(j, "trajectory"), "trajectory")) {
    auto a = io::detail::as_array(row, "trajectory state", kPoseDim);
    TrajState s;
    for (int i = 0; i < kPoseDim; ++i) {
      s[i] = io::detail::as_double(a[static_cast<std::size_t>(i)], "trajectory state");
      if (!(s[i] > 0.0 && s[i] < 1.0)) {
        throw Error(ErrorKind::OutOfBounds, "target state " + std::to_string(t.trajectory.size()) +
                                                " component " + std::to_string(i) +
                                                " outside (0, 1)");
      }
    }
    t.trajectory.push_back(s);
  }
  if (t.trajectory.empty()) throw Error(ErrorKind::EmptyGroundTruth, "no target states");
  return t;
}

inline int cmd_fit(const FitOptions& opt, Streams io_) {
  FitTargets t;
  DecoderConfig cfg;
  try {
    t = targets_from_json(io::json::parse(io::read_file(opt.targets)));
    cfg.max_steps = opt.max_steps.value_or(static_cast<int>(t.trajectory.size()));
    cfg.threshold = opt.threshold;
    cfg.validate();
    if (opt.d_h < 1) throw Error(ErrorKind::InvalidArgument, "--d-h must be >= 1");
    if (!(opt.lr > 0.0) || opt.iters < 0) {
      throw Error(ErrorKind::InvalidArgument, "--lr must be > 0 and --iters >= 0");
    }
  } catch (const std::exception& e) {
    io_.err << "error: " << e.what() << '\n';
    return kFormatError;
  }
  FitResult res;
  try {
    res = fit(t.h_tra, t.trajectory, cfg, opt.lr, opt.iters, opt.d_h, opt.seed);
  } catch (const Error& e) {
    io_.err << "error: " << e.what() << '\n';
    return e.kind() == ErrorKind::DivergenceDetected ? kInternalError : detail::exit_for(e);
  }
  std::string curve = "iteration,loss\n";
  for (std::size_t i = 0; i < res.loss_curve.size(); ++i) {
    curve += std::to_string(i) + "," + detail::shortest(res.loss_curve[i]) + "\n";
  }
  try {
    detail::write_file(opt.weights_out, io::weights_to_json(res.weights).dump() + "\n");
    detail::write_file(opt.curve_out, curve);
  } catch (const std::exception& e) {
    io_.err << "error: " << e.what() << '\n';
    return kFormatError;
  }
  const double initial = res.loss_curve.front(), final_loss = res.loss_curve.back();
  if (opt.json) {
    io::ordered_json s;
    s["iterations"] = opt.iters;
    s["initial_loss"] = initial;
    s["final_loss"] = final_loss;
    io_.out << s.dump() << '\n';
  } else {
    io_.err << "loss " << detail::shortest(initial) << " -> " << detail::shortest(final_loss)
            << " after " << opt.iters << " iterations\n";
  }
  return kSuccess;
}

}  // namespace rsvl::cli
