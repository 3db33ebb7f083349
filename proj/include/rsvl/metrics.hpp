#pragma once

// Evaluation metrics: detection AP at an IoU threshold, relation-triple F1,
// BLEU-n, ROUGE-L, answer accuracy and navigation NE/SR/OSR/SPL.

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <numeric>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "rsvl/error.hpp"
#include "rsvl/grammar.hpp"

namespace rsvl {

// Boxes are closed integer rectangles: area = (x2 - x1 + 1) * (y2 - y1 + 1).
inline double iou(const Box& a, const Box& b) noexcept {
  auto area = [](const Box& r) {
    return static_cast<double>(r.x2 - r.x1 + 1) * static_cast<double>(r.y2 - r.y1 + 1);
  };
  const int ix = std::min(a.x2, b.x2) - std::max(a.x1, b.x1) + 1;
  const int iy = std::min(a.y2, b.y2) - std::max(a.y1, b.y1) + 1;
  if (ix <= 0 || iy <= 0) return 0.0;
  const double inter = static_cast<double>(ix) * static_cast<double>(iy);
  return inter / (area(a) + area(b) - inter);
}

struct DetPrediction {
  std::string category;
  Box box;
  double confidence = 1.0;
};

struct GtObject {
  std::string category;
  Box box;
};

struct ImageDetections {
  std::string image_id;
  std::vector<DetPrediction> predictions;
};

struct ImageGroundTruth {
  std::string image_id;
  std::vector<GtObject> objects;
};

struct DetectionResult {
  std::map<std::string, double> ap;  // classes present in the ground truth
  std::map<std::string, std::size_t> gt_count;
  double map = 0.0;
};

// Per-prediction match flags for one class in one image: predictions are
// visited by descending confidence (stable on ties) and each takes the
// unmatched ground truth with the highest IoU >= threshold.
inline std::vector<bool> match_detections(const std::vector<const DetPrediction*>& preds,
                                          const std::vector<const GtObject*>& gts,
                                          double iou_threshold) {
  std::vector<std::size_t> order(preds.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return preds[a]->confidence > preds[b]->confidence;
  });
  std::vector<bool> taken(gts.size(), false), tp(preds.size(), false);
  for (auto pi : order) {
    double best = -1.0;
    std::size_t best_g = gts.size();
    for (std::size_t g = 0; g < gts.size(); ++g) {
      if (taken[g]) continue;
      const double o = iou(preds[pi]->box, gts[g]->box);
      if (o >= iou_threshold && o > best) {
        best = o;
        best_g = g;
      }
    }
    if (best_g < gts.size()) {
      taken[best_g] = true;
      tp[pi] = true;
    }
  }
  return tp;
}

// All-points average precision from (confidence, is_tp) pairs. Precision
// and recall are taken at each distinct confidence, so tied scores form a
// single operating point and the result does not depend on record order.
inline double average_precision(std::vector<std::pair<double, bool>> scored, std::size_t n_gt) {
  if (n_gt == 0) return 0.0;
  std::sort(scored.begin(), scored.end(),
            [](const auto& a, const auto& b) { return a.first > b.first; });
  std::vector<double> recall, precision;
  std::size_t tp = 0, seen = 0;
  for (std::size_t i = 0; i < scored.size(); ++i) {
    ++seen;
    tp += scored[i].second ? 1 : 0;
    if (i + 1 < scored.size() && scored[i + 1].first == scored[i].first) continue;
    recall.push_back(static_cast<double>(tp) / static_cast<double>(n_gt));
    precision.push_back(static_cast<double>(tp) / static_cast<double>(seen));
  }
  // monotone envelope, right to left
  for (std::size_t i = precision.size(); i-- > 1;) {
    precision[i - 1] = std::max(precision[i - 1], precision[i]);
  }
  double ap = 0.0, prev_r = 0.0;
  for (std::size_t i = 0; i < recall.size(); ++i) {
    ap += (recall[i] - prev_r) * precision[i];
    prev_r = recall[i];
  }
  return ap;
}

// mAP over the classes that appear in the ground truth. Predictions for
// images without ground truth count as false positives.
inline DetectionResult map50(const std::vector<ImageDetections>& preds,
                             const std::vector<ImageGroundTruth>& gts,
                             double iou_threshold = 0.5) {
  std::map<std::string, const ImageGroundTruth*> gt_by_image;
  DetectionResult res;
  for (const auto& img : gts) {
    gt_by_image[img.image_id] = &img;
    for (const auto& o : img.objects) ++res.gt_count[o.category];
  }
  std::map<std::string, std::vector<std::pair<double, bool>>> scored;
  for (const auto& img : preds) {
    std::map<std::string, std::vector<const DetPrediction*>> by_class;
    for (const auto& p : img.predictions) by_class[p.category].push_back(&p);
    const auto it = gt_by_image.find(img.image_id);
    for (const auto& [cls, ps] : by_class) {
      if (!res.gt_count.count(cls)) continue;
      std::vector<const GtObject*> g;
      if (it != gt_by_image.end()) {
        for (const auto& o : it->second->objects) {
          if (o.category == cls) g.push_back(&o);
        }
      }
      const auto tp = match_detections(ps, g, iou_threshold);
      for (std::size_t i = 0; i < ps.size(); ++i) scored[cls].push_back({ps[i]->confidence, tp[i]});
    }
  }
  double sum = 0.0;
  for (const auto& [cls, n] : res.gt_count) {
    const double ap = average_precision(scored[cls], n);
    res.ap[cls] = ap;
    sum += ap;
  }
  res.map = res.gt_count.empty() ? 0.0 : sum / static_cast<double>(res.gt_count.size());
  return res;
}

// ---------------------------------------------------------------------------
// Relation triples

struct RelationTriple {
  std::string subject;
  std::string object;
  std::string relation;
  std::optional<Box> subject_box;
  std::optional<Box> object_box;
};

struct PrecisionRecall {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::size_t true_positives = 0;
  std::size_t predicted = 0;
  std::size_t ground_truth = 0;
};

inline PrecisionRecall precision_recall(std::size_t tp, std::size_t n_pred, std::size_t n_gt) {
  PrecisionRecall r;
  r.true_positives = tp;
  r.predicted = n_pred;
  r.ground_truth = n_gt;
  if (n_pred) r.precision = static_cast<double>(tp) / static_cast<double>(n_pred);
  if (n_gt) r.recall = static_cast<double>(tp) / static_cast<double>(n_gt);
  // 2PR / (P + R) == 2 tp / (n_pred + n_gt)
  if (tp) r.f1 = 2.0 * static_cast<double>(tp) / static_cast<double>(n_pred + n_gt);
  return r;
}

namespace detail {
inline std::string fold(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  std::string out(s.substr(b, e - b + 1));
  for (auto& c : out) {
    if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
  }
  return out;
}
}  // namespace detail

// Number of predictions matched one-to-one against ground truth triples
// with equal case-folded fields; with an IoU gate, both boxes must also
// overlap their counterparts by at least the gate.
inline std::size_t count_relation_matches(const std::vector<RelationTriple>& preds,
                                          const std::vector<RelationTriple>& gts,
                                          std::optional<double> iou_gate = std::nullopt) {
  auto key = [](const RelationTriple& t) {
    auto s = detail::fold(t.subject), o = detail::fold(t.object), r = detail::fold(t.relation);
    if (s.empty() || o.empty() || r.empty()) {
      throw Error(ErrorKind::InvalidArgument, "relation triple with an empty field");
    }
    return std::array<std::string, 3>{s, r, o};
  };
  auto boxes_ok = [&](const RelationTriple& p, const RelationTriple& g) {
    if (!iou_gate) return true;
    if (!p.subject_box || !p.object_box || !g.subject_box || !g.object_box) return false;
    return iou(*p.subject_box, *g.subject_box) >= *iou_gate &&
           iou(*p.object_box, *g.object_box) >= *iou_gate;
  };
  std::vector<std::array<std::string, 3>> gkeys;
  for (const auto& g : gts) gkeys.push_back(key(g));
  std::vector<bool> used(gts.size(), false);
  std::size_t tp = 0;
  for (const auto& p : preds) {
    const auto pk = key(p);
    for (std::size_t g = 0; g < gts.size(); ++g) {
      if (!used[g] && gkeys[g] == pk && boxes_ok(p, gts[g])) {
        used[g] = true;
        ++tp;
        break;
      }
    }
  }
  return tp;
}

inline PrecisionRecall relation_f1(const std::vector<RelationTriple>& preds,
                                   const std::vector<RelationTriple>& gts,
                                   std::optional<double> iou_gate = std::nullopt) {
  return precision_recall(count_relation_matches(preds, gts, iou_gate), preds.size(), gts.size());
}

// ---------------------------------------------------------------------------
// Text metrics

using Tokens = std::vector<std::string>;

// Lower-cases, turns punctuation into separators except '.', ',', '-' or
// ':' between two digits, and splits on whitespace.
inline Tokens tokenize(std::string_view text) {
  auto is_digit = [](char c) { return c >= '0' && c <= '9'; };
  auto is_punct = [](char c) {
    return (c >= '!' && c <= '/') || (c >= ':' && c <= '@') || (c >= '[' && c <= '`') ||
           (c >= '{' && c <= '~');
  };
  std::string clean(text);
  for (std::size_t i = 0; i < clean.size(); ++i) {
    char& c = clean[i];
    if (c >= 'A' && c <= 'Z') {
      c = static_cast<char>(c - 'A' + 'a');
    } else if (is_punct(c)) {
      const bool numeric = (c == '.' || c == ',' || c == '-' || c == ':') && i > 0 &&
                           i + 1 < text.size() && is_digit(text[i - 1]) && is_digit(text[i + 1]);
      if (!numeric) c = ' ';
    }
  }
  Tokens out;
  std::size_t i = 0;
  while (i < clean.size()) {
    while (i < clean.size() && detail::is_ws(clean[i])) ++i;
    std::size_t j = i;
    while (j < clean.size() && !detail::is_ws(clean[j])) ++j;
    if (j > i) out.emplace_back(clean.substr(i, j - i));
    i = j;
  }
  return out;
}

namespace detail {
inline std::map<Tokens, std::size_t> ngram_counts(const Tokens& t, std::size_t n) {
  std::map<Tokens, std::size_t> out;
  for (std::size_t i = 0; i + n <= t.size(); ++i) ++out[Tokens(t.begin() + i, t.begin() + i + n)];
  return out;
}
}  // namespace detail

// Corpus BLEU-n with uniform weights and no smoothing: any zero clipped
// precision makes the score 0. Reference length per segment is the one
// closest to the candidate (shorter on ties).
inline double corpus_bleu(const std::vector<Tokens>& candidates,
                          const std::vector<std::vector<Tokens>>& references, int n) {
  if (n < 1 || n > 4) throw Error(ErrorKind::InvalidArgument, "BLEU order must be in 1..4");
  if (candidates.size() != references.size()) {
    throw Error(ErrorKind::LengthMismatch, "candidates vs references");
  }
  std::vector<double> matched(n, 0.0), total(n, 0.0);
  double cand_len = 0.0, ref_len = 0.0;
  for (std::size_t s = 0; s < candidates.size(); ++s) {
    const auto& cand = candidates[s];
    const auto& refs = references[s];
    cand_len += static_cast<double>(cand.size());
    if (!refs.empty()) {
      std::size_t best = refs.front().size();
      for (const auto& r : refs) {
        const auto d = [&](std::size_t len) {
          return len > cand.size() ? len - cand.size() : cand.size() - len;
        };
        if (d(r.size()) < d(best) || (d(r.size()) == d(best) && r.size() < best)) best = r.size();
      }
      ref_len += static_cast<double>(best);
    }
    for (int k = 1; k <= n; ++k) {
      const auto cc = detail::ngram_counts(cand, static_cast<std::size_t>(k));
      std::map<Tokens, std::size_t> max_ref;
      for (const auto& r : refs) {
        for (const auto& [g, c] : detail::ngram_counts(r, static_cast<std::size_t>(k))) {
          max_ref[g] = std::max(max_ref[g], c);
        }
      }
      for (const auto& [g, c] : cc) {
        total[k - 1] += static_cast<double>(c);
        auto it = max_ref.find(g);
        if (it != max_ref.end()) matched[k - 1] += static_cast<double>(std::min(c, it->second));
      }
    }
  }
  if (cand_len == 0.0) return 0.0;
  double log_sum = 0.0;
  for (int k = 0; k < n; ++k) {
    if (matched[k] == 0.0) return 0.0;
    log_sum += std::log(matched[k] / total[k]);
  }
  const double bp = cand_len > ref_len ? 1.0 : std::exp(1.0 - ref_len / cand_len);
  return bp * std::exp(log_sum / n);
}

inline double bleu(const Tokens& candidate, const std::vector<Tokens>& references, int n) {
  return corpus_bleu({candidate}, {references}, n);
}

inline std::size_t lcs_length(const Tokens& a, const Tokens& b) {
  std::vector<std::size_t> row(b.size() + 1, 0), prev(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    std::swap(row, prev);
    for (std::size_t j = 1; j <= b.size(); ++j) {
      row[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], row[j - 1]);
    }
  }
  return a.empty() ? 0 : row[b.size()];
}

// LCS F-measure with beta = 1.
inline double rouge_l(const Tokens& candidate, const Tokens& reference) {
  if (candidate.empty() || reference.empty()) return 0.0;
  const double lcs = static_cast<double>(lcs_length(candidate, reference));
  if (lcs == 0.0) return 0.0;
  const double p = lcs / static_cast<double>(candidate.size());
  const double r = lcs / static_cast<double>(reference.size());
  return 2.0 * p * r / (p + r);
}

// ---------------------------------------------------------------------------
// Answer accuracy

// Case-folded, trimmed, trailing periods removed.
inline std::string normalize_answer(std::string_view s) {
  auto out = detail::fold(s);
  while (!out.empty() && out.back() == '.') out.pop_back();
  return detail::fold(out);
}

inline double accuracy(const std::vector<std::string>& preds, const std::vector<std::string>& gts) {
  if (preds.size() != gts.size()) {
    throw Error(ErrorKind::LengthMismatch,
                std::to_string(preds.size()) + " predictions vs " + std::to_string(gts.size()));
  }
  if (preds.empty()) return 0.0;
  std::size_t hit = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    hit += normalize_answer(preds[i]) == normalize_answer(gts[i]) ? 1 : 0;
  }
  return static_cast<double>(hit) / static_cast<double>(preds.size());
}

struct TypedAccuracy {
  std::map<std::string, double> per_type;
  double macro = 0.0;    // mean over question types
  double overall = 0.0;  // over all questions
};

inline TypedAccuracy accuracy_by_type(const std::vector<std::string>& preds,
                                      const std::vector<std::string>& gts,
                                      const std::vector<std::string>& types) {
  if (types.size() != gts.size()) throw Error(ErrorKind::LengthMismatch, "question types");
  TypedAccuracy out;
  out.overall = accuracy(preds, gts);
  std::map<std::string, std::pair<std::vector<std::string>, std::vector<std::string>>> split;
  for (std::size_t i = 0; i < types.size(); ++i) {
    split[types[i]].first.push_back(preds[i]);
    split[types[i]].second.push_back(gts[i]);
  }
  double sum = 0.0;
  for (const auto& [t, pg] : split) {
    out.per_type[t] = accuracy(pg.first, pg.second);
    sum += out.per_type[t];
  }
  if (!split.empty()) out.macro = sum / static_cast<double>(split.size());
  return out;
}

// ---------------------------------------------------------------------------
// Navigation

using Point3 = std::array<double, 3>;

struct NavEpisode {
  std::vector<Point3> predicted_path;
  Point3 goal{};
  double shortest_path_length = 0.0;
  double success_radius = 0.0;
};

struct EpisodeScore {
  double navigation_error = 0.0;
  bool success = false;
  bool oracle_success = false;
  double path_length = 0.0;
  double spl = 0.0;
};

struct NavMetrics {
  double ne = 0.0;   // scene units
  double sr = 0.0;   // percent
  double osr = 0.0;  // percent
  double spl = 0.0;  // percent
  std::size_t episodes = 0;
};

inline double distance(const Point3& a, const Point3& b) noexcept {
  const double dx = a[0] - b[0], dy = a[1] - b[1], dz = a[2] - b[2];
  return std::sqrt(dx * dx + dy * dy + dz * dz);
}

inline EpisodeScore score_episode(const NavEpisode& ep) {
  if (ep.predicted_path.empty()) throw Error(ErrorKind::InvalidArgument, "empty predicted path");
  if (!(ep.success_radius > 0.0)) throw Error(ErrorKind::InvalidArgument, "success radius <= 0");
  if (!(ep.shortest_path_length >= 0.0)) {
    throw Error(ErrorKind::InvalidArgument, "negative shortest path length");
  }
  EpisodeScore s;
  s.navigation_error = distance(ep.predicted_path.back(), ep.goal);
  s.success = s.navigation_error <= ep.success_radius;
  double closest = s.navigation_error;
  for (std::size_t i = 0; i < ep.predicted_path.size(); ++i) {
    closest = std::min(closest, distance(ep.predicted_path[i], ep.goal));
    if (i) s.path_length += distance(ep.predicted_path[i - 1], ep.predicted_path[i]);
  }
  s.oracle_success = closest <= ep.success_radius;
  const double l = ep.shortest_path_length;
  const double denom = std::max(s.path_length, l);
  if (!s.success) {
    s.spl = 0.0;
  } else if (denom == 0.0) {
    s.spl = 1.0;
  } else {
    s.spl = l / denom;
  }
  return s;
}

inline NavMetrics nav_metrics(const std::vector<NavEpisode>& episodes) {
  if (episodes.empty()) throw Error(ErrorKind::EmptyEpisodeSet, "");
  NavMetrics m;
  m.episodes = episodes.size();
  for (const auto& ep : episodes) {
    const auto s = score_episode(ep);
    m.ne += s.navigation_error;
    m.sr += s.success ? 1.0 : 0.0;
    m.osr += s.oracle_success ? 1.0 : 0.0;
    m.spl += s.spl;
  }
  const double n = static_cast<double>(episodes.size());
  m.ne /= n;
  m.sr = 100.0 * m.sr / n;
  m.osr = 100.0 * m.osr / n;
  m.spl = 100.0 * m.spl / n;
  return m;
}

// ---------------------------------------------------------------------------

inline constexpr std::string_view kUnsupportedTextMetrics[] = {"METEOR", "CIDEr", "SPICE"};

struct EvalReport {
  std::string task;
  std::vector<std::pair<std::string, double>> metrics;  // in report order
  std::map<std::string, std::size_t> counts;
  std::map<std::string, double> per_class;
  std::vector<std::string> unsupported;

  std::optional<double> get(std::string_view name) const {
    for (const auto& [k, v] : metrics) {
      if (k == name) return v;
    }
    return std::nullopt;
  }
};

}  // namespace rsvl
