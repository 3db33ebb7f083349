#pragma once

// Random generators and slow reference implementations used by the unit
// tests and the acceptance binary.

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "rsvl/grammar.hpp"
#include "rsvl/metrics.hpp"
#include "rsvl/trajdec.hpp"

namespace rsvl::test {

inline std::string fixture_path(const std::string& rel) {
  return std::string(RSVL_FIXTURE_DIR) + "/" + rel;
}

// ---------------------------------------------------------------------------
// markup documents

inline std::string random_decimal_text(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> kind(0, 5);
  std::uniform_int_distribution<int> small(0, 999);
  std::uniform_int_distribution<int> frac(0, 99);
  std::string s;
  if (rng() % 4 == 0) s += '-';
  switch (kind(rng)) {
    case 0: return s + std::to_string(small(rng));
    case 1: return s + std::to_string(small(rng)) + "." + std::to_string(frac(rng));
    case 2: return s + std::to_string(small(rng)) + ".0";
    case 3: return s + "0." + std::to_string(small(rng));
    case 4: return s + std::to_string(small(rng) % 10) + "e" + std::to_string(small(rng) % 5);
    default: return s + std::to_string(small(rng)) + "." + std::to_string(small(rng)) + "E-2";
  }
}

inline Decimal random_decimal(std::mt19937_64& rng) {
  return *Decimal::from_text(random_decimal_text(rng));
}

inline Box random_box(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> c(0, kNormMax);
  int a = c(rng), b = c(rng), x = c(rng), y = c(rng);
  return Box{std::min(a, b), std::min(x, y), std::max(a, b), std::max(x, y)};
}

// Free text without "<|"; includes '<', '|', '>' and multibyte characters
// on their own so the scanner sees near-misses.
inline std::string random_text(std::mt19937_64& rng) {
  static const std::vector<std::string> pieces = {
      "There are ", "ship", " in the image", ", ", ".", "\n", " ", "Step1: ", "a|b", "<",
      ">", "|>", "x<y", "°", "港口", "é", "[1, 2]", "0.5", "\t", "is ", "the ", "|"};
  std::uniform_int_distribution<std::size_t> pick(0, pieces.size() - 1);
  std::uniform_int_distribution<int> len(1, 6);
  std::string s;
  const int n = len(rng);
  for (int i = 0; i < n; ++i) {
    auto p = pieces[pick(rng)];
    if (!s.empty() && s.back() == '<' && p.front() == '|') continue;
    s += p;
  }
  if (s.empty()) s = "x";
  return s;
}

inline std::string random_name(std::mt19937_64& rng) {
  static const std::vector<std::string> names = {
      "ship", "storage tank", "Wellington Road", "aircraft", "docked at", "parked next to",
      "x", "a b", "港口", "left-of", "1st avenue"};
  std::uniform_int_distribution<std::size_t> pick(0, names.size() - 1);
  return names[pick(rng)];
}

// Random well-formed document: maximal text nodes, optional leading task
// tag, non-empty lists.
inline MarkupDoc random_doc(std::mt19937_64& rng) {
  MarkupDoc d;
  std::uniform_int_distribution<int> count(0, 10), kind(0, 5), list(1, 4);
  if (rng() % 3 == 0) d.nodes.push_back(node::Task{static_cast<TaskKind>(rng() % 4)});
  const int n = count(rng);
  for (int i = 0; i < n; ++i) {
    switch (kind(rng)) {
      case 0:
        if (d.nodes.empty() || !std::holds_alternative<node::Text>(d.nodes.back())) {
          d.nodes.push_back(node::Text{random_text(rng)});
        }
        break;
      case 1: d.nodes.push_back(node::Ref{random_name(rng)}); break;
      case 2: d.nodes.push_back(node::Rel{random_name(rng)}); break;
      case 3:
        d.nodes.push_back(node::Pos{Pos3{random_decimal(rng), random_decimal(rng),
                                         random_decimal(rng)}});
        break;
      case 4: {
        node::PoseSeq p;
        for (int k = list(rng); k > 0; --k) {
          Pose6 pose;
          for (auto& v : pose.v) v = random_decimal(rng);
          p.poses.push_back(pose);
        }
        d.nodes.push_back(std::move(p));
        break;
      }
      default: {
        node::Det det;
        for (int k = list(rng); k > 0; --k) det.boxes.push_back(random_box(rng));
        d.nodes.push_back(std::move(det));
        break;
      }
    }
  }
  return d;
}

// ---------------------------------------------------------------------------
// geometry

// IoU by counting the integer cells covered by both boxes.
inline double pixel_iou(const Box& a, const Box& b) {
  long inter = 0, ua = 0, ub = 0;
  const int lo_x = std::min(a.x1, b.x1), hi_x = std::max(a.x2, b.x2);
  const int lo_y = std::min(a.y1, b.y1), hi_y = std::max(a.y2, b.y2);
  for (int x = lo_x; x <= hi_x; ++x) {
    for (int y = lo_y; y <= hi_y; ++y) {
      const bool in_a = x >= a.x1 && x <= a.x2 && y >= a.y1 && y <= a.y2;
      const bool in_b = x >= b.x1 && x <= b.x2 && y >= b.y1 && y <= b.y2;
      ua += in_a;
      ub += in_b;
      inter += in_a && in_b;
    }
  }
  return static_cast<double>(inter) / static_cast<double>(ua + ub - inter);
}

// ---------------------------------------------------------------------------
// detection mAP by exhaustive search

struct OracleDet {
  std::string image;
  std::string category;
  Box box;
  double confidence;
};

struct OracleGt {
  std::string image;
  std::string category;
  Box box;
};

// Among every assignment of predictions to ground truths in one image and
// class, picks the one whose (iou, -gt index) sequence in processing order
// is lexicographically largest; unmatched predictions score below any match.
inline std::vector<int> best_assignment(const std::vector<Box>& preds, const std::vector<Box>& gts,
                                        double thr) {
  std::vector<int> current(preds.size(), -1), best;
  std::vector<std::pair<double, int>> best_key, key;
  std::vector<bool> used(gts.size(), false);
  bool have = false;
  std::function<void(std::size_t)> rec = [&](std::size_t i) {
    if (i == preds.size()) {
      if (!have || key > best_key) {
        have = true;
        best_key = key;
        best = current;
      }
      return;
    }
    key.push_back({-1.0, 0});
    current[i] = -1;
    rec(i + 1);
    key.pop_back();
    for (std::size_t g = 0; g < gts.size(); ++g) {
      if (used[g]) continue;
      const double o = pixel_iou(preds[i], gts[g]);
      if (o < thr) continue;
      used[g] = true;
      current[i] = static_cast<int>(g);
      key.push_back({o, -static_cast<int>(g)});
      rec(i + 1);
      key.pop_back();
      used[g] = false;
    }
    current[i] = -1;
  };
  rec(0);
  return best;
}

// All-points AP from the PR curve sampled at each distinct confidence.
inline double oracle_ap(const std::vector<std::pair<double, bool>>& scored, std::size_t n_gt) {
  std::set<double, std::greater<>> thresholds;
  for (const auto& s : scored) thresholds.insert(s.first);
  std::vector<double> p, r;
  for (double t : thresholds) {
    double tp = 0, n = 0;
    for (const auto& s : scored) {
      if (s.first >= t) {
        ++n;
        tp += s.second;
      }
    }
    p.push_back(tp / n);
    r.push_back(tp / static_cast<double>(n_gt));
  }
  double ap = 0, prev = 0;
  for (std::size_t k = 0; k < r.size(); ++k) {
    double pmax = 0;
    for (std::size_t j = k; j < p.size(); ++j) pmax = std::max(pmax, p[j]);
    ap += (r[k] - prev) * pmax;
    prev = r[k];
  }
  return ap;
}

inline double oracle_map(const std::vector<OracleDet>& preds, const std::vector<OracleGt>& gts,
                         double thr = 0.5) {
  std::map<std::string, std::size_t> n_gt;
  for (const auto& g : gts) ++n_gt[g.category];
  double sum = 0;
  for (const auto& [cls, n] : n_gt) {
    std::map<std::string, std::pair<std::vector<const OracleDet*>, std::vector<Box>>> by_image;
    for (const auto& p : preds) {
      if (p.category == cls) by_image[p.image].first.push_back(&p);
    }
    for (const auto& g : gts) {
      if (g.category == cls) by_image[g.image].second.push_back(g.box);
    }
    std::vector<std::pair<double, bool>> scored;
    for (auto& [img, pg] : by_image) {
      auto ps = pg.first;
      std::stable_sort(ps.begin(), ps.end(),
                       [](auto* a, auto* b) { return a->confidence > b->confidence; });
      std::vector<Box> boxes;
      for (auto* p : ps) boxes.push_back(p->box);
      const auto assign = best_assignment(boxes, pg.second, thr);
      for (std::size_t i = 0; i < ps.size(); ++i) scored.push_back({ps[i]->confidence, assign[i] >= 0});
    }
    sum += oracle_ap(scored, n);
  }
  return n_gt.empty() ? 0.0 : sum / static_cast<double>(n_gt.size());
}

struct MapInstance {
  std::vector<ImageDetections> preds;
  std::vector<ImageGroundTruth> gts;
  std::vector<OracleDet> oracle_preds;
  std::vector<OracleGt> oracle_gts;
};

inline Box small_box(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> c(0, 12), len(0, 6);
  const int x = c(rng), y = c(rng);
  return Box{x, y, x + len(rng), y + len(rng)};
}

// 1-3 images, two classes, at most 5 predictions and 5 ground truths per
// class in total. Boxes overlap heavily and confidences are coarse so ties
// occur.
inline MapInstance random_map_instance(std::mt19937_64& rng) {
  static const std::vector<std::string> classes = {"ship", "plane"};
  std::uniform_int_distribution<int> images(1, 3), count(0, 5), conf(1, 4);
  const int n_images = images(rng);
  MapInstance in;
  for (int i = 0; i < n_images; ++i) {
    const std::string id = "img" + std::to_string(i);
    in.preds.push_back({id, {}});
    in.gts.push_back({id, {}});
  }
  for (const auto& cls : classes) {
    for (int k = count(rng); k > 0; --k) {
      auto& g = in.gts[rng() % in.gts.size()];
      const auto b = small_box(rng);
      g.objects.push_back({cls, b});
      in.oracle_gts.push_back({g.image_id, cls, b});
    }
    for (int k = count(rng); k > 0; --k) {
      const auto img = rng() % in.preds.size();
      auto& p = in.preds[img];
      const auto& g = in.gts[img];
      Box b = small_box(rng);
      // often jitter an existing object so matches are plausible
      if (!g.objects.empty() && rng() % 2) {
        b = g.objects[rng() % g.objects.size()].box;
        b.x2 = std::min(kNormMax, b.x2 + static_cast<int>(rng() % 3));
      }
      const double c = conf(rng) / 4.0;
      p.predictions.push_back({cls, b, c});
      in.oracle_preds.push_back({p.image_id, cls, b, c});
    }
  }
  return in;
}

// ---------------------------------------------------------------------------
// GRU with explicit scalar loops

inline double sig(double x) { return 1.0 / (1.0 + std::exp(-x)); }

inline std::vector<double> scalar_gru(const std::vector<double>& f, const std::vector<double>& h,
                                      const DecoderWeights& w) {
  const std::size_t d = h.size();
  std::vector<double> z(d), r(d), c(d), out(d);
  for (std::size_t i = 0; i < d; ++i) {
    double az = w.b_z(i), ar = w.b_r(i);
    for (std::size_t j = 0; j < d; ++j) {
      az += w.w_z(i, j) * f[j] + w.u_z(i, j) * h[j];
      ar += w.w_r(i, j) * f[j] + w.u_r(i, j) * h[j];
    }
    z[i] = sig(az);
    r[i] = sig(ar);
  }
  for (std::size_t i = 0; i < d; ++i) {
    double ac = w.b_c(i);
    for (std::size_t j = 0; j < d; ++j) ac += w.w_c(i, j) * f[j] + w.u_c(i, j) * (r[j] * h[j]);
    c[i] = std::tanh(ac);
    out[i] = (1 - z[i]) * h[i] + z[i] * c[i];
  }
  return out;
}


// ---------------------------------------------------------------------------
// decoder instances

struct GradCheck {
  double max_rel_error = 0.0;
  std::size_t steps = 0;
};

// Random d_e = d_h = 3 decoder with weights in [-1, 1], a random latent and
// a random 4-step target; compares backward against central differences.
inline GradCheck gradient_check(std::uint64_t seed, double eps = 1e-5) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(-1.0, 1.0), state(0.1, 0.9);
  const auto w = DecoderWeights::random(3, 3, seed, 1.0);
  Eigen::VectorXd h(3);
  for (int i = 0; i < 3; ++i) h(i) = unit(rng);
  std::vector<TrajState> gt(4);
  for (auto& s : gt) {
    for (int i = 0; i < kPoseDim; ++i) s[i] = state(rng);
  }
  const DecoderConfig cfg{4, 1e-3};
  const auto analytic = backward(h, w, cfg, gt);
  const auto numeric = grad_fd(
      [&](const DecoderWeights& v) { return mse_loss(decode(h, v, cfg), gt); }, w, eps);
  return {max_relative_error(analytic.grad, numeric), analytic.steps};
}

// ---------------------------------------------------------------------------
// navigation

inline NavEpisode random_episode(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> coord(-50.0, 50.0), rad(0.5, 20.0);
  std::uniform_int_distribution<int> len(1, 8);
  NavEpisode ep;
  for (int i = len(rng); i > 0; --i) ep.predicted_path.push_back({coord(rng), coord(rng), coord(rng)});
  ep.goal = {coord(rng), coord(rng), coord(rng)};
  if (rng() % 5 == 0) ep.predicted_path.back() = ep.goal;
  ep.shortest_path_length = rng() % 7 == 0 ? 0.0 : rad(rng) * 3;
  ep.success_radius = rad(rng);
  return ep;
}

}  // namespace rsvl::test
