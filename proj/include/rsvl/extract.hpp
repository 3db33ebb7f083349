#pragma once

// Reads metric inputs back out of response markup, so generated responses
// can be scored directly against built records.

#include <optional>
#include <regex>
#include <string>
#include <vector>

#include "rsvl/grammar.hpp"
#include "rsvl/metrics.hpp"

namespace rsvl::extract {

namespace detail {
inline int step_marker(const std::string& text, int current) {
  for (int k = 9; k >= 1; --k) {
    const auto n = std::to_string(k);
    if (text.find("Step" + n + ":") != std::string::npos ||
        text.find("Step " + n + ":") != std::string::npos) {
      return std::max(current, k);
    }
  }
  return current;
}
}  // namespace detail

// Every Ref immediately followed by a Det yields one prediction per box.
// Pass `only_step` to restrict to one "StepN:" section.
inline std::vector<DetPrediction> detections(const MarkupDoc& doc, double confidence = 1.0,
                                             std::optional<int> only_step = std::nullopt) {
  std::vector<DetPrediction> out;
  int step = 0;
  for (std::size_t i = 0; i < doc.nodes.size(); ++i) {
    if (auto* t = std::get_if<node::Text>(&doc.nodes[i])) step = detail::step_marker(t->value, step);
    if (only_step && step != *only_step) continue;
    auto* ref = std::get_if<node::Ref>(&doc.nodes[i]);
    if (!ref || i + 1 >= doc.nodes.size()) continue;
    if (auto* det = std::get_if<node::Det>(&doc.nodes[i + 1])) {
      for (const auto& b : det->boxes) out.push_back({ref->name, b, confidence});
    }
  }
  return out;
}

// Relation clauses "<ref>a</ref><det>..</det> is <rel>r</rel> the
// <ref>b</ref><det>..</det>", boxes attached.
inline std::vector<RelationTriple> relation_clauses(const MarkupDoc& doc,
                                                    std::optional<int> only_step = std::nullopt) {
  std::vector<RelationTriple> out;
  int step = 0;
  const auto& n = doc.nodes;
  std::optional<std::pair<std::string, std::optional<Box>>> last_entity;
  for (std::size_t i = 0; i < n.size(); ++i) {
    if (auto* t = std::get_if<node::Text>(&n[i])) step = detail::step_marker(t->value, step);
    if (only_step && step != *only_step) continue;
    if (auto* ref = std::get_if<node::Ref>(&n[i])) {
      std::optional<Box> box;
      if (i + 1 < n.size()) {
        if (auto* det = std::get_if<node::Det>(&n[i + 1]); det && !det->boxes.empty()) {
          box = det->boxes.front();
        }
      }
      last_entity = {ref->name, box};
    } else if (auto* rel = std::get_if<node::Rel>(&n[i]); rel && last_entity) {
      for (std::size_t j = i + 1; j < n.size(); ++j) {
        auto* obj = std::get_if<node::Ref>(&n[j]);
        if (!obj) continue;
        std::optional<Box> obox;
        if (j + 1 < n.size()) {
          if (auto* det = std::get_if<node::Det>(&n[j + 1]); det && !det->boxes.empty()) {
            obox = det->boxes.front();
          }
        }
        out.push_back({last_entity->first, obj->name, rel->label, last_entity->second, obox});
        break;
      }
      last_entity.reset();
    }
  }
  return out;
}

// "subject: X, object: Y, the X is <rel>r</rel> the Y."
inline std::optional<RelationTriple> relation_answer(const MarkupDoc& doc) {
  static const std::regex kHead(R"(subject:\s*([^,]+?)\s*,\s*object:\s*([^,]+?)\s*,)");
  std::optional<std::string> subject, object, relation;
  for (const auto& nd : doc.nodes) {
    if (auto* t = std::get_if<node::Text>(&nd); t && !subject) {
      std::smatch m;
      if (std::regex_search(t->value, m, kHead)) {
        subject = m[1];
        object = m[2];
      }
    } else if (auto* r = std::get_if<node::Rel>(&nd); r && !relation) {
      relation = r->label;
    }
  }
  if (!subject || !object || !relation) return std::nullopt;
  return RelationTriple{*subject, *object, *relation, std::nullopt, std::nullopt};
}

// Positions of the last pose list in the document (the trajectory step).
inline std::vector<Point3> trajectory_points(const MarkupDoc& doc) {
  std::vector<Point3> out;
  for (const auto& nd : doc.nodes) {
    if (auto* p = std::get_if<node::PoseSeq>(&nd)) {
      out.clear();
      for (const auto& pose : p->poses) {
        out.push_back({pose.v[0].value(), pose.v[1].value(), pose.v[2].value()});
      }
    }
  }
  return out;
}

// Concatenated text of the document with markup payloads dropped except
// ref/rel names; used for text metrics over step plans.
inline std::string plain_text(const MarkupDoc& doc) {
  std::string out;
  for (const auto& nd : doc.nodes) {
    if (auto* t = std::get_if<node::Text>(&nd)) {
      out += t->value;
    } else if (auto* r = std::get_if<node::Ref>(&nd)) {
      out += r->name;
    } else if (auto* l = std::get_if<node::Rel>(&nd)) {
      out += l->label;
    }
  }
  return out;
}

}  // namespace rsvl::extract
