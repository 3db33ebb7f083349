#pragma once

// Special-token markup: parse, canonical emit, and the [0, 999] box
// coordinate convention shared by every task format.

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <system_error>
#include <variant>
#include <vector>

#include "rsvl/error.hpp"

namespace rsvl {

enum class TaskKind { navigation, decision, decomposition, reasoning };

inline std::string_view to_string(TaskKind k) noexcept {
  switch (k) {
    case TaskKind::navigation: return "navigation";
    case TaskKind::decision: return "decision";
    case TaskKind::decomposition: return "decomposition";
    case TaskKind::reasoning: return "reasoning";
  }
  return "";
}

enum class Modality { opt, sar, ir };

inline std::string_view to_string(Modality m) noexcept {
  switch (m) {
    case Modality::opt: return "opt";
    case Modality::sar: return "sar";
    case Modality::ir: return "ir";
  }
  return "";
}

inline std::optional<Modality> parse_modality(std::string_view s) noexcept {
  if (s == "opt") return Modality::opt;
  if (s == "sar") return Modality::sar;
  if (s == "ir") return Modality::ir;
  return std::nullopt;
}

// A finite decimal that keeps its source spelling, so scene coordinates
// survive a parse/emit cycle byte for byte.
class Decimal {
 public:
  Decimal() : value_(0.0), text_("0") {}

  explicit Decimal(double v) : value_(v) {
    if (!std::isfinite(v)) throw Error(ErrorKind::InvalidArgument, "non-finite decimal");
    char buf[32];
    auto res = std::to_chars(buf, buf + sizeof buf, v);
    text_.assign(buf, res.ptr);
  }

  // Accepts -?digits(.digits)?([eE][+-]?digits)? and nothing else.
  static std::optional<Decimal> from_text(std::string_view s) {
    if (!is_decimal_lexeme(s)) return std::nullopt;
    double v = 0.0;
    auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc{} || res.ptr != s.data() + s.size() || !std::isfinite(v)) {
      return std::nullopt;
    }
    Decimal d;
    d.value_ = v;
    d.text_ = std::string(s);
    return d;
  }

  static bool is_decimal_lexeme(std::string_view s) noexcept {
    std::size_t i = 0;
    auto digits = [&] {
      std::size_t start = i;
      while (i < s.size() && s[i] >= '0' && s[i] <= '9') ++i;
      return i > start;
    };
    if (i < s.size() && s[i] == '-') ++i;
    if (!digits()) return false;
    if (i < s.size() && s[i] == '.') {
      ++i;
      if (!digits()) return false;
    }
    if (i < s.size() && (s[i] == 'e' || s[i] == 'E')) {
      ++i;
      if (i < s.size() && (s[i] == '+' || s[i] == '-')) ++i;
      if (!digits()) return false;
    }
    return i == s.size();
  }

  double value() const noexcept { return value_; }
  const std::string& text() const noexcept { return text_; }

  bool operator==(const Decimal& o) const noexcept { return text_ == o.text_; }

 private:
  double value_;
  std::string text_;
};

inline constexpr int kNormMax = 999;

// Horizontal box in the normalized [0, 999] coordinate space.
struct Box {
  int x1 = 0, y1 = 0, x2 = 0, y2 = 0;

  bool operator==(const Box&) const = default;

  bool in_range() const noexcept {
    auto ok = [](int v) { return v >= 0 && v <= kNormMax; };
    return ok(x1) && ok(y1) && ok(x2) && ok(y2);
  }
  bool ordered() const noexcept { return x1 <= x2 && y1 <= y2; }
  bool valid() const noexcept { return in_range() && ordered(); }
};

// Pixel-space rectangle, corners inclusive of the image extent.
struct PixelBox {
  std::int64_t x1 = 0, y1 = 0, x2 = 0, y2 = 0;
  bool operator==(const PixelBox&) const = default;
};

struct Pos3 {
  Decimal x, y, z;
  bool operator==(const Pos3&) const = default;
};

// (x, y, z, roll, pitch, yaw); angles are carried in whatever unit the
// source used.
struct Pose6 {
  std::array<Decimal, 6> v;
  bool operator==(const Pose6&) const = default;
};

namespace node {
struct Text {
  std::string value;
  bool operator==(const Text&) const = default;
};
struct Task {
  TaskKind kind;
  bool operator==(const Task&) const = default;
};
struct Ref {
  std::string name;
  bool operator==(const Ref&) const = default;
};
struct Pos {
  Pos3 pos;
  bool operator==(const Pos&) const = default;
};
struct PoseSeq {
  std::vector<Pose6> poses;
  bool operator==(const PoseSeq&) const = default;
};
struct Det {
  std::vector<Box> boxes;
  bool operator==(const Det&) const = default;
};
struct Rel {
  std::string label;
  bool operator==(const Rel&) const = default;
};
}  // namespace node

using MarkupNode = std::variant<node::Text, node::Task, node::Ref, node::Pos, node::PoseSeq,
                                node::Det, node::Rel>;

struct MarkupDoc {
  std::vector<MarkupNode> nodes;
  std::string raw;
};

namespace detail {

inline constexpr std::string_view kOpen = "<|";
inline constexpr std::string_view kClose = "|>";

// Returns the offset of the first invalid byte, if any.
inline std::optional<std::size_t> first_invalid_utf8(std::string_view s) noexcept {
  std::size_t i = 0;
  const auto n = s.size();
  while (i < n) {
    const auto c = static_cast<unsigned char>(s[i]);
    std::size_t len = 0;
    std::uint32_t cp = 0;
    if (c < 0x80) {
      ++i;
      continue;
    } else if ((c & 0xE0) == 0xC0) {
      len = 2;
      cp = c & 0x1F;
    } else if ((c & 0xF0) == 0xE0) {
      len = 3;
      cp = c & 0x0F;
    } else if ((c & 0xF8) == 0xF0) {
      len = 4;
      cp = c & 0x07;
    } else {
      return i;
    }
    if (i + len > n) return i;
    for (std::size_t k = 1; k < len; ++k) {
      const auto cc = static_cast<unsigned char>(s[i + k]);
      if ((cc & 0xC0) != 0x80) return i;
      cp = (cp << 6) | (cc & 0x3F);
    }
    const bool overlong = (len == 2 && cp < 0x80) || (len == 3 && cp < 0x800) ||
                          (len == 4 && cp < 0x10000);
    if (overlong || cp > 0x10FFFF || (cp >= 0xD800 && cp <= 0xDFFF)) return i;
    i += len;
  }
  return std::nullopt;
}

inline bool is_ws(char c) noexcept { return c == ' ' || c == '\t' || c == '\n' || c == '\r'; }

enum class PayloadKind { none, text, pos, pose, det };

inline PayloadKind payload_kind(std::string_view name) noexcept {
  if (name == "ref" || name == "rel") return PayloadKind::text;
  if (name == "pos") return PayloadKind::pos;
  if (name == "pose") return PayloadKind::pose;
  if (name == "det") return PayloadKind::det;
  return PayloadKind::none;
}

inline std::optional<TaskKind> task_kind(std::string_view name) noexcept {
  if (name == "navigation") return TaskKind::navigation;
  if (name == "decision") return TaskKind::decision;
  if (name == "decomposition") return TaskKind::decomposition;
  if (name == "reasoning") return TaskKind::reasoning;
  return std::nullopt;
}

// Cursor over a numeric payload; offsets reported relative to the whole
// input via `base`.
class ListReader {
 public:
  ListReader(std::string_view s, std::size_t base, std::string_view tag)
      : s_(s), base_(base), tag_(tag) {}

  void skip_ws() noexcept {
    while (i_ < s_.size() && is_ws(s_[i_])) ++i_;
  }
  bool at_end() noexcept {
    skip_ws();
    return i_ >= s_.size();
  }
  bool peek(char c) noexcept {
    skip_ws();
    return i_ < s_.size() && s_[i_] == c;
  }
  void expect(char c) {
    skip_ws();
    if (i_ >= s_.size() || s_[i_] != c) {
      throw Error(ErrorKind::MalformedList,
                  std::string("expected '") + c + "' in <|" + std::string(tag_) + "|>",
                  base_ + i_);
    }
    ++i_;
  }
  std::size_t offset() const noexcept { return base_ + i_; }

  std::string_view number_token() {
    skip_ws();
    std::size_t start = i_;
    while (i_ < s_.size() && !is_ws(s_[i_]) && s_[i_] != ',' && s_[i_] != '[' && s_[i_] != ']') {
      ++i_;
    }
    if (start == i_) {
      throw Error(ErrorKind::MalformedNumber, "missing number in <|" + std::string(tag_) + "|>",
                  base_ + start);
    }
    return s_.substr(start, i_ - start);
  }

  Decimal decimal() {
    skip_ws();
    auto at = offset();
    auto tok = number_token();
    auto d = Decimal::from_text(tok);
    if (!d) throw Error(ErrorKind::MalformedNumber, "'" + std::string(tok) + "'", at);
    return *d;
  }

  int coord() {
    skip_ws();
    auto at = offset();
    auto tok = number_token();
    const bool digits_only =
        std::all_of(tok.begin(), tok.end(), [](char c) { return c >= '0' && c <= '9'; });
    if (!digits_only || (tok.size() > 1 && tok[0] == '0')) {
      throw Error(ErrorKind::MalformedNumber, "'" + std::string(tok) + "'", at);
    }
    if (tok.size() > 3) throw Error(ErrorKind::CoordOutOfRange, std::string(tok), at);
    int v = 0;
    std::from_chars(tok.data(), tok.data() + tok.size(), v);
    if (v > kNormMax) throw Error(ErrorKind::CoordOutOfRange, std::string(tok), at);
    return v;
  }

  template <class F>
  auto tuple(std::size_t arity, F&& element) {
    using T = decltype(element());
    std::vector<T> out;
    expect('[');
    auto at = offset();
    for (std::size_t k = 0; k < arity; ++k) {
      if (k) expect(',');
      out.push_back(element());
    }
    if (!peek(']')) {
      throw Error(ErrorKind::MalformedList,
                  "tuple in <|" + std::string(tag_) + "|> must have " + std::to_string(arity) +
                      " elements",
                  at);
    }
    expect(']');
    return out;
  }

  template <class F>
  auto tuple_list(F&& parse_tuple) {
    using T = decltype(parse_tuple());
    std::vector<T> out;
    expect('[');
    if (peek(']')) throw Error(ErrorKind::EmptyList, std::string(tag_), offset());
    out.push_back(parse_tuple());
    while (peek(',')) {
      expect(',');
      out.push_back(parse_tuple());
    }
    expect(']');
    return out;
  }

 private:
  std::string_view s_;
  std::size_t base_;
  std::string_view tag_;
  std::size_t i_ = 0;
};

inline MarkupNode parse_payload(PayloadKind kind, std::string_view name, std::string_view body,
                                std::size_t base) {
  if (kind == PayloadKind::text) {
    if (name == "ref") return node::Ref{std::string(body)};
    return node::Rel{std::string(body)};
  }
  ListReader r(body, base, name);
  if (r.at_end()) throw Error(ErrorKind::EmptyList, std::string(name), base);
  MarkupNode out;
  switch (kind) {
    case PayloadKind::pos: {
      if (r.peek('[')) {
        // "[]" is an empty list rather than a malformed tuple
        ListReader probe = r;
        probe.expect('[');
        if (probe.peek(']')) throw Error(ErrorKind::EmptyList, std::string(name), r.offset());
      }
      auto v = r.tuple(3, [&] { return r.decimal(); });
      out = node::Pos{Pos3{v[0], v[1], v[2]}};
      break;
    }
    case PayloadKind::pose: {
      auto poses = r.tuple_list([&] {
        auto v = r.tuple(6, [&] { return r.decimal(); });
        Pose6 p;
        std::copy(v.begin(), v.end(), p.v.begin());
        return p;
      });
      out = node::PoseSeq{std::move(poses)};
      break;
    }
    case PayloadKind::det: {
      auto boxes = r.tuple_list([&] {
        auto at = r.offset();
        auto v = r.tuple(4, [&] { return r.coord(); });
        Box b{v[0], v[1], v[2], v[3]};
        if (!b.ordered()) throw Error(ErrorKind::InvertedBox, "box corners out of order", at);
        return b;
      });
      out = node::Det{std::move(boxes)};
      break;
    }
    default:
      break;
  }
  if (!r.at_end()) {
    throw Error(ErrorKind::MalformedList, "trailing content in <|" + std::string(name) + "|>",
                r.offset());
  }
  return out;
}

inline void append_text(std::vector<MarkupNode>& nodes, std::string_view text) {
  if (text.empty()) return;
  if (!nodes.empty()) {
    if (auto* t = std::get_if<node::Text>(&nodes.back())) {
      t->value.append(text);
      return;
    }
  }
  nodes.push_back(node::Text{std::string(text)});
}

}  // namespace detail

// Parses a prompt or response. Every byte of `text` is covered by exactly
// one node; malformed markup raises rsvl::Error with a byte offset.
inline MarkupDoc parse(std::string_view text) {
  using namespace detail;
  if (auto bad = first_invalid_utf8(text)) {
    throw Error(ErrorKind::InvalidUtf8, "", *bad);
  }
  MarkupDoc doc;
  doc.raw = std::string(text);
  std::size_t pos = 0;
  while (pos < text.size()) {
    auto open = text.find(kOpen, pos);
    if (open == std::string_view::npos) {
      append_text(doc.nodes, text.substr(pos));
      break;
    }
    append_text(doc.nodes, text.substr(pos, open - pos));
    auto close = text.find(kClose, open + kOpen.size());
    if (close == std::string_view::npos) {
      throw Error(ErrorKind::UnbalancedTag, "unterminated '<|'", open);
    }
    auto name = text.substr(open + kOpen.size(), close - open - kOpen.size());
    auto after = close + kClose.size();

    if (auto task = task_kind(name)) {
      if (!doc.nodes.empty()) {
        throw Error(ErrorKind::MisplacedTaskTag, std::string(name), open);
      }
      doc.nodes.push_back(node::Task{*task});
      pos = after;
      continue;
    }
    if (!name.empty() && name.front() == '/') {
      auto base = name.substr(1);
      if (payload_kind(base) != PayloadKind::none) {
        throw Error(ErrorKind::UnbalancedTag, "close tag '" + std::string(base) + "' without open",
                    open);
      }
      throw Error(ErrorKind::UnknownTag, std::string(name), open);
    }
    auto kind = payload_kind(name);
    if (kind == PayloadKind::none) throw Error(ErrorKind::UnknownTag, std::string(name), open);

    // The payload runs to the next '<|', which has to be the matching close.
    auto next = text.find(kOpen, after);
    const std::string closing = "<|/" + std::string(name) + "|>";
    if (next == std::string_view::npos || text.substr(next, closing.size()) != closing) {
      throw Error(ErrorKind::UnbalancedTag, std::string(name), open);
    }
    doc.nodes.push_back(parse_payload(kind, name, text.substr(after, next - after), after));
    pos = next + closing.size();
  }
  return doc;
}

namespace detail {

inline void emit_coord_tuple(std::string& out, const Box& b) {
  out += '[';
  out += std::to_string(b.x1) + ',' + std::to_string(b.y1) + ',' + std::to_string(b.x2) + ',' +
         std::to_string(b.y2);
  out += ']';
}

inline void emit_pose_tuple(std::string& out, const Pose6& p) {
  out += '[';
  for (std::size_t i = 0; i < p.v.size(); ++i) {
    if (i) out += ',';
    out += p.v[i].text();
  }
  out += ']';
}

inline void check_free_text(std::string_view s, std::string_view what) {
  if (s.find(kOpen) != std::string_view::npos) {
    throw Error(ErrorKind::InvariantViolation, std::string(what) + " contains '<|'");
  }
}

}  // namespace detail

// Canonical serialization: numeric payloads in the `[[a,b], [c,d]]` form,
// everything else verbatim.
inline std::string emit(const std::vector<MarkupNode>& nodes) {
  using namespace detail;
  std::string out;
  bool prev_text = false;
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    const auto& n = nodes[i];
    bool is_text = false;
    std::visit(
        [&](const auto& v) {
          using T = std::decay_t<decltype(v)>;
          if constexpr (std::is_same_v<T, node::Text>) {
            if (v.value.empty()) throw Error(ErrorKind::InvariantViolation, "empty text node");
            if (prev_text) throw Error(ErrorKind::InvariantViolation, "adjacent text nodes");
            check_free_text(v.value, "text");
            is_text = true;
            out += v.value;
          } else if constexpr (std::is_same_v<T, node::Task>) {
            if (i != 0) throw Error(ErrorKind::InvariantViolation, "task tag must be first");
            out += "<|" + std::string(to_string(v.kind)) + "|>";
          } else if constexpr (std::is_same_v<T, node::Ref>) {
            check_free_text(v.name, "ref");
            out += "<|ref|>" + v.name + "<|/ref|>";
          } else if constexpr (std::is_same_v<T, node::Rel>) {
            check_free_text(v.label, "rel");
            out += "<|rel|>" + v.label + "<|/rel|>";
          } else if constexpr (std::is_same_v<T, node::Pos>) {
            out += "<|pos|>[" + v.pos.x.text() + ',' + v.pos.y.text() + ',' + v.pos.z.text() +
                   "]<|/pos|>";
          } else if constexpr (std::is_same_v<T, node::PoseSeq>) {
            if (v.poses.empty()) throw Error(ErrorKind::InvariantViolation, "empty pose list");
            out += "<|pose|>[";
            for (std::size_t k = 0; k < v.poses.size(); ++k) {
              if (k) out += ", ";
              emit_pose_tuple(out, v.poses[k]);
            }
            out += "]<|/pose|>";
          } else if constexpr (std::is_same_v<T, node::Det>) {
            if (v.boxes.empty()) throw Error(ErrorKind::InvariantViolation, "empty box list");
            out += "<|det|>[";
            for (std::size_t k = 0; k < v.boxes.size(); ++k) {
              if (!v.boxes[k].valid()) throw Error(ErrorKind::InvariantViolation, "invalid box");
              if (k) out += ", ";
              emit_coord_tuple(out, v.boxes[k]);
            }
            out += "]<|/det|>";
          }
        },
        n);
    prev_text = is_text;
  }
  return out;
}

inline std::string emit(const MarkupDoc& doc) { return emit(doc.nodes); }

// Lexical canonicalization that does not go through the AST: whitespace
// is dropped inside pos/pose/det payloads and a single space is put after
// each comma separating tuples. Other bytes are copied unchanged.
inline std::string canonicalize(std::string_view raw) {
  static constexpr std::string_view kNumericTags[] = {"<|pos|>", "<|pose|>", "<|det|>"};
  std::string out;
  out.reserve(raw.size());
  std::size_t i = 0;
  while (i < raw.size()) {
    std::string_view matched;
    for (auto tag : kNumericTags) {
      if (raw.substr(i, tag.size()) == tag) matched = tag;
    }
    if (matched.empty()) {
      out += raw[i++];
      continue;
    }
    out += matched;
    i += matched.size();
    auto end = raw.find(detail::kOpen, i);
    if (end == std::string_view::npos) end = raw.size();
    char last = '\0';
    for (; i < end; ++i) {
      char c = raw[i];
      if (detail::is_ws(c)) continue;
      if (c == '[' && last == ',') out += ' ';
      out += c;
      last = c;
    }
  }
  return out;
}

// Optional closed-vocabulary check for relation labels; returns the labels
// not found, in document order.
inline std::vector<std::string> unknown_relations(const MarkupDoc& doc,
                                                  const std::set<std::string>& vocabulary) {
  std::vector<std::string> out;
  for (const auto& n : doc.nodes) {
    if (auto* r = std::get_if<node::Rel>(&n); r && !vocabulary.count(r->label)) {
      out.push_back(r->label);
    }
  }
  return out;
}

inline void check_extent(std::int64_t width, std::int64_t height) {
  if (width < 1 || height < 1) {
    throw Error(ErrorKind::InvalidExtent,
                std::to_string(width) + "x" + std::to_string(height));
  }
}

// floor(px * 1000 / extent), clamped to 999.
inline Box normalize_box(const PixelBox& px, std::int64_t width, std::int64_t height) {
  check_extent(width, height);
  if (px.x1 > px.x2 || px.y1 > px.y2) throw Error(ErrorKind::InvertedBox, "pixel box");
  if (px.x1 < 0 || px.y1 < 0 || px.x2 > width || px.y2 > height) {
    throw Error(ErrorKind::OutOfBounds, "pixel box outside " + std::to_string(width) + "x" +
                                            std::to_string(height));
  }
  auto norm = [](std::int64_t v, std::int64_t extent) {
    return static_cast<int>(std::min<std::int64_t>(v * 1000 / extent, kNormMax));
  };
  return Box{norm(px.x1, width), norm(px.y1, height), norm(px.x2, width), norm(px.y2, height)};
}

// Maps a normalized coordinate back to the pixel at the centre of its
// bucket, (v + 0.5) / 1000 * extent, rounding exact halves down. Rounding
// down on ties keeps normalize_box(denormalize_box(b)) == b for every
// extent >= 1000.
inline PixelBox denormalize_box(const Box& box, std::int64_t width, std::int64_t height) {
  check_extent(width, height);
  auto denorm = [](int v, std::int64_t extent) {
    // ceil(((2v + 1) * extent - 1000) / 2000), computed exactly.
    std::int64_t num = (2 * static_cast<std::int64_t>(v) + 1) * extent - 1000;
    std::int64_t q = num >= 0 ? (num + 1999) / 2000 : -((-num) / 2000);
    return std::clamp<std::int64_t>(q, 0, extent);
  };
  return PixelBox{denorm(box.x1, width), denorm(box.y1, height), denorm(box.x2, width),
                  denorm(box.y2, height)};
}

// Maps a scene coordinate in [lo, hi] onto [0, 999]; used when 3D positions
// are requested in the normalized convention.
inline int normalize_scalar(double v, double lo, double hi) {
  if (!(hi > lo)) throw Error(ErrorKind::InvalidExtent, "scene bounds");
  double t = std::floor((v - lo) * 1000.0 / (hi - lo));
  return static_cast<int>(std::clamp(t, 0.0, static_cast<double>(kNormMax)));
}

}  // namespace rsvl
