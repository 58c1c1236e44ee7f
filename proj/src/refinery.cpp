#include "fk/refinery.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <fmt/format.h>
#include <limits>

#include "fk/errors.hpp"

namespace fk {

__extension__ typedef unsigned __int128 u128;


bool is_camera_name(std::string_view name) {
  return std::find(kCameraNames.begin(), kCameraNames.end(), name) != kCameraNames.end();
}

namespace {

// ---- tag scanner -----------------------------------------------------------

class Scanner {
 public:
  Scanner(std::string_view s, std::size_t pos) : s_(s), pos_(pos) {}

  std::size_t pos() const { return pos_; }
  bool done() const { return pos_ >= s_.size(); }

  void skip_ws() {
    while (pos_ < s_.size() && std::isspace(static_cast<unsigned char>(s_[pos_]))) ++pos_;
  }
  bool eat(char c) {
    if (pos_ < s_.size() && s_[pos_] == c) {
      ++pos_;
      return true;
    }
    return false;
  }
  /// Case-insensitive keyword.
  bool eat_word(std::string_view w) {
    if (s_.size() - pos_ < w.size()) return false;
    for (std::size_t i = 0; i < w.size(); ++i) {
      if (std::tolower(static_cast<unsigned char>(s_[pos_ + i])) != w[i]) return false;
    }
    pos_ += w.size();
    return true;
  }
  std::string take_name() {
    std::string out;
    while (pos_ < s_.size() &&
           (std::isalnum(static_cast<unsigned char>(s_[pos_])) || s_[pos_] == '_')) {
      out.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(s_[pos_]))));
      ++pos_;
    }
    return out;
  }
  std::optional<std::int64_t> take_int() {
    const std::size_t start = pos_;
    if (pos_ < s_.size() && (s_[pos_] == '-' || s_[pos_] == '+')) ++pos_;
    while (pos_ < s_.size() && std::isdigit(static_cast<unsigned char>(s_[pos_]))) ++pos_;
    std::int64_t v = 0;
    const char* first = s_.data() + start + (s_[start] == '+' ? 1 : 0);
    auto res = std::from_chars(first, s_.data() + pos_, v);
    if (res.ec != std::errc{} || res.ptr != s_.data() + pos_) {
      pos_ = start;
      return std::nullopt;
    }
    return v;
  }

 private:
  std::string_view s_;
  std::size_t pos_;
};

// Tries "< ws* / ws* NAME ws* >" at pos.
bool closing_tag_at(std::string_view s, std::size_t pos, std::string_view name, std::size_t* end) {
  Scanner sc(s, pos);
  if (!sc.eat('<')) return false;
  sc.skip_ws();
  if (!sc.eat('/')) return false;
  sc.skip_ws();
  if (!sc.eat_word(name)) return false;
  sc.skip_ws();
  if (!sc.eat('>')) return false;
  *end = sc.pos();
  return true;
}

std::optional<std::pair<std::size_t, std::size_t>> find_closing(std::string_view s, std::size_t from,
                                                                std::string_view name) {
  for (std::size_t p = s.find('<', from); p != std::string_view::npos; p = s.find('<', p + 1)) {
    std::size_t end = 0;
    if (closing_tag_at(s, p, name, &end)) return std::pair{p, end};
  }
  return std::nullopt;
}

// Opening "< ws* NAME ws* >"; returns position after '>'.
std::optional<std::size_t> opening_tag_at(std::string_view s, std::size_t pos, std::string_view name) {
  Scanner sc(s, pos);
  if (!sc.eat('<')) return std::nullopt;
  sc.skip_ws();
  if (!sc.eat_word(name)) return std::nullopt;
  sc.skip_ws();
  if (!sc.eat('>')) return std::nullopt;
  return sc.pos();
}

// "<| ws* camera_NAME ws* |>"; returns {name, end}.
std::optional<std::pair<std::string, std::size_t>> camera_tag_at(std::string_view s, std::size_t pos) {
  Scanner sc(s, pos);
  if (!sc.eat('<')) return std::nullopt;
  sc.skip_ws();
  if (!sc.eat('|')) return std::nullopt;
  sc.skip_ws();
  if (!sc.eat_word("camera_")) return std::nullopt;
  std::string name = sc.take_name();
  sc.skip_ws();
  if (!sc.eat('|') || !sc.eat('>')) return std::nullopt;
  return std::pair{std::move(name), sc.pos()};
}

BoxCoords parse_box_payload(std::string_view s, std::size_t begin, std::size_t end) {
  const std::string_view payload = s.substr(0, end);
  Scanner sc(payload, begin);
  std::array<std::int64_t, 4> v{};
  for (int corner = 0; corner < 2; ++corner) {
    sc.skip_ws();
    if (corner == 1) {
      if (!sc.eat(',')) throw ParseError("box payload: expected ',' between corners", sc.pos());
      sc.skip_ws();
    }
    if (!sc.eat('(')) throw ParseError("box payload: expected '('", sc.pos());
    for (int axis = 0; axis < 2; ++axis) {
      sc.skip_ws();
      if (axis == 1) {
        if (!sc.eat(',')) throw ParseError("box payload: expected ','", sc.pos());
        sc.skip_ws();
      }
      auto n = sc.take_int();
      if (!n) throw ParseError("box payload: expected an integer", sc.pos());
      v[corner * 2 + axis] = *n;
    }
    sc.skip_ws();
    if (!sc.eat(')')) throw ParseError("box payload: expected ')'", sc.pos());
  }
  sc.skip_ws();
  if (!sc.done()) throw ParseError("box payload: trailing characters", sc.pos());
  return {v[0], v[1], v[2], v[3]};
}

void push_plain(std::vector<Segment>& segs, std::string_view text) {
  if (text.empty()) return;
  if (!segs.empty()) {
    if (auto* p = std::get_if<PlainText>(&segs.back())) {
      p->text += text;
      return;
    }
  }
  segs.emplace_back(PlainText{std::string(text)});
}

}  // namespace

TaggedText parse_tags(std::string_view raw) {
  TaggedText out{std::string(raw), {}};
  std::size_t plain_start = 0;
  std::size_t pos = raw.find('<');
  while (pos != std::string_view::npos) {
    std::size_t next = pos + 1;
    std::optional<Segment> seg;
    if (auto cam = camera_tag_at(raw, pos); cam && is_camera_name(cam->first)) {
      seg = CameraTag{cam->first};
      next = cam->second;
    } else if (auto body = opening_tag_at(raw, pos, "ref")) {
      if (auto close = find_closing(raw, *body, "ref")) {
        seg = RefSpan{std::string(raw.substr(*body, close->first - *body))};
        next = close->second;
      }
    } else if (auto body = opening_tag_at(raw, pos, "box")) {
      auto close = find_closing(raw, *body, "box");
      if (!close) throw ParseError("<box> without closing </box>", pos);
      seg = BoxSpan{parse_box_payload(raw, *body, close->first)};
      next = close->second;
    }
    if (seg) {
      push_plain(out.segments, raw.substr(plain_start, pos - plain_start));
      out.segments.push_back(std::move(*seg));
      plain_start = next;
    }
    pos = raw.find('<', next);
  }
  push_plain(out.segments, raw.substr(plain_start));
  return out;
}

std::string serialize_tags(std::span<const Segment> segments) {
  std::string out;
  for (const auto& seg : segments) {
    std::visit(
        [&](const auto& s) {
          using T = std::decay_t<decltype(s)>;
          if constexpr (std::is_same_v<T, PlainText>) {
            out += s.text;
          } else if constexpr (std::is_same_v<T, RefSpan>) {
            out += "<ref>" + s.text + "</ref>";
          } else if constexpr (std::is_same_v<T, BoxSpan>) {
            out += fmt::format("<box>({},{}),({},{})</box>", s.box.x1, s.box.y1, s.box.x2, s.box.y2);
          } else {
            out += "<|camera_" + s.view + "|>";
          }
        },
        seg);
  }
  return out;
}

std::string serialize_tags(const TaggedText& t) { return serialize_tags(t.segments); }

std::vector<std::string> unknown_camera_tags(std::string_view raw) {
  std::vector<std::string> out;
  for (std::size_t p = raw.find('<'); p != std::string_view::npos; p = raw.find('<', p + 1)) {
    if (auto cam = camera_tag_at(raw, p); cam && !is_camera_name(cam->first)) out.push_back(cam->first);
  }
  return out;
}

// ---- numeric normalization --------------------------------------------------

int normalize_coord(double coord, double size) {
  const double v = std::round(coord / (size - 1.0) * kGridMax);
  return static_cast<int>(std::clamp(v, 0.0, static_cast<double>(kGridMax)));
}

NormalizedBox normalize_box(const PixelBox& px, double img_w, double img_h) {
  if (!(img_w >= 2.0) || !(img_h >= 2.0)) throw ValidationError("normalize_box: image size must be >= 2");
  for (double c : {px.x1, px.y1, px.x2, px.y2}) {
    if (!std::isfinite(c)) throw ValidationError("normalize_box: non-finite coordinate");
  }
  if (px.x2 < px.x1 || px.y2 < px.y1) throw ValidationError("normalize_box: inverted box");
  return NormalizedBox(normalize_coord(px.x1, img_w), normalize_coord(px.y1, img_h),
                       normalize_coord(px.x2, img_w), normalize_coord(px.y2, img_h));
}

namespace {

struct Decimal {
  bool negative = false;
  u128 mantissa = 0;
  int exponent = 0;  // value = mantissa * 10^exponent
};

// Shortest round-trip decimal form of v, split into mantissa and exponent.
Decimal to_decimal(double v) {
  std::array<char, 64> buf{};
  auto res = std::to_chars(buf.data(), buf.data() + buf.size(), v, std::chars_format::scientific);
  std::string_view s(buf.data(), static_cast<std::size_t>(res.ptr - buf.data()));
  Decimal d;
  std::size_t i = 0;
  if (s[i] == '-') {
    d.negative = true;
    ++i;
  }
  int frac_digits = 0;
  bool after_point = false;
  for (; i < s.size() && s[i] != 'e'; ++i) {
    if (s[i] == '.') {
      after_point = true;
      continue;
    }
    d.mantissa = d.mantissa * 10 + static_cast<unsigned>(s[i] - '0');
    if (after_point) ++frac_digits;
  }
  int exp = 0;
  std::from_chars(s.data() + i + 1 + (s[i + 1] == '+' ? 1 : 0), s.data() + s.size(), exp);
  d.exponent = exp - frac_digits;
  return d;
}

u128 pow10_u128(int n) {
  u128 p = 1;
  for (int i = 0; i < n; ++i) p *= 10;
  return p;
}

}  // namespace

std::int64_t quantize_decimal(double value, double unit_scale) {
  if (!std::isfinite(value) || !std::isfinite(unit_scale)) throw ValidationError("quantize_decimal: non-finite input");
  if (!(unit_scale > 0.0)) throw ValidationError("quantize_decimal: unit_scale must be positive");
  if (value == 0.0) return 0;

  const Decimal a = to_decimal(value);
  const Decimal b = to_decimal(unit_scale);
  u128 m = a.mantissa * b.mantissa;  // both < 10^17, product < 10^34
  int e = a.exponent + b.exponent;
  constexpr auto kLimit = static_cast<u128>(std::numeric_limits<std::int64_t>::max());

  u128 mag = 0;
  if (e >= 0) {
    for (int i = 0; i < e; ++i) {
      if (m > kLimit) break;
      m *= 10;
    }
    mag = m;
  } else if (-e > 38) {
    mag = 0;  // m < 10^34 is below half of 10^-e
  } else {
    const u128 div = pow10_u128(-e);
    mag = m / div;
    if ((m % div) * 2 >= div) ++mag;
  }
  const u128 limit = a.negative ? kLimit + 1 : kLimit;
  if (mag > limit) throw ValidationError("quantize_decimal: result overflows int64");
  if (a.negative) return mag == kLimit + 1 ? std::numeric_limits<std::int64_t>::min() : -static_cast<std::int64_t>(mag);
  return static_cast<std::int64_t>(mag);
}

std::pair<std::string, std::size_t> convert_decimals(std::string_view text) {
  std::string out;
  std::size_t count = 0;
  std::size_t i = 0;
  auto is_digit = [&](std::size_t k) { return k < text.size() && std::isdigit(static_cast<unsigned char>(text[k])); };
  while (i < text.size()) {
    // A literal starts at a digit (or '-' before a digit) not preceded by a word character or '.'.
    const bool boundary = i == 0 || !(std::isalnum(static_cast<unsigned char>(text[i - 1])) || text[i - 1] == '.');
    const bool starts = boundary && (is_digit(i) || (text[i] == '-' && is_digit(i + 1)));
    if (!starts) {
      out.push_back(text[i++]);
      continue;
    }
    std::size_t j = i + (text[i] == '-' ? 1 : 0);
    while (is_digit(j)) ++j;
    if (j < text.size() && text[j] == '.' && is_digit(j + 1)) {
      std::size_t k = j + 1;
      while (is_digit(k)) ++k;
      const bool followed = k < text.size() && (std::isalnum(static_cast<unsigned char>(text[k])) ||
                                                (text[k] == '.' && is_digit(k + 1)));
      if (!followed) {
        double v = 0;
        auto res = std::from_chars(text.data() + i, text.data() + k, v);
        if (res.ec == std::errc{}) {
          out += std::to_string(quantize_decimal(v, 1.0));
          ++count;
          i = k;
          continue;
        }
      }
    }
    out.append(text.substr(i, j - i));
    i = j;
  }
  return {out, count};
}

// ---- ego status ------------------------------------------------------------

std::string_view to_string(DrivingCommand c) {
  switch (c) {
    case DrivingCommand::TurnLeft: return "TURN LEFT";
    case DrivingCommand::TurnRight: return "TURN RIGHT";
    case DrivingCommand::GoStraight: return "GO STRAIGHT";
  }
  return "";
}

std::optional<DrivingCommand> parse_command(std::string_view s) {
  std::string u;
  for (char c : s) u.push_back(c == '_' ? ' ' : static_cast<char>(std::toupper(static_cast<unsigned char>(c))));
  if (u == "TURN LEFT") return DrivingCommand::TurnLeft;
  if (u == "TURN RIGHT") return DrivingCommand::TurnRight;
  if (u == "GO STRAIGHT") return DrivingCommand::GoStraight;
  return std::nullopt;
}

std::string encode_ego_status(const EgoStatus& s) {
  return fmt::format(
      "Given the ego status: lateral velocity is {} cm/s; longitudinal velocity is {} cm/s; "
      "lateral acceleration is {} cm/s^2; longitudinal acceleration is {} cm/s^2; "
      "The ego car will {}. Output planning results.",
      quantize_decimal(s.lateral_velocity, 100), quantize_decimal(s.longitudinal_velocity, 100),
      quantize_decimal(s.lateral_acceleration, 100), quantize_decimal(s.longitudinal_acceleration, 100),
      to_string(s.command));
}

// ---- trajectories ----------------------------------------------------------

std::string_view to_string(SourceDataset s) {
  switch (s) {
    case SourceDataset::NuScenesQa: return "nuscenes-qa";
    case SourceDataset::NuScenesMqa: return "nuscenes-mqa";
    case SourceDataset::OmniDrive: return "omnidrive";
    case SourceDataset::NuInstruct: return "nuinstruct";
    case SourceDataset::Ora: return "ora";
  }
  return "";
}

std::optional<SourceDataset> parse_source(std::string_view s) {
  for (auto src : {SourceDataset::NuScenesQa, SourceDataset::NuScenesMqa, SourceDataset::OmniDrive,
                   SourceDataset::NuInstruct, SourceDataset::Ora}) {
    if (to_string(src) == s) return src;
  }
  return std::nullopt;
}

TrajectoryPlan unify_trajectory(std::span<const TimedPoint> points, SourceDataset /*source*/) {
  for (std::size_t i = 0; i < points.size(); ++i) {
    if (!std::isfinite(points[i].t) || !std::isfinite(points[i].x) || !std::isfinite(points[i].y)) {
      throw ValidationError("trajectory point " + std::to_string(i) + " is not finite");
    }
    if (i > 0 && !(points[i].t > points[i - 1].t)) {
      throw ValidationError("trajectory timestamps must be strictly increasing");
    }
  }
  std::vector<Point2> grid;
  std::string missing;
  for (std::size_t w = 1; w <= kNumWaypoints; ++w) {
    const double g = kWaypointDt * static_cast<double>(w);
    if (points.empty() || g < points.front().t || g > points.back().t) {
      missing += fmt::format("{}{}s", missing.empty() ? "" : ", ", g);
      continue;
    }
    std::size_t hi = 0;
    while (points[hi].t < g) ++hi;
    if (points[hi].t == g) {
      grid.push_back({points[hi].x, points[hi].y});
      continue;
    }
    const auto& a = points[hi - 1];
    const auto& b = points[hi];
    grid.push_back({a.x + (b.x - a.x) * (g - a.t) / (b.t - a.t), a.y + (b.y - a.y) * (g - a.t) / (b.t - a.t)});
  }
  if (!missing.empty()) throw ValidationError("trajectory does not cover horizons: " + missing);
  return TrajectoryPlan(std::move(grid));
}

// ---- records ---------------------------------------------------------------

bool operator==(const TaggedText& a, const TaggedText& b) { return a.raw == b.raw && a.segments == b.segments; }
bool operator==(const Turn& a, const Turn& b) { return a.role == b.role && a.value == b.value; }
bool operator==(const UnifiedRecord& a, const UnifiedRecord& b) {
  return a.id == b.id && a.images == b.images && a.conversation == b.conversation &&
         a.trajectory == b.trajectory && a.ego_status == b.ego_status && a.source == b.source &&
         a.answer_class == b.answer_class;
}

void UnifiedRecord::validate() const {
  if (conversation.empty()) throw ValidationError("record '" + id + "': empty conversation");
  for (std::size_t i = 0; i < conversation.size(); ++i) {
    const Role expected = i % 2 == 0 ? Role::Human : Role::Assistant;
    if (conversation[i].role != expected) {
      throw ValidationError("record '" + id + "': conversation must alternate human/assistant starting with human",
                            "/conversations/" + std::to_string(i));
    }
  }
}

void RefineReport::merge(const RefineReport& o) {
  input += o.input;
  kept += o.kept;
  dropped += o.dropped;
  for (const auto& [k, v] : o.drop_reasons) drop_reasons[k] += v;
  for (const auto& [k, v] : o.box_drop_reasons) box_drop_reasons[k] += v;
  boxes_normalized += o.boxes_normalized;
  decimals_converted += o.decimals_converted;
}

namespace {

std::optional<std::string> box_violation(const BoxCoords& b) {
  auto in_range = [](std::int64_t v) { return v >= 0 && v <= kGridMax; };
  if (!in_range(b.x1) || !in_range(b.y1) || !in_range(b.x2) || !in_range(b.y2)) return "out_of_range";
  if (b.x2 < b.x1 || b.y2 < b.y1) return "inverted";
  if (b.x1 == b.x2 || b.y1 == b.y2) return "zero_area";
  return std::nullopt;
}

bool has_ref(const TaggedText& t) {
  return std::any_of(t.segments.begin(), t.segments.end(),
                     [](const Segment& s) { return std::holds_alternative<RefSpan>(s); });
}

}  // namespace

std::pair<std::vector<UnifiedRecord>, RefineReport> filter_invalid_boxes(std::vector<UnifiedRecord> records) {
  RefineReport report;
  report.input = records.size();
  std::vector<UnifiedRecord> kept;
  kept.reserve(records.size());
  for (auto& rec : records) {
    bool drop = false;
    for (std::size_t t = 0; t < rec.conversation.size(); ++t) {
      auto& turn = rec.conversation[t];
      std::size_t boxes = 0, removed = 0;
      for (const auto& seg : turn.value.segments) {
        if (const auto* b = std::get_if<BoxSpan>(&seg)) {
          ++boxes;
          if (auto why = box_violation(b->box)) {
            ++removed;
            ++report.box_drop_reasons[*why];
          }
        }
      }
      if (removed == 0) continue;
      std::vector<Segment> survivors;
      for (auto& seg : turn.value.segments) {
        if (const auto* b = std::get_if<BoxSpan>(&seg); b && box_violation(b->box)) continue;
        if (const auto* p = std::get_if<PlainText>(&seg)) {
          push_plain(survivors, p->text);
        } else {
          survivors.push_back(std::move(seg));
        }
      }
      turn.value.segments = std::move(survivors);
      turn.value.raw = serialize_tags(turn.value);
      if (turn.role == Role::Assistant && removed == boxes && t > 0 && has_ref(rec.conversation[t - 1].value)) {
        drop = true;
      }
    }
    if (drop) {
      ++report.dropped;
      ++report.drop_reasons["grounding_without_valid_boxes"];
    } else {
      ++report.kept;
      kept.push_back(std::move(rec));
    }
  }
  return {std::move(kept), report};
}

AnswerClass classify_answer_length(const TaggedText& answer, std::size_t threshold) {
  std::size_t tokens = 0;
  for (const auto& seg : answer.segments) {
    if (const auto* p = std::get_if<PlainText>(&seg)) {
      bool in_word = false;
      for (char c : p->text) {
        const bool space = std::isspace(static_cast<unsigned char>(c));
        if (!space && !in_word) ++tokens;
        in_word = !space;
      }
    } else {
      ++tokens;
    }
  }
  return tokens <= threshold ? AnswerClass::Short : AnswerClass::Long;
}

std::string_view to_string(AnswerClass c) { return c == AnswerClass::Short ? "short" : "long"; }
std::string_view to_string(Role r) { return r == Role::Human ? "human" : "assistant"; }

}  // namespace fk
