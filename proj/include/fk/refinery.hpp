#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "fk/driving_eval.hpp"

namespace fk {

// ---- tag grammar -----------------------------------------------------------

inline constexpr std::array<std::string_view, 6> kCameraNames = {
    "front", "front_left", "front_right", "back", "back_left", "back_right"};

bool is_camera_name(std::string_view name);

struct PlainText {
  std::string text;
  bool operator==(const PlainText&) const = default;
};

/// <ref>text</ref>
struct RefSpan {
  std::string text;
  bool operator==(const RefSpan&) const = default;
};

/// Integer corners as written in a <box> tag; may be out of range or inverted
/// until filter_invalid_boxes has run.
struct BoxCoords {
  std::int64_t x1 = 0, y1 = 0, x2 = 0, y2 = 0;
  bool operator==(const BoxCoords&) const = default;
};

/// <box>(x1,y1),(x2,y2)</box>
struct BoxSpan {
  BoxCoords box;
  bool operator==(const BoxSpan&) const = default;
};

/// <|camera_NAME|>
struct CameraTag {
  std::string view;
  bool operator==(const CameraTag&) const = default;
};

using Segment = std::variant<PlainText, RefSpan, BoxSpan, CameraTag>;

struct TaggedText {
  std::string raw;
  std::vector<Segment> segments;
};

/// Parses the tag grammar. Whitespace inside tag delimiters and box payloads is
/// tolerated and tag names are case-insensitive. Tag-like text that is not a
/// recognized tag (including unclosed <ref> and unknown camera names) stays
/// plain. Adjacent plain runs are merged.
///
/// Throws ParseError, with the byte offset, when a <box> tag has a malformed
/// payload or no closing tag.
TaggedText parse_tags(std::string_view raw);

/// Canonical spelling: no whitespace inside tags, boxes as (x1,y1),(x2,y2).
std::string serialize_tags(const TaggedText& t);
std::string serialize_tags(std::span<const Segment> segments);

/// Camera names from <|camera_NAME|> tags whose NAME is outside kCameraNames.
std::vector<std::string> unknown_camera_tags(std::string_view raw);

// ---- numeric normalization --------------------------------------------------

struct PixelBox {
  double x1, y1, x2, y2;
};

/// clamp(round(coord / (size - 1) * 999), 0, 999), half away from zero.
int normalize_coord(double coord, double size);

/// Throws ValidationError for image sizes below 2, non-finite or inverted input.
NormalizedBox normalize_box(const PixelBox& px, double img_w, double img_h);

/// round(value * unit_scale), half away from zero, evaluated exactly on the
/// shortest decimal representations of both operands (so 1.005 m at scale 100
/// is 101 cm, not 100). Throws ValidationError on non-finite input, a
/// non-positive scale, or a result outside int64.
std::int64_t quantize_decimal(double value, double unit_scale);

/// Replaces decimal literals (e.g. "12.5") in plain text with rounded integers.
/// Returns the rewritten text and the number of literals converted.
std::pair<std::string, std::size_t> convert_decimals(std::string_view text);

// ---- ego status ------------------------------------------------------------

enum class DrivingCommand { TurnLeft, TurnRight, GoStraight };

struct EgoStatus {
  double lateral_velocity = 0.0;           // m/s
  double longitudinal_velocity = 0.0;      // m/s
  double lateral_acceleration = 0.0;       // m/s^2
  double longitudinal_acceleration = 0.0;  // m/s^2
  DrivingCommand command = DrivingCommand::GoStraight;

  bool operator==(const EgoStatus&) const = default;
};

std::string encode_ego_status(const EgoStatus& s);

std::string_view to_string(DrivingCommand c);
std::optional<DrivingCommand> parse_command(std::string_view s);

// ---- trajectories ----------------------------------------------------------

enum class SourceDataset { NuScenesQa, NuScenesMqa, OmniDrive, NuInstruct, Ora };

std::string_view to_string(SourceDataset s);
std::optional<SourceDataset> parse_source(std::string_view s);

struct TimedPoint {
  double t;
  double x;
  double y;
};

/// Linear interpolation onto t = 0.5, 1.0, ..., 3.0 s. Grid times that coincide
/// with an input sample copy it exactly. Throws ValidationError for unordered
/// times or when the input does not cover every grid time (the message lists them).
TrajectoryPlan unify_trajectory(std::span<const TimedPoint> points, SourceDataset source);

// ---- records ---------------------------------------------------------------

enum class Role { Human, Assistant };
enum class AnswerClass { Short, Long };

struct Turn {
  Role role;
  TaggedText value;
};

struct UnifiedRecord {
  std::string id;
  std::vector<std::pair<std::string, std::string>> images;  // view name -> path, view order
  std::vector<Turn> conversation;
  std::optional<TrajectoryPlan> trajectory;
  std::optional<EgoStatus> ego_status;
  SourceDataset source = SourceDataset::NuScenesQa;
  AnswerClass answer_class = AnswerClass::Short;

  /// Conversation must be non-empty and alternate human/assistant, human first.
  void validate() const;
};

bool operator==(const TaggedText& a, const TaggedText& b);
bool operator==(const Turn& a, const Turn& b);
bool operator==(const UnifiedRecord& a, const UnifiedRecord& b);

struct RefineReport {
  std::size_t input = 0;
  std::size_t kept = 0;
  std::size_t dropped = 0;
  std::map<std::string, std::size_t> drop_reasons;      // record level
  std::map<std::string, std::size_t> box_drop_reasons;  // individual boxes
  std::size_t boxes_normalized = 0;
  std::size_t decimals_converted = 0;
  std::size_t short_threshold = 5;

  void merge(const RefineReport& other);
};

inline constexpr std::size_t kDefaultShortThreshold = 5;

/// Removes boxes that are out of range, inverted or zero-area. A record is
/// dropped when an assistant turn loses all of its boxes and the preceding
/// human turn contains a <ref> span. Records without violations pass through
/// untouched.
std::pair<std::vector<UnifiedRecord>, RefineReport> filter_invalid_boxes(std::vector<UnifiedRecord> records);

/// Short iff token count <= threshold; plain text counts whitespace-separated
/// words and every tag counts as one token.
AnswerClass classify_answer_length(const TaggedText& answer, std::size_t threshold = kDefaultShortThreshold);

std::string_view to_string(AnswerClass c);
std::string_view to_string(Role r);

}  // namespace fk
