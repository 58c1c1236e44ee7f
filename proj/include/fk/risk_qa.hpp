#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "fk/chat_client.hpp"
#include "fk/driving_eval.hpp"
#include "json.hpp"

namespace fk {

enum class Bearing { Ahead, AheadLeft, AheadRight, Left, Right, Behind, BehindLeft, BehindRight };

/// "ahead", "ahead to the left", ..., "behind to the right".
std::string_view render_bearing(Bearing b);
/// Accepts "ahead-left", "ahead_left", "ahead to the left" and friends.
std::optional<Bearing> parse_bearing(std::string_view s);

struct SceneObject {
  std::string category;
  Bearing bearing = Bearing::Ahead;
  std::int64_t distance = 0;  // meters
  std::optional<NormalizedBox> box;
  std::string view = "front";

  void validate() const;
};

/// "the {category} located {d} meters {bearing}".
std::string object_phrase(const SceneObject& o);

enum class RiskStatus { High, Medium, Low };

/// Display names as used in prompts and responses: "View obstruction", ...
std::string_view risk_type_name(RiskCategory c);
std::string_view to_string(RiskStatus s);
/// Case-insensitive; also accepts "Traffic rule violation".
std::optional<RiskCategory> parse_risk_type_name(std::string_view s);

struct RiskEntry {
  RiskCategory type;
  RiskStatus status;
  std::string reason;

  bool operator==(const RiskEntry&) const = default;
};

struct RiskObject {
  std::string phrase;
  std::vector<RiskEntry> risks;  // never empty

  bool operator==(const RiskObject&) const = default;
  RiskStatus max_status() const;
};

struct RiskAssessmentDoc {
  std::vector<RiskObject> objects;  // response order

  bool empty() const noexcept { return objects.empty(); }
  bool operator==(const RiskAssessmentDoc&) const = default;
};

enum class QaCategory { Exist, Level, Category, Object, Reason, Grounding };
std::string_view to_string(QaCategory c);
std::optional<QaCategory> parse_qa_category(std::string_view s);

inline constexpr std::string_view kRiskStepId = "extract_risk";
inline constexpr std::string_view kQaStepId = "extract_qa";

struct QaPair {
  std::string question;
  std::string answer;
  std::optional<QaCategory> category;
  std::string scene_id;
  std::string step_id;

  bool operator==(const QaPair&) const = default;
};

/// Step-1 prompt. `view` is a camera name such as "front" or "back_left".
std::string build_risk_prompt(std::span<const SceneObject> objects, std::string_view view = "front");
/// Step-2 prompt.
std::string build_qa_prompt(const RiskAssessmentDoc& doc);

/// Finds the outermost JSON value starting with `open` ('{' or '['), skipping code fences and prose.
/// Returns nullopt when there is none.
std::optional<std::string_view> extract_json(std::string_view text, char open);

RiskAssessmentDoc parse_risk_response(std::string_view text);
/// Inverse of parse_risk_response on valid docs.
nlohmann::ordered_json risk_doc_to_json(const RiskAssessmentDoc& doc);

std::vector<QaPair> parse_qa_response(std::string_view text);

QaPair categorize_qa(QaPair pair, const RiskAssessmentDoc& doc);

struct GroundingTarget {
  std::string scene_id;
  std::string phrase;
  NormalizedBox box;
  std::string view;

  bool operator==(const GroundingTarget&) const = default;
};

struct GroundingDerivation {
  std::vector<GroundingTarget> targets;
  std::vector<std::string> unmatched;  // High-risk phrases without a boxed scene object
};

GroundingDerivation derive_grounding_targets(const RiskAssessmentDoc& doc, std::span<const SceneObject> objects,
                                             std::string_view scene_id = "");

struct Scene {
  std::string id;
  std::string view = "front";
  std::vector<SceneObject> objects;
};

struct PipelineConfig {
  std::string risk_model = "gpt-4o";
  std::string qa_model = "gpt-4o-mini";
  double temperature = 0.0;
  std::optional<std::uint64_t> seed;
  int retries = 2;
  std::size_t max_in_flight = 1;
};

/// Appended as a user turn after an unparseable answer.
std::string repair_instruction(std::string_view error);

struct SceneFailure {
  std::string scene_id;
  std::string step_id;
  std::string error;
};

struct PipelineReport {
  std::size_t scenes_total = 0;
  std::size_t scenes_succeeded = 0;
  std::size_t scenes_failed = 0;
  std::size_t scenes_without_risks = 0;
  std::size_t retries = 0;
  std::size_t pairs_total = 0;
  std::map<std::string, std::size_t> pairs_per_category;
  std::vector<SceneFailure> failures;
  std::vector<std::pair<std::string, std::string>> unmatched_grounding;  // (scene id, phrase)
};

struct PipelineResult {
  std::vector<QaPair> pairs;
  std::vector<GroundingTarget> targets;
  PipelineReport report;
};

PipelineResult run_pipeline(std::span<const Scene> scenes, ChatClient& client, const PipelineConfig& cfg);

nlohmann::ordered_json qa_pair_to_json(const QaPair& p);
nlohmann::ordered_json grounding_target_to_json(const GroundingTarget& t);
nlohmann::ordered_json pipeline_report_to_json(const PipelineReport& r);
/// {"id", "view"?, "objects": [{"category", "bearing", "distance", "box"?: [x1,y1,x2,y2], "view"?}]}
Scene scene_from_json(const nlohmann::json& j);

}  // namespace fk
