#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace fk {

inline constexpr int kGridMax = 999;

/// Integer box on the inclusive 0..999 grid.
class NormalizedBox {
 public:
  /// Throws ValidationError unless 0 <= x1 <= x2 <= 999 and likewise for y.
  NormalizedBox(int x1, int y1, int x2, int y2);

  int x1() const noexcept { return x1_; }
  int y1() const noexcept { return y1_; }
  int x2() const noexcept { return x2_; }
  int y2() const noexcept { return y2_; }
  /// Number of grid cells covered.
  std::int64_t cell_area() const noexcept {
    return static_cast<std::int64_t>(x2_ - x1_ + 1) * (y2_ - y1_ + 1);
  }

  bool operator==(const NormalizedBox&) const = default;

 private:
  int x1_, y1_, x2_, y2_;
};

double iou(const NormalizedBox& a, const NormalizedBox& b);

struct Detection {
  NormalizedBox box;
  double score;
  std::string label;
};

struct LabeledBox {
  NormalizedBox box;
  std::string label;
};

struct ImageDetections {
  std::string image_id;
  std::vector<Detection> detections;
};

struct ImageGroundTruth {
  std::string image_id;
  std::vector<LabeledBox> boxes;
};

enum class ApInterpolation { AllPoint, ElevenPoint };

struct GroundingConfig {
  std::vector<double> iou_thresholds{0.5};
  ApInterpolation interpolation = ApInterpolation::AllPoint;
};

struct GroundingResult {
  /// mAP x100, or nullopt when no class has ground truth.
  std::optional<double> map;
  /// Per threshold, per class AP x100 (classes without ground truth omitted).
  std::vector<std::vector<std::pair<std::string, double>>> per_threshold;
};

/// Greedy score-ordered matching per class and threshold; AP from the PR curve;
/// mean over classes, then thresholds. Images must match one-to-one by id.
GroundingResult grounding_map(std::span<const ImageDetections> preds,
                              std::span<const ImageGroundTruth> gts, const GroundingConfig& cfg = {});

/// Match flags (true = TP) for one class and threshold, in score order, plus the GT count.
struct MatchOutcome {
  std::vector<bool> tp;
  std::size_t num_gt = 0;
};
MatchOutcome greedy_match(std::span<const ImageDetections> preds, std::span<const ImageGroundTruth> gts,
                          std::string_view label, double threshold);

/// Area under the precision/recall staircase for ranked TP flags.
double average_precision(const std::vector<bool>& tp, std::size_t num_gt, ApInterpolation interp);

inline constexpr std::string_view kRiskTargetLabel = "risk-target";

/// grounding_map with every box relabelled as the single "risk-target" class.
GroundingResult risk_grounding_map(std::span<const ImageDetections> preds,
                                   std::span<const ImageGroundTruth> gts, const GroundingConfig& cfg = {});

struct Point2 {
  double x = 0.0;
  double y = 0.0;

  bool operator==(const Point2&) const = default;
};

inline constexpr std::size_t kNumWaypoints = 6;
inline constexpr double kWaypointDt = 0.5;

/// Six ego-frame waypoints at 0.5 s .. 3.0 s.
class TrajectoryPlan {
 public:
  explicit TrajectoryPlan(std::vector<Point2> waypoints);

  const std::vector<Point2>& waypoints() const noexcept { return pts_; }

  bool operator==(const TrajectoryPlan&) const = default;

 private:
  std::vector<Point2> pts_;
};

enum class L2Mode { AtHorizon, AverageToHorizon };

struct HorizonValues {
  double h1 = 0.0;
  double h2 = 0.0;
  double h3 = 0.0;
  double avg = 0.0;
};

/// Horizon h covers waypoints at t <= h s (indices 1, 3, 5 sit at exactly 1, 2, 3 s).
HorizonValues l2_error(const TrajectoryPlan& pred, const TrajectoryPlan& gt, L2Mode mode = L2Mode::AtHorizon);

/// Oriented rectangle. heading is the angle of the length axis from +x.
struct AgentBox {
  Point2 center;
  double length;
  double width;
  double heading;
};

/// Corners in counter-clockwise order.
std::array<Point2, 4> box_corners(const AgentBox& b);

/// Separating-axis overlap test. Boxes that only touch do not overlap.
bool boxes_overlap(const AgentBox& a, const AgentBox& b);

struct EgoShape {
  double length = 4.084;
  double width = 1.85;
};

/// Ego heading at each waypoint: direction of the segment ending there, the first
/// segment's direction at waypoint 0. Zero-length segments reuse the nearest
/// defined heading; a trajectory that never moves faces +x.
std::vector<double> waypoint_headings(const TrajectoryPlan& plan);

/// Per waypoint: does the ego footprint overlap any agent at that timestep?
std::vector<bool> collision_flags(const TrajectoryPlan& pred, const EgoShape& ego,
                                  std::span<const std::vector<AgentBox>> agents_per_step);

struct PlanningSample {
  TrajectoryPlan pred;
  std::vector<std::vector<AgentBox>> agents;  // one list per waypoint
};

/// Percentage of samples colliding at any waypoint up to each horizon; avg is
/// the mean of the three horizon rates.
HorizonValues collision_rate(std::span<const PlanningSample> samples, const EgoShape& ego);

enum class RiskLevel { Low, Medium, High };
enum class RiskCategory { ViewObstruction, CollisionPossibility, TrafficRuleViolation, PotentialRisk };

struct OraSample {
  std::string id;
  bool exist = false;
  std::optional<RiskLevel> level;
  std::optional<RiskCategory> category;
  std::optional<std::string> object;
  std::string reason;
  std::optional<NormalizedBox> grounding;
  double grounding_score = 1.0;

  /// level/category/object only when exist.
  void validate() const;
};

enum class OraGate {
  /// Denominator: predicted exist correct and GT exist true.
  CorrectExist,
  /// Denominator: every GT-exist sample; a wrong exist counts as wrong.
  AllGtExist,
};

/// Accuracies x100. Gated fields are nullopt when their denominator is empty.
struct OraReport {
  double exist_acc = 0.0;
  std::optional<double> level_acc;
  std::optional<double> cate_acc;
  std::optional<double> object_acc;
  std::size_t total = 0;
  std::size_t gated = 0;
};

OraReport ora_score(std::span<const OraSample> preds, std::span<const OraSample> gts,
                    OraGate gate = OraGate::CorrectExist);

std::string_view to_string(RiskLevel l);
std::string_view to_string(RiskCategory c);
std::string_view to_string(L2Mode m);
std::string_view to_string(OraGate g);
std::string_view to_string(ApInterpolation i);
std::optional<RiskLevel> parse_risk_level(std::string_view s);
std::optional<RiskCategory> parse_risk_category(std::string_view s);
std::optional<L2Mode> parse_l2_mode(std::string_view s);
std::optional<OraGate> parse_ora_gate(std::string_view s);
std::optional<ApInterpolation> parse_ap_interpolation(std::string_view s);

}  // namespace fk
