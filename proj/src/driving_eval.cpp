#include "fk/driving_eval.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <unordered_map>

#include "fk/errors.hpp"
#include "fk/text_metrics.hpp"

namespace fk {

NormalizedBox::NormalizedBox(int x1, int y1, int x2, int y2) : x1_(x1), y1_(y1), x2_(x2), y2_(y2) {
  auto in_range = [](int v) { return v >= 0 && v <= kGridMax; };
  if (!in_range(x1) || !in_range(y1) || !in_range(x2) || !in_range(y2)) {
    throw ValidationError("box coordinates must lie in [0, 999]");
  }
  if (x1 > x2 || y1 > y2) throw ValidationError("box corners are inverted");
}

double iou(const NormalizedBox& a, const NormalizedBox& b) {
  const int ix1 = std::max(a.x1(), b.x1());
  const int iy1 = std::max(a.y1(), b.y1());
  const int ix2 = std::min(a.x2(), b.x2());
  const int iy2 = std::min(a.y2(), b.y2());
  std::int64_t inter = 0;
  if (ix1 <= ix2 && iy1 <= iy2) inter = static_cast<std::int64_t>(ix2 - ix1 + 1) * (iy2 - iy1 + 1);
  const std::int64_t uni = a.cell_area() + b.cell_area() - inter;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

namespace {

// Image index into gts for each entry of preds; throws on any id mismatch.
std::vector<std::size_t> align_images(std::span<const ImageDetections> preds,
                                      std::span<const ImageGroundTruth> gts) {
  std::unordered_map<std::string, std::size_t> gt_index;
  for (std::size_t i = 0; i < gts.size(); ++i) {
    if (!gt_index.emplace(gts[i].image_id, i).second) {
      throw ValidationError("duplicate ground-truth image id '" + gts[i].image_id + "'");
    }
  }
  std::vector<std::size_t> out;
  std::set<std::string> seen;
  std::vector<std::string> missing;
  for (const auto& p : preds) {
    auto it = gt_index.find(p.image_id);
    if (it == gt_index.end()) {
      missing.push_back(p.image_id);
      continue;
    }
    if (!seen.insert(p.image_id).second) throw ValidationError("duplicate prediction image id '" + p.image_id + "'");
    out.push_back(it->second);
  }
  for (const auto& g : gts) {
    if (!seen.count(g.image_id)) missing.push_back(g.image_id);
  }
  if (!missing.empty()) {
    std::string ids;
    for (const auto& m : missing) ids += (ids.empty() ? "" : ", ") + m;
    throw ValidationError("image ids do not match between predictions and ground truth: " + ids);
  }
  return out;
}

}  // namespace

MatchOutcome greedy_match(std::span<const ImageDetections> preds, std::span<const ImageGroundTruth> gts,
                          std::string_view label, double threshold) {
  const auto gt_of = align_images(preds, gts);

  struct Candidate {
    std::size_t image;  // index into preds
    const Detection* det;
  };
  std::vector<Candidate> cands;
  for (std::size_t i = 0; i < preds.size(); ++i)
    for (const auto& d : preds[i].detections)
      if (d.label == label) cands.push_back({i, &d});
  std::stable_sort(cands.begin(), cands.end(),
                   [](const Candidate& a, const Candidate& b) { return a.det->score > b.det->score; });

  MatchOutcome out;
  std::vector<std::vector<bool>> used(gts.size());
  for (std::size_t g = 0; g < gts.size(); ++g) {
    used[g].assign(gts[g].boxes.size(), false);
    for (const auto& b : gts[g].boxes) out.num_gt += b.label == label;
  }
  for (const auto& c : cands) {
    const auto& gt = gts[gt_of[c.image]];
    std::size_t best = gt.boxes.size();
    double best_iou = -1.0;
    for (std::size_t j = 0; j < gt.boxes.size(); ++j) {
      if (used[gt_of[c.image]][j] || gt.boxes[j].label != label) continue;
      const double v = iou(c.det->box, gt.boxes[j].box);
      if (v >= threshold && v > best_iou) {
        best = j;
        best_iou = v;
      }
    }
    if (best < gt.boxes.size()) used[gt_of[c.image]][best] = true;
    out.tp.push_back(best < gt.boxes.size());
  }
  return out;
}

double average_precision(const std::vector<bool>& tp, std::size_t num_gt, ApInterpolation interp) {
  if (num_gt == 0) throw ValidationError("average_precision: no ground truth");
  const std::size_t n = tp.size();
  std::vector<double> prec(n), rec(n);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < n; ++i) {
    hits += tp[i];
    prec[i] = static_cast<double>(hits) / static_cast<double>(i + 1);
    rec[i] = static_cast<double>(hits) / static_cast<double>(num_gt);
  }
  // Precision envelope: best precision at this rank or any later one.
  for (std::size_t i = n; i-- > 1;) prec[i - 1] = std::max(prec[i - 1], prec[i]);

  if (interp == ApInterpolation::ElevenPoint) {
    double sum = 0.0;
    for (int t = 0; t <= 10; ++t) {
      const double level = t / 10.0;
      double p = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        if (rec[i] >= level) {
          p = prec[i];
          break;
        }
      }
      sum += p;
    }
    return sum / 11.0;
  }
  double ap = 0.0;
  double prev_rec = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (rec[i] != prev_rec) {
      ap += (rec[i] - prev_rec) * prec[i];
      prev_rec = rec[i];
    }
  }
  return ap;
}

GroundingResult grounding_map(std::span<const ImageDetections> preds, std::span<const ImageGroundTruth> gts,
                              const GroundingConfig& cfg) {
  if (cfg.iou_thresholds.empty()) throw ValidationError("grounding_map: no IoU thresholds");
  for (double t : cfg.iou_thresholds) {
    if (!(t > 0.0 && t <= 1.0)) throw ValidationError("grounding_map: IoU threshold outside (0, 1]");
  }
  align_images(preds, gts);

  std::set<std::string> classes;
  for (const auto& g : gts)
    for (const auto& b : g.boxes) classes.insert(b.label);

  GroundingResult res;
  if (classes.empty()) return res;
  double sum_over_thresholds = 0.0;
  for (double t : cfg.iou_thresholds) {
    auto& row = res.per_threshold.emplace_back();
    double sum = 0.0;
    for (const auto& label : classes) {
      const auto m = greedy_match(preds, gts, label, t);
      const double ap = 100.0 * average_precision(m.tp, m.num_gt, cfg.interpolation);
      row.emplace_back(label, ap);
      sum += ap;
    }
    sum_over_thresholds += sum / static_cast<double>(classes.size());
  }
  res.map = sum_over_thresholds / static_cast<double>(cfg.iou_thresholds.size());
  return res;
}

GroundingResult risk_grounding_map(std::span<const ImageDetections> preds,
                                   std::span<const ImageGroundTruth> gts, const GroundingConfig& cfg) {
  std::vector<ImageDetections> p(preds.begin(), preds.end());
  std::vector<ImageGroundTruth> g(gts.begin(), gts.end());
  for (auto& img : p)
    for (auto& d : img.detections) d.label = std::string(kRiskTargetLabel);
  for (auto& img : g)
    for (auto& b : img.boxes) b.label = std::string(kRiskTargetLabel);
  return grounding_map(p, g, cfg);
}

TrajectoryPlan::TrajectoryPlan(std::vector<Point2> waypoints) : pts_(std::move(waypoints)) {
  if (pts_.size() != kNumWaypoints) {
    throw ValidationError("trajectory must have exactly 6 waypoints, got " + std::to_string(pts_.size()));
  }
  for (const auto& p : pts_) {
    if (!std::isfinite(p.x) || !std::isfinite(p.y)) throw ValidationError("trajectory has a non-finite waypoint");
  }
}

HorizonValues l2_error(const TrajectoryPlan& pred, const TrajectoryPlan& gt, L2Mode mode) {
  std::array<double, kNumWaypoints> d{};
  for (std::size_t i = 0; i < kNumWaypoints; ++i) {
    d[i] = std::hypot(pred.waypoints()[i].x - gt.waypoints()[i].x, pred.waypoints()[i].y - gt.waypoints()[i].y);
  }
  HorizonValues h;
  if (mode == L2Mode::AtHorizon) {
    h.h1 = d[1];
    h.h2 = d[3];
    h.h3 = d[5];
  } else {
    auto mean_to = [&](std::size_t last) {
      double s = 0.0;
      for (std::size_t i = 0; i <= last; ++i) s += d[i];
      return s / static_cast<double>(last + 1);
    };
    h.h1 = mean_to(1);
    h.h2 = mean_to(3);
    h.h3 = mean_to(5);
  }
  h.avg = (h.h1 + h.h2 + h.h3) / 3.0;
  return h;
}

std::array<Point2, 4> box_corners(const AgentBox& b) {
  const double c = std::cos(b.heading), s = std::sin(b.heading);
  const double hl = b.length / 2.0, hw = b.width / 2.0;
  auto at = [&](double l, double w) { return Point2{b.center.x + l * c - w * s, b.center.y + l * s + w * c}; };
  return {at(hl, -hw), at(hl, hw), at(-hl, hw), at(-hl, -hw)};
}

bool boxes_overlap(const AgentBox& a, const AgentBox& b) {
  if (!(a.length > 0 && a.width > 0 && b.length > 0 && b.width > 0)) {
    throw ValidationError("box extents must be positive");
  }
  const auto ca = box_corners(a);
  const auto cb = box_corners(b);
  const std::array<Point2, 4> axes = {Point2{std::cos(a.heading), std::sin(a.heading)},
                                      Point2{-std::sin(a.heading), std::cos(a.heading)},
                                      Point2{std::cos(b.heading), std::sin(b.heading)},
                                      Point2{-std::sin(b.heading), std::cos(b.heading)}};
  for (const auto& ax : axes) {
    double amin = INFINITY, amax = -INFINITY, bmin = INFINITY, bmax = -INFINITY;
    for (const auto& p : ca) {
      const double v = p.x * ax.x + p.y * ax.y;
      amin = std::min(amin, v);
      amax = std::max(amax, v);
    }
    for (const auto& p : cb) {
      const double v = p.x * ax.x + p.y * ax.y;
      bmin = std::min(bmin, v);
      bmax = std::max(bmax, v);
    }
    if (amax <= bmin || bmax <= amin) return false;
  }
  return true;
}

std::vector<double> waypoint_headings(const TrajectoryPlan& plan) {
  const auto& p = plan.waypoints();
  // seg[i] is the heading of the segment p[i] -> p[i + 1].
  std::vector<std::optional<double>> seg(kNumWaypoints - 1);
  for (std::size_t i = 0; i + 1 < kNumWaypoints; ++i) {
    const double dx = p[i + 1].x - p[i].x, dy = p[i + 1].y - p[i].y;
    if (dx != 0.0 || dy != 0.0) seg[i] = std::atan2(dy, dx);
  }
  // Fill undefined segments from the previous defined one, then leading gaps from the first.
  std::optional<double> last;
  for (auto& s : seg) {
    if (s) last = s;
    else s = last;
  }
  std::optional<double> first;
  for (const auto& s : seg)
    if (s) {
      first = s;
      break;
    }
  for (auto& s : seg)
    if (!s) s = first;

  std::vector<double> out(kNumWaypoints);
  out[0] = seg[0].value_or(0.0);
  for (std::size_t i = 1; i < kNumWaypoints; ++i) out[i] = seg[i - 1].value_or(0.0);
  return out;
}

std::vector<bool> collision_flags(const TrajectoryPlan& pred, const EgoShape& ego,
                                  std::span<const std::vector<AgentBox>> agents_per_step) {
  if (agents_per_step.size() != kNumWaypoints) {
    throw ValidationError("agent snapshots misaligned: expected 6 timesteps, got " +
                          std::to_string(agents_per_step.size()));
  }
  const auto headings = waypoint_headings(pred);
  std::vector<bool> flags(kNumWaypoints, false);
  for (std::size_t i = 0; i < kNumWaypoints; ++i) {
    const AgentBox ego_box{pred.waypoints()[i], ego.length, ego.width, headings[i]};
    for (const auto& agent : agents_per_step[i]) {
      if (boxes_overlap(ego_box, agent)) {
        flags[i] = true;
        break;
      }
    }
  }
  return flags;
}

HorizonValues collision_rate(std::span<const PlanningSample> samples, const EgoShape& ego) {
  if (samples.empty()) throw ValidationError("collision_rate: no samples");
  std::array<std::size_t, 3> hits{};
  for (const auto& s : samples) {
    const auto flags = collision_flags(s.pred, ego, s.agents);
    bool any = false;
    for (std::size_t i = 0; i < kNumWaypoints; ++i) {
      any = any || flags[i];
      if (i == 1 && any) ++hits[0];
      if (i == 3 && any) ++hits[1];
      if (i == 5 && any) ++hits[2];
    }
  }
  const double n = static_cast<double>(samples.size());
  HorizonValues h{100.0 * hits[0] / n, 100.0 * hits[1] / n, 100.0 * hits[2] / n, 0.0};
  h.avg = (h.h1 + h.h2 + h.h3) / 3.0;
  return h;
}

void OraSample::validate() const {
  if (!exist && (level || category || object)) {
    throw ValidationError("ORA sample '" + id + "': level/category/object given without a risk");
  }
}

OraReport ora_score(std::span<const OraSample> preds, std::span<const OraSample> gts, OraGate gate) {
  std::unordered_map<std::string, const OraSample*> by_id;
  for (const auto& p : preds) {
    if (!by_id.emplace(p.id, &p).second) throw ValidationError("duplicate prediction id '" + p.id + "'");
  }
  std::vector<std::string> missing;
  for (const auto& g : gts)
    if (!by_id.count(g.id)) missing.push_back(g.id);
  if (!missing.empty() || preds.size() != gts.size()) {
    std::string ids;
    for (const auto& m : missing) ids += (ids.empty() ? "" : ", ") + m;
    throw ValidationError("ORA ids do not match between predictions and ground truth" +
                          (ids.empty() ? std::string() : ": missing " + ids));
  }
  if (gts.empty()) throw ValidationError("ora_score: empty input");

  OraReport r;
  r.total = gts.size();
  std::size_t exist_hits = 0;
  std::array<std::size_t, 3> denom{}, hits{};
  for (const auto& g : gts) {
    const OraSample& p = *by_id.at(g.id);
    const bool exist_ok = p.exist == g.exist;
    exist_hits += exist_ok;
    if (!g.exist) continue;
    if (gate == OraGate::CorrectExist && !exist_ok) continue;
    ++r.gated;
    if (g.level) {
      ++denom[0];
      hits[0] += exist_ok && p.level == g.level;
    }
    if (g.category) {
      ++denom[1];
      hits[1] += exist_ok && p.category == g.category;
    }
    if (g.object) {
      ++denom[2];
      hits[2] += exist_ok && p.object && normalize_answer(*p.object) == normalize_answer(*g.object);
    }
  }
  r.exist_acc = 100.0 * static_cast<double>(exist_hits) / static_cast<double>(r.total);
  auto pct = [](std::size_t h, std::size_t d) -> std::optional<double> {
    if (d == 0) return std::nullopt;
    return 100.0 * static_cast<double>(h) / static_cast<double>(d);
  };
  r.level_acc = pct(hits[0], denom[0]);
  r.cate_acc = pct(hits[1], denom[1]);
  r.object_acc = pct(hits[2], denom[2]);
  return r;
}

std::string_view to_string(RiskLevel l) {
  switch (l) {
    case RiskLevel::Low: return "low";
    case RiskLevel::Medium: return "medium";
    case RiskLevel::High: return "high";
  }
  return "";
}

std::string_view to_string(RiskCategory c) {
  switch (c) {
    case RiskCategory::ViewObstruction: return "view_obstruction";
    case RiskCategory::CollisionPossibility: return "collision_possibility";
    case RiskCategory::TrafficRuleViolation: return "traffic_rule_violation";
    case RiskCategory::PotentialRisk: return "potential_risk";
  }
  return "";
}

std::string_view to_string(L2Mode m) { return m == L2Mode::AtHorizon ? "at-horizon" : "average"; }
std::string_view to_string(OraGate g) { return g == OraGate::CorrectExist ? "correct-exist" : "all-gt-exist"; }
std::string_view to_string(ApInterpolation i) { return i == ApInterpolation::AllPoint ? "all-point" : "11-point"; }

std::optional<RiskLevel> parse_risk_level(std::string_view s) {
  const auto n = normalize_answer(s);
  if (n == "low") return RiskLevel::Low;
  if (n == "medium") return RiskLevel::Medium;
  if (n == "high") return RiskLevel::High;
  return std::nullopt;
}

std::optional<RiskCategory> parse_risk_category(std::string_view s) {
  std::string n = normalize_answer(s);
  std::replace(n.begin(), n.end(), ' ', '_');
  if (n == "view_obstruction") return RiskCategory::ViewObstruction;
  if (n == "collision_possibility") return RiskCategory::CollisionPossibility;
  if (n == "traffic_rule_violation" || n == "traffic_rule_violations") return RiskCategory::TrafficRuleViolation;
  if (n == "potential_risk") return RiskCategory::PotentialRisk;
  return std::nullopt;
}

std::optional<L2Mode> parse_l2_mode(std::string_view s) {
  if (s == "at-horizon") return L2Mode::AtHorizon;
  if (s == "average") return L2Mode::AverageToHorizon;
  return std::nullopt;
}

std::optional<OraGate> parse_ora_gate(std::string_view s) {
  if (s == "correct-exist") return OraGate::CorrectExist;
  if (s == "all-gt-exist") return OraGate::AllGtExist;
  return std::nullopt;
}

std::optional<ApInterpolation> parse_ap_interpolation(std::string_view s) {
  if (s == "all-point") return ApInterpolation::AllPoint;
  if (s == "11-point") return ApInterpolation::ElevenPoint;
  return std::nullopt;
}

}  // namespace fk
