#include "fk/refine_io.hpp"

#include <cctype>
#include <istream>
#include <regex>

#include "fk/errors.hpp"

namespace fk {

using nlohmann::json;
using nlohmann::ordered_json;

namespace {

std::string lower(std::string s) {
  for (char& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

// "CAM_FRONT_LEFT", "camera_front_left", "front_left" -> "front_left".
std::optional<std::string> canonical_view(std::string name) {
  name = lower(std::move(name));
  for (std::string_view prefix : {"camera_", "cam_"}) {
    if (name.starts_with(prefix)) {
      name = name.substr(prefix.size());
      break;
    }
  }
  if (is_camera_name(name)) return name;
  return std::nullopt;
}

std::string normalize_camera_tags(const std::string& text) {
  static const std::regex kCam(R"(<\|\s*(?:camera_|cam_)([A-Za-z_]+)\s*\|>)", std::regex::icase);
  std::string out;
  auto begin = std::sregex_iterator(text.begin(), text.end(), kCam);
  std::size_t last = 0;
  for (auto it = begin; it != std::sregex_iterator(); ++it) {
    const auto& m = *it;
    auto view = canonical_view(m[1].str());
    if (!view) throw ValidationError("unknown camera tag '" + m.str() + "'");
    out.append(text, last, static_cast<std::size_t>(m.position()) - last);
    out += "<|camera_" + *view + "|>";
    last = static_cast<std::size_t>(m.position() + m.length());
  }
  out.append(text, last);
  return out;
}

std::string normalize_pixel_boxes(const std::string& text, double w, double h, std::size_t& count) {
  static const std::string kNum = R"(\s*(-?\d+(?:\.\d+)?)\s*)";
  static const std::regex kBox(R"(<\s*box\s*>\s*\()" + kNum + "," + kNum + R"(\)\s*,\s*\()" + kNum + "," + kNum +
                                   R"(\)\s*<\s*/\s*box\s*>)",
                               std::regex::icase);
  std::string out;
  std::size_t last = 0;
  for (auto it = std::sregex_iterator(text.begin(), text.end(), kBox); it != std::sregex_iterator(); ++it) {
    const auto& m = *it;
    const int x1 = normalize_coord(std::stod(m[1].str()), w);
    const int y1 = normalize_coord(std::stod(m[2].str()), h);
    const int x2 = normalize_coord(std::stod(m[3].str()), w);
    const int y2 = normalize_coord(std::stod(m[4].str()), h);
    out.append(text, last, static_cast<std::size_t>(m.position()) - last);
    out += "<box>(" + std::to_string(x1) + "," + std::to_string(y1) + "),(" + std::to_string(x2) + "," +
           std::to_string(y2) + ")</box>";
    last = static_cast<std::size_t>(m.position() + m.length());
    ++count;
  }
  out.append(text, last);
  return out;
}

TaggedText refine_text(const std::string& raw, const json& rec, RefineReport& report) {
  std::string text = normalize_camera_tags(raw);
  if (rec.contains("image_size")) {
    const auto& sz = rec.at("image_size");
    if (!sz.is_array() || sz.size() != 2) throw ValidationError("image_size must be [width, height]", "/image_size");
    const double w = sz[0].get<double>(), h = sz[1].get<double>();
    if (!(w >= 2 && h >= 2)) throw ValidationError("image_size must be at least 2x2", "/image_size");
    text = normalize_pixel_boxes(text, w, h, report.boxes_normalized);
  }
  TaggedText t = parse_tags(text);
  for (auto& seg : t.segments) {
    if (auto* p = std::get_if<PlainText>(&seg)) {
      auto [converted, n] = convert_decimals(p->text);
      p->text = std::move(converted);
      report.decimals_converted += n;
    }
  }
  t.raw = serialize_tags(t);
  return t;
}

std::optional<TrajectoryPlan> adapt_trajectory(const json& rec, SourceDataset source) {
  if (!rec.contains("trajectory") || rec.at("trajectory").is_null()) return std::nullopt;
  const auto& tr = rec.at("trajectory");
  if (!tr.is_array()) throw ValidationError("trajectory must be an array", "/trajectory");
  std::vector<TimedPoint> pts;
  if (source == SourceDataset::OmniDrive) {
    // Per-step displacements at 0.5 s; accumulate from the ego origin at t = 0.
    double x = 0.0, y = 0.0;
    pts.push_back({0.0, 0.0, 0.0});
    for (std::size_t i = 0; i < tr.size(); ++i) {
      if (!tr[i].is_array() || tr[i].size() != 2) throw ValidationError("expected [dx, dy]", "/trajectory/" + std::to_string(i));
      x += tr[i][0].get<double>();
      y += tr[i][1].get<double>();
      pts.push_back({kWaypointDt * static_cast<double>(i + 1), x, y});
    }
  } else {
    for (std::size_t i = 0; i < tr.size(); ++i) {
      if (!tr[i].is_array() || tr[i].size() != 3) throw ValidationError("expected [t, x, y]", "/trajectory/" + std::to_string(i));
      pts.push_back({tr[i][0].get<double>(), tr[i][1].get<double>(), tr[i][2].get<double>()});
    }
  }
  return unify_trajectory(pts, source);
}

std::optional<EgoStatus> adapt_ego(const json& rec) {
  if (!rec.contains("ego_status") || rec.at("ego_status").is_null()) return std::nullopt;
  const auto& e = rec.at("ego_status");
  EgoStatus s;
  s.lateral_velocity = e.at("lateral_velocity").get<double>();
  s.longitudinal_velocity = e.at("longitudinal_velocity").get<double>();
  s.lateral_acceleration = e.at("lateral_acceleration").get<double>();
  s.longitudinal_acceleration = e.at("longitudinal_acceleration").get<double>();
  auto cmd = parse_command(e.at("command").get<std::string>());
  if (!cmd) throw ValidationError("unknown driving command", "/ego_status/command");
  s.command = *cmd;
  return s;
}

std::vector<std::pair<std::string, std::string>> adapt_images(const json& rec) {
  std::vector<std::pair<std::string, std::string>> out;
  if (!rec.contains("images")) return out;
  const auto& im = rec.at("images");
  if (im.is_array()) {
    if (im.size() > kCameraNames.size()) throw ValidationError("more than six images", "/images");
    for (std::size_t i = 0; i < im.size(); ++i) out.emplace_back(kCameraNames[i], im[i].get<std::string>());
    return out;
  }
  if (!im.is_object()) throw ValidationError("images must be an object or array", "/images");
  std::map<std::string, std::string> by_view;
  for (const auto& [k, v] : im.items()) {
    auto view = canonical_view(k);
    if (!view) throw ValidationError("unknown camera '" + k + "'", "/images");
    by_view[*view] = v.get<std::string>();
  }
  for (auto name : kCameraNames) {
    if (auto it = by_view.find(std::string(name)); it != by_view.end()) out.emplace_back(it->first, it->second);
  }
  return out;
}

std::string id_of(const json& j) {
  const auto& id = j.at("id");
  return id.is_string() ? id.get<std::string>() : id.dump();
}

}  // namespace

UnifiedRecord adapt_raw_record(const json& raw, SourceDataset source, std::size_t short_threshold,
                               RefineReport& report) {
  if (!raw.is_object()) throw ValidationError("record is not a JSON object");
  if (!raw.contains("id")) throw ValidationError("missing id", "/id");
  UnifiedRecord r;
  r.id = id_of(raw);
  r.source = source;
  r.images = adapt_images(raw);

  if (raw.contains("conversations")) {
    const auto& conv = raw.at("conversations");
    if (!conv.is_array()) throw ValidationError("conversations must be an array", "/conversations");
    for (std::size_t i = 0; i < conv.size(); ++i) {
      const std::string from = lower(conv[i].at("from").get<std::string>());
      Role role;
      if (from == "human" || from == "user") role = Role::Human;
      else if (from == "gpt" || from == "assistant") role = Role::Assistant;
      else throw ValidationError("unknown speaker '" + from + "'", "/conversations/" + std::to_string(i) + "/from");
      r.conversation.push_back({role, refine_text(conv[i].at("value").get<std::string>(), raw, report)});
    }
  } else if (raw.contains("question") && raw.contains("answer")) {
    r.conversation.push_back({Role::Human, refine_text(raw.at("question").get<std::string>(), raw, report)});
    r.conversation.push_back({Role::Assistant, refine_text(raw.at("answer").get<std::string>(), raw, report)});
  } else {
    throw ValidationError("record has neither conversations nor question/answer");
  }
  r.validate();

  r.trajectory = adapt_trajectory(raw, source);
  r.ego_status = adapt_ego(raw);
  for (auto it = r.conversation.rbegin(); it != r.conversation.rend(); ++it) {
    if (it->role == Role::Assistant) {
      r.answer_class = classify_answer_length(it->value, short_threshold);
      break;
    }
  }
  return r;
}

ordered_json record_to_json(const UnifiedRecord& r) {
  ordered_json j;
  j["id"] = r.id;
  j["source"] = std::string(to_string(r.source));
  ordered_json images = ordered_json::object();
  for (const auto& [view, path] : r.images) images[view] = path;
  j["images"] = images;
  ordered_json conv = ordered_json::array();
  for (const auto& t : r.conversation) {
    conv.push_back({{"from", t.role == Role::Human ? "human" : "gpt"}, {"value", serialize_tags(t.value)}});
  }
  j["conversations"] = conv;
  if (r.trajectory) {
    ordered_json tr = ordered_json::array();
    for (const auto& p : r.trajectory->waypoints()) tr.push_back({p.x, p.y});
    j["trajectory"] = tr;
  }
  if (r.ego_status) {
    const auto& e = *r.ego_status;
    j["ego_status"] = {{"lateral_velocity", e.lateral_velocity},
                       {"longitudinal_velocity", e.longitudinal_velocity},
                       {"lateral_acceleration", e.lateral_acceleration},
                       {"longitudinal_acceleration", e.longitudinal_acceleration},
                       {"command", std::string(to_string(e.command))},
                       {"text", encode_ego_status(e)}};
  }
  j["answer_class"] = std::string(to_string(r.answer_class));
  return j;
}

UnifiedRecord record_from_json(const json& j) {
  UnifiedRecord r;
  r.id = id_of(j);
  auto src = parse_source(j.at("source").get<std::string>());
  if (!src) throw ValidationError("unknown source", "/source");
  r.source = *src;
  const auto& images = j.at("images");
  for (const auto& [k, v] : images.items()) {
    if (!is_camera_name(k)) throw ValidationError("unknown camera '" + k + "'", "/images");
  }
  // Camera order, whatever order the object keys came in.
  for (auto name : kCameraNames) {
    if (auto it = images.find(std::string(name)); it != images.end()) r.images.emplace_back(name, it->get<std::string>());
  }
  for (const auto& t : j.at("conversations")) {
    const std::string from = t.at("from").get<std::string>();
    r.conversation.push_back({from == "human" ? Role::Human : Role::Assistant, parse_tags(t.at("value").get<std::string>())});
  }
  if (j.contains("trajectory")) {
    std::vector<Point2> pts;
    for (const auto& p : j.at("trajectory")) pts.push_back({p[0].get<double>(), p[1].get<double>()});
    r.trajectory = TrajectoryPlan(std::move(pts));
  }
  r.ego_status = adapt_ego(j);
  r.answer_class = j.at("answer_class").get<std::string>() == "long" ? AnswerClass::Long : AnswerClass::Short;
  r.validate();
  return r;
}

ordered_json report_to_json(const RefineReport& r) {
  ordered_json j;
  j["input"] = r.input;
  j["kept"] = r.kept;
  j["dropped"] = r.dropped;
  j["drop_reasons"] = r.drop_reasons;
  j["box_drop_reasons"] = r.box_drop_reasons;
  j["boxes_normalized"] = r.boxes_normalized;
  j["decimals_converted"] = r.decimals_converted;
  j["short_threshold"] = r.short_threshold;
  return j;
}

RefineOutcome refine_stream(std::istream& in, SourceDataset source, std::size_t short_threshold) {
  RefineOutcome out;
  out.report.short_threshold = short_threshold;
  std::vector<UnifiedRecord> adapted;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    ++out.report.input;
    std::string reason;
    try {
      const json raw = json::parse(line);
      adapted.push_back(adapt_raw_record(raw, source, short_threshold, out.report));
      continue;
    } catch (const json::parse_error& e) {
      reason = "malformed_json";
      out.errors.push_back("line " + std::to_string(line_no) + ": " + e.what());
    } catch (const json::exception& e) {
      reason = "invalid_record";
      out.errors.push_back("line " + std::to_string(line_no) + ": " + e.what());
    } catch (const ParseError& e) {
      reason = "tag_parse_error";
      out.errors.push_back("line " + std::to_string(line_no) + ": " + e.what());
    } catch (const ValidationError& e) {
      reason = std::string(e.what()).find("camera") != std::string::npos ? "unknown_camera" : "invalid_record";
      out.errors.push_back("line " + std::to_string(line_no) + ": " + e.what());
    }
    ++out.report.dropped;
    ++out.report.drop_reasons[reason];
  }
  auto [kept, filtered] = filter_invalid_boxes(std::move(adapted));
  out.records = std::move(kept);
  out.report.kept += filtered.kept;
  out.report.dropped += filtered.dropped;
  for (const auto& [k, v] : filtered.drop_reasons) out.report.drop_reasons[k] += v;
  for (const auto& [k, v] : filtered.box_drop_reasons) out.report.box_drop_reasons[k] += v;
  return out;
}

}  // namespace fk
