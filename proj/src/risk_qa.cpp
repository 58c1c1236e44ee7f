#include "fk/risk_qa.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <set>
#include <thread>

#include <fmt/format.h>

#include "fk/errors.hpp"
#include "fk/refinery.hpp"
#include "fk/text_metrics.hpp"

namespace fk {
namespace {

constexpr std::string_view kRiskFormatBlock = R"({
    "[obj]": {
        "View obstruction": {
            "Status": "[High/Medium/Low/None]", 
            "Reason": "[Reason]"
        },
        "Collision possibility": {
            "Status": "[High/Medium/Low/None]", 
            "Reason": "[Reason]"
        }, 
        ...
        }, 
    "[obj]": {
        ...
    }, 
    ...
} )";

constexpr std::string_view kQaFormatBlock = R"( [
     {
        "question": [question1], 
        "answer": [answer1]},
     {
        "question": [question2], 
        "answer": [answer2]
     },
     ...
 ])";

std::string lower(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

std::string trim(std::string_view s) {
  auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

// JSON-pointer escaping of a single reference token.
std::string ptr(std::string_view key) {
  std::string out;
  for (char c : key) {
    if (c == '~') out += "~0";
    else if (c == '/') out += "~1";
    else out += c;
  }
  return out;
}

int rank(RiskStatus s) {
  switch (s) {
    case RiskStatus::High: return 3;
    case RiskStatus::Medium: return 2;
    case RiskStatus::Low: return 1;
  }
  return 0;
}

// Reason as a clause after "due to": no trailing period, sentence-initial capital dropped.
std::string reason_clause(std::string_view reason) {
  std::string r = trim(reason);
  while (!r.empty() && r.back() == '.') r.pop_back();
  if (r.size() >= 2 && std::isupper(static_cast<unsigned char>(r[0])) &&
      std::islower(static_cast<unsigned char>(r[1]))) {
    r[0] = static_cast<char>(std::tolower(static_cast<unsigned char>(r[0])));
  }
  return r;
}

}  // namespace

std::string_view render_bearing(Bearing b) {
  switch (b) {
    case Bearing::Ahead: return "ahead";
    case Bearing::AheadLeft: return "ahead to the left";
    case Bearing::AheadRight: return "ahead to the right";
    case Bearing::Left: return "to the left";
    case Bearing::Right: return "to the right";
    case Bearing::Behind: return "behind";
    case Bearing::BehindLeft: return "behind to the left";
    case Bearing::BehindRight: return "behind to the right";
  }
  return "ahead";
}

std::optional<Bearing> parse_bearing(std::string_view s) {
  std::string n = lower(trim(s));
  std::replace(n.begin(), n.end(), '_', '-');
  std::replace(n.begin(), n.end(), ' ', '-');
  if (n == "ahead" || n == "front") return Bearing::Ahead;
  if (n == "ahead-left" || n == "ahead-to-the-left" || n == "front-left") return Bearing::AheadLeft;
  if (n == "ahead-right" || n == "ahead-to-the-right" || n == "front-right") return Bearing::AheadRight;
  if (n == "left" || n == "to-the-left") return Bearing::Left;
  if (n == "right" || n == "to-the-right") return Bearing::Right;
  if (n == "behind" || n == "back") return Bearing::Behind;
  if (n == "behind-left" || n == "behind-to-the-left" || n == "back-left") return Bearing::BehindLeft;
  if (n == "behind-right" || n == "behind-to-the-right" || n == "back-right") return Bearing::BehindRight;
  return std::nullopt;
}

void SceneObject::validate() const {
  if (trim(category).empty()) throw ValidationError("scene object category is empty", "/category");
  if (distance < 0) throw ValidationError("scene object distance must be >= 0", "/distance");
  if (!is_camera_name(view)) throw ValidationError("unknown camera view '" + view + "'", "/view");
}

std::string object_phrase(const SceneObject& o) {
  return fmt::format("the {} located {} meters {}", o.category, o.distance, render_bearing(o.bearing));
}

std::string_view risk_type_name(RiskCategory c) {
  switch (c) {
    case RiskCategory::ViewObstruction: return "View obstruction";
    case RiskCategory::CollisionPossibility: return "Collision possibility";
    case RiskCategory::TrafficRuleViolation: return "Traffic rule violations";
    case RiskCategory::PotentialRisk: return "Potential risk";
  }
  return "";
}

std::string_view to_string(RiskStatus s) {
  switch (s) {
    case RiskStatus::High: return "High";
    case RiskStatus::Medium: return "Medium";
    case RiskStatus::Low: return "Low";
  }
  return "";
}

std::optional<RiskCategory> parse_risk_type_name(std::string_view s) {
  std::string n = lower(trim(s));
  std::replace(n.begin(), n.end(), ' ', '_');
  return parse_risk_category(n);
}

RiskStatus RiskObject::max_status() const {
  if (risks.empty()) throw ValidationError("risk object '" + phrase + "' has no risks");
  RiskStatus best = risks.front().status;
  for (const auto& r : risks)
    if (rank(r.status) > rank(best)) best = r.status;
  return best;
}

std::string_view to_string(QaCategory c) {
  switch (c) {
    case QaCategory::Exist: return "exist";
    case QaCategory::Level: return "level";
    case QaCategory::Category: return "category";
    case QaCategory::Object: return "object";
    case QaCategory::Reason: return "reason";
    case QaCategory::Grounding: return "grounding";
  }
  return "";
}

std::optional<QaCategory> parse_qa_category(std::string_view s) {
  const std::string n = lower(trim(s));
  for (auto c : {QaCategory::Exist, QaCategory::Level, QaCategory::Category, QaCategory::Object,
                 QaCategory::Reason, QaCategory::Grounding}) {
    if (n == to_string(c)) return c;
  }
  return std::nullopt;
}

std::string build_risk_prompt(std::span<const SceneObject> objects, std::string_view view) {
  if (objects.empty()) throw ValidationError("build_risk_prompt: scene has no objects");
  std::string view_words(view);
  std::replace(view_words.begin(), view_words.end(), '_', ' ');
  std::string list;
  for (std::size_t i = 0; i < objects.size(); ++i) {
    objects[i].validate();
    if (i) list += "; ";
    list += object_phrase(objects[i]);
  }
  return fmt::format(
      "The image is from the {} view camera of ego vehicle, and please provide a risk assessment of the given "
      "object to ego vehicle. The driving risk categories include: 1. View obstruction. 2. Collision possibility. "
      "3. Traffic rule violations. 4. Potential risk. You are now a driver, and from the perspective of driving "
      "safety, you need to conduct a driving risk analysis.Please consider the state of the target when analyzing, "
      "e.g. Whether the vehicle is stationary, whether pedestrians are crossing the road, whether it is in the same "
      "lane as ego vehicle, etc. The current scene contains the following objects: [{}]. Choose the object you "
      "believe poses a risk and provide your reasons. If all risks of object are None, ignore this object! If some "
      "risk is None, do not output all context relate to this risk! Answer in the following format without "
      "providing additional information:\n{}",
      view_words, list, kRiskFormatBlock);
}

std::string build_qa_prompt(const RiskAssessmentDoc& doc) {
  if (doc.empty()) throw ValidationError("build_qa_prompt: risk document is empty");
  std::string items;
  int n = 0;
  for (const auto& obj : doc.objects) {
    for (const auto& r : obj.risks) {
      if (n) items += ' ';
      items += fmt::format("{}. {} causes {} {} risk due to {}.", ++n, obj.phrase, lower(to_string(r.status)),
                           lower(risk_type_name(r.type)), reason_clause(r.reason));
    }
  }
  return fmt::format(
      "This is a description of object-level traffic risks: {} Please generate multiple Q&A pairs about traffic "
      "risks based on this information and output them in JSON format as follows:\n{}",
      items, kQaFormatBlock);
}

std::optional<std::string_view> extract_json(std::string_view text, char open) {
  const char close = open == '{' ? '}' : ']';
  for (std::size_t start = text.find(open); start != std::string_view::npos; start = text.find(open, start + 1)) {
    int depth = 0;
    bool in_str = false, esc = false;
    for (std::size_t i = start; i < text.size(); ++i) {
      const char c = text[i];
      if (in_str) {
        if (esc) esc = false;
        else if (c == '\\') esc = true;
        else if (c == '"') in_str = false;
        continue;
      }
      if (c == '"') in_str = true;
      else if (c == '{' || c == '[') ++depth;
      else if (c == '}' || c == ']') {
        if (--depth == 0) {
          if (c != close) break;
          return text.substr(start, i - start + 1);
        }
        if (depth < 0) break;
      }
    }
  }
  return std::nullopt;
}

RiskAssessmentDoc parse_risk_response(std::string_view text) {
  const auto body = extract_json(text, '{');
  if (!body) throw ValidationError("no JSON object found in response");
  nlohmann::ordered_json j;
  try {
    j = nlohmann::ordered_json::parse(*body);
  } catch (const nlohmann::json::parse_error& e) {
    throw ValidationError(std::string("malformed JSON: ") + e.what());
  }
  RiskAssessmentDoc doc;
  for (const auto& [phrase, risks] : j.items()) {
    const std::string base = "/" + ptr(phrase);
    if (trim(phrase).empty()) throw ValidationError("empty object phrase", base);
    if (!risks.is_object()) throw ValidationError("object entry must be a JSON object", base);
    RiskObject obj{phrase, {}};
    for (const auto& [type_name, entry] : risks.items()) {
      const std::string path = base + "/" + ptr(type_name);
      const auto type = parse_risk_type_name(type_name);
      if (!type) throw ValidationError("unknown risk type '" + type_name + "'", path);
      if (!entry.is_object()) throw ValidationError("risk entry must be a JSON object", path);
      auto st = entry.find("Status");
      if (st == entry.end() || !st->is_string()) throw ValidationError("missing string Status", path + "/Status");
      const std::string status = lower(trim(st->get<std::string>()));
      if (status == "none") continue;
      RiskStatus rs;
      if (status == "high") rs = RiskStatus::High;
      else if (status == "medium") rs = RiskStatus::Medium;
      else if (status == "low") rs = RiskStatus::Low;
      else throw ValidationError("status must be High, Medium, Low or None", path + "/Status");
      auto rn = entry.find("Reason");
      if (rn == entry.end() || !rn->is_string() || trim(rn->get<std::string>()).empty())
        throw ValidationError("non-None risk needs a non-empty Reason", path + "/Reason");
      if (std::any_of(obj.risks.begin(), obj.risks.end(), [&](const RiskEntry& r) { return r.type == *type; }))
        throw ValidationError("duplicate risk type", path);
      obj.risks.push_back({*type, rs, rn->get<std::string>()});
    }
    if (!obj.risks.empty()) doc.objects.push_back(std::move(obj));
  }
  return doc;
}

nlohmann::ordered_json risk_doc_to_json(const RiskAssessmentDoc& doc) {
  auto j = nlohmann::ordered_json::object();
  for (const auto& obj : doc.objects) {
    auto& o = j[obj.phrase] = nlohmann::ordered_json::object();
    for (const auto& r : obj.risks)
      o[std::string(risk_type_name(r.type))] = {{"Status", to_string(r.status)}, {"Reason", r.reason}};
  }
  return j;
}

std::vector<QaPair> parse_qa_response(std::string_view text) {
  const auto body = extract_json(text, '[');
  if (!body) throw ValidationError("no JSON array found in response");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(*body);
  } catch (const nlohmann::json::parse_error& e) {
    throw ValidationError(std::string("malformed JSON: ") + e.what());
  }
  std::vector<QaPair> out;
  for (std::size_t i = 0; i < j.size(); ++i) {
    const auto& e = j[i];
    const std::string path = "/" + std::to_string(i);
    if (!e.is_object()) throw ValidationError("entry " + std::to_string(i) + " is not an object", path);
    QaPair p;
    for (auto [key, dst] : {std::pair{"question", &p.question}, std::pair{"answer", &p.answer}}) {
      auto it = e.find(key);
      if (it == e.end() || !it->is_string() || trim(it->get<std::string>()).empty())
        throw ValidationError("entry " + std::to_string(i) + " has a missing or empty " + key, path + "/" + key);
      *dst = it->get<std::string>();
    }
    out.push_back(std::move(p));
  }
  return out;
}

QaPair categorize_qa(QaPair pair, const RiskAssessmentDoc& doc) {
  static const std::set<std::string> kAux = {"does", "do", "is", "are", "can", "could", "will", "would",
                                              "should", "has", "have", "was", "were", "might", "may"};
  static const std::set<std::string> kRiskWords = {"risk", "risks", "risky", "danger", "dangerous", "hazard",
                                                    "hazardous", "collision", "collide", "threat", "unsafe", "safe"};
  static const std::set<std::string> kLevelWords = {"low", "medium", "high", "level", "levels"};
  static const std::set<std::string> kCategoryWords = {"type", "types", "kind", "kinds", "category", "categories"};
  static const std::set<std::string> kLocateWords = {"where", "locate", "located", "location", "localize"};

  const std::string q = lower(pair.question);
  const auto tok = tokenize(pair.question);
  auto has_any = [&](const std::set<std::string>& words) {
    return std::any_of(tok.begin(), tok.end(), [&](const std::string& t) { return words.count(t) > 0; });
  };

  // Nouns that name an object: generic ones plus the head noun of each phrase in the doc.
  std::set<std::string> object_nouns = {"object", "objects", "vehicle", "vehicles", "agent", "agents",
                                        "obstacle", "obstacles", "target", "targets"};
  for (const auto& obj : doc.objects) {
    auto words = tokenize(obj.phrase);
    if (words.size() >= 2 && words[0] == "the") object_nouns.insert(words[1]);
    else if (words.size() == 1) object_nouns.insert(words[0]);
  }

  QaCategory cat = QaCategory::Reason;
  if (q.find("<box>") != std::string::npos || q.find("<ref>") != std::string::npos || has_any(kLocateWords)) {
    cat = QaCategory::Grounding;
  } else if (!tok.empty() && kAux.count(tok[0]) && has_any(kRiskWords)) {
    cat = QaCategory::Exist;
  } else if (has_any(kLevelWords)) {
    cat = QaCategory::Level;
  } else if (has_any(kCategoryWords) || q.find("view obstruction") != std::string::npos ||
             q.find("collision possibility") != std::string::npos || q.find("traffic rule") != std::string::npos ||
             q.find("potential risk") != std::string::npos) {
    cat = QaCategory::Category;
  } else if (!tok.empty() && (tok[0] == "which" || tok[0] == "what" || tok[0] == "who") &&
             std::any_of(tok.begin() + 1, tok.begin() + std::min<std::size_t>(tok.size(), 3),
                         [&](const std::string& t) { return object_nouns.count(t) > 0; })) {
    cat = QaCategory::Object;
  } else if (!tok.empty() && tok[0] == "which") {
    cat = QaCategory::Object;
  }
  pair.category = cat;
  return pair;
}

GroundingDerivation derive_grounding_targets(const RiskAssessmentDoc& doc, std::span<const SceneObject> objects,
                                             std::string_view scene_id) {
  GroundingDerivation out;
  for (const auto& obj : doc.objects) {
    if (obj.max_status() != RiskStatus::High) continue;
    const SceneObject* hit = nullptr;
    for (const auto& so : objects) {
      if (so.box && object_phrase(so) == obj.phrase) {
        hit = &so;
        break;
      }
    }
    if (hit) out.targets.push_back({std::string(scene_id), obj.phrase, *hit->box, hit->view});
    else out.unmatched.push_back(obj.phrase);
  }
  return out;
}

std::string repair_instruction(std::string_view error) {
  return fmt::format(
      "Your previous answer could not be parsed ({}). Reply again with only the requested JSON and no other text.",
      error);
}

namespace {

struct SceneOutcome {
  std::vector<QaPair> pairs;
  GroundingDerivation grounding;
  std::size_t retries = 0;
  bool without_risks = false;
  std::optional<SceneFailure> failure;
};

template <class Parse>
auto ask(ChatClient& client, const PipelineConfig& cfg, const std::string& model, const std::string& prompt,
         std::size_t& retries, Parse parse) -> decltype(parse(std::string_view{})) {
  ChatRequest req{model, {{"user", prompt}}, cfg.temperature, cfg.seed};
  for (int attempt = 0;; ++attempt) {
    const std::string text = client.complete(req);
    try {
      return parse(text);
    } catch (const ValidationError& e) {
      if (attempt >= cfg.retries) throw;
      ++retries;
      std::string msg = e.what();
      if (!e.path().empty()) msg += " at " + e.path();
      req.messages.push_back({"assistant", text});
      req.messages.push_back({"user", repair_instruction(msg)});
    }
  }
}

SceneOutcome run_scene(const Scene& scene, ChatClient& client, const PipelineConfig& cfg) {
  SceneOutcome out;
  std::string_view step = kRiskStepId;
  try {
    const auto doc = ask(client, cfg, cfg.risk_model, build_risk_prompt(scene.objects, scene.view), out.retries,
                         [](std::string_view t) { return parse_risk_response(t); });
    if (doc.empty()) {
      out.without_risks = true;
      return out;
    }
    step = kQaStepId;
    auto pairs = ask(client, cfg, cfg.qa_model, build_qa_prompt(doc), out.retries,
                     [](std::string_view t) { return parse_qa_response(t); });
    for (auto& p : pairs) {
      p.scene_id = scene.id;
      p.step_id = std::string(kQaStepId);
      out.pairs.push_back(categorize_qa(std::move(p), doc));
    }
    out.grounding = derive_grounding_targets(doc, scene.objects, scene.id);
  } catch (const std::exception& e) {
    out.pairs.clear();
    out.grounding = {};
    out.failure = SceneFailure{scene.id, std::string(step), e.what()};
  }
  return out;
}

}  // namespace

PipelineResult run_pipeline(std::span<const Scene> scenes, ChatClient& client, const PipelineConfig& cfg) {
  if (cfg.retries < 0) throw ValidationError("retries must be >= 0");
  std::vector<SceneOutcome> outcomes(scenes.size());
  const std::size_t workers = std::min(std::max<std::size_t>(cfg.max_in_flight, 1), scenes.size());
  if (workers <= 1) {
    for (std::size_t i = 0; i < scenes.size(); ++i) outcomes[i] = run_scene(scenes[i], client, cfg);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < scenes.size(); i = next++) outcomes[i] = run_scene(scenes[i], client, cfg);
      });
    }
    for (auto& t : pool) t.join();
  }

  PipelineResult res;
  auto& rep = res.report;
  rep.scenes_total = scenes.size();
  for (auto c : {QaCategory::Exist, QaCategory::Level, QaCategory::Category, QaCategory::Object, QaCategory::Reason,
                 QaCategory::Grounding})
    rep.pairs_per_category[std::string(to_string(c))] = 0;
  for (std::size_t i = 0; i < outcomes.size(); ++i) {
    auto& o = outcomes[i];
    rep.retries += o.retries;
    if (o.failure) {
      ++rep.scenes_failed;
      rep.failures.push_back(std::move(*o.failure));
      continue;
    }
    ++rep.scenes_succeeded;
    if (o.without_risks) ++rep.scenes_without_risks;
    for (auto& p : o.pairs) {
      ++rep.pairs_per_category[std::string(to_string(*p.category))];
      res.pairs.push_back(std::move(p));
    }
    for (auto& t : o.grounding.targets) res.targets.push_back(std::move(t));
    for (auto& u : o.grounding.unmatched) rep.unmatched_grounding.emplace_back(scenes[i].id, std::move(u));
  }
  rep.pairs_total = res.pairs.size();
  return res;
}

nlohmann::ordered_json qa_pair_to_json(const QaPair& p) {
  nlohmann::ordered_json j;
  j["scene_id"] = p.scene_id;
  j["step"] = p.step_id;
  j["category"] = p.category ? nlohmann::ordered_json(std::string(to_string(*p.category))) : nullptr;
  j["question"] = p.question;
  j["answer"] = p.answer;
  return j;
}

nlohmann::ordered_json grounding_target_to_json(const GroundingTarget& t) {
  nlohmann::ordered_json j;
  j["scene_id"] = t.scene_id;
  j["phrase"] = t.phrase;
  j["view"] = t.view;
  j["box"] = {t.box.x1(), t.box.y1(), t.box.x2(), t.box.y2()};
  return j;
}

nlohmann::ordered_json pipeline_report_to_json(const PipelineReport& r) {
  nlohmann::ordered_json j;
  j["scenes_total"] = r.scenes_total;
  j["scenes_succeeded"] = r.scenes_succeeded;
  j["scenes_failed"] = r.scenes_failed;
  j["scenes_without_risks"] = r.scenes_without_risks;
  j["retries"] = r.retries;
  j["pairs_total"] = r.pairs_total;
  j["pairs_per_category"] = r.pairs_per_category;
  auto f = nlohmann::ordered_json::array();
  for (const auto& x : r.failures) f.push_back({{"scene_id", x.scene_id}, {"step", x.step_id}, {"error", x.error}});
  j["failures"] = std::move(f);
  auto u = nlohmann::ordered_json::array();
  for (const auto& [scene, phrase] : r.unmatched_grounding) u.push_back({{"scene_id", scene}, {"phrase", phrase}});
  j["unmatched_grounding"] = std::move(u);
  return j;
}

Scene scene_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ValidationError("scene must be a JSON object");
  Scene s;
  s.id = j.at("id").get<std::string>();
  s.view = j.value("view", std::string("front"));
  if (!is_camera_name(s.view)) throw ValidationError("unknown camera view '" + s.view + "'", "/view");
  const auto& objs = j.at("objects");
  if (!objs.is_array()) throw ValidationError("objects must be an array", "/objects");
  for (std::size_t i = 0; i < objs.size(); ++i) {
    const auto& o = objs[i];
    const std::string path = "/objects/" + std::to_string(i);
    SceneObject so;
    so.category = o.at("category").get<std::string>();
    const auto b = parse_bearing(o.at("bearing").get<std::string>());
    if (!b) throw ValidationError("unknown bearing", path + "/bearing");
    so.bearing = *b;
    so.distance = o.at("distance").get<std::int64_t>();
    if (auto it = o.find("box"); it != o.end() && !it->is_null()) {
      const auto v = it->get<std::vector<int>>();
      if (v.size() != 4) throw ValidationError("box must have 4 integers", path + "/box");
      so.box = NormalizedBox(v[0], v[1], v[2], v[3]);
    }
    so.view = o.value("view", s.view);
    so.validate();
    s.objects.push_back(std::move(so));
  }
  return s;
}

}  // namespace fk
