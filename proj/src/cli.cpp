#include "fk/cli.hpp"

#include <algorithm>
#include <chrono>
#include <fstream>
#include <map>
#include <memory>
#include <ostream>
#include <set>
#include <sstream>

#include <fmt/format.h>

#include "CLI11.hpp"
#include "fk/chat_client.hpp"
#include "fk/errors.hpp"
#include "fk/hashing.hpp"
#include "fk/matrix.hpp"
#include "fk/refine_io.hpp"
#include "fk/risk_qa.hpp"
#include "fk/rng.hpp"
#include "fk/text_metrics.hpp"

namespace fk {
namespace {

using ojson = nlohmann::ordered_json;

/// Unreadable or malformed input, bad configuration. Maps to exit code 2.
class InputError : public Error {
 public:
  using Error::Error;
};

std::string_view to_string(MaskStage s) { return s == MaskStage::PreProjection ? "pre" : "post"; }

std::optional<MaskStage> parse_mask_stage(std::string_view s) {
  if (s == "post") return MaskStage::PostProjection;
  if (s == "pre") return MaskStage::PreProjection;
  return std::nullopt;
}

// ---- files -------------------------------------------------------------

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::string& path, std::string_view text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  out << text;
  if (!out) throw IoError("write failed: " + path);
}

void write_json(const std::string& path, const ojson& j) { write_file(path, j.dump(2) + "\n"); }

struct JsonLine {
  std::size_t line;
  nlohmann::json value;
};

std::vector<JsonLine> read_jsonl(const std::string& path) {
  std::istringstream in(read_file(path));
  std::vector<JsonLine> out;
  std::string line;
  for (std::size_t n = 1; std::getline(in, line); ++n) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back({n, nlohmann::json::parse(line)});
    } catch (const nlohmann::json::parse_error& e) {
      throw InputError(fmt::format("{}:{}: malformed JSON: {}", path, n, e.what()));
    }
  }
  return out;
}

// Runs `fn` on every line, turning field/type problems into ValidationErrors that name the line.
template <class T, class Fn>
std::vector<T> convert_lines(const std::string& path, const std::vector<JsonLine>& lines, Fn fn) {
  std::vector<T> out;
  out.reserve(lines.size());
  for (const auto& l : lines) {
    try {
      out.push_back(fn(l.value));
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError(fmt::format("{}:{}: {}", path, l.line, e.what()));
    } catch (const ValidationError& e) {
      throw ValidationError(fmt::format("{}:{}: {}", path, l.line, e.what()), e.path());
    }
  }
  return out;
}

// ---- provenance ----------------------------------------------------------

ojson provenance(std::string_view command, const CliConfig& cfg, const std::vector<std::string>& inputs) {
  ojson j;
  j["tool"] = "fk";
  j["version"] = kToolVersion;
  j["command"] = command;
  const ojson c = config_to_json(cfg);
  j["config"] = c;
  j["config_hash"] = sha256_hex(c.dump());
  auto in = ojson::array();
  for (const auto& p : inputs) in.push_back({{"path", p}, {"sha256", sha256_file(p)}});
  j["inputs"] = std::move(in);
  return j;
}

// ---- alignment -----------------------------------------------------------

/// Checks that two id lists hold the same unique ids. Returns offender descriptions.
std::vector<std::string> id_mismatches(const std::vector<std::string>& pred, const std::vector<std::string>& gt) {
  std::vector<std::string> bad;
  std::set<std::string> ps, gs;
  for (const auto& id : pred)
    if (!ps.insert(id).second) bad.push_back("duplicate prediction id '" + id + "'");
  for (const auto& id : gt)
    if (!gs.insert(id).second) bad.push_back("duplicate ground-truth id '" + id + "'");
  for (const auto& id : gt)
    if (!ps.count(id)) bad.push_back("missing prediction for id '" + id + "'");
  for (const auto& id : pred)
    if (!gs.count(id)) bad.push_back("prediction id '" + id + "' has no ground truth");
  return bad;
}

/// Reorders `pred` to follow `gt_ids`. Throws ValidationError listing offenders.
template <class T, class Id>
std::vector<T> align(std::vector<T> pred, const std::vector<std::string>& gt_ids, Id id_of) {
  std::vector<std::string> pred_ids;
  for (const auto& p : pred) pred_ids.push_back(id_of(p));
  const auto bad = id_mismatches(pred_ids, gt_ids);
  if (!bad.empty()) {
    std::string msg = "prediction and ground-truth ids do not match:";
    for (const auto& b : bad) msg += "\n  " + b;
    throw ValidationError(msg);
  }
  std::map<std::string, std::size_t> pos;
  for (std::size_t i = 0; i < pred.size(); ++i) pos[pred_ids[i]] = i;
  std::vector<T> out;
  for (const auto& id : gt_ids) out.push_back(std::move(pred[pos[id]]));
  return out;
}

// ---- metric output -------------------------------------------------------

std::string csv_cell(const std::optional<double>& v) { return v ? fmt::format("{:.4f}", *v) : std::string("N/A"); }

ojson json_cell(const std::optional<double>& v) { return v ? ojson(*v) : ojson(nullptr); }

struct MetricTable {
  std::vector<std::pair<std::string, std::optional<double>>> columns;

  ojson to_json() const {
    ojson j = ojson::object();
    for (const auto& [k, v] : columns) j[k] = json_cell(v);
    return j;
  }
  std::string to_csv() const {
    std::string head, row;
    for (std::size_t i = 0; i < columns.size(); ++i) {
      if (i) {
        head += ',';
        row += ',';
      }
      head += columns[i].first;
      row += csv_cell(columns[i].second);
    }
    return head + "\n" + row + "\n";
  }
};

std::optional<double> scaled(const CliConfig& cfg, std::optional<double> v) {
  if (v && !cfg.scale_0_100) return *v / 100.0;
  return v;
}

NormalizedBox box_from_json(const nlohmann::json& j) {
  const auto v = j.get<std::vector<int>>();
  if (v.size() != 4) throw ValidationError("box must be [x1, y1, x2, y2]");
  return NormalizedBox(v[0], v[1], v[2], v[3]);
}

TrajectoryPlan plan_from_json(const nlohmann::json& j) {
  std::vector<Point2> pts;
  for (const auto& p : j) {
    const auto xy = p.get<std::vector<double>>();
    if (xy.size() != 2) throw ValidationError("trajectory points must be [x, y]");
    pts.push_back({xy[0], xy[1]});
  }
  return TrajectoryPlan(std::move(pts));
}

std::string text_field(const nlohmann::json& j, std::initializer_list<const char*> keys) {
  for (const char* k : keys)
    if (auto it = j.find(k); it != j.end()) return it->get<std::string>();
  throw ValidationError(fmt::format("missing text field (expected one of: {})", fmt::join(keys, ", ")));
}

// ---- synthetic inputs ----------------------------------------------------

Matrix normal_matrix(std::size_t rows, std::size_t cols, std::uint64_t seed) {
  Matrix m(rows, cols);
  Xoshiro256 rng(seed);
  for (double& x : m.data()) x = rng.normal();
  return m;
}

ViewFeatureSet synthetic_views(std::size_t n_views, std::size_t tokens, std::size_t dim, std::uint64_t seed) {
  std::vector<Matrix> views;
  for (std::size_t v = 0; v < n_views; ++v)
    views.push_back(normal_matrix(tokens, dim, derive_seed(seed, fmt::format("synthetic:view:{}", v))));
  return ViewFeatureSet::with_default_names(std::move(views));
}

ViewFeatureSet load_views(const std::vector<std::string>& paths) {
  std::vector<Matrix> views;
  for (const auto& p : paths) views.push_back(load_fkmx(p));
  return ViewFeatureSet::with_default_names(std::move(views));
}

// ---- commands ------------------------------------------------------------

struct RefineArgs {
  std::string source, input, out, report;
};

int cmd_refine(const RefineArgs& a, const CliConfig& cfg, std::ostream& out, std::ostream& err) {
  const auto source = parse_source(a.source);
  if (!source) throw InputError("unknown source dataset '" + a.source + "'");
  std::istringstream in(read_file(a.input));
  auto outcome = refine_stream(in, *source, cfg.short_threshold);
  std::string jsonl;
  for (const auto& r : outcome.records) jsonl += record_to_json(r).dump() + "\n";
  write_file(a.out, jsonl);
  ojson rep = provenance("refine", cfg, {a.input});
  rep["source"] = to_string(*source);
  rep["report"] = report_to_json(outcome.report);
  rep["errors"] = outcome.errors;
  write_json(a.report, rep);
  out << fmt::format("refine: {} in, {} kept, {} dropped\n", outcome.report.input, outcome.report.kept,
                     outcome.report.dropped);
  if (!outcome.errors.empty()) {
    for (const auto& e : outcome.errors) err << e << "\n";
    return kExitValidation;
  }
  return kExitOk;
}

struct GenArgs {
  std::string scenes, out_qa, out_grounding, report, mock, record;
};

int cmd_gen_risk_qa(const GenArgs& a, const CliConfig& cfg, std::ostream& out, std::ostream& err) {
  const auto lines = read_jsonl(a.scenes);
  const auto scenes = convert_lines<Scene>(a.scenes, lines, [](const nlohmann::json& j) { return scene_from_json(j); });

  std::unique_ptr<ChatClient> base;
  if (!a.mock.empty()) {
    base = std::make_unique<ReplayClient>(a.mock);
  } else if (auto http = HttpClientConfig::from_env()) {
    base = std::make_unique<HttpChatClient>(*http);
  } else {
    throw InputError("no --mock directory given and FK_API_ENDPOINT is not set");
  }
  std::unique_ptr<RecordingClient> recorder;
  ChatClient* client = base.get();
  if (!a.record.empty()) {
    recorder = std::make_unique<RecordingClient>(*base, a.record);
    client = recorder.get();
  }

  PipelineConfig pc;
  pc.risk_model = cfg.risk_model;
  pc.qa_model = cfg.qa_model;
  pc.temperature = cfg.temperature;
  pc.seed = cfg.seed;
  pc.retries = cfg.retries;
  pc.max_in_flight = std::min(cfg.max_in_flight, cfg.jobs);
  const auto res = run_pipeline(scenes, *client, pc);

  std::string qa, gr;
  for (const auto& p : res.pairs) qa += qa_pair_to_json(p).dump() + "\n";
  for (const auto& t : res.targets) gr += grounding_target_to_json(t).dump() + "\n";
  write_file(a.out_qa, qa);
  write_file(a.out_grounding, gr);
  ojson rep = provenance("gen-risk-qa", cfg, {a.scenes});
  rep["report"] = pipeline_report_to_json(res.report);
  write_json(a.report, rep);

  out << fmt::format("gen-risk-qa: {} scenes, {} failed, {} pairs, {} grounding targets\n", res.report.scenes_total,
                     res.report.scenes_failed, res.pairs.size(), res.targets.size());
  for (const auto& f : res.report.failures) err << fmt::format("scene {} ({}): {}\n", f.scene_id, f.step_id, f.error);
  if (res.report.scenes_total > 0 && res.report.scenes_succeeded == 0) return kExitValidation;
  return kExitOk;
}

struct EvalArgs {
  std::string pred, gt, out, csv;
  bool risk = false;
};

void write_eval(const EvalArgs& a, const CliConfig& cfg, std::string_view kind, const MetricTable& t, ojson extra,
                std::ostream& out) {
  ojson rep = provenance(fmt::format("eval {}", kind), cfg, {a.pred, a.gt});
  rep["metrics"] = t.to_json();
  for (auto& [k, v] : extra.items()) rep[k] = v;
  write_json(a.out, rep);
  if (!a.csv.empty()) write_file(a.csv, t.to_csv());
  out << t.to_csv();
}

int cmd_eval_caption(const EvalArgs& a, const CliConfig& cfg, std::ostream& out) {
  const auto pred_lines = read_jsonl(a.pred);
  const auto gt_lines = read_jsonl(a.gt);
  auto preds = convert_lines<EvalPair>(a.pred, pred_lines, [](const nlohmann::json& j) {
    EvalPair p;
    p.id = j.at("id").get<std::string>();
    p.candidate = text_field(j, {"caption", "answer", "text", "candidate"});
    return p;
  });
  const auto gts = convert_lines<EvalPair>(a.gt, gt_lines, [](const nlohmann::json& j) {
    EvalPair p;
    p.id = j.at("id").get<std::string>();
    if (auto it = j.find("references"); it != j.end()) p.references = it->get<std::vector<std::string>>();
    else p.references = {text_field(j, {"caption", "answer", "text"})};
    if (p.references.empty()) throw ValidationError("no references");
    if (auto it = j.find("task"); it != j.end()) p.task_tag = it->get<std::string>();
    return p;
  });
  std::vector<std::string> gt_ids;
  for (const auto& g : gts) gt_ids.push_back(g.id);
  preds = align(std::move(preds), gt_ids, [](const EvalPair& p) { return p.id; });
  std::vector<EvalPair> pairs;
  std::vector<std::string> cands, firsts;
  for (std::size_t i = 0; i < gts.size(); ++i) {
    pairs.push_back({gts[i].id, preds[i].candidate, gts[i].references, gts[i].task_tag});
    cands.push_back(preds[i].candidate);
    firsts.push_back(gts[i].references.front());
  }
  MetricTable t;
  ojson notes = ojson::object();
  if (pairs.empty()) {
    for (const char* k : {"BLEU1", "BLEU2", "BLEU3", "BLEU4", "CIDEr", "ROUGE_L", "ACC"}) t.columns.push_back({k, {}});
    notes["corpus"] = "empty";
  } else {
    const auto rep = evaluate_language(pairs);
    auto get = [&](const std::string& k) -> std::optional<double> {
      auto it = rep.scores.find(k);
      return it == rep.scores.end() ? std::nullopt : scaled(cfg, it->second);
    };
    for (const char* k : {"BLEU1", "BLEU2", "BLEU3", "BLEU4", "CIDEr", "ROUGE_L"}) t.columns.push_back({k, get(k)});
    t.columns.push_back({"ACC", scaled(cfg, accuracy(cands, firsts))});
    for (const auto& [k, v] : rep.notes) notes[k] = v;
  }
  write_eval(a, cfg, "caption", t, {{"count", pairs.size()}, {"notes", notes}}, out);
  return kExitOk;
}

int cmd_eval_grounding(const EvalArgs& a, const CliConfig& cfg, std::ostream& out) {
  const auto pred_lines = read_jsonl(a.pred);
  const auto gt_lines = read_jsonl(a.gt);
  auto preds = convert_lines<ImageDetections>(a.pred, pred_lines, [](const nlohmann::json& j) {
    ImageDetections d;
    d.image_id = j.at("image_id").get<std::string>();
    for (const auto& e : j.at("detections"))
      d.detections.push_back(
          {box_from_json(e.at("box")), e.at("score").get<double>(), e.value("label", std::string(kRiskTargetLabel))});
    return d;
  });
  const auto gts = convert_lines<ImageGroundTruth>(a.gt, gt_lines, [](const nlohmann::json& j) {
    ImageGroundTruth g;
    g.image_id = j.at("image_id").get<std::string>();
    for (const auto& e : j.at("boxes"))
      g.boxes.push_back({box_from_json(e.at("box")), e.value("label", std::string(kRiskTargetLabel))});
    return g;
  });
  std::vector<std::string> gt_ids;
  for (const auto& g : gts) gt_ids.push_back(g.image_id);
  preds = align(std::move(preds), gt_ids, [](const ImageDetections& d) { return d.image_id; });

  GroundingConfig gc{cfg.iou_thresholds, cfg.ap_interpolation};
  const auto res = a.risk ? risk_grounding_map(preds, gts, gc) : grounding_map(preds, gts, gc);
  MetricTable t;
  t.columns.push_back({"mAP", scaled(cfg, res.map)});
  auto per = ojson::array();
  for (std::size_t i = 0; i < res.per_threshold.size(); ++i) {
    ojson classes = ojson::object();
    for (const auto& [label, ap] : res.per_threshold[i]) classes[label] = *scaled(cfg, ap);
    per.push_back({{"iou", cfg.iou_thresholds[i]}, {"ap", classes}});
  }
  write_eval(a, cfg, a.risk ? "grounding (risk-target)" : "grounding", t, {{"images", gts.size()}, {"per_threshold", per}},
             out);
  return kExitOk;
}

int cmd_eval_planning(const EvalArgs& a, const CliConfig& cfg, std::ostream& out) {
  struct PredRow {
    std::string id;
    TrajectoryPlan plan;
  };
  struct GtRow {
    std::string id;
    TrajectoryPlan plan;
    std::optional<std::vector<std::vector<AgentBox>>> agents;
  };
  const auto pred_lines = read_jsonl(a.pred);
  const auto gt_lines = read_jsonl(a.gt);
  auto preds = convert_lines<PredRow>(a.pred, pred_lines, [](const nlohmann::json& j) {
    return PredRow{j.at("id").get<std::string>(), plan_from_json(j.at("trajectory"))};
  });
  const auto gts = convert_lines<GtRow>(a.gt, gt_lines, [](const nlohmann::json& j) {
    GtRow g{j.at("id").get<std::string>(), plan_from_json(j.at("trajectory")), std::nullopt};
    if (auto it = j.find("agents"); it != j.end()) {
      std::vector<std::vector<AgentBox>> steps;
      for (const auto& step : *it) {
        std::vector<AgentBox> boxes;
        for (const auto& b : step) {
          const auto c = b.at("center").get<std::vector<double>>();
          if (c.size() != 2) throw ValidationError("agent center must be [x, y]");
          boxes.push_back({{c[0], c[1]}, b.at("length").get<double>(), b.at("width").get<double>(),
                           b.at("heading").get<double>()});
        }
        steps.push_back(std::move(boxes));
      }
      if (steps.size() != kNumWaypoints) throw ValidationError("agents must list 6 timesteps");
      g.agents = std::move(steps);
    }
    return g;
  });
  std::vector<std::string> gt_ids;
  for (const auto& g : gts) gt_ids.push_back(g.id);
  preds = align(std::move(preds), gt_ids, [](const PredRow& p) { return p.id; });

  MetricTable t;
  ojson notes = ojson::object();
  notes["l2_mode"] = to_string(cfg.l2_mode);
  if (gts.empty()) {
    for (const char* k : {"L2 1s", "L2 2s", "L2 3s", "L2 AVG"}) t.columns.push_back({k, {}});
  } else {
    HorizonValues sum;
    for (std::size_t i = 0; i < gts.size(); ++i) {
      const auto h = l2_error(preds[i].plan, gts[i].plan, cfg.l2_mode);
      sum.h1 += h.h1;
      sum.h2 += h.h2;
      sum.h3 += h.h3;
      sum.avg += h.avg;
    }
    const double n = static_cast<double>(gts.size());
    t.columns.push_back({"L2 1s", sum.h1 / n});
    t.columns.push_back({"L2 2s", sum.h2 / n});
    t.columns.push_back({"L2 3s", sum.h3 / n});
    t.columns.push_back({"L2 AVG", sum.avg / n});
  }
  const bool have_agents =
      !gts.empty() && std::all_of(gts.begin(), gts.end(), [](const GtRow& g) { return g.agents.has_value(); });
  if (have_agents) {
    std::vector<PlanningSample> samples;
    for (std::size_t i = 0; i < gts.size(); ++i) samples.push_back({preds[i].plan, *gts[i].agents});
    const auto c = collision_rate(samples, EgoShape{});
    t.columns.push_back({"Col 1s", scaled(cfg, c.h1)});
    t.columns.push_back({"Col 2s", scaled(cfg, c.h2)});
    t.columns.push_back({"Col 3s", scaled(cfg, c.h3)});
    t.columns.push_back({"Col AVG", scaled(cfg, c.avg)});
  } else {
    for (const char* k : {"Col 1s", "Col 2s", "Col 3s", "Col AVG"}) t.columns.push_back({k, {}});
    notes["collision"] = "not computed: ground truth lacks agents for some samples";
  }
  write_eval(a, cfg, "planning", t, {{"count", gts.size()}, {"notes", notes}}, out);
  return kExitOk;
}

OraSample ora_from_json(const nlohmann::json& j) {
  OraSample s;
  s.id = j.at("id").get<std::string>();
  s.exist = j.at("exist").get<bool>();
  auto opt_str = [&](const char* key) -> std::optional<std::string> {
    auto it = j.find(key);
    if (it == j.end() || it->is_null()) return std::nullopt;
    return it->get<std::string>();
  };
  if (auto v = opt_str("level")) {
    s.level = parse_risk_level(*v);
    if (!s.level) throw ValidationError("unknown risk level '" + *v + "'", "/level");
  }
  if (auto v = opt_str("category")) {
    s.category = parse_risk_category(*v);
    if (!s.category) s.category = parse_risk_type_name(*v);
    if (!s.category) throw ValidationError("unknown risk category '" + *v + "'", "/category");
  }
  s.object = opt_str("object");
  s.reason = opt_str("reason").value_or("");
  s.validate();
  return s;
}

int cmd_eval_ora(const EvalArgs& a, const CliConfig& cfg, std::ostream& out) {
  const auto pred_lines = read_jsonl(a.pred);
  const auto gt_lines = read_jsonl(a.gt);
  auto preds = convert_lines<OraSample>(a.pred, pred_lines, ora_from_json);
  const auto gts = convert_lines<OraSample>(a.gt, gt_lines, ora_from_json);
  std::vector<std::string> gt_ids;
  for (const auto& g : gts) gt_ids.push_back(g.id);
  preds = align(std::move(preds), gt_ids, [](const OraSample& s) { return s.id; });
  if (gts.empty()) throw ValidationError("ORA evaluation needs at least one sample");
  const auto r = ora_score(preds, gts, cfg.ora_gate);
  MetricTable t;
  t.columns.push_back({"exist", scaled(cfg, r.exist_acc)});
  t.columns.push_back({"level", scaled(cfg, r.level_acc)});
  t.columns.push_back({"cate", scaled(cfg, r.cate_acc)});
  t.columns.push_back({"object", scaled(cfg, r.object_acc)});
  write_eval(a, cfg, "ora", t,
             {{"total", r.total}, {"gated", r.gated}, {"gate", to_string(cfg.ora_gate)}}, out);
  return kExitOk;
}

struct DemoArgs {
  std::vector<std::string> views;
  std::string bev, inst, out, sidecar;
  bool synthetic = false;
  bool timing = false;
  std::size_t num_views = 6, tokens_per_view = 576, bev_tokens = 2500, dim = 64, inst_tokens = 8;
};

InteractorParams demo_params(std::size_t dim, const CliConfig& cfg) {
  InteractorParams p;
  p.mv = CrossAttnParams::random(dim, cfg.attn_layers, cfg.attn_heads, derive_seed(cfg.seed, "attn:mv"));
  p.bev = CrossAttnParams::random(dim, cfg.attn_layers, cfg.attn_heads, derive_seed(cfg.seed, "attn:bev"));
  p.mv.residual = p.bev.residual = cfg.residual;
  return p;
}

int cmd_interactor_demo(const DemoArgs& a, const CliConfig& cfg, std::ostream& out) {
  const auto t0 = std::chrono::steady_clock::now();
  std::vector<std::string> inputs;
  if (!a.synthetic) {
    if (a.views.empty() || a.bev.empty() || a.inst.empty())
      throw InputError("interactor-demo needs --views, --bev and --inst (or --synthetic)");
    inputs = a.views;
    inputs.push_back(a.bev);
    inputs.push_back(a.inst);
  }
  const ViewFeatureSet views =
      a.synthetic ? synthetic_views(a.num_views, a.tokens_per_view, a.dim, cfg.seed) : load_views(a.views);
  const BevFeatureMap bev{a.synthetic ? normal_matrix(a.bev_tokens, a.dim, derive_seed(cfg.seed, "synthetic:bev"))
                                      : load_fkmx(a.bev)};
  const InstructionEmbedding inst{a.synthetic
                                      ? normal_matrix(a.inst_tokens, a.dim, derive_seed(cfg.seed, "synthetic:inst"))
                                      : load_fkmx(a.inst)};
  views.validate();
  const SelectionConfig sc{cfg.k_img, cfg.k_bev, cfg.reduction};
  const auto fused = fuse(views, bev, inst, sc, demo_params(views.dim(), cfg));
  std::vector<std::size_t> counts;
  for (const auto& v : views.views) counts.push_back(v.rows());
  const auto budget = token_budget(sc, counts, bev.tokens.rows());
  save_fkmx(a.out, fused.tokens);

  ojson side = provenance("interactor-demo", cfg, inputs);
  side["synthetic"] = a.synthetic;
  side["output"] = {{"path", a.out}, {"rows", fused.tokens.rows()}, {"cols", fused.tokens.cols()}};
  side["budget"] = {{"fused", budget.fused}, {"raw", budget.raw}, {"ratio", budget.ratio}};
  auto prov = ojson::array();
  for (const auto& p : fused.provenance) prov.push_back({{"source", p.source}, {"index", p.index}});
  side["tokens"] = std::move(prov);
  if (a.timing) {
    const auto ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    side["elapsed_ms"] = ms;
  }
  write_json(a.sidecar, side);
  out << fmt::format("interactor-demo: fused {} tokens from {} (ratio {:.4f})\n", budget.fused, budget.raw,
                     budget.ratio);
  return kExitOk;
}

struct MaskArgs {
  std::vector<std::string> features;
  std::string candidates, out, report;
  bool synthetic = false;
  bool project = false;
  std::size_t num_views = 6, tokens_per_view = 576, dim = 64;
};

int cmd_mask_exp(const MaskArgs& a, const CliConfig& cfg, std::ostream& out, std::ostream& err) {
  ViewFeatureSet feats;
  std::vector<std::string> inputs;
  if (a.synthetic) {
    feats = synthetic_views(a.num_views, a.tokens_per_view, a.dim, cfg.seed);
  } else {
    if (a.features.empty()) throw InputError("mask-exp needs --features (or --synthetic)");
    feats = load_views(a.features);
    inputs = a.features;
  }
  feats.validate();
  std::vector<std::vector<std::size_t>> cands;
  if (!a.candidates.empty()) {
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(read_file(a.candidates));
    } catch (const nlohmann::json::parse_error& e) {
      throw InputError(fmt::format("{}: malformed JSON: {}", a.candidates, e.what()));
    }
    cands = candidates_from_json(j, feats.view_names);
    inputs.push_back(a.candidates);
  } else {
    // Top third of each view's token grid.
    for (const auto& v : feats.views) {
      std::vector<std::size_t> idx(v.rows() / 3);
      for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
      cands.push_back(std::move(idx));
    }
  }
  MaskExperimentConfig mc;
  mc.rates = cfg.mask_rates;
  mc.blind = cfg.mask_blind;
  mc.seed = cfg.seed;
  mc.stage = cfg.mask_stage;
  mc.jobs = cfg.jobs;
  if (a.project) mc.projection = MlpParams::random(feats.dim(), feats.dim(), feats.dim(), derive_seed(cfg.seed, "proj"));
  const auto rows = run_mask_experiment(mc, feats, cands, mean_abs_downstream);
  std::ostringstream csv;
  write_mask_csv(csv, rows);
  write_file(a.out, csv.str());
  bool any_failed = false;
  for (const auto& r : rows) {
    if (r.failed) {
      any_failed = true;
      err << fmt::format("row {} failed: {}\n", r.exp, r.error);
    }
  }
  if (!a.report.empty()) {
    ojson rep = provenance("mask-exp", cfg, inputs);
    rep["downstream"] = "mean-abs";
    rep["projection"] = a.project;
    auto masked = ojson::array();
    for (const auto& c : cands) masked.push_back(c.size());
    rep["candidates_per_view"] = std::move(masked);
    rep["rows"] = rows.size();
    rep["failed_rows"] = static_cast<std::size_t>(std::count_if(rows.begin(), rows.end(), [](auto& r) { return r.failed; }));
    write_json(a.report, rep);
  }
  out << csv.str();
  return any_failed ? kExitValidation : kExitOk;
}

struct BudgetArgs {
  std::vector<std::size_t> view_tokens;
  std::size_t num_views = 6, tokens_per_view = 576, bev_tokens = 2500;
  std::string out;
};

int cmd_budget(const BudgetArgs& a, const CliConfig& cfg, std::ostream& out) {
  std::vector<std::size_t> counts = a.view_tokens;
  if (counts.empty()) counts.assign(a.num_views, a.tokens_per_view);
  if (counts.empty()) throw InputError("budget needs at least one camera view");
  if (a.bev_tokens == 0) throw InputError("budget needs a non-empty BEV map");
  const auto b = token_budget(SelectionConfig{cfg.k_img, cfg.k_bev, cfg.reduction}, counts, a.bev_tokens);
  ojson rep = provenance("budget", cfg, {});
  rep["view_tokens"] = counts;
  rep["bev_tokens"] = a.bev_tokens;
  rep["fused"] = b.fused;
  rep["raw"] = b.raw;
  rep["ratio"] = b.ratio;
  if (!a.out.empty()) write_json(a.out, rep);
  out << rep.dump(2) << "\n";
  return kExitOk;
}

// Runs `fn`, mapping exceptions onto exit codes.
template <class Fn>
int guarded(Fn fn, std::ostream& err) {
  try {
    return fn();
  } catch (const InputError& e) {
    err << "error: " << e.what() << "\n";
    return kExitInput;
  } catch (const IoError& e) {
    err << "error: " << e.what() << "\n";
    return kExitInput;
  } catch (const ClientError& e) {
    err << "error: " << e.what() << "\n";
    return kExitInput;
  } catch (const ValidationError& e) {
    err << "validation error: " << e.what();
    if (!e.path().empty()) err << " (at " << e.path() << ")";
    err << "\n";
    return kExitValidation;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const nlohmann::json::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitInput;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitInput;
  }
}

}  // namespace

nlohmann::ordered_json config_to_json(const CliConfig& c) {
  ojson j;
  j["k_img"] = c.k_img;
  j["k_bev"] = c.k_bev;
  j["reduction"] = to_string(c.reduction);
  j["short_threshold"] = c.short_threshold;
  j["iou_thresholds"] = c.iou_thresholds;
  j["ap_interpolation"] = to_string(c.ap_interpolation);
  j["l2_mode"] = to_string(c.l2_mode);
  j["ora_gate"] = to_string(c.ora_gate);
  j["scale_0_100"] = c.scale_0_100;
  j["risk_model"] = c.risk_model;
  j["qa_model"] = c.qa_model;
  j["temperature"] = c.temperature;
  j["retries"] = c.retries;
  j["max_in_flight"] = c.max_in_flight;
  j["jobs"] = c.jobs;
  j["seed"] = c.seed;
  j["attn_layers"] = c.attn_layers;
  j["attn_heads"] = c.attn_heads;
  j["residual"] = c.residual;
  j["mask_rates"] = c.mask_rates;
  j["mask_blind"] = c.mask_blind;
  j["mask_stage"] = to_string(c.mask_stage);
  return j;
}

CliConfig config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ValidationError("config must be a JSON object");
  CliConfig c;
  auto enum_value = [](const nlohmann::json& v, auto parse, const std::string& key) {
    const auto parsed = parse(v.get<std::string>());
    if (!parsed) throw ValidationError("invalid value for '" + key + "'", "/" + key);
    return *parsed;
  };
  auto count = [](const nlohmann::json& v, const std::string& key) {
    if (!v.is_number_unsigned()) throw ValidationError("'" + key + "' must be a non-negative integer", "/" + key);
    return v.get<std::size_t>();
  };
  for (const auto& [key, v] : j.items()) {
    try {
      if (key == "k_img") c.k_img = count(v, key);
      else if (key == "k_bev") c.k_bev = count(v, key);
      else if (key == "reduction") c.reduction = enum_value(v, parse_reduction, key);
      else if (key == "short_threshold") c.short_threshold = count(v, key);
      else if (key == "iou_thresholds") c.iou_thresholds = v.get<std::vector<double>>();
      else if (key == "ap_interpolation") c.ap_interpolation = enum_value(v, parse_ap_interpolation, key);
      else if (key == "l2_mode") c.l2_mode = enum_value(v, parse_l2_mode, key);
      else if (key == "ora_gate") c.ora_gate = enum_value(v, parse_ora_gate, key);
      else if (key == "scale_0_100") c.scale_0_100 = v.get<bool>();
      else if (key == "risk_model") c.risk_model = v.get<std::string>();
      else if (key == "qa_model") c.qa_model = v.get<std::string>();
      else if (key == "temperature") c.temperature = v.get<double>();
      else if (key == "retries") c.retries = static_cast<int>(count(v, key));
      else if (key == "max_in_flight") c.max_in_flight = count(v, key);
      else if (key == "jobs") c.jobs = count(v, key);
      else if (key == "seed") c.seed = count(v, key);
      else if (key == "attn_layers") c.attn_layers = count(v, key);
      else if (key == "attn_heads") c.attn_heads = count(v, key);
      else if (key == "residual") c.residual = v.get<bool>();
      else if (key == "mask_rates") c.mask_rates = v.get<std::vector<int>>();
      else if (key == "mask_blind") c.mask_blind = v.get<bool>();
      else if (key == "mask_stage") c.mask_stage = enum_value(v, parse_mask_stage, key);
      else throw ValidationError("unknown config key '" + key + "'", "/" + key);
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError("bad value for '" + key + "': " + e.what(), "/" + key);
    }
  }
  if (c.k_img == 0 || c.k_bev == 0) throw ValidationError("k_img and k_bev must be >= 1");
  if (c.jobs == 0 || c.max_in_flight == 0) throw ValidationError("jobs and max_in_flight must be >= 1");
  if (c.iou_thresholds.empty()) throw ValidationError("iou_thresholds must not be empty", "/iou_thresholds");
  for (int r : c.mask_rates)
    if (r < 0 || r > 100) throw ValidationError("mask rates must be in [0, 100]", "/mask_rates");
  return c;
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"fk: driving-VLM data, evaluation and token-selection toolkit", "fk"};
  app.require_subcommand(1);
  app.fallthrough();
  app.set_version_flag("--version", std::string(kToolVersion));

  std::string config_path;
  std::size_t jobs = 1;
  std::uint64_t seed = 0;
  app.add_option("--config", config_path, "JSON config file; flags override its values");
  auto* o_jobs = app.add_option("--jobs", jobs, "worker cap")->check(CLI::PositiveNumber);
  auto* o_seed = app.add_option("--seed", seed, "seed for every randomized step");

  // refine
  RefineArgs ra;
  std::size_t short_threshold = 5;
  auto* refine = app.add_subcommand("refine", "refine a source dataset into unified JSONL records");
  refine->add_option("--source", ra.source, "nuscenes-qa | nuscenes-mqa | omnidrive | nuinstruct | ora")->required();
  refine->add_option("--input", ra.input, "source JSONL")->required();
  refine->add_option("--out", ra.out, "refined JSONL")->required();
  refine->add_option("--report", ra.report, "refine report JSON")->required();
  auto* o_short = refine->add_option("--short-threshold", short_threshold, "max tokens of a short answer");

  // gen-risk-qa
  GenArgs ga;
  int retries = 2;
  std::string risk_model, qa_model;
  auto* gen = app.add_subcommand("gen-risk-qa", "two-step risk extraction and QA generation");
  gen->add_option("--scenes", ga.scenes, "scene JSONL")->required();
  gen->add_option("--out-qa", ga.out_qa, "QA pair JSONL")->required();
  gen->add_option("--out-grounding", ga.out_grounding, "grounding target JSONL")->required();
  gen->add_option("--report", ga.report, "run report JSON")->required();
  gen->add_option("--mock", ga.mock, "replay directory of <request-sha256>.txt responses");
  gen->add_option("--record", ga.record, "store every exchange in this directory");
  auto* o_retries = gen->add_option("--retries", retries, "repair retries per step")->check(CLI::NonNegativeNumber);
  auto* o_risk_model = gen->add_option("--risk-model", risk_model);
  auto* o_qa_model = gen->add_option("--qa-model", qa_model);

  // eval
  auto* eval = app.add_subcommand("eval", "evaluate predictions against ground truth");
  eval->require_subcommand(1);
  EvalArgs ea;
  std::vector<double> iou;
  std::string interp, l2_mode, gate;
  bool raw_scale = false;
  std::vector<CLI::App*> eval_subs;
  for (const char* name : {"caption", "grounding", "planning", "ora"}) {
    auto* s = eval->add_subcommand(name);
    s->add_option("--pred", ea.pred, "prediction JSONL")->required();
    s->add_option("--gt", ea.gt, "ground-truth JSONL")->required();
    s->add_option("--out", ea.out, "report JSON")->required();
    s->add_option("--csv", ea.csv, "one-row CSV report");
    s->add_flag("--raw-scale", raw_scale, "report percentages on a 0-1 scale");
    eval_subs.push_back(s);
  }
  auto* o_iou = eval_subs[1]->add_option("--iou", iou, "IoU thresholds")->delimiter(',');
  auto* o_interp = eval_subs[1]->add_option("--interp", interp)->check(CLI::IsMember({"all-point", "11-point"}));
  eval_subs[1]->add_flag("--risk", ea.risk, "single risk-target class");
  auto* o_l2 = eval_subs[2]->add_option("--l2-mode", l2_mode)->check(CLI::IsMember({"at-horizon", "average"}));
  auto* o_gate = eval_subs[3]->add_option("--gate", gate)->check(CLI::IsMember({"correct-exist", "all-gt-exist"}));

  // interactor-demo
  DemoArgs da;
  std::size_t k_img = 90, k_bev = 300;
  std::string reduction;
  auto* demo = app.add_subcommand("interactor-demo", "select and fuse view and BEV tokens");
  demo->add_option("--views", da.views, "per-view FKMX token matrices, in camera order");
  demo->add_option("--bev", da.bev, "BEV FKMX token matrix");
  demo->add_option("--inst", da.inst, "instruction FKMX embedding");
  demo->add_flag("--synthetic", da.synthetic, "generate seeded standard-normal inputs");
  demo->add_option("--num-views", da.num_views)->check(CLI::PositiveNumber);
  demo->add_option("--tokens-per-view", da.tokens_per_view)->check(CLI::PositiveNumber);
  demo->add_option("--bev-tokens", da.bev_tokens)->check(CLI::PositiveNumber);
  demo->add_option("--dim", da.dim)->check(CLI::PositiveNumber);
  demo->add_option("--inst-tokens", da.inst_tokens)->check(CLI::PositiveNumber);
  demo->add_option("--out", da.out, "fused FKMX")->required();
  demo->add_option("--sidecar", da.sidecar, "provenance and budget JSON")->required();
  demo->add_flag("--timing", da.timing, "record wall time in the sidecar");
  std::vector<CLI::Option*> o_k_img, o_k_bev, o_reduction;
  for (auto* s : {demo}) {
    o_k_img.push_back(s->add_option("--k-img", k_img)->check(CLI::PositiveNumber));
    o_k_bev.push_back(s->add_option("--k-bev", k_bev)->check(CLI::PositiveNumber));
    o_reduction.push_back(s->add_option("--reduction", reduction)->check(CLI::IsMember({"max", "mean"})));
  }

  // mask-exp
  MaskArgs ma;
  std::vector<int> rates;
  bool blind = true;
  std::string stage;
  auto* mask = app.add_subcommand("mask-exp", "token-masking redundancy experiment");
  mask->add_option("--features", ma.features, "per-view FKMX token matrices");
  mask->add_flag("--synthetic", ma.synthetic, "generate seeded standard-normal features");
  mask->add_option("--num-views", ma.num_views)->check(CLI::PositiveNumber);
  mask->add_option("--tokens-per-view", ma.tokens_per_view)->check(CLI::PositiveNumber);
  mask->add_option("--dim", ma.dim)->check(CLI::PositiveNumber);
  mask->add_option("--candidates", ma.candidates, "JSON per-view candidate indices (default: top third)");
  auto* o_rates = mask->add_option("--rates", rates, "mask rates in percent")->delimiter(',')->check(CLI::Range(0, 100));
  auto* o_blind = mask->add_flag("--blind,!--no-blind", blind, "include the blind row");
  auto* o_stage = mask->add_option("--stage", stage)->check(CLI::IsMember({"post", "pre"}));
  mask->add_flag("--project", ma.project, "pass tokens through a seeded projection MLP");
  mask->add_option("--out", ma.out, "CSV table")->required();
  mask->add_option("--report", ma.report, "provenance JSON");

  // budget
  BudgetArgs ba;
  auto* budget = app.add_subcommand("budget", "fused vs raw token counts");
  budget->add_option("--view-tokens", ba.view_tokens, "tokens per view")->delimiter(',');
  budget->add_option("--num-views", ba.num_views);
  budget->add_option("--tokens-per-view", ba.tokens_per_view);
  budget->add_option("--bev-tokens", ba.bev_tokens);
  budget->add_option("--out", ba.out, "report JSON");
  o_k_img.push_back(budget->add_option("--k-img", k_img)->check(CLI::PositiveNumber));
  o_k_bev.push_back(budget->add_option("--k-bev", k_bev)->check(CLI::PositiveNumber));

  try {
    std::vector<std::string> rev(args.rbegin(), args.rend());
    app.parse(rev);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  return guarded(
      [&]() -> int {
        CliConfig cfg;
        if (!config_path.empty()) {
          nlohmann::json j;
          try {
            j = nlohmann::json::parse(read_file(config_path));
            cfg = config_from_json(j);
          } catch (const nlohmann::json::parse_error& e) {
            throw InputError(fmt::format("{}: malformed JSON: {}", config_path, e.what()));
          } catch (const ValidationError& e) {
            throw InputError(fmt::format("{}: {}{}", config_path, e.what(), e.path().empty() ? "" : " at " + e.path()));
          }
        }
        auto given = [](CLI::Option* o) { return o && o->count() > 0; };
        auto any_given = [&](const std::vector<CLI::Option*>& os) {
          return std::any_of(os.begin(), os.end(), given);
        };
        if (given(o_jobs)) cfg.jobs = jobs;
        if (given(o_seed)) cfg.seed = seed;
        if (given(o_short)) cfg.short_threshold = short_threshold;
        if (given(o_retries)) cfg.retries = retries;
        if (given(o_risk_model)) cfg.risk_model = risk_model;
        if (given(o_qa_model)) cfg.qa_model = qa_model;
        if (given(o_iou)) {
          if (iou.empty()) throw InputError("--iou needs at least one threshold");
          cfg.iou_thresholds = iou;
        }
        if (given(o_interp)) cfg.ap_interpolation = *parse_ap_interpolation(interp);
        if (given(o_l2)) cfg.l2_mode = *parse_l2_mode(l2_mode);
        if (given(o_gate)) cfg.ora_gate = *parse_ora_gate(gate);
        if (raw_scale) cfg.scale_0_100 = false;
        if (any_given(o_k_img)) cfg.k_img = k_img;
        if (any_given(o_k_bev)) cfg.k_bev = k_bev;
        if (any_given(o_reduction)) cfg.reduction = *parse_reduction(reduction);
        if (given(o_rates)) cfg.mask_rates = rates;
        if (given(o_blind)) cfg.mask_blind = blind;
        if (given(o_stage)) cfg.mask_stage = *parse_mask_stage(stage);

        if (*refine) return cmd_refine(ra, cfg, out, err);
        if (*gen) return cmd_gen_risk_qa(ga, cfg, out, err);
        if (*eval_subs[0]) return cmd_eval_caption(ea, cfg, out);
        if (*eval_subs[1]) return cmd_eval_grounding(ea, cfg, out);
        if (*eval_subs[2]) return cmd_eval_planning(ea, cfg, out);
        if (*eval_subs[3]) return cmd_eval_ora(ea, cfg, out);
        if (*demo) return cmd_interactor_demo(da, cfg, out);
        if (*mask) return cmd_mask_exp(ma, cfg, out, err);
        if (*budget) return cmd_budget(ba, cfg, out);
        return kExitUsage;
      },
      err);
}

}  // namespace fk
