#include <gtest/gtest.h>

#include <algorithm>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "appendix.hpp"
#include "fixtures.hpp"
#include "fk/cli.hpp"
#include "fk/interactor.hpp"
#include "fk/matrix.hpp"
#include "fk/rng.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using namespace fk;

namespace {

struct Run {
  int code;
  std::string out, err;
};

Run cli(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

void write(const fs::path& p, const std::string& text) { std::ofstream(p, std::ios::binary) << text; }

nlohmann::json ora_json(const OraSample& s) {
  nlohmann::json j{{"id", s.id}, {"exist", s.exist}};
  if (s.level) j["level"] = std::string(to_string(*s.level));
  if (s.category) j["category"] = std::string(to_string(*s.category));
  if (s.object) j["object"] = *s.object;
  return j;
}

void write_ora(const fs::path& p, const std::vector<OraSample>& samples) {
  std::string s;
  for (const auto& x : samples) s += ora_json(x).dump() + "\n";
  write(p, s);
}

}  // namespace

TEST(Cli, VersionAndUsage) {
  const auto v = cli({"--version"});
  EXPECT_EQ(v.code, 0);
  EXPECT_NE(v.out.find(kToolVersion), std::string::npos);
  EXPECT_EQ(cli({"frobnicate"}).code, kExitUsage);
  EXPECT_EQ(cli({"budget", "--k-img", "zero"}).code, kExitUsage);
  EXPECT_EQ(cli({"eval", "planning", "--pred", "a"}).code, kExitUsage);
}

TEST(Cli, BudgetReproducesTokenCount) {
  const auto r = cli({"budget", "--num-views", "6", "--tokens-per-view", "576", "--bev-tokens", "2500"});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto j = nlohmann::json::parse(r.out);
  EXPECT_EQ(j.at("fused"), 840);
  EXPECT_EQ(j.at("raw"), 5956);
  EXPECT_NEAR(j.at("ratio").get<double>(), 0.141, 5e-4);
  EXPECT_EQ(cli({"budget", "--num-views", "0", "--bev-tokens", "10"}).code, kExitInput);
}

TEST(Cli, ConfigFileRejectsUnknownKeys) {
  const auto dir = fixture::scratch("cli_config");
  write(dir / "bad.json", R"({"k_img": 4, "frobs": 1})");
  EXPECT_EQ(cli({"--config", (dir / "bad.json").string(), "budget", "--num-views", "1", "--bev-tokens", "4"}).code,
            kExitInput);
  write(dir / "good.json", R"({"k_img": 4, "k_bev": 2})");
  const auto r = cli({"--config", (dir / "good.json").string(), "budget", "--num-views", "2", "--tokens-per-view", "10",
                      "--bev-tokens", "9"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(nlohmann::json::parse(r.out).at("fused"), 10);
  // Flags override the file.
  const auto o = cli({"--config", (dir / "good.json").string(), "budget", "--num-views", "2", "--tokens-per-view",
                      "10", "--bev-tokens", "9", "--k-img", "1"});
  EXPECT_EQ(nlohmann::json::parse(o.out).at("fused"), 4);
  EXPECT_EQ(cli({"--config", (dir / "missing.json").string(), "budget"}).code, kExitInput);
}

TEST(Cli, InteractorDemoMatchesLibrary) {
  const auto dir = fixture::scratch("cli_demo");
  Xoshiro256 r(31);
  const std::vector<Matrix> views{fixture::uniform(5, 4, r), fixture::uniform(7, 4, r)};
  const Matrix bev = fixture::uniform(6, 4, r), inst = fixture::uniform(3, 4, r);
  save_fkmx(dir / "v0.fkmx", views[0]);
  save_fkmx(dir / "v1.fkmx", views[1]);
  save_fkmx(dir / "bev.fkmx", bev);
  save_fkmx(dir / "inst.fkmx", inst);
  const auto res = cli({"interactor-demo", "--views", (dir / "v0.fkmx").string(), (dir / "v1.fkmx").string(), "--bev",
                        (dir / "bev.fkmx").string(), "--inst", (dir / "inst.fkmx").string(), "--k-img", "3",
                        "--k-bev", "2", "--out", (dir / "fused.fkmx").string(), "--sidecar",
                        (dir / "side.json").string()});
  ASSERT_EQ(res.code, 0) << res.err;

  const CliConfig cfg;
  InteractorParams p;
  p.mv = CrossAttnParams::random(4, cfg.attn_layers, cfg.attn_heads, derive_seed(cfg.seed, "attn:mv"));
  p.bev = CrossAttnParams::random(4, cfg.attn_layers, cfg.attn_heads, derive_seed(cfg.seed, "attn:bev"));
  p.mv.residual = p.bev.residual = cfg.residual;
  const auto want = fuse(ViewFeatureSet::with_default_names(views), BevFeatureMap{bev}, InstructionEmbedding{inst},
                         SelectionConfig{3, 2, cfg.reduction}, p);
  const auto got = load_fkmx(dir / "fused.fkmx");
  ASSERT_EQ(got.rows(), 8u);
  ASSERT_EQ(got.cols(), 4u);
  EXPECT_EQ(std::memcmp(got.data().data(), want.tokens.data().data(), got.size() * sizeof(double)), 0);

  const auto side = nlohmann::json::parse(fixture::slurp((dir / "side.json").string()));
  EXPECT_EQ(side.at("budget").at("fused"), 8);
  EXPECT_EQ(side.at("inputs").size(), 4u);
  EXPECT_FALSE(side.contains("elapsed_ms"));
  EXPECT_EQ(cli({"interactor-demo", "--out", (dir / "x").string(), "--sidecar", (dir / "y").string()}).code,
            kExitInput);
}

TEST(Cli, SyntheticDemoIsIdempotent) {
  const auto dir = fixture::scratch("cli_demo_idem");
  const std::vector<std::string> args{"interactor-demo", "--synthetic", "--num-views", "2", "--tokens-per-view", "40",
                                      "--bev-tokens", "50", "--dim", "8", "--out", (dir / "f.fkmx").string(),
                                      "--sidecar", (dir / "s.json").string()};
  ASSERT_EQ(cli(args).code, 0);
  const auto f1 = fixture::slurp((dir / "f.fkmx").string()), s1 = fixture::slurp((dir / "s.json").string());
  ASSERT_EQ(cli(args).code, 0);
  EXPECT_EQ(fixture::slurp((dir / "f.fkmx").string()), f1);
  EXPECT_EQ(fixture::slurp((dir / "s.json").string()), s1);
}

TEST(Cli, GenRiskQaReplayIsByteIdentical) {
  const auto dir = fixture::scratch("cli_gen");
  appendix::write_mock_dir(dir / "mock", appendix::cli_defaults());
  const std::string scenes = fixture::data_path("appendix/scenes.jsonl");
  auto run = [&](const std::string& tag) {
    return cli({"gen-risk-qa", "--scenes", scenes, "--mock", (dir / "mock").string(), "--out-qa",
                (dir / (tag + "_qa.jsonl")).string(), "--out-grounding", (dir / (tag + "_gr.jsonl")).string(),
                "--report", (dir / "report.json").string()});
  };
  const auto a = run("a");
  ASSERT_EQ(a.code, 0) << a.err;
  const auto rep1 = fixture::slurp((dir / "report.json").string());
  ASSERT_EQ(run("b").code, 0);
  EXPECT_EQ(fixture::slurp((dir / "a_qa.jsonl").string()), fixture::slurp((dir / "b_qa.jsonl").string()));
  EXPECT_EQ(fixture::slurp((dir / "a_gr.jsonl").string()), fixture::slurp((dir / "b_gr.jsonl").string()));
  EXPECT_EQ(fixture::slurp((dir / "report.json").string()), rep1);

  std::ifstream in(dir / "a_qa.jsonl");
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) ++n;
  EXPECT_EQ(n, 6u);
  const auto rep = nlohmann::json::parse(rep1);
  EXPECT_EQ(rep.at("report").at("scenes_failed"), 0);

  // A different seed changes every request hash, so nothing replays.
  const auto miss = cli({"--seed", "1", "gen-risk-qa", "--scenes", scenes, "--mock", (dir / "mock").string(),
                         "--out-qa", (dir / "c.jsonl").string(), "--out-grounding", (dir / "d.jsonl").string(),
                         "--report", (dir / "r.json").string()});
  EXPECT_EQ(miss.code, kExitValidation);

  ::unsetenv("FK_API_ENDPOINT");
  EXPECT_EQ(cli({"gen-risk-qa", "--scenes", scenes, "--out-qa", (dir / "c.jsonl").string(), "--out-grounding",
                 (dir / "d.jsonl").string(), "--report", (dir / "r.json").string()})
                .code,
            kExitInput);
}

TEST(Cli, EvalOraCountingAndDegenerate) {
  const auto dir = fixture::scratch("cli_ora");
  auto [preds, gts] = fixture::ora_counting();
  write_ora(dir / "p.jsonl", preds);
  write_ora(dir / "g.jsonl", gts);
  const auto r = cli({"eval", "ora", "--pred", (dir / "p.jsonl").string(), "--gt", (dir / "g.jsonl").string(), "--out",
                      (dir / "o.json").string(), "--csv", (dir / "o.csv").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(r.out, "exist,level,cate,object\n60.0000,50.0000,100.0000,100.0000\n");
  const auto j = nlohmann::json::parse(fixture::slurp((dir / "o.json").string()));
  EXPECT_EQ(j.at("metrics").at("level"), 50.0);

  auto [dp, dg] = fixture::ora_degenerate();
  write_ora(dir / "dp.jsonl", dp);
  write_ora(dir / "dg.jsonl", dg);
  const auto d = cli({"eval", "ora", "--pred", (dir / "dp.jsonl").string(), "--gt", (dir / "dg.jsonl").string(),
                      "--out", (dir / "d.json").string()});
  ASSERT_EQ(d.code, 0) << d.err;
  EXPECT_EQ(d.out, "exist,level,cate,object\n0.0000,N/A,N/A,N/A\n");
  EXPECT_TRUE(nlohmann::json::parse(fixture::slurp((dir / "d.json").string())).at("metrics").at("level").is_null());
}

TEST(Cli, EvalCaptionAndErrors) {
  const auto dir = fixture::scratch("cli_caption");
  write(dir / "p.jsonl", "{\"id\": \"1\", \"caption\": \"the cat sat\"}\n");
  write(dir / "g.jsonl", "{\"id\": \"1\", \"references\": [\"the cat sat down\"]}\n");
  const auto r = cli({"eval", "caption", "--pred", (dir / "p.jsonl").string(), "--gt", (dir / "g.jsonl").string(),
                      "--out", (dir / "o.json").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(r.out.rfind("BLEU1,BLEU2,BLEU3,BLEU4,CIDEr,ROUGE_L,ACC\n71.65", 0), 0u) << r.out;

  write(dir / "g2.jsonl", "{\"id\": \"2\", \"references\": [\"x\"]}\n");
  EXPECT_EQ(cli({"eval", "caption", "--pred", (dir / "p.jsonl").string(), "--gt", (dir / "g2.jsonl").string(), "--out",
                 (dir / "o.json").string()})
                .code,
            kExitValidation);
  write(dir / "bad.jsonl", "{\"id\": \"1\", \n");
  const auto bad = cli({"eval", "caption", "--pred", (dir / "bad.jsonl").string(), "--gt", (dir / "g.jsonl").string(),
                        "--out", (dir / "o.json").string()});
  EXPECT_NE(bad.code, 0);
  EXPECT_NE(bad.err.find("bad.jsonl:1"), std::string::npos) << bad.err;
  EXPECT_EQ(cli({"eval", "caption", "--pred", (dir / "none.jsonl").string(), "--gt", (dir / "g.jsonl").string(),
                 "--out", (dir / "o.json").string()})
                .code,
            kExitInput);
}

TEST(Cli, RefineWritesOutputsAndFlagsRejects) {
  const auto dir = fixture::scratch("cli_refine");
  write(dir / "in.jsonl",
        "{\"id\": \"a\", \"question\": \"q 1.5\", \"answer\": \"yes\"}\n"
        "{\"id\": \"b\", \"question\": \"q\", \"answer\": \"in <|CAM_ROOF|>\"}\n");
  const std::vector<std::string> args{"refine",  "--source", "nuscenes-qa", "--input", (dir / "in.jsonl").string(),
                                      "--out",   (dir / "out.jsonl").string(), "--report",
                                      (dir / "rep.json").string()};
  const auto r = cli(args);
  EXPECT_EQ(r.code, kExitValidation);
  const auto out = fixture::slurp((dir / "out.jsonl").string());
  EXPECT_NE(out.find("\"q 2\""), std::string::npos);
  const auto rep = nlohmann::json::parse(fixture::slurp((dir / "rep.json").string()));
  EXPECT_EQ(rep.at("report").at("kept"), 1);
  EXPECT_EQ(cli({"refine", "--source", "kitti", "--input", (dir / "in.jsonl").string(), "--out", "x", "--report", "y"})
                .code,
            kExitInput);
}

TEST(Cli, MaskExperimentReproducible) {
  const auto dir = fixture::scratch("cli_mask");
  const std::vector<std::string> base{"--seed", "3", "mask-exp", "--synthetic", "--num-views", "2", "--tokens-per-view",
                                      "30", "--dim", "8", "--project"};
  auto a = base, b = base;
  a.insert(a.end(), {"--out", (dir / "a.csv").string()});
  b.insert(b.end(), {"--out", (dir / "b.csv").string()});
  ASSERT_EQ(cli(a).code, 0);
  ASSERT_EQ(cli(b).code, 0);
  const auto csv = fixture::slurp((dir / "a.csv").string());
  EXPECT_EQ(csv, fixture::slurp((dir / "b.csv").string()));
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 6);
  EXPECT_EQ(cli({"mask-exp", "--synthetic", "--rates", "120", "--out", (dir / "c.csv").string()}).code, kExitUsage);
}
