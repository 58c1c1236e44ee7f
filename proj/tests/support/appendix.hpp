#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <string>

#include "fixtures.hpp"
#include "fk/chat_client.hpp"
#include "fk/risk_qa.hpp"
#include "json.hpp"

namespace appendix {

inline fk::Scene scene() {
  std::ifstream in(fixture::data_path("appendix/scenes.jsonl"));
  std::string line;
  std::getline(in, line);
  return fk::scene_from_json(nlohmann::json::parse(line));
}

inline std::string risk_response() { return fixture::slurp(fixture::data_path("appendix/extract_risk_response.txt")); }
inline std::string qa_response() { return fixture::slurp(fixture::data_path("appendix/extract_qa_response.txt")); }

/// Request hash -> recorded response for the two pipeline steps on the appendix scene.
inline std::map<std::string, std::string> exchanges(const fk::PipelineConfig& cfg) {
  const auto s = scene();
  const fk::ChatRequest risk{cfg.risk_model, {{"user", fk::build_risk_prompt(s.objects, s.view)}}, cfg.temperature,
                             cfg.seed};
  const auto doc = fk::parse_risk_response(risk_response());
  const fk::ChatRequest qa{cfg.qa_model, {{"user", fk::build_qa_prompt(doc)}}, cfg.temperature, cfg.seed};
  return {{fk::request_hash(risk), risk_response()}, {fk::request_hash(qa), qa_response()}};
}

/// Writes the exchanges as a replay directory usable with `--mock`.
inline void write_mock_dir(const std::filesystem::path& dir, const fk::PipelineConfig& cfg) {
  std::filesystem::create_directories(dir);
  for (const auto& [hash, text] : exchanges(cfg)) std::ofstream(dir / (hash + ".txt"), std::ios::binary) << text;
}

/// Pipeline settings matching the CLI defaults.
inline fk::PipelineConfig cli_defaults() {
  fk::PipelineConfig cfg;
  cfg.seed = 0;
  return cfg;
}

}  // namespace appendix
