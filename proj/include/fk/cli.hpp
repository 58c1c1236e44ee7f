#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include "fk/driving_eval.hpp"
#include "fk/interactor.hpp"
#include "fk/mask_harness.hpp"
#include "json.hpp"

namespace fk {

inline constexpr std::string_view kToolVersion = "0.1.0";

enum ExitCode : int { kExitOk = 0, kExitInput = 2, kExitValidation = 3, kExitUsage = 64 };

/// Effective settings shared by all subcommands. Loaded from --config, then overridden by flags.
struct CliConfig {
  std::size_t k_img = 90;
  std::size_t k_bev = 300;
  Reduction reduction = Reduction::Max;
  std::size_t short_threshold = 5;
  std::vector<double> iou_thresholds{0.5};
  ApInterpolation ap_interpolation = ApInterpolation::AllPoint;
  L2Mode l2_mode = L2Mode::AtHorizon;
  OraGate ora_gate = OraGate::CorrectExist;
  bool scale_0_100 = true;
  std::string risk_model = "gpt-4o";
  std::string qa_model = "gpt-4o-mini";
  double temperature = 0.0;
  int retries = 2;
  std::size_t max_in_flight = 4;
  std::size_t jobs = 1;
  std::uint64_t seed = 0;
  std::size_t attn_layers = 2;
  std::size_t attn_heads = 1;
  bool residual = false;
  std::vector<int> mask_rates{0, 10, 30, 50};
  bool mask_blind = true;
  MaskStage mask_stage = MaskStage::PostProjection;
};

nlohmann::ordered_json config_to_json(const CliConfig& c);
/// Starts from defaults; rejects unknown keys and ill-typed values with ValidationError.
CliConfig config_from_json(const nlohmann::json& j);

/// Runs the `fk` command line in-process. `args` excludes the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace fk
