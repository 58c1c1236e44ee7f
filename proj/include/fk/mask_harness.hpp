#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "fk/interactor.hpp"
#include "fk/numerics.hpp"
#include "json.hpp"

namespace fk {

enum class MaskMode { Mask, Blind };

struct MaskSpec {
  std::vector<std::vector<std::size_t>> candidates;  // per view, row indices
  int rate = 0;                                      // percent, 0..100
  MaskMode mode = MaskMode::Mask;
  std::uint64_t seed = 0;

  /// Checks rate, view count, index range and duplicates against `f`.
  void validate(const ViewFeatureSet& f) const;
};

/// floor(rate * n / 100), exact in integers.
std::size_t masked_count(int rate, std::size_t n);

/// Zeroes masked_count(rate, |C_v|) candidate rows per view. Candidates are shuffled
/// (Fisher-Yates, xoshiro256** seeded with derive_seed(seed, "view:<v>")) and the prefix is taken.
ViewFeatureSet apply_token_mask(const ViewFeatureSet& f, const MaskSpec& spec);

/// Same as apply_token_mask but also returns the zeroed row indices per view, in draw order.
ViewFeatureSet apply_token_mask(const ViewFeatureSet& f, const MaskSpec& spec,
                                std::vector<std::vector<std::size_t>>& masked_rows);

/// Every entry replaced by a standard normal draw, row-major across views in order.
ViewFeatureSet blind_input(const ViewFeatureSet& f, std::uint64_t seed);

/// Reads {"front": [..], ...} keyed by view name, or an array of per-view arrays.
std::vector<std::vector<std::size_t>> candidates_from_json(const nlohmann::json& j,
                                                           const std::vector<std::string>& view_names);

struct MaskMetrics {
  std::optional<double> mae, acc, map, bleu;
};

using MaskDownstream = std::function<MaskMetrics(const ViewFeatureSet&)>;

enum class MaskStage { PostProjection, PreProjection };

struct MaskExperimentConfig {
  std::vector<int> rates = {0, 10, 30, 50};
  bool blind = true;
  std::uint64_t seed = 0;
  MaskStage stage = MaskStage::PostProjection;
  std::optional<MlpParams> projection;  // applied to every view when set
  std::size_t jobs = 1;
};

struct MaskRunRow {
  int exp = 0;  // 1-based, table order
  MaskMode mode = MaskMode::Mask;
  int rate = 0;  // unused for blind rows
  MaskMetrics metrics;
  bool failed = false;
  std::string error;
};

/// Blind row first, then ascending distinct rates. Row seeds are derive_seed(seed, "blind" | "rate:<r>").
std::vector<MaskRunRow> run_mask_experiment(const MaskExperimentConfig& cfg, const ViewFeatureSet& features,
                                            const std::vector<std::vector<std::size_t>>& candidates,
                                            const MaskDownstream& downstream);

/// Columns: Exp,Mask Rate,MAE,ACC,mAP,BLEU. Missing metrics are empty, failed rows say "failed".
void write_mask_csv(std::ostream& out, const std::vector<MaskRunRow>& rows);

/// Mean absolute entry of all view tokens, in every column. Handy as a toy downstream.
MaskMetrics mean_abs_downstream(const ViewFeatureSet& f);

}  // namespace fk
