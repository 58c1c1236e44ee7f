#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "fk/matrix.hpp"
#include "fk/numerics.hpp"

namespace fk {

/// Instruction token embeddings, N_inst x D.
struct InstructionEmbedding {
  Matrix tokens;
};

inline constexpr std::array<std::string_view, 6> kDefaultViewNames = {
    "front", "front_left", "front_right", "back", "back_left", "back_right"};

/// Per-camera token matrices in a fixed view order.
struct ViewFeatureSet {
  std::vector<Matrix> views;
  std::vector<std::string> view_names;

  /// Labels views with kDefaultViewNames (or view_<i> past six).
  static ViewFeatureSet with_default_names(std::vector<Matrix> views);
  std::size_t dim() const;
  void validate() const;
};

struct BevFeatureMap {
  Matrix tokens;
  std::size_t grid_h = 0;  // 0 means "not a grid", e.g. 1 x N_bev
  std::size_t grid_w = 0;

  void validate() const;
};

enum class Reduction { Max, Mean };

struct SelectionConfig {
  std::size_t k_img = 90;
  std::size_t k_bev = 300;
  Reduction reduction = Reduction::Max;
};

/// Selected tokens ordered by descending score, ties by ascending index.
struct SelectionResult {
  std::vector<std::size_t> indices;
  Matrix features;             // indices.size() x D, rows in `indices` order
  std::vector<double> scores;  // relevance of every source token
};

struct TokenProvenance {
  std::string source;  // view name or "bev"
  std::size_t index;   // row in the source matrix

  bool operator==(const TokenProvenance&) const = default;
};

struct FusedTokenSequence {
  Matrix tokens;
  std::vector<TokenProvenance> provenance;
};

struct ToyDecoderOutput {
  Matrix response_tokens;
};

/// Attention weights for the two branches. `per_view` overrides `mv` view by view.
struct InteractorParams {
  CrossAttnParams mv;
  CrossAttnParams bev;
  std::vector<CrossAttnParams> per_view;

  const CrossAttnParams& for_view(std::size_t i) const { return per_view.empty() ? mv : per_view.at(i); }
};

struct BudgetReport {
  std::size_t fused = 0;
  std::size_t raw = 0;
  double ratio = 0.0;
};

Matrix project_features(const Matrix& raw, const MlpParams& p);

std::vector<double> score_tokens(const Matrix& f, const InstructionEmbedding& inst, Reduction reduction);

SelectionResult select_topk(const Matrix& f, std::span<const double> scores, std::size_t k);

/// I = CrossAttn(F', F, F).
Matrix interact(const Matrix& selected, const Matrix& full, const CrossAttnParams& p);

/// Score, select and interact for each view and for BEV, then concatenate the
/// view outputs (in view order) followed by the BEV output.
FusedTokenSequence fuse(const ViewFeatureSet& views, const BevFeatureMap& bev,
                        const InstructionEmbedding& inst, const SelectionConfig& cfg,
                        const InteractorParams& params);

BudgetReport token_budget(const SelectionConfig& cfg, std::span<const std::size_t> view_tokens,
                          std::size_t bev_tokens);

/// Runs n_resp deterministic query rows through cross-attention over inst ++ fused.
ToyDecoderOutput toy_pipeline(const InstructionEmbedding& inst, const FusedTokenSequence& fused,
                              const CrossAttnParams& decoder, std::size_t n_resp);

std::string_view to_string(Reduction r);
std::optional<Reduction> parse_reduction(std::string_view s);

}  // namespace fk
