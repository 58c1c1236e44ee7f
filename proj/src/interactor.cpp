#include "fk/interactor.hpp"

#include <algorithm>
#include <numeric>

#include "fk/errors.hpp"

namespace fk {

ViewFeatureSet ViewFeatureSet::with_default_names(std::vector<Matrix> views) {
  ViewFeatureSet set{std::move(views), {}};
  for (std::size_t i = 0; i < set.views.size(); ++i) {
    set.view_names.push_back(i < kDefaultViewNames.size() ? std::string(kDefaultViewNames[i])
                                                          : "view_" + std::to_string(i));
  }
  return set;
}

std::size_t ViewFeatureSet::dim() const {
  if (views.empty()) throw ValidationError("view feature set is empty");
  return views.front().cols();
}

void ViewFeatureSet::validate() const {
  const std::size_t d = dim();
  if (view_names.size() != views.size()) throw ValidationError("view_names length != number of views");
  for (std::size_t i = 0; i < views.size(); ++i) {
    if (views[i].cols() != d) {
      throw ShapeError("view '" + view_names[i] + "': width " + std::to_string(views[i].cols()) +
                       " != " + std::to_string(d));
    }
  }
}

void BevFeatureMap::validate() const {
  if ((grid_h != 0 || grid_w != 0) && grid_h * grid_w != tokens.rows()) {
    throw ShapeError("bev: grid " + std::to_string(grid_h) + "x" + std::to_string(grid_w) +
                     " does not match " + std::to_string(tokens.rows()) + " tokens");
  }
}

Matrix project_features(const Matrix& raw, const MlpParams& p) { return mlp_forward(raw, p); }

std::vector<double> score_tokens(const Matrix& f, const InstructionEmbedding& inst, Reduction reduction) {
  if (f.cols() != inst.tokens.cols()) {
    throw ShapeError("score_tokens: token width " + std::to_string(f.cols()) +
                     " != instruction width " + std::to_string(inst.tokens.cols()));
  }
  const Matrix sim = cosine_similarity_matrix(f, inst.tokens);
  std::vector<double> scores(f.rows());
  for (std::size_t i = 0; i < f.rows(); ++i) {
    auto row = sim.row(i);
    if (reduction == Reduction::Max) {
      scores[i] = *std::max_element(row.begin(), row.end());
    } else {
      scores[i] = std::accumulate(row.begin(), row.end(), 0.0) / static_cast<double>(row.size());
    }
  }
  return scores;
}

SelectionResult select_topk(const Matrix& f, std::span<const double> scores, std::size_t k) {
  if (scores.size() != f.rows()) throw ShapeError("select_topk: scores length != token count");
  if (k == 0) throw ValidationError("select_topk: k must be >= 1");
  const std::size_t take = std::min(k, f.rows());
  std::vector<std::size_t> order(f.rows());
  std::iota(order.begin(), order.end(), 0);
  auto better = [&](std::size_t a, std::size_t b) {
    return scores[a] > scores[b] || (scores[a] == scores[b] && a < b);
  };
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(take), order.end(), better);
  order.resize(take);
  Matrix selected = f.gather_rows(order);
  return {std::move(order), std::move(selected), {scores.begin(), scores.end()}};
}

Matrix interact(const Matrix& selected, const Matrix& full, const CrossAttnParams& p) {
  if (selected.cols() != full.cols()) throw ShapeError("interact: selected and full widths differ");
  return cross_attention(selected, full, full, p);
}

FusedTokenSequence fuse(const ViewFeatureSet& views, const BevFeatureMap& bev,
                        const InstructionEmbedding& inst, const SelectionConfig& cfg,
                        const InteractorParams& params) {
  views.validate();
  bev.validate();
  if (!params.per_view.empty() && params.per_view.size() != views.views.size()) {
    throw ValidationError("fuse: per-view parameter count != number of views");
  }
  const std::size_t d = views.dim();
  if (bev.tokens.cols() != d) {
    throw ShapeError("fuse: bev has D=" + std::to_string(bev.tokens.cols()) + ", views have D=" + std::to_string(d));
  }
  if (inst.tokens.cols() != d) {
    throw ShapeError("fuse: instruction has D=" + std::to_string(inst.tokens.cols()) + ", views have D=" +
                     std::to_string(d));
  }

  std::vector<Matrix> parts;
  std::vector<TokenProvenance> provenance;
  auto run_branch = [&](const Matrix& tokens, std::size_t k, const CrossAttnParams& p, const std::string& label) {
    try {
      const auto scores = score_tokens(tokens, inst, cfg.reduction);
      auto sel = select_topk(tokens, scores, k);
      parts.push_back(interact(sel.features, tokens, p));
      for (std::size_t idx : sel.indices) provenance.push_back({label, idx});
    } catch (const ShapeError& e) {
      throw ShapeError(label + ": " + e.what());
    } catch (const ValidationError& e) {
      throw ValidationError(label + ": " + e.what());
    }
  };
  for (std::size_t i = 0; i < views.views.size(); ++i) {
    run_branch(views.views[i], cfg.k_img, params.for_view(i), views.view_names[i]);
  }
  run_branch(bev.tokens, cfg.k_bev, params.bev, "bev");
  return {vstack(parts), std::move(provenance)};
}

BudgetReport token_budget(const SelectionConfig& cfg, std::span<const std::size_t> view_tokens,
                          std::size_t bev_tokens) {
  if (view_tokens.empty()) throw ValidationError("token_budget: at least one view is required");
  if (bev_tokens == 0) throw ValidationError("token_budget: BEV token count must be >= 1");
  if (cfg.k_img == 0 || cfg.k_bev == 0) throw ValidationError("token_budget: k must be >= 1");
  BudgetReport r;
  for (std::size_t n : view_tokens) {
    if (n == 0) throw ValidationError("token_budget: view token count must be >= 1");
    r.fused += std::min(cfg.k_img, n);
    r.raw += n;
  }
  r.fused += std::min(cfg.k_bev, bev_tokens);
  r.raw += bev_tokens;
  r.ratio = static_cast<double>(r.fused) / static_cast<double>(r.raw);
  return r;
}

ToyDecoderOutput toy_pipeline(const InstructionEmbedding& inst, const FusedTokenSequence& fused,
                              const CrossAttnParams& decoder, std::size_t n_resp) {
  if (n_resp == 0) throw ValidationError("toy_pipeline: n_resp must be >= 1");
  if (inst.tokens.cols() != fused.tokens.cols()) throw ShapeError("toy_pipeline: D mismatch");
  const std::array<Matrix, 2> kv_parts{inst.tokens, fused.tokens};
  const Matrix kv = vstack(kv_parts);
  Matrix queries(n_resp, kv.cols());
  for (std::size_t r = 0; r < n_resp; ++r) queries(r, 0) = static_cast<double>(r) / static_cast<double>(n_resp);
  return {cross_attention(queries, kv, kv, decoder)};
}

std::string_view to_string(Reduction r) { return r == Reduction::Max ? "max" : "mean"; }

std::optional<Reduction> parse_reduction(std::string_view s) {
  if (s == "max") return Reduction::Max;
  if (s == "mean") return Reduction::Mean;
  return std::nullopt;
}

}  // namespace fk
