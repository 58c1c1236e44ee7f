#include "fk/mask_harness.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <ostream>
#include <set>
#include <thread>

#include <fmt/format.h>

#include "fk/errors.hpp"
#include "fk/rng.hpp"

namespace fk {

void MaskSpec::validate(const ViewFeatureSet& f) const {
  if (rate < 0 || rate > 100) throw ValidationError("mask rate must be in [0, 100]", "/rate");
  if (mode == MaskMode::Blind) return;
  if (candidates.size() != f.views.size())
    throw ValidationError(fmt::format("candidate sets for {} views, features have {}", candidates.size(),
                                      f.views.size()),
                          "/candidates");
  for (std::size_t v = 0; v < candidates.size(); ++v) {
    std::set<std::size_t> seen;
    for (std::size_t idx : candidates[v]) {
      if (idx >= f.views[v].rows())
        throw ValidationError(fmt::format("candidate index {} out of range for view {} ({} tokens)", idx, v,
                                          f.views[v].rows()),
                              fmt::format("/candidates/{}", v));
      if (!seen.insert(idx).second)
        throw ValidationError(fmt::format("duplicate candidate index {} in view {}", idx, v),
                              fmt::format("/candidates/{}", v));
    }
  }
}

std::size_t masked_count(int rate, std::size_t n) {
  if (rate < 0 || rate > 100) throw ValidationError("mask rate must be in [0, 100]");
  return static_cast<std::size_t>(rate) * n / 100;
}

ViewFeatureSet apply_token_mask(const ViewFeatureSet& f, const MaskSpec& spec,
                                std::vector<std::vector<std::size_t>>& masked_rows) {
  if (spec.mode != MaskMode::Mask) throw ValidationError("apply_token_mask needs mode = mask");
  f.validate();
  spec.validate(f);
  ViewFeatureSet out = f;
  masked_rows.assign(f.views.size(), {});
  for (std::size_t v = 0; v < f.views.size(); ++v) {
    const std::size_t m = masked_count(spec.rate, spec.candidates[v].size());
    if (m == 0) continue;
    std::vector<std::size_t> order = spec.candidates[v];
    Xoshiro256 rng(derive_seed(spec.seed, "view:" + std::to_string(v)));
    rng.shuffle(std::span<std::size_t>(order));
    order.resize(m);
    for (std::size_t r : order) std::fill(out.views[v].row(r).begin(), out.views[v].row(r).end(), 0.0);
    masked_rows[v] = std::move(order);
  }
  return out;
}

ViewFeatureSet apply_token_mask(const ViewFeatureSet& f, const MaskSpec& spec) {
  std::vector<std::vector<std::size_t>> unused;
  return apply_token_mask(f, spec, unused);
}

ViewFeatureSet blind_input(const ViewFeatureSet& f, std::uint64_t seed) {
  f.validate();
  ViewFeatureSet out = f;
  Xoshiro256 rng(seed);
  for (auto& view : out.views)
    for (double& x : view.data()) x = rng.normal();
  return out;
}

std::vector<std::vector<std::size_t>> candidates_from_json(const nlohmann::json& j,
                                                           const std::vector<std::string>& view_names) {
  std::vector<std::vector<std::size_t>> out;
  auto read_list = [](const nlohmann::json& a, const std::string& path) {
    if (!a.is_array()) throw ValidationError("candidate list must be an array", path);
    std::vector<std::size_t> v;
    for (const auto& x : a) {
      if (!x.is_number_unsigned()) throw ValidationError("candidate index must be a non-negative integer", path);
      v.push_back(x.get<std::size_t>());
    }
    return v;
  };
  if (j.is_array()) {
    for (std::size_t i = 0; i < j.size(); ++i) out.push_back(read_list(j[i], "/" + std::to_string(i)));
  } else if (j.is_object()) {
    for (const auto& [key, _] : j.items()) {
      if (std::find(view_names.begin(), view_names.end(), key) == view_names.end())
        throw ValidationError("unknown view '" + key + "' in candidate file", "/" + key);
    }
    for (const auto& name : view_names) {
      auto it = j.find(name);
      out.push_back(it == j.end() ? std::vector<std::size_t>{} : read_list(*it, "/" + name));
    }
  } else {
    throw ValidationError("candidate file must be a JSON object or array");
  }
  return out;
}

namespace {

ViewFeatureSet project_all(const ViewFeatureSet& f, const MlpParams& p) {
  ViewFeatureSet out;
  out.view_names = f.view_names;
  for (const auto& v : f.views) out.views.push_back(mlp_forward(v, p));
  return out;
}

}  // namespace

std::vector<MaskRunRow> run_mask_experiment(const MaskExperimentConfig& cfg, const ViewFeatureSet& features,
                                            const std::vector<std::vector<std::size_t>>& candidates,
                                            const MaskDownstream& downstream) {
  if (!downstream) throw ValidationError("run_mask_experiment: no downstream evaluator");
  features.validate();
  std::vector<int> rates = cfg.rates;
  std::sort(rates.begin(), rates.end());
  rates.erase(std::unique(rates.begin(), rates.end()), rates.end());

  std::vector<MaskRunRow> rows;
  if (cfg.blind) rows.push_back({0, MaskMode::Blind, 0, {}, false, {}});
  for (int r : rates) {
    if (r < 0 || r > 100) throw ValidationError(fmt::format("mask rate {} outside [0, 100]", r), "/rates");
    rows.push_back({0, MaskMode::Mask, r, {}, false, {}});
  }
  for (std::size_t i = 0; i < rows.size(); ++i) rows[i].exp = static_cast<int>(i) + 1;

  // Validate candidates up front: a bad candidate file is a config error, not a row failure.
  MaskSpec probe{candidates, 0, MaskMode::Mask, cfg.seed};
  if (!rates.empty()) probe.validate(features);

  const bool post = cfg.stage == MaskStage::PostProjection;
  const ViewFeatureSet projected =
      cfg.projection && post ? project_all(features, *cfg.projection) : ViewFeatureSet{};
  const ViewFeatureSet& base = cfg.projection && post ? projected : features;

  auto run_row = [&](MaskRunRow& row) {
    try {
      ViewFeatureSet input;
      if (row.mode == MaskMode::Blind) {
        input = blind_input(base, derive_seed(cfg.seed, "blind"));
      } else {
        MaskSpec spec{candidates, row.rate, MaskMode::Mask, derive_seed(cfg.seed, fmt::format("rate:{}", row.rate))};
        input = apply_token_mask(base, spec);
      }
      if (cfg.projection && !post) input = project_all(input, *cfg.projection);
      row.metrics = downstream(input);
    } catch (const std::exception& e) {
      row.failed = true;
      row.error = e.what();
      row.metrics = {};
    }
  };

  const std::size_t workers = std::min(std::max<std::size_t>(cfg.jobs, 1), rows.size());
  if (workers <= 1) {
    for (auto& row : rows) run_row(row);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w)
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < rows.size(); i = next++) run_row(rows[i]);
      });
    for (auto& t : pool) t.join();
  }
  return rows;
}

void write_mask_csv(std::ostream& out, const std::vector<MaskRunRow>& rows) {
  out << "Exp,Mask Rate,MAE,ACC,mAP,BLEU\n";
  auto cell = [&](const MaskRunRow& r, const std::optional<double>& v) -> std::string {
    if (r.failed) return "failed";
    return v ? fmt::format("{}", *v) : std::string();
  };
  for (const auto& r : rows) {
    out << r.exp << ',' << (r.mode == MaskMode::Blind ? std::string("blind") : std::to_string(r.rate)) << ','
        << cell(r, r.metrics.mae) << ',' << cell(r, r.metrics.acc) << ',' << cell(r, r.metrics.map) << ','
        << cell(r, r.metrics.bleu) << '\n';
  }
}

MaskMetrics mean_abs_downstream(const ViewFeatureSet& f) {
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& v : f.views) {
    for (double x : v.data()) sum += std::abs(x);
    n += v.size();
  }
  const double m = n ? sum / static_cast<double>(n) : 0.0;
  return {m, m, m, m};
}

}  // namespace fk
