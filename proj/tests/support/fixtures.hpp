#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <span>
#include <utility>
#include <vector>

#include "fk/driving_eval.hpp"
#include "fk/refinery.hpp"
#include "oracles.hpp"

#include "fk/matrix.hpp"
#include "fk/rng.hpp"

namespace fixture {

inline fk::Matrix uniform(std::size_t rows, std::size_t cols, fk::Xoshiro256& rng, double lo = -1.0, double hi = 1.0) {
  fk::Matrix m(rows, cols);
  for (double& x : m.data()) x = lo + (hi - lo) * rng.uniform01();
  return m;
}

inline std::string data_path(const std::string& rel) { return std::string(FK_TEST_DATA_DIR) + "/" + rel; }

inline std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Fresh scratch directory under the system temp dir.
inline std::filesystem::path scratch(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("fk_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline fk::NormalizedBox random_box(fk::Xoshiro256& r, int span = 40) {
  const int x1 = static_cast<int>(r.below(static_cast<std::uint64_t>(span)));
  const int y1 = static_cast<int>(r.below(static_cast<std::uint64_t>(span)));
  const int x2 = x1 + static_cast<int>(r.below(static_cast<std::uint64_t>(span)));
  const int y2 = y1 + static_cast<int>(r.below(static_cast<std::uint64_t>(span)));
  return {x1, y1, x2, y2};
}

/// Random canonical tag string: plain runs and tags in canonical spelling, no stray '<'.
inline std::string canonical_tags(fk::Xoshiro256& r) {
  static const char* words[] = {"the", "car", "is", "at", "left", "of", "ego", "3", "lane", ","};
  std::string s;
  const std::size_t parts = 1 + r.below(6);
  for (std::size_t i = 0; i < parts; ++i) {
    switch (r.below(4)) {
      case 0: {
        for (std::size_t k = 0, n = 1 + r.below(4); k < n; ++k) s += std::string(" ") + words[r.below(10)];
        s += " ";
        break;
      }
      case 1: s += "<ref>" + std::string(words[r.below(9)]) + " one</ref>"; break;
      case 2: {
        const auto c = [&]() { return std::to_string(r.below(1000)); };
        s += "<box>(" + c() + "," + c() + "),(" + c() + "," + c() + ")</box>";
        break;
      }
      default: s += "<|camera_" + std::string(fk::kCameraNames[r.below(6)]) + "|>"; break;
    }
  }
  return s;
}

/// Single-class grounding instance with at most 4 GT and 5 detections over one or two images.
struct MatchInstance {
  std::vector<fk::ImageDetections> preds;
  std::vector<fk::ImageGroundTruth> gts;
  std::vector<oracle::RankedDet> ranked;  // detections by descending score
  std::vector<std::vector<fk::NormalizedBox>> gt_boxes;
};

inline MatchInstance match_instance(fk::Xoshiro256& r) {
  MatchInstance in;
  const std::size_t images = 1 + r.below(2);
  const std::size_t total_gt = r.below(5), total_det = r.below(6);
  in.gt_boxes.resize(images);
  for (std::size_t i = 0; i < images; ++i) {
    in.preds.push_back({"img" + std::to_string(i), {}});
    in.gts.push_back({"img" + std::to_string(i), {}});
  }
  for (std::size_t g = 0; g < total_gt; ++g) {
    const std::size_t im = r.below(images);
    const auto b = random_box(r, 12);
    in.gts[im].boxes.push_back({b, "car"});
    in.gt_boxes[im].push_back(b);
  }
  // Distinct scores so rank order is unambiguous.
  std::vector<std::size_t> rank(total_det);
  for (std::size_t d = 0; d < total_det; ++d) rank[d] = d;
  r.shuffle(std::span<std::size_t>(rank));
  std::vector<oracle::RankedDet> by_rank(total_det, {0, {0, 0, 0, 0}, 0.0});
  for (std::size_t d = 0; d < total_det; ++d) {
    const std::size_t im = r.below(images);
    const double score = 1.0 - 0.1 * static_cast<double>(rank[d]);
    const auto box = random_box(r, 12);
    in.preds[im].detections.push_back({box, score, "car"});
    by_rank[rank[d]] = {im, box, score};
  }
  in.ranked = by_rank;
  return in;
}

/// Ten samples: exist right on six GT-exist-true ones, level right on three of those six.
inline std::pair<std::vector<fk::OraSample>, std::vector<fk::OraSample>> ora_counting() {
  std::vector<fk::OraSample> preds, gts;
  for (int i = 0; i < 10; ++i) {
    fk::OraSample g;
    g.id = "s" + std::to_string(i);
    g.exist = i < 8;
    if (g.exist) {
      g.level = fk::RiskLevel::High;
      g.category = fk::RiskCategory::CollisionPossibility;
      g.object = "the car ahead";
    }
    fk::OraSample p = g;
    if (i < 6) {
      p.level = i < 3 ? fk::RiskLevel::High : fk::RiskLevel::Low;
    } else {
      p.exist = !g.exist;
      p.level.reset();
      p.category.reset();
      p.object.reset();
      if (p.exist) p.level = fk::RiskLevel::Medium;
    }
    preds.push_back(p);
    gts.push_back(g);
  }
  return {preds, gts};
}

/// Every prediction gets exist wrong, so the gate admits nothing.
inline std::pair<std::vector<fk::OraSample>, std::vector<fk::OraSample>> ora_degenerate() {
  std::vector<fk::OraSample> preds, gts;
  for (int i = 0; i < 4; ++i) {
    fk::OraSample g;
    g.id = "d" + std::to_string(i);
    g.exist = i % 2 == 0;
    if (g.exist) g.level = fk::RiskLevel::Low;
    fk::OraSample p;
    p.id = g.id;
    p.exist = !g.exist;
    if (p.exist) p.level = fk::RiskLevel::Low;
    preds.push_back(p);
    gts.push_back(g);
  }
  return {preds, gts};
}

}  // namespace fixture
