#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "fk/refinery.hpp"
#include "json.hpp"

namespace fk {

/// Refined record as one JSONL object:
/// {"id", "source", "images": {view: path}, "conversations": [{"from", "value"}],
///  "trajectory"?: [[x, y] x 6], "ego_status"?: {...}, "answer_class"}
nlohmann::ordered_json record_to_json(const UnifiedRecord& r);
UnifiedRecord record_from_json(const nlohmann::json& j);

nlohmann::ordered_json report_to_json(const RefineReport& r);

/// Maps a source-dataset record onto a UnifiedRecord: camera aliases such as
/// CAM_FRONT_LEFT become canonical view names, pixel-space <box> payloads
/// (when "image_size" is present) are normalized to the 0-999 grid, decimal
/// literals in text are rounded to integers, and trajectories are resampled to
/// the 0.5 s grid. Counters for normalized boxes and converted decimals are
/// added to `report`. Throws ValidationError or ParseError for records that
/// cannot be mapped.
UnifiedRecord adapt_raw_record(const nlohmann::json& raw, SourceDataset source, std::size_t short_threshold,
                               RefineReport& report);

struct RefineOutcome {
  std::vector<UnifiedRecord> records;
  RefineReport report;
  /// "line N: message" for every record rejected by an adapter.
  std::vector<std::string> errors;
};

/// Adapts every JSONL line, then filters invalid boxes. Blank lines are skipped.
RefineOutcome refine_stream(std::istream& in, SourceDataset source, std::size_t short_threshold);

}  // namespace fk
