#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "fateseg/pipeline.hpp"
#include "fateseg/volume.hpp"

namespace fateseg {

// 2|A n B| / (|A| + |B|); 1.0 when both masks are empty.
double dice(std::span<const uint8_t> a, std::span<const uint8_t> b);
double dice_label(const LabelVolume& a, const LabelVolume& b, uint16_t label);

struct DiceStats {
  double mean = 0.0;
  double stddev = 0.0;  // across volumes
  int n_volumes = 0;
};

struct DiceRow {
  std::string volume_id;
  uint16_t label = 0;
  double dice = 0.0;
};

struct DiceReport {
  std::vector<DiceRow> rows;                 // per (volume, object)
  std::map<uint16_t, DiceStats> per_object;  // across volumes
  double overall_mean = 0.0;                 // mean of per-object means

  static DiceReport from_rows(std::vector<DiceRow> rows);
};

// Deterministic shuffle split. Support size = round(fraction * N), clamped to
// [1, N-1]; the two sides are disjoint and exhaustive.
void split_support_test(const std::vector<std::string>& ids, double fraction, uint64_t seed,
                        std::vector<std::string>& support_out, std::vector<std::string>& test_out);

enum class AblationAxis { SupportSize, ExampleCount, Metric, InitialSlice, Consistency, EncoderSize };

AblationAxis parse_ablation_axis(const std::string& name);
const char* ablation_axis_name(AblationAxis axis);

struct EvalDataset {
  std::vector<std::string> ids;
  std::vector<Volume> images;
  std::vector<LabelVolume> labels;
};

struct AblationRow {
  std::string axis_value;
  DiceReport report;
};

// One full evaluate-on-test-set pass: build the library from the support
// volumes, segment every test volume, Dice every object against ground truth.
DiceReport evaluate_split(const EvalDataset& data, const std::vector<std::string>& support_ids,
                          const std::vector<std::string>& test_ids, const PipelineConfig& cfg);

// One DiceReport per grid value; everything but the axis value held fixed.
// SupportSize values are support-volume counts drawn from the front of the
// seed-shuffled order; other axes use the provided split.
std::vector<AblationRow> run_ablation(AblationAxis axis, const std::vector<std::string>& values,
                                      const PipelineConfig& base, const EvalDataset& data,
                                      double support_fraction, uint64_t split_seed);

std::string report_to_csv(const std::vector<AblationRow>& rows);
std::string report_to_json(const std::vector<AblationRow>& rows, const PipelineConfig& base,
                           const std::string& axis_label);

}  // namespace fateseg
