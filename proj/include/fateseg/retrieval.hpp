#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "fateseg/encoder.hpp"
#include "fateseg/grid.hpp"
#include "fateseg/volume.hpp"

namespace fateseg {

enum class MetricKind { CS, MSE, NCC, MD, ED, PCC };
enum class MetricLevel { Image, Feature };

struct SimilarityMetric {
  MetricKind kind = MetricKind::CS;

  // MSE/NCC compare resized raw slices; CS/MD/ED/PCC compare embeddings.
  MetricLevel level() const {
    return (kind == MetricKind::MSE || kind == MetricKind::NCC) ? MetricLevel::Image
                                                                : MetricLevel::Feature;
  }
  // true when larger scores mean more similar
  bool larger_is_better() const {
    return kind == MetricKind::CS || kind == MetricKind::NCC || kind == MetricKind::PCC;
  }
  static SimilarityMetric parse(const std::string& name);
  const char* name() const;
};

// One support slice: its embedding, the resized slice the image-level metrics
// see, and one binary mask per object label at the original slice resolution.
struct SupportEntry {
  EmbeddingMap embedding;
  Grid2D resized;
  std::map<uint16_t, MaskGrid> masks;
  std::string volume_id;
  int slice_index = 0;
};

struct SupportLibrary {
  std::vector<SupportEntry> entries;
  uint64_t fingerprint = 0;  // encoder spec fingerprint; mixing encoders is rejected
  std::string encoder_spec_json;
  std::vector<uint16_t> object_labels;
  SliceAxis axis = SliceAxis::Z;
  bool l2_normalized = false;

  void validate() const;
};

struct SupportVolume {
  std::string id;
  Volume image;
  LabelVolume labels;
};

// One entry per slice per support volume, ordered by (volume id, slice index).
// With l2_normalize on, each stored embedding is scaled to unit L2 norm.
SupportLibrary build_library(const std::vector<SupportVolume>& support, const EncoderSpec& spec,
                             SliceAxis axis, bool l2_normalize = false, int threads = 1);

// Score two equal-length vectors under a metric. CS/NCC/PCC: larger is more
// similar; MSE/MD/ED: smaller is.
double similarity(SimilarityMetric metric, std::span<const float> a, std::span<const float> b);

struct RetrievalHit {
  int entry_index = 0;
  double score = 0.0;
};

// Top-j by similarity; ties broken by (volume id, slice index) ascending.
std::vector<RetrievalHit> retrieve_top_j(const SupportLibrary& lib, const EmbeddingMap& query,
                                         int j, SimilarityMetric metric);
std::vector<RetrievalHit> retrieve_top_j(const SupportLibrary& lib, const Grid2D& raw_slice,
                                         int j, SimilarityMetric metric);

// Binary persistence, bit-exact round trip.
void save_library(const SupportLibrary& lib, const std::string& path);
SupportLibrary load_library(const std::string& path);

}  // namespace fateseg
