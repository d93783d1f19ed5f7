#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "fateseg/attention.hpp"
#include "fateseg/decoder.hpp"
#include "fateseg/encoder.hpp"
#include "fateseg/memory.hpp"
#include "fateseg/retrieval.hpp"
#include "fateseg/volume.hpp"

namespace fateseg {

enum class InitialSliceKind { First, Q1, Center, Q3, Last, Index };

struct InitialSlice {
  InitialSliceKind kind = InitialSliceKind::Center;
  int index = 0;  // for Kind::Index
};

// Every tunable in one place. to_json() echoes all defaults so a persisted
// config pins the run even if defaults change later.
struct PipelineConfig {
  int j = 3;
  SimilarityMetric metric{MetricKind::CS};
  InitialSlice initial_slice;
  bool volumetric_consistency = true;
  ZeroBlockMode zero_block_mode = ZeroBlockMode::Omit;
  SliceAxis axis = SliceAxis::Z;
  bool l2_normalize_embeddings = false;
  int volumetric_window = 1;  // extension point; only 1 is supported
  int threads = 0;            // 0 = auto

  EncoderSpec encoder;
  DecoderSpec decoder;

  AttentionInit attention_init = AttentionInit::Identity;
  double attention_identity_scale = 16.0;
  uint64_t attention_seed = 0;
  int attention_layers = 1;
  ResidualMode attention_residual = ResidualMode::Query;
  CaArgOrder attention_arg_order = CaArgOrder::MemoryKv;
  uint64_t memory_seed = 0;

  void validate() const;
  std::string to_json() const;
  static PipelineConfig from_json(const std::string& text);
  uint64_t fingerprint() const;
  AttentionWeights make_attention_weights() const;
};

// First -> 0, Last -> n-1, Center -> floor(n/2), Q1 -> floor(n/4),
// Q3 -> floor(3n/4), Index -> k (bounds-checked).
int initial_slice_index(const InitialSlice& strategy, int n);

struct RetrievalRecord {
  std::string volume_id;
  int slice_index = 0;
  double score = 0.0;
};

struct SliceTrace {
  int slice = 0;
  int order = 0;  // position in the processing schedule
  std::string direction;  // "initial" | "forward" | "backward"
  std::vector<RetrievalRecord> support;
  bool volumetric_memory = false;
  int volumetric_source = -1;
};

struct ObjectTrace {
  uint16_t label = 0;
  int initial_slice = 0;
  std::vector<SliceTrace> slices;  // indexed by slice, one entry each
};

struct ObjectResult {
  uint16_t label = 0;
  std::vector<SliceMask> slices;  // one per slice along the axis
  ObjectTrace trace;
};

struct SegmentationResult {
  LabelVolume labels;
  std::map<uint16_t, std::vector<float>> per_object_logits;  // filled when requested
  std::vector<ObjectTrace> trace;
};

// Bidirectional propagation for one object. Precomputed slice embeddings may
// be shared across objects (encoding is pure); pass empty to encode here.
ObjectResult segment_object(const Volume& test, const SupportLibrary& lib, uint16_t label,
                            const PipelineConfig& cfg,
                            const std::vector<EmbeddingMap>* shared_embeddings = nullptr,
                            const std::vector<Grid2D>* shared_resized = nullptr);

// All objects in the library, merged per voxel: positive objects compete by
// logit, background where none is positive.
SegmentationResult segment_volume(const Volume& test, const SupportLibrary& lib,
                                  const PipelineConfig& cfg, bool keep_logits = false);

// The per-voxel merge rule on its own: among objects whose binary mask is
// positive at a voxel, the one with the highest logit wins.
LabelVolume merge_objects(const std::vector<ObjectResult>& objects,
                          const std::array<int, 3>& dims, const std::array<double, 3>& spacing,
                          SliceAxis axis);

std::string trace_to_json(const std::vector<ObjectTrace>& trace, const PipelineConfig& cfg);

}  // namespace fateseg
