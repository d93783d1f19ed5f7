#include "fateseg/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include <json.hpp>

#include "fateseg/error.hpp"
#include "fateseg/parallel.hpp"
#include "fateseg/rng.hpp"

using nlohmann::json;

namespace fateseg {

// ---------------------------------------------------------------------------
// Config
// ---------------------------------------------------------------------------

void PipelineConfig::validate() const {
  if (j < 1) fail(Err::ConfigParse, "j must be >= 1");
  if (volumetric_window != 1) fail(Err::ConfigParse, "volumetric_window other than 1 is not supported");
  if (attention_layers < 1) fail(Err::ConfigParse, "attention_layers must be >= 1");
  encoder.validate();
  decoder.validate();
}

namespace {

std::string initial_slice_to_string(const InitialSlice& s) {
  switch (s.kind) {
    case InitialSliceKind::First: return "first";
    case InitialSliceKind::Q1: return "q1";
    case InitialSliceKind::Center: return "center";
    case InitialSliceKind::Q3: return "q3";
    case InitialSliceKind::Last: return "last";
    case InitialSliceKind::Index: return std::to_string(s.index);
  }
  return "center";
}

InitialSlice initial_slice_from_json(const json& j) {
  InitialSlice s;
  if (j.is_number_integer()) {
    s.kind = InitialSliceKind::Index;
    s.index = j.get<int>();
    return s;
  }
  const std::string v = j.get<std::string>();
  if (v == "first") s.kind = InitialSliceKind::First;
  else if (v == "q1") s.kind = InitialSliceKind::Q1;
  else if (v == "center") s.kind = InitialSliceKind::Center;
  else if (v == "q3") s.kind = InitialSliceKind::Q3;
  else if (v == "last") s.kind = InitialSliceKind::Last;
  else {
    // numeric string form, e.g. "12"
    try {
      s.kind = InitialSliceKind::Index;
      s.index = std::stoi(v);
    } catch (...) {
      fail(Err::ConfigParse, "unknown initial_slice '" + v + "'");
    }
  }
  return s;
}

}  // namespace

std::string PipelineConfig::to_json() const {
  json j;
  j["j"] = this->j;
  j["metric"] = metric.name();
  if (initial_slice.kind == InitialSliceKind::Index)
    j["initial_slice"] = initial_slice.index;
  else
    j["initial_slice"] = initial_slice_to_string(initial_slice);
  j["volumetric_consistency"] = volumetric_consistency;
  j["zero_block_mode"] = zero_block_mode == ZeroBlockMode::Omit ? "omit" : "materialize";
  j["axis"] = axis_name(axis);
  j["l2_normalize_embeddings"] = l2_normalize_embeddings;
  j["volumetric_window"] = volumetric_window;
  j["threads"] = threads;
  j["merge_rule"] = "max_logit";
  j["encoder_kind"] = encoder.kind == EncoderKind::PatchMean ? "patch_mean" : "toyvit";
  j["encoder_input_size"] = encoder.input_size;
  j["encoder_patch"] = encoder.patch;
  j["encoder_channels"] = encoder.channels;
  j["encoder_depth"] = encoder.depth;
  j["encoder_heads"] = encoder.heads;
  j["encoder_weight_seed"] = encoder.weight_seed;
  j["decoder_kind"] =
      decoder.kind == DecoderKind::LinearSeeded ? "linear_seeded" : "attention_label_transfer";
  j["decoder_threshold"] = decoder.threshold;
  j["decoder_seed"] = decoder.seed;
  j["decoder_patch"] = decoder.patch;
  j["attention_init"] = attention_init == AttentionInit::Identity ? "identity" : "gaussian";
  j["attention_identity_scale"] = attention_identity_scale;
  j["attention_seed"] = attention_seed;
  j["attention_layers"] = attention_layers;
  j["attention_residual"] = attention_residual == ResidualMode::Query ? "query" : "paper_literal";
  j["attention_arg_order"] =
      attention_arg_order == CaArgOrder::MemoryKv ? "memory_kv" : "paper_literal";
  j["memory_seed"] = memory_seed;
  return j.dump(2);
}

PipelineConfig PipelineConfig::from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    fail(Err::ConfigParse, std::string("config: ") + e.what());
  }
  PipelineConfig c;
  static const std::set<std::string> known = {
      "j", "metric", "initial_slice", "volumetric_consistency", "zero_block_mode", "axis",
      "l2_normalize_embeddings", "volumetric_window", "threads", "merge_rule", "encoder_kind",
      "encoder_input_size", "encoder_patch", "encoder_channels", "encoder_depth", "encoder_heads",
      "encoder_weight_seed", "decoder_kind", "decoder_threshold", "decoder_seed", "decoder_patch",
      "attention_init", "attention_identity_scale", "attention_seed", "attention_layers",
      "attention_residual", "attention_arg_order", "memory_seed"};
  try {
    for (auto it = j.begin(); it != j.end(); ++it)
      if (!known.count(it.key())) fail(Err::ConfigParse, "unknown config key '" + it.key() + "'");
    c.j = j.value("j", 3);
    c.metric = SimilarityMetric::parse(j.value("metric", "CS"));
    if (j.contains("initial_slice")) c.initial_slice = initial_slice_from_json(j["initial_slice"]);
    c.volumetric_consistency = j.value("volumetric_consistency", true);
    const std::string zbm = j.value("zero_block_mode", "omit");
    if (zbm == "omit") c.zero_block_mode = ZeroBlockMode::Omit;
    else if (zbm == "materialize") c.zero_block_mode = ZeroBlockMode::Materialize;
    else fail(Err::ConfigParse, "unknown zero_block_mode '" + zbm + "'");
    c.axis = parse_axis(j.value("axis", "z"));
    c.l2_normalize_embeddings = j.value("l2_normalize_embeddings", false);
    c.volumetric_window = j.value("volumetric_window", 1);
    c.threads = j.value("threads", 0);
    const std::string merge = j.value("merge_rule", "max_logit");
    if (merge != "max_logit") fail(Err::ConfigParse, "unknown merge_rule '" + merge + "'");
    const std::string ek = j.value("encoder_kind", "patch_mean");
    if (ek == "patch_mean") c.encoder.kind = EncoderKind::PatchMean;
    else if (ek == "toyvit") c.encoder.kind = EncoderKind::ToyViT;
    else fail(Err::ConfigParse, "unknown encoder_kind '" + ek + "'");
    c.encoder.input_size = j.value("encoder_input_size", 64);
    c.encoder.patch = j.value("encoder_patch", 8);
    c.encoder.channels = j.value("encoder_channels", 32);
    c.encoder.depth = j.value("encoder_depth", 2);
    c.encoder.heads = j.value("encoder_heads", 4);
    c.encoder.weight_seed = j.value("encoder_weight_seed", uint64_t(0));
    const std::string dk = j.value("decoder_kind", "attention_label_transfer");
    if (dk == "linear_seeded") c.decoder.kind = DecoderKind::LinearSeeded;
    else if (dk == "attention_label_transfer") c.decoder.kind = DecoderKind::AttentionLabelTransfer;
    else fail(Err::ConfigParse, "unknown decoder_kind '" + dk + "'");
    c.decoder.threshold = j.value("decoder_threshold", 0.0);
    c.decoder.seed = j.value("decoder_seed", uint64_t(0));
    c.decoder.patch = j.value("decoder_patch", 8);
    const std::string ai = j.value("attention_init", "identity");
    if (ai == "identity") c.attention_init = AttentionInit::Identity;
    else if (ai == "gaussian") c.attention_init = AttentionInit::Gaussian;
    else fail(Err::ConfigParse, "unknown attention_init '" + ai + "'");
    c.attention_identity_scale = j.value("attention_identity_scale", 16.0);
    c.attention_seed = j.value("attention_seed", uint64_t(0));
    c.attention_layers = j.value("attention_layers", 1);
    const std::string rm = j.value("attention_residual", "query");
    if (rm == "query") c.attention_residual = ResidualMode::Query;
    else if (rm == "paper_literal") c.attention_residual = ResidualMode::PaperLiteral;
    else fail(Err::ConfigParse, "unknown attention_residual '" + rm + "'");
    const std::string ao = j.value("attention_arg_order", "memory_kv");
    if (ao == "memory_kv") c.attention_arg_order = CaArgOrder::MemoryKv;
    else if (ao == "paper_literal") c.attention_arg_order = CaArgOrder::PaperLiteral;
    else fail(Err::ConfigParse, "unknown attention_arg_order '" + ao + "'");
    c.memory_seed = j.value("memory_seed", uint64_t(0));
  } catch (const json::exception& e) {
    fail(Err::ConfigParse, std::string("config: ") + e.what());
  }
  c.validate();
  return c;
}

uint64_t PipelineConfig::fingerprint() const {
  // threads is an execution parameter: results are identical for any count,
  // so it must not alter the fingerprint
  json j = json::parse(to_json());
  j.erase("threads");
  return fnv1a64(j.dump());
}

AttentionWeights PipelineConfig::make_attention_weights() const {
  if (attention_init == AttentionInit::Identity)
    return AttentionWeights::identity(encoder.channels, attention_layers, attention_identity_scale);
  return AttentionWeights::gaussian(encoder.channels, attention_seed, attention_layers);
}

int initial_slice_index(const InitialSlice& strategy, int n) {
  if (n < 1) fail(Err::IndexOutOfRange, "empty volume");
  switch (strategy.kind) {
    case InitialSliceKind::First: return 0;
    case InitialSliceKind::Q1: return n / 4;
    case InitialSliceKind::Center: return n / 2;
    case InitialSliceKind::Q3: return (3 * n) / 4;
    case InitialSliceKind::Last: return n - 1;
    case InitialSliceKind::Index:
      if (strategy.index < 0 || strategy.index >= n)
        fail(Err::IndexOutOfRange, "initial slice " + std::to_string(strategy.index) +
                                       " outside [0, " + std::to_string(n) + ")");
      return strategy.index;
  }
  return n / 2;
}

// ---------------------------------------------------------------------------
// Segmentation
// ---------------------------------------------------------------------------

namespace {

struct SliceJobResult {
  SliceMask mask;
  SliceTrace trace;
};

// Everything fixed across one object's slices.
struct ObjectContext {
  const Volume& test;
  const SupportLibrary& lib;
  uint16_t label;
  const PipelineConfig& cfg;
  const std::vector<EmbeddingMap>& embeddings;
  const std::vector<Grid2D>& resized;
  const MemoryEncoder& mem_enc;
  const AttentionWeights& weights;
  int plane_h, plane_w;
};

SliceJobResult process_slice(const ObjectContext& ctx, int i,
                             const std::optional<MemoryEmbedding>& volumetric) {
  SliceJobResult res;
  res.trace.slice = i;

  std::vector<RetrievalHit> hits;
  if (ctx.cfg.metric.level() == MetricLevel::Feature) {
    EmbeddingMap query = ctx.embeddings[i];
    if (ctx.lib.l2_normalized) {
      double n2 = 0.0;
      for (float x : query.tokens) n2 += double(x) * x;
      n2 = std::sqrt(n2);
      if (n2 > 0.0)
        for (float& x : query.tokens) x = static_cast<float>(x / n2);
    }
    hits = retrieve_top_j(ctx.lib, query, ctx.cfg.j, ctx.cfg.metric);
  } else {
    hits = retrieve_top_j(ctx.lib, ctx.resized[i], ctx.cfg.j, ctx.cfg.metric);
  }

  std::vector<MemoryEmbedding> anatomical;
  anatomical.reserve(hits.size());
  for (const auto& h : hits) {
    const SupportEntry& e = ctx.lib.entries[h.entry_index];
    anatomical.push_back(
        ctx.mem_enc.encode(e.masks.at(ctx.label), e.embedding, MemoryKind::Anatomical));
    res.trace.support.push_back({e.volume_id, e.slice_index, h.score});
  }

  UnifiedMemory um = fuse_memories(std::move(anatomical),
                                   volumetric ? std::optional<MemoryEmbedding>(*volumetric)
                                              : std::nullopt,
                                   ctx.cfg.zero_block_mode);
  MemoryAttentionOptions opts;
  opts.residual = ctx.cfg.attention_residual;
  opts.arg_order = ctx.cfg.attention_arg_order;
  AttentionOutput ao = memory_attention(um, ctx.embeddings[i], ctx.weights, opts);
  res.mask = decode(ctx.cfg.decoder, ao, um, ctx.plane_h, ctx.plane_w);
  res.trace.volumetric_memory = volumetric.has_value();
  return res;
}

void plane_dims(const Volume& v, SliceAxis axis, int& h, int& w) {
  switch (axis) {
    case SliceAxis::Z: h = v.dims[1]; w = v.dims[0]; break;
    case SliceAxis::Y: h = v.dims[2]; w = v.dims[0]; break;
    case SliceAxis::X: h = v.dims[2]; w = v.dims[1]; break;
  }
}

std::vector<EmbeddingMap> encode_all_slices(const Volume& test, const PipelineConfig& cfg,
                                            std::vector<Grid2D>& resized_out) {
  const int n = test.extent(cfg.axis);
  Encoder enc(cfg.encoder);
  std::vector<EmbeddingMap> embeddings(n);
  resized_out.resize(n);
  parallel_for(n, cfg.threads, [&](int i) {
    Grid2D plane = extract_slice(test, cfg.axis, i);
    embeddings[i] = enc.encode(plane);
    embeddings[i].source_volume = "test";
    embeddings[i].source_slice = i;
    resized_out[i] = resize_slice(plane, cfg.encoder.input_size);
  });
  return embeddings;
}

ObjectResult segment_object_impl(const ObjectContext& ctx) {
  const int n = ctx.test.extent(ctx.cfg.axis);
  const int i0 = initial_slice_index(ctx.cfg.initial_slice, n);

  ObjectResult out;
  out.label = ctx.label;
  out.slices.resize(n);
  out.trace.label = ctx.label;
  out.trace.initial_slice = i0;
  out.trace.slices.resize(n);

  auto run_one = [&](int i, const std::optional<MemoryEmbedding>& vol, const char* dir,
                     int vol_src) {
    SliceJobResult r = process_slice(ctx, i, vol);
    r.trace.direction = dir;
    r.trace.volumetric_source = vol_src;
    out.slices[i] = std::move(r.mask);
    out.trace.slices[i] = std::move(r.trace);
  };

  if (!ctx.cfg.volumetric_consistency) {
    // no cross-slice dependency: any order, any parallelism
    parallel_for(n, ctx.cfg.threads, [&](int i) {
      run_one(i, std::nullopt, i == i0 ? "initial" : (i > i0 ? "forward" : "backward"), -1);
    });
  } else {
    run_one(i0, std::nullopt, "initial", -1);
    // forward sweep: each slice sees its predecessor's prediction
    std::optional<MemoryEmbedding> prev;
    for (int i = i0 + 1; i < n; ++i) {
      prev = ctx.mem_enc.encode(out.slices[i - 1].binary, ctx.embeddings[i - 1],
                                MemoryKind::Volumetric);
      run_one(i, prev, "forward", i - 1);
    }
    // backward sweep: seeded by the initial slice as well
    for (int i = i0 - 1; i >= 0; --i) {
      prev = ctx.mem_enc.encode(out.slices[i + 1].binary, ctx.embeddings[i + 1],
                                MemoryKind::Volumetric);
      run_one(i, prev, "backward", i + 1);
    }
  }

  // schedule order: initial, forward sweep, backward sweep
  out.trace.slices[i0].order = 0;
  int ord = 1;
  for (int i = i0 + 1; i < n; ++i) out.trace.slices[i].order = ord++;
  for (int i = i0 - 1; i >= 0; --i) out.trace.slices[i].order = ord++;
  return out;
}

}  // namespace

ObjectResult segment_object(const Volume& test, const SupportLibrary& lib, uint16_t label,
                            const PipelineConfig& cfg,
                            const std::vector<EmbeddingMap>* shared_embeddings,
                            const std::vector<Grid2D>* shared_resized) {
  cfg.validate();
  test.validate();
  if (std::find(lib.object_labels.begin(), lib.object_labels.end(), label) ==
      lib.object_labels.end())
    fail(Err::LabelUnknown, "label " + std::to_string(label) + " not in library");
  if (lib.fingerprint != cfg.encoder.fingerprint())
    fail(Err::FingerprintMismatch, "library was built with a different encoder spec");

  std::vector<EmbeddingMap> local_emb;
  std::vector<Grid2D> local_rs;
  if (!shared_embeddings) {
    local_emb = encode_all_slices(test, cfg, local_rs);
    shared_embeddings = &local_emb;
    shared_resized = &local_rs;
  }

  MemoryEncoder mem_enc(cfg.encoder.channels, cfg.memory_seed);
  AttentionWeights weights = cfg.make_attention_weights();
  int ph = 0, pw = 0;
  plane_dims(test, cfg.axis, ph, pw);
  ObjectContext ctx{test, lib, label, cfg, *shared_embeddings, *shared_resized,
                    mem_enc, weights, ph, pw};
  return segment_object_impl(ctx);
}

SegmentationResult segment_volume(const Volume& test, const SupportLibrary& lib,
                                  const PipelineConfig& cfg, bool keep_logits) {
  cfg.validate();
  test.validate();
  if (lib.entries.empty()) fail(Err::EmptyLibrary, "empty support library");
  if (lib.fingerprint != cfg.encoder.fingerprint())
    fail(Err::FingerprintMismatch, "library was built with a different encoder spec");

  // test-slice embeddings computed once, shared across every object run
  std::vector<Grid2D> resized;
  std::vector<EmbeddingMap> embeddings = encode_all_slices(test, cfg, resized);

  MemoryEncoder mem_enc(cfg.encoder.channels, cfg.memory_seed);
  AttentionWeights weights = cfg.make_attention_weights();
  int ph = 0, pw = 0;
  plane_dims(test, cfg.axis, ph, pw);

  const auto& labels = lib.object_labels;
  std::vector<ObjectResult> per_object(labels.size());
  if (cfg.volumetric_consistency) {
    // sweeps are sequential inside an object; parallelize across objects
    parallel_for(int(labels.size()), cfg.threads, [&](int oi) {
      ObjectContext ctx{test, lib, labels[oi], cfg, embeddings, resized, mem_enc, weights, ph, pw};
      per_object[oi] = segment_object_impl(ctx);
    });
  } else {
    // every (object, slice) job is independent
    const int n = test.extent(cfg.axis);
    for (size_t oi = 0; oi < labels.size(); ++oi) {
      auto& r = per_object[oi];
      r.label = labels[oi];
      r.slices.resize(n);
      r.trace.label = labels[oi];
      r.trace.initial_slice = initial_slice_index(cfg.initial_slice, n);
      r.trace.slices.resize(n);
    }
    parallel_for(int(labels.size()) * test.extent(cfg.axis), cfg.threads, [&](int job) {
      const int oi = job / test.extent(cfg.axis);
      const int i = job % test.extent(cfg.axis);
      ObjectContext ctx{test, lib, labels[oi], cfg, embeddings, resized, mem_enc, weights, ph, pw};
      SliceJobResult jr = process_slice(ctx, i, std::nullopt);
      const int i0 = per_object[oi].trace.initial_slice;
      jr.trace.direction = i == i0 ? "initial" : (i > i0 ? "forward" : "backward");
      jr.trace.volumetric_source = -1;
      per_object[oi].slices[i] = std::move(jr.mask);
      per_object[oi].trace.slices[i] = std::move(jr.trace);
    });
    for (auto& r : per_object) {
      const int n2 = int(r.slices.size());
      const int i0 = r.trace.initial_slice;
      r.trace.slices[i0].order = 0;
      int ord = 1;
      for (int i = i0 + 1; i < n2; ++i) r.trace.slices[i].order = ord++;
      for (int i = i0 - 1; i >= 0; --i) r.trace.slices[i].order = ord++;
    }
  }

  SegmentationResult result;
  result.labels = merge_objects(per_object, test.dims, test.spacing, cfg.axis);

  const int n = test.extent(cfg.axis);
  if (keep_logits) {
    for (const auto& obj : per_object) {
      std::vector<float>& vol = result.per_object_logits[obj.label];
      vol.assign(test.voxels(), 0.0f);
      for (int i = 0; i < n; ++i)
        for (int r = 0; r < ph; ++r)
          for (int c = 0; c < pw; ++c) {
            int x = 0, y = 0, z = 0;
            switch (cfg.axis) {
              case SliceAxis::Z: x = c; y = r; z = i; break;
              case SliceAxis::Y: x = c; y = i; z = r; break;
              case SliceAxis::X: x = i; y = c; z = r; break;
            }
            vol[result.labels.index(x, y, z)] = obj.slices[i].logits.at(r, c);
          }
    }
  }

  for (auto& obj : per_object) result.trace.push_back(std::move(obj.trace));
  return result;
}

LabelVolume merge_objects(const std::vector<ObjectResult>& objects,
                          const std::array<int, 3>& dims, const std::array<double, 3>& spacing,
                          SliceAxis axis) {
  LabelVolume out;
  out.dims = dims;
  out.spacing = spacing;
  out.labels.assign(size_t(dims[0]) * dims[1] * dims[2], 0);
  const int n = dims[static_cast<int>(axis)];
  int ph = 0, pw = 0;
  switch (axis) {
    case SliceAxis::Z: ph = dims[1]; pw = dims[0]; break;
    case SliceAxis::Y: ph = dims[2]; pw = dims[0]; break;
    case SliceAxis::X: ph = dims[2]; pw = dims[1]; break;
  }
  for (int i = 0; i < n; ++i)
    for (int r = 0; r < ph; ++r)
      for (int c = 0; c < pw; ++c) {
        float best = 0.0f;
        uint16_t win = 0;
        for (const auto& obj : objects) {
          const SliceMask& sm = obj.slices[i];
          if (!sm.binary.at(r, c)) continue;
          const float lg = sm.logits.at(r, c);
          if (win == 0 || lg > best) {
            best = lg;
            win = obj.label;
          }
        }
        if (win == 0) continue;
        int x = 0, y = 0, z = 0;
        switch (axis) {
          case SliceAxis::Z: x = c; y = r; z = i; break;
          case SliceAxis::Y: x = c; y = i; z = r; break;
          case SliceAxis::X: x = i; y = c; z = r; break;
        }
        out.at(x, y, z) = win;
      }
  return out;
}

std::string trace_to_json(const std::vector<ObjectTrace>& trace, const PipelineConfig& cfg) {
  json j;
  j["axis"] = axis_name(cfg.axis);
  j["config_fingerprint"] = cfg.fingerprint();
  json objs = json::array();
  for (const auto& ot : trace) {
    json jo;
    jo["label"] = ot.label;
    jo["initial_slice"] = ot.initial_slice;
    json slices = json::array();
    for (const auto& st : ot.slices) {
      json js;
      js["slice"] = st.slice;
      js["order"] = st.order;
      js["direction"] = st.direction;
      js["volumetric_memory"] = st.volumetric_memory;
      js["volumetric_source"] = st.volumetric_source;
      json sup = json::array();
      for (const auto& rr : st.support) {
        json jr;
        jr["volume"] = rr.volume_id;
        jr["slice"] = rr.slice_index;
        jr["score"] = rr.score;
        sup.push_back(jr);
      }
      js["support"] = sup;
      slices.push_back(js);
    }
    jo["slices"] = slices;
    objs.push_back(jo);
  }
  j["objects"] = objs;
  return j.dump(2);
}

}  // namespace fateseg
