#include "fateseg/retrieval.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <set>

#include "fateseg/error.hpp"
#include "fateseg/parallel.hpp"
#include "fateseg/rng.hpp"

namespace fateseg {

SimilarityMetric SimilarityMetric::parse(const std::string& name) {
  SimilarityMetric m;
  if (name == "CS" || name == "cs") m.kind = MetricKind::CS;
  else if (name == "MSE" || name == "mse") m.kind = MetricKind::MSE;
  else if (name == "NCC" || name == "ncc") m.kind = MetricKind::NCC;
  else if (name == "MD" || name == "md") m.kind = MetricKind::MD;
  else if (name == "ED" || name == "ed") m.kind = MetricKind::ED;
  else if (name == "PCC" || name == "pcc") m.kind = MetricKind::PCC;
  else fail(Err::InvalidAxisValue, "unknown similarity metric '" + name + "'");
  return m;
}

const char* SimilarityMetric::name() const {
  switch (kind) {
    case MetricKind::CS: return "CS";
    case MetricKind::MSE: return "MSE";
    case MetricKind::NCC: return "NCC";
    case MetricKind::MD: return "MD";
    case MetricKind::ED: return "ED";
    case MetricKind::PCC: return "PCC";
  }
  return "?";
}

void SupportLibrary::validate() const {
  if (entries.empty()) fail(Err::EmptyLibrary, "library has no entries");
  const auto& e0 = entries.front().embedding;
  for (const auto& e : entries) {
    if (e.embedding.gh != e0.gh || e.embedding.gw != e0.gw || e.embedding.d != e0.d)
      fail(Err::HeterogeneousShapes, "entries disagree on embedding shape");
    for (uint16_t l : object_labels)
      if (!e.masks.count(l))
        fail(Err::ShapeMismatch, "entry missing mask for label " + std::to_string(l));
  }
}

namespace {

double dot(std::span<const float> a, std::span<const float> b) {
  double acc = 0.0;
  for (size_t i = 0; i < a.size(); ++i) acc += double(a[i]) * b[i];
  return acc;
}

double norm2(std::span<const float> a) { return std::sqrt(dot(a, a)); }

double pearson(std::span<const float> a, std::span<const float> b) {
  const size_t n = a.size();
  double ma = 0.0, mb = 0.0;
  for (size_t i = 0; i < n; ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= double(n);
  mb /= double(n);
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (size_t i = 0; i < n; ++i) {
    const double da = a[i] - ma, db = b[i] - mb;
    sab += da * db;
    saa += da * da;
    sbb += db * db;
  }
  if (saa == 0.0 || sbb == 0.0)
    fail(Err::ZeroVector, "zero-variance input to correlation");
  return sab / std::sqrt(saa * sbb);
}

}  // namespace

double similarity(SimilarityMetric metric, std::span<const float> a, std::span<const float> b) {
  if (a.size() != b.size())
    fail(Err::LengthMismatch, std::to_string(a.size()) + " vs " + std::to_string(b.size()));
  if (a.empty()) fail(Err::LengthMismatch, "empty vectors");
  switch (metric.kind) {
    case MetricKind::CS: {
      const double na = norm2(a), nb = norm2(b);
      if (na == 0.0 || nb == 0.0) fail(Err::ZeroVector, "cosine similarity of zero vector");
      return dot(a, b) / (na * nb);
    }
    case MetricKind::MSE: {
      double acc = 0.0;
      for (size_t i = 0; i < a.size(); ++i) {
        const double d = double(a[i]) - b[i];
        acc += d * d;
      }
      return acc / double(a.size());
    }
    case MetricKind::NCC:
    case MetricKind::PCC:
      return pearson(a, b);
    case MetricKind::MD: {
      double acc = 0.0;
      for (size_t i = 0; i < a.size(); ++i) acc += std::abs(double(a[i]) - b[i]);
      return acc;
    }
    case MetricKind::ED: {
      double acc = 0.0;
      for (size_t i = 0; i < a.size(); ++i) {
        const double d = double(a[i]) - b[i];
        acc += d * d;
      }
      return std::sqrt(acc);
    }
  }
  fail(Err::InvalidAxisValue, "unreachable metric kind");
}

SupportLibrary build_library(const std::vector<SupportVolume>& support, const EncoderSpec& spec,
                             SliceAxis axis, bool l2_normalize, int threads) {
  if (support.empty()) fail(Err::EmptySupportSet, "no support volumes");
  for (const auto& sv : support) {
    if (sv.image.dims != sv.labels.dims)
      fail(Err::GeometryMismatch, sv.id + ": image and label dims differ");
    sv.image.validate();
    sv.labels.validate();
  }

  // deterministic ordering by (volume id, slice index)
  std::vector<int> order(support.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = int(i);
  std::sort(order.begin(), order.end(),
            [&](int a, int b) { return support[a].id < support[b].id; });

  std::set<uint16_t> all_labels;
  for (const auto& sv : support)
    for (uint16_t l : sv.labels.label_set()) all_labels.insert(l);

  SupportLibrary lib;
  lib.fingerprint = spec.fingerprint();
  lib.encoder_spec_json = spec.to_json();
  lib.object_labels.assign(all_labels.begin(), all_labels.end());
  lib.axis = axis;
  lib.l2_normalized = l2_normalize;

  struct Job {
    int vol;
    int slice;
  };
  std::vector<Job> jobs;
  for (int oi : order) {
    const int n = support[oi].image.extent(axis);
    for (int i = 0; i < n; ++i) jobs.push_back({oi, i});
  }
  lib.entries.resize(jobs.size());

  Encoder enc(spec);
  parallel_for(int(jobs.size()), threads, [&](int ji) {
    const auto& [vol, slice] = jobs[ji];
    const auto& sv = support[vol];
    SupportEntry e;
    Grid2D plane = extract_slice(sv.image, axis, slice);
    e.embedding = enc.encode(plane);
    e.embedding.source_volume = sv.id;
    e.embedding.source_slice = slice;
    e.resized = resize_slice(plane, spec.input_size);
    for (uint16_t l : lib.object_labels) e.masks[l] = extract_label_slice(sv.labels, axis, slice, l);
    e.volume_id = sv.id;
    e.slice_index = slice;
    if (l2_normalize) {
      const double n2 = norm2(e.embedding.tokens);
      if (n2 > 0.0)
        for (float& x : e.embedding.tokens) x = static_cast<float>(x / n2);
    }
    lib.entries[ji] = std::move(e);
  });

  lib.validate();
  return lib;
}

namespace {

std::vector<RetrievalHit> rank_entries(const SupportLibrary& lib, int j, SimilarityMetric metric,
                                       const std::vector<double>& scores) {
  std::vector<int> idx(lib.entries.size());
  for (size_t i = 0; i < idx.size(); ++i) idx[i] = int(i);
  const bool more = metric.larger_is_better();
  std::sort(idx.begin(), idx.end(), [&](int a, int b) {
    if (scores[a] != scores[b]) return more ? scores[a] > scores[b] : scores[a] < scores[b];
    const auto& ea = lib.entries[a];
    const auto& eb = lib.entries[b];
    if (ea.volume_id != eb.volume_id) return ea.volume_id < eb.volume_id;
    return ea.slice_index < eb.slice_index;
  });
  std::vector<RetrievalHit> hits;
  hits.reserve(j);
  for (int i = 0; i < j; ++i) hits.push_back({idx[i], scores[idx[i]]});
  return hits;
}

void check_j(const SupportLibrary& lib, int j) {
  if (lib.entries.empty()) fail(Err::EmptyLibrary, "retrieval from empty library");
  if (j < 1 || size_t(j) > lib.entries.size())
    fail(Err::JTooLarge, "j=" + std::to_string(j) + " with " +
                             std::to_string(lib.entries.size()) + " entries");
}

}  // namespace

std::vector<RetrievalHit> retrieve_top_j(const SupportLibrary& lib, const EmbeddingMap& query,
                                         int j, SimilarityMetric metric) {
  check_j(lib, j);
  if (metric.level() != MetricLevel::Feature)
    fail(Err::InvalidAxisValue, "image-level metric requires a raw slice query");
  const auto& e0 = lib.entries.front().embedding;
  if (query.gh != e0.gh || query.gw != e0.gw || query.d != e0.d)
    fail(Err::FingerprintMismatch, "query embedding shape does not match library");
  std::vector<double> scores(lib.entries.size());
  for (size_t i = 0; i < lib.entries.size(); ++i)
    scores[i] = similarity(metric, query.tokens, lib.entries[i].embedding.tokens);
  return rank_entries(lib, j, metric, scores);
}

std::vector<RetrievalHit> retrieve_top_j(const SupportLibrary& lib, const Grid2D& raw_slice,
                                         int j, SimilarityMetric metric) {
  check_j(lib, j);
  if (metric.level() != MetricLevel::Image)
    fail(Err::InvalidAxisValue, "feature-level metric requires an embedding query");
  const int S = lib.entries.front().resized.h;
  Grid2D rs = resize_slice(raw_slice, S);
  std::vector<double> scores(lib.entries.size());
  for (size_t i = 0; i < lib.entries.size(); ++i)
    scores[i] = similarity(metric, rs.v, lib.entries[i].resized.v);
  return rank_entries(lib, j, metric, scores);
}

// ---------------------------------------------------------------------------
// Persistence: "FSLB" magic, version, spec JSON, then packed entries.
// All integers little-endian.
// ---------------------------------------------------------------------------

static_assert(std::endian::native == std::endian::little,
              "library files are little-endian; byte-swapping is not implemented");

namespace {

template <typename T>
void put(std::ofstream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

void put_str(std::ofstream& out, const std::string& s) {
  put<uint32_t>(out, uint32_t(s.size()));
  out.write(s.data(), std::streamsize(s.size()));
}

template <typename T>
T get(std::ifstream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) fail(Err::IoFailure, "truncated library file");
  return v;
}

std::string get_str(std::ifstream& in) {
  uint32_t n = get<uint32_t>(in);
  std::string s(n, '\0');
  in.read(s.data(), n);
  if (!in) fail(Err::IoFailure, "truncated library file");
  return s;
}

}  // namespace

void save_library(const SupportLibrary& lib, const std::string& path) {
  lib.validate();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(Err::IoFailure, "cannot open " + path);
  out.write("FSLB", 4);
  put<uint32_t>(out, 1);  // version
  put_str(out, lib.encoder_spec_json);
  put<uint64_t>(out, lib.fingerprint);
  put<uint8_t>(out, uint8_t(lib.axis));
  put<uint8_t>(out, lib.l2_normalized ? 1 : 0);
  put<uint32_t>(out, uint32_t(lib.object_labels.size()));
  for (uint16_t l : lib.object_labels) put<uint16_t>(out, l);
  put<uint32_t>(out, uint32_t(lib.entries.size()));
  const auto& e0 = lib.entries.front();
  put<uint32_t>(out, uint32_t(e0.embedding.gh));
  put<uint32_t>(out, uint32_t(e0.embedding.gw));
  put<uint32_t>(out, uint32_t(e0.embedding.d));
  put<uint32_t>(out, uint32_t(e0.resized.h));
  for (const auto& e : lib.entries) {
    put_str(out, e.volume_id);
    put<uint32_t>(out, uint32_t(e.slice_index));
    put<uint32_t>(out, uint32_t(e.embedding.src_h));
    put<uint32_t>(out, uint32_t(e.embedding.src_w));
    out.write(reinterpret_cast<const char*>(e.embedding.tokens.data()),
              std::streamsize(e.embedding.tokens.size() * 4));
    out.write(reinterpret_cast<const char*>(e.resized.v.data()),
              std::streamsize(e.resized.v.size() * 4));
    for (uint16_t l : lib.object_labels) {
      const MaskGrid& m = e.masks.at(l);
      put<uint32_t>(out, uint32_t(m.h));
      put<uint32_t>(out, uint32_t(m.w));
      std::vector<uint8_t> packed((m.v.size() + 7) / 8, 0);
      for (size_t i = 0; i < m.v.size(); ++i)
        if (m.v[i]) packed[i / 8] |= uint8_t(1u << (i % 8));
      out.write(reinterpret_cast<const char*>(packed.data()), std::streamsize(packed.size()));
    }
  }
  if (!out) fail(Err::IoFailure, "short write to " + path);
}

SupportLibrary load_library(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(Err::MissingFile, path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, "FSLB", 4) != 0) fail(Err::HeaderParse, path + ": bad magic");
  const uint32_t version = get<uint32_t>(in);
  if (version != 1) fail(Err::HeaderParse, "unsupported library version");
  SupportLibrary lib;
  lib.encoder_spec_json = get_str(in);
  lib.fingerprint = get<uint64_t>(in);
  lib.axis = SliceAxis(get<uint8_t>(in));
  lib.l2_normalized = get<uint8_t>(in) != 0;
  const uint32_t nlabels = get<uint32_t>(in);
  for (uint32_t i = 0; i < nlabels; ++i) lib.object_labels.push_back(get<uint16_t>(in));
  const uint32_t nentries = get<uint32_t>(in);
  const uint32_t gh = get<uint32_t>(in);
  const uint32_t gw = get<uint32_t>(in);
  const uint32_t d = get<uint32_t>(in);
  const uint32_t S = get<uint32_t>(in);
  lib.entries.resize(nentries);
  for (uint32_t ei = 0; ei < nentries; ++ei) {
    SupportEntry& e = lib.entries[ei];
    e.volume_id = get_str(in);
    e.slice_index = int(get<uint32_t>(in));
    e.embedding.gh = int(gh);
    e.embedding.gw = int(gw);
    e.embedding.d = int(d);
    e.embedding.src_h = int(get<uint32_t>(in));
    e.embedding.src_w = int(get<uint32_t>(in));
    e.embedding.source_volume = e.volume_id;
    e.embedding.source_slice = e.slice_index;
    e.embedding.tokens.resize(size_t(gh) * gw * d);
    in.read(reinterpret_cast<char*>(e.embedding.tokens.data()),
            std::streamsize(e.embedding.tokens.size() * 4));
    e.resized = Grid2D(int(S), int(S));
    in.read(reinterpret_cast<char*>(e.resized.v.data()), std::streamsize(e.resized.v.size() * 4));
    for (uint16_t l : lib.object_labels) {
      const int mh = int(get<uint32_t>(in));
      const int mw = int(get<uint32_t>(in));
      MaskGrid m(mh, mw);
      std::vector<uint8_t> packed((m.v.size() + 7) / 8);
      in.read(reinterpret_cast<char*>(packed.data()), std::streamsize(packed.size()));
      for (size_t i = 0; i < m.v.size(); ++i) m.v[i] = (packed[i / 8] >> (i % 8)) & 1u;
      e.masks[l] = std::move(m);
    }
    if (!in) fail(Err::IoFailure, "truncated library file");
  }
  lib.validate();
  return lib;
}

}  // namespace fateseg
