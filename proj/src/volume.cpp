#include "fateseg/volume.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <set>

#include <json.hpp>

#include "fateseg/error.hpp"
#include "fateseg/rng.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace fateseg {

const char* err_name(Err e) {
  switch (e) {
    case Err::MissingFile: return "MissingFile";
    case Err::HeaderParse: return "HeaderParse";
    case Err::SizeMismatch: return "SizeMismatch";
    case Err::NonFiniteData: return "NonFiniteData";
    case Err::IoFailure: return "IoFailure";
    case Err::IndexOutOfRange: return "IndexOutOfRange";
    case Err::OverlapPolicyViolation: return "OverlapPolicyViolation";
    case Err::NonFiniteInput: return "NonFiniteInput";
    case Err::GeometryMismatch: return "GeometryMismatch";
    case Err::EmptySupportSet: return "EmptySupportSet";
    case Err::LengthMismatch: return "LengthMismatch";
    case Err::ZeroVector: return "ZeroVector";
    case Err::EmptyLibrary: return "EmptyLibrary";
    case Err::JTooLarge: return "JTooLarge";
    case Err::FingerprintMismatch: return "FingerprintMismatch";
    case Err::GridLargerThanMask: return "GridLargerThanMask";
    case Err::ShapeMismatch: return "ShapeMismatch";
    case Err::EmptyAnatomicalSet: return "EmptyAnatomicalSet";
    case Err::HeterogeneousShapes: return "HeterogeneousShapes";
    case Err::ResidualModeInvalid: return "ResidualModeInvalid";
    case Err::MissingAttn: return "MissingAttn";
    case Err::LabelUnknown: return "LabelUnknown";
    case Err::DimMismatch: return "DimMismatch";
    case Err::TooFewVolumes: return "TooFewVolumes";
    case Err::InvalidAxisValue: return "InvalidAxisValue";
    case Err::ConfigParse: return "ConfigParse";
  }
  return "Unknown";
}

SliceAxis parse_axis(const std::string& s) {
  if (s == "x" || s == "X") return SliceAxis::X;
  if (s == "y" || s == "Y") return SliceAxis::Y;
  if (s == "z" || s == "Z") return SliceAxis::Z;
  fail(Err::ConfigParse, "unknown slice axis '" + s + "'");
}

const char* axis_name(SliceAxis a) {
  switch (a) {
    case SliceAxis::X: return "x";
    case SliceAxis::Y: return "y";
    case SliceAxis::Z: return "z";
  }
  return "?";
}

void Volume::validate() const {
  if (dims[0] <= 0 || dims[1] <= 0 || dims[2] <= 0)
    fail(Err::HeaderParse, "non-positive dims");
  if (spacing[0] <= 0 || spacing[1] <= 0 || spacing[2] <= 0)
    fail(Err::HeaderParse, "non-positive spacing");
  if (data.size() != voxels())
    fail(Err::SizeMismatch, "data length " + std::to_string(data.size()) +
                                " != dims product " + std::to_string(voxels()));
  for (float x : data)
    if (!std::isfinite(x)) fail(Err::NonFiniteData, "volume contains NaN/Inf");
}

void LabelVolume::validate() const {
  if (dims[0] <= 0 || dims[1] <= 0 || dims[2] <= 0)
    fail(Err::HeaderParse, "non-positive dims");
  if (spacing[0] <= 0 || spacing[1] <= 0 || spacing[2] <= 0)
    fail(Err::HeaderParse, "non-positive spacing");
  if (labels.size() != voxels())
    fail(Err::SizeMismatch, "label length " + std::to_string(labels.size()) +
                                " != dims product " + std::to_string(voxels()));
}

std::vector<uint16_t> LabelVolume::label_set() const {
  std::set<uint16_t> s;
  for (uint16_t l : labels)
    if (l != 0) s.insert(l);
  return std::vector<uint16_t>(s.begin(), s.end());
}

namespace {

struct Header {
  std::array<int, 3> dims;
  std::array<double, 3> spacing;
  std::string dtype;
  std::string raw_rel;
};

Header parse_header(const std::string& header_path) {
  if (!fs::exists(header_path)) fail(Err::MissingFile, header_path);
  std::ifstream in(header_path);
  if (!in) fail(Err::MissingFile, header_path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    fail(Err::HeaderParse, header_path + ": " + e.what());
  }
  Header h;
  try {
    auto d = j.at("dims");
    if (!d.is_array() || d.size() != 3) fail(Err::HeaderParse, "dims must be a 3-array");
    for (int i = 0; i < 3; ++i) h.dims[i] = d[i].get<int>();
    if (j.contains("spacing")) {
      auto s = j.at("spacing");
      if (!s.is_array() || s.size() != 3) fail(Err::HeaderParse, "spacing must be a 3-array");
      for (int i = 0; i < 3; ++i) h.spacing[i] = s[i].get<double>();
    } else {
      h.spacing = {1.0, 1.0, 1.0};
    }
    h.dtype = j.at("dtype").get<std::string>();
    if (j.contains("order") && j.at("order").get<std::string>() != "x-fastest")
      fail(Err::HeaderParse, "unsupported order (expected x-fastest)");
    h.raw_rel = j.at("raw").get<std::string>();
  } catch (const json::exception& e) {
    fail(Err::HeaderParse, header_path + ": " + e.what());
  }
  if (h.dtype != "f32" && h.dtype != "u8" && h.dtype != "u16")
    fail(Err::HeaderParse, header_path + ": unknown dtype '" + h.dtype + "'");
  return h;
}

std::vector<char> read_raw(const std::string& path, size_t expected_bytes) {
  if (!fs::exists(path)) fail(Err::MissingFile, path);
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(Err::MissingFile, path);
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() != expected_bytes)
    fail(Err::SizeMismatch, path + ": raw byte count " + std::to_string(bytes.size()) +
                                " != expected " + std::to_string(expected_bytes));
  return bytes;
}

std::string raw_path_for(const std::string& header_path, const std::string& raw_rel) {
  return (fs::path(header_path).parent_path() / raw_rel).string();
}

void write_file(const std::string& path, const void* data, size_t len) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(Err::IoFailure, "cannot open " + path + " for writing");
  out.write(static_cast<const char*>(data), static_cast<std::streamsize>(len));
  if (!out) fail(Err::IoFailure, "short write to " + path);
}

void write_header(const std::string& header_path, const std::array<int, 3>& dims,
                  const std::array<double, 3>& spacing, const std::string& dtype,
                  const std::string& raw_rel) {
  json j;
  j["dims"] = dims;
  j["spacing"] = spacing;
  j["dtype"] = dtype;
  j["order"] = "x-fastest";
  j["raw"] = raw_rel;
  std::string s = j.dump(2);
  s.push_back('\n');
  write_file(header_path, s.data(), s.size());
}

std::string default_raw_rel(const std::string& header_path) {
  // foo.img.json -> foo.img.raw; anything.json -> anything.raw
  fs::path p(header_path);
  std::string name = p.filename().string();
  const std::string suffix = ".json";
  if (name.size() > suffix.size() && name.compare(name.size() - suffix.size(), suffix.size(), suffix) == 0)
    name = name.substr(0, name.size() - suffix.size());
  return name + ".raw";
}

}  // namespace

AnyVolume load_volume(const std::string& header_path) {
  Header h = parse_header(header_path);
  size_t n = size_t(h.dims[0]) * h.dims[1] * h.dims[2];
  std::string raw = raw_path_for(header_path, h.raw_rel);
  if (h.dtype == "f32") {
    std::vector<char> bytes = read_raw(raw, n * 4);
    Volume v;
    v.dims = h.dims;
    v.spacing = h.spacing;
    v.data.resize(n);
    std::memcpy(v.data.data(), bytes.data(), bytes.size());
    v.validate();
    return v;
  }
  LabelVolume lv;
  lv.dims = h.dims;
  lv.spacing = h.spacing;
  lv.labels.resize(n);
  if (h.dtype == "u8") {
    std::vector<char> bytes = read_raw(raw, n);
    for (size_t i = 0; i < n; ++i) lv.labels[i] = static_cast<uint8_t>(bytes[i]);
    lv.label_dtype = LabelDtype::U8;
  } else {
    std::vector<char> bytes = read_raw(raw, n * 2);
    std::memcpy(lv.labels.data(), bytes.data(), bytes.size());
    lv.label_dtype = LabelDtype::U16;
  }
  lv.validate();
  return lv;
}

Volume load_image_volume(const std::string& header_path) {
  AnyVolume av = load_volume(header_path);
  if (!std::holds_alternative<Volume>(av))
    fail(Err::HeaderParse, header_path + ": expected f32 image volume");
  return std::get<Volume>(std::move(av));
}

LabelVolume load_label_volume(const std::string& header_path) {
  AnyVolume av = load_volume(header_path);
  if (!std::holds_alternative<LabelVolume>(av))
    fail(Err::HeaderParse, header_path + ": expected u8/u16 label volume");
  return std::get<LabelVolume>(std::move(av));
}

void save_volume(const Volume& v, const std::string& header_path) {
  v.validate();
  std::string raw_rel = default_raw_rel(header_path);
  write_header(header_path, v.dims, v.spacing, "f32", raw_rel);
  write_file(raw_path_for(header_path, raw_rel), v.data.data(), v.data.size() * 4);
}

void save_volume(const LabelVolume& v, const std::string& header_path) {
  v.validate();
  std::string raw_rel = default_raw_rel(header_path);
  if (v.label_dtype == LabelDtype::U8) {
    for (uint16_t l : v.labels)
      if (l > 255) fail(Err::IoFailure, "label exceeds u8 storage dtype");
    write_header(header_path, v.dims, v.spacing, "u8", raw_rel);
    std::vector<uint8_t> bytes(v.labels.begin(), v.labels.end());
    write_file(raw_path_for(header_path, raw_rel), bytes.data(), bytes.size());
  } else {
    write_header(header_path, v.dims, v.spacing, "u16", raw_rel);
    write_file(raw_path_for(header_path, raw_rel), v.labels.data(), v.labels.size() * 2);
  }
}

namespace {

template <typename VolT, typename GridT>
GridT extract_plane(const VolT& v, SliceAxis axis, int i, auto pick) {
  if (i < 0 || i >= v.extent(axis))
    fail(Err::IndexOutOfRange, "slice " + std::to_string(i) + " outside [0, " +
                                   std::to_string(v.extent(axis)) + ")");
  const int nx = v.dims[0], ny = v.dims[1], nz = v.dims[2];
  GridT g;
  switch (axis) {
    case SliceAxis::Z:
      g = GridT(ny, nx);
      for (int y = 0; y < ny; ++y)
        for (int x = 0; x < nx; ++x) g.at(y, x) = pick(x, y, i);
      break;
    case SliceAxis::Y:
      g = GridT(nz, nx);
      for (int z = 0; z < nz; ++z)
        for (int x = 0; x < nx; ++x) g.at(z, x) = pick(x, i, z);
      break;
    case SliceAxis::X:
      g = GridT(nz, ny);
      for (int z = 0; z < nz; ++z)
        for (int y = 0; y < ny; ++y) g.at(z, y) = pick(i, y, z);
      break;
  }
  return g;
}

}  // namespace

Grid2D extract_slice(const Volume& v, SliceAxis axis, int i) {
  return extract_plane<Volume, Grid2D>(v, axis, i,
                                       [&](int x, int y, int z) { return v.at(x, y, z); });
}

MaskGrid extract_label_slice(const LabelVolume& v, SliceAxis axis, int i, uint16_t label) {
  return extract_plane<LabelVolume, MaskGrid>(
      v, axis, i, [&](int x, int y, int z) -> uint8_t { return v.at(x, y, z) == label ? 1 : 0; });
}

uint64_t file_checksum(const std::string& path) {
  if (!fs::exists(path)) fail(Err::MissingFile, path);
  std::ifstream in(path, std::ios::binary);
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return fnv1a64(bytes.data(), bytes.size());
}

}  // namespace fateseg
