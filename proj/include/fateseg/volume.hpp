#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <variant>
#include <vector>

#include "fateseg/grid.hpp"

namespace fateseg {

enum class SliceAxis { X, Y, Z };

SliceAxis parse_axis(const std::string& s);
const char* axis_name(SliceAxis a);

// 3D scalar grid. Storage is row-major with x fastest and z slowest:
// index(x,y,z) = x + nx*(y + ny*z).
struct Volume {
  std::array<int, 3> dims{0, 0, 0};            // nx, ny, nz
  std::array<double, 3> spacing{1.0, 1.0, 1.0};  // physical units per voxel
  std::vector<float> data;

  size_t voxels() const { return size_t(dims[0]) * dims[1] * dims[2]; }
  size_t index(int x, int y, int z) const {
    return size_t(x) + size_t(dims[0]) * (size_t(y) + size_t(dims[1]) * z);
  }
  float at(int x, int y, int z) const { return data[index(x, y, z)]; }
  float& at(int x, int y, int z) { return data[index(x, y, z)]; }

  int extent(SliceAxis a) const { return dims[static_cast<int>(a)]; }
  void validate() const;  // throws on dims/data mismatch or non-finite values
};

enum class LabelDtype : uint8_t { U8, U16 };

// 3D integer label grid sharing the Volume geometry. 0 is background.
// label_dtype records on-disk storage so round trips are byte-exact.
struct LabelVolume {
  std::array<int, 3> dims{0, 0, 0};
  std::array<double, 3> spacing{1.0, 1.0, 1.0};
  std::vector<uint16_t> labels;
  LabelDtype label_dtype = LabelDtype::U16;

  size_t voxels() const { return size_t(dims[0]) * dims[1] * dims[2]; }
  size_t index(int x, int y, int z) const {
    return size_t(x) + size_t(dims[0]) * (size_t(y) + size_t(dims[1]) * z);
  }
  uint16_t at(int x, int y, int z) const { return labels[index(x, y, z)]; }
  uint16_t& at(int x, int y, int z) { return labels[index(x, y, z)]; }

  int extent(SliceAxis a) const { return dims[static_cast<int>(a)]; }
  std::vector<uint16_t> label_set() const;  // sorted distinct nonzero labels
  void validate() const;
};

using AnyVolume = std::variant<Volume, LabelVolume>;

// RVOL format: JSON header sidecar + little-endian raw payload.
// Header: {"dims":[nx,ny,nz],"spacing":[sx,sy,sz],"dtype":"f32"|"u8"|"u16",
//          "order":"x-fastest","raw":"<relative path>"}
AnyVolume load_volume(const std::string& header_path);
void save_volume(const Volume& v, const std::string& header_path);
void save_volume(const LabelVolume& v, const std::string& header_path);

// Convenience wrappers that insist on one alternative.
Volume load_image_volume(const std::string& header_path);
LabelVolume load_label_volume(const std::string& header_path);

// The 2D plane at index i along the axis. Plane layout keeps the remaining
// dims in (slower, faster) order: Z -> (ny, nx), Y -> (nz, nx), X -> (nz, ny).
Grid2D extract_slice(const Volume& v, SliceAxis axis, int i);

// Binary mask of one label on the plane at index i.
MaskGrid extract_label_slice(const LabelVolume& v, SliceAxis axis, int i, uint16_t label);

// FNV-1a over a file's bytes; the manifest/round-trip checksum utility.
uint64_t file_checksum(const std::string& path);

}  // namespace fateseg
