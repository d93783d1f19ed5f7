#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "fateseg/volume.hpp"

namespace fateseg {

enum class PhantomShape { Sphere, Ellipsoid, Box, Shell };

// One geometric object. Geometry is analytic; `block_align` (on the parent
// spec) coarsens the in-plane rasterization to k x k pixel blocks, which makes
// every object mask an exact union of blocks without changing its shape class.
struct PhantomObject {
  PhantomShape shape = PhantomShape::Sphere;
  uint16_t label = 1;
  float intensity = 1.0f;
  std::array<double, 3> center{0, 0, 0};
  double radius = 0;                       // sphere, shell (outer edge = radius)
  std::array<double, 3> semi_axes{0, 0, 0};  // ellipsoid
  std::array<double, 3> size{0, 0, 0};       // box (full edge lengths)
  double thickness = 0;                    // shell: occupies [radius - thickness, radius]
  // shell cap restriction: keep points whose angle from cap_dir is <= cap_angle_deg.
  // 180 = full shell.
  std::array<double, 3> cap_dir{0, 0, 1};
  double cap_angle_deg = 180.0;
};

struct PhantomSpec {
  std::array<int, 3> dims{64, 64, 64};
  std::array<double, 3> spacing{1.0, 1.0, 1.0};
  float background = 0.0f;
  double noise_sigma = 0.0;
  bool forbid_overlap = false;
  int block_align = 0;  // 0 = voxel-analytic; k>0 = in-plane k x k block rasterization
  std::vector<PhantomObject> objects;
};

PhantomSpec phantom_spec_from_json(const std::string& json_text);
std::string phantom_spec_to_json(const PhantomSpec& spec);

// Deterministic for fixed (spec, seed). The seed drives noise only; label
// geometry is a pure function of the spec.
std::pair<Volume, LabelVolume> make_phantom(const PhantomSpec& spec, uint64_t seed);

// n geometry-jittered variants of a base spec. Object centers move by a
// uniform integer offset in [-jitter, +jitter]^3 per (volume, object), drawn
// from geometry_seed; in-plane offsets are snapped to block_align multiples
// when alignment is on. Volume v gets noise seed noise_seed0 + v.
struct PhantomDataset {
  std::vector<std::string> ids;  // "phantom_000", ...
  std::vector<PhantomSpec> specs;
  std::vector<Volume> images;
  std::vector<LabelVolume> labels;
};

PhantomDataset make_phantom_dataset(const PhantomSpec& base, int n, int jitter,
                                    uint64_t geometry_seed, uint64_t noise_seed0);

}  // namespace fateseg
