#include <doctest.h>

#include <cstring>
#include <fstream>

#include "fateseg/error.hpp"
#include "fateseg/phantom.hpp"
#include "fateseg/volume.hpp"
#include "test_util.hpp"

using namespace fateseg;
using testutil::TempDir;

namespace {

void write_raw(const std::string& path, const void* data, size_t len) {
  std::ofstream out(path, std::ios::binary);
  out.write(static_cast<const char*>(data), std::streamsize(len));
}

void write_header(const std::string& path, const std::string& dims, const std::string& dtype,
                  const std::string& raw) {
  std::ofstream out(path);
  out << "{\"dims\":" << dims << ",\"spacing\":[1,1,1],\"dtype\":\"" << dtype
      << "\",\"order\":\"x-fastest\",\"raw\":\"" << raw << "\"}";
}

// Independent oracle: brute-force voxel count of x^2+y^2+z^2 <= r^2 around an
// integer center.
size_t ball_voxel_count(int r) {
  size_t n = 0;
  for (int z = -r; z <= r; ++z)
    for (int y = -r; y <= r; ++y)
      for (int x = -r; x <= r; ++x)
        if (x * x + y * y + z * z <= r * r) ++n;
  return n;
}

}  // namespace

TEST_CASE("load_volume: zero f32 volume") {
  TempDir td;
  float zeros[4] = {0, 0, 0, 0};
  write_raw(td.file("v.raw"), zeros, sizeof(zeros));
  write_header(td.file("v.json"), "[2,2,1]", "f32", "v.raw");
  AnyVolume av = load_volume(td.file("v.json"));
  REQUIRE(std::holds_alternative<Volume>(av));
  const Volume& v = std::get<Volume>(av);
  CHECK(v.dims == std::array<int, 3>{2, 2, 1});
  for (float x : v.data) CHECK(x == 0.0f);
}

TEST_CASE("load_volume: u16 labels produce a LabelVolume with label_set") {
  TempDir td;
  uint16_t labs[4] = {0, 1, 1, 0};
  write_raw(td.file("l.raw"), labs, sizeof(labs));
  write_header(td.file("l.json"), "[2,2,1]", "u16", "l.raw");
  AnyVolume av = load_volume(td.file("l.json"));
  REQUIRE(std::holds_alternative<LabelVolume>(av));
  const LabelVolume& lv = std::get<LabelVolume>(av);
  CHECK(lv.label_set() == std::vector<uint16_t>{1});
}

TEST_CASE("load_volume: raw size mismatch is rejected") {
  TempDir td;
  std::vector<char> bytes(100, 0);  // 3*3*3*4 = 108 expected
  write_raw(td.file("v.raw"), bytes.data(), bytes.size());
  write_header(td.file("v.json"), "[3,3,3]", "f32", "v.raw");
  CHECK_THROWS_WITH_AS(load_volume(td.file("v.json")), doctest::Contains("108"), Error);
}

TEST_CASE("load_volume: missing and malformed headers") {
  TempDir td;
  CHECK_THROWS_AS(load_volume(td.file("absent.json")), Error);
  {
    std::ofstream out(td.file("bad.json"));
    out << "{not json";
  }
  CHECK_THROWS_AS(load_volume(td.file("bad.json")), Error);
}

TEST_CASE("load_volume: NaN payload is rejected") {
  TempDir td;
  float vals[4] = {0, std::numeric_limits<float>::quiet_NaN(), 0, 0};
  write_raw(td.file("v.raw"), vals, sizeof(vals));
  write_header(td.file("v.json"), "[2,2,1]", "f32", "v.raw");
  CHECK_THROWS_AS(load_volume(td.file("v.json")), Error);
}

TEST_CASE("save/load round trip is bit-exact for all three dtypes") {
  TempDir td;
  auto [img, lab] = make_phantom(testutil::standard_phantom_spec(0), 7);

  SUBCASE("f32") {
    save_volume(img, td.file("v.img.json"));
    Volume v2 = load_image_volume(td.file("v.img.json"));
    save_volume(v2, td.file("w.img.json"));
    CHECK(testutil::read_bytes(td.file("v.img.raw")) == testutil::read_bytes(td.file("w.img.raw")));
    CHECK(v2.data == img.data);
  }
  SUBCASE("u16") {
    save_volume(lab, td.file("v.lab.json"));
    // header must record dtype u16
    CHECK(testutil::read_text(td.file("v.lab.json")).find("\"u16\"") != std::string::npos);
    LabelVolume l2 = load_label_volume(td.file("v.lab.json"));
    save_volume(l2, td.file("w.lab.json"));
    CHECK(testutil::read_bytes(td.file("v.lab.raw")) == testutil::read_bytes(td.file("w.lab.raw")));
    CHECK(l2.labels == lab.labels);
  }
  SUBCASE("u8") {
    LabelVolume u8 = lab;
    u8.label_dtype = LabelDtype::U8;
    save_volume(u8, td.file("v.lab.json"));
    CHECK(testutil::read_text(td.file("v.lab.json")).find("\"u8\"") != std::string::npos);
    LabelVolume l2 = load_label_volume(td.file("v.lab.json"));
    CHECK(l2.label_dtype == LabelDtype::U8);
    save_volume(l2, td.file("w.lab.json"));
    CHECK(testutil::read_bytes(td.file("v.lab.raw")) == testutil::read_bytes(td.file("w.lab.raw")));
  }
}

TEST_CASE("flipping one raw byte changes the checksum") {
  TempDir td;
  auto [img, lab] = make_phantom(testutil::standard_phantom_spec(0), 3);
  save_volume(img, td.file("v.img.json"));
  const uint64_t before = file_checksum(td.file("v.img.raw"));
  {
    std::fstream f(td.file("v.img.raw"), std::ios::binary | std::ios::in | std::ios::out);
    f.seekp(17);
    char b;
    f.seekg(17);
    f.get(b);
    b = static_cast<char>(b ^ 0x40);
    f.seekp(17);
    f.put(b);
  }
  CHECK(file_checksum(td.file("v.img.raw")) != before);
}

TEST_CASE("extract_slice: constant volume gives constant planes on every axis") {
  Volume v;
  v.dims = {3, 4, 5};
  v.data.assign(v.voxels(), 2.5f);
  for (SliceAxis a : {SliceAxis::X, SliceAxis::Y, SliceAxis::Z}) {
    Grid2D g = extract_slice(v, a, 1);
    for (float x : g.v) CHECK(x == 2.5f);
  }
}

TEST_CASE("extract_slice: center slice of a sphere is the maximal disk") {
  PhantomSpec spec;
  spec.dims = {33, 33, 33};
  PhantomObject o;
  o.shape = PhantomShape::Sphere;
  o.label = 1;
  o.center = {16, 16, 16};
  o.radius = 8;
  spec.objects = {o};
  auto [img, lab] = make_phantom(spec, 0);

  // oracle: per-slice disk count of the discrete ball
  for (int z = 0; z < 33; ++z) {
    size_t expected = 0;
    for (int y = 0; y < 33; ++y)
      for (int x = 0; x < 33; ++x) {
        const int dx = x - 16, dy = y - 16, dz = z - 16;
        if (dx * dx + dy * dy + dz * dz <= 64) ++expected;
      }
    MaskGrid m = extract_label_slice(lab, SliceAxis::Z, z, 1);
    CHECK(m.count() == expected);
  }
  // the center slice is maximal
  size_t center = extract_label_slice(lab, SliceAxis::Z, 16, 1).count();
  for (int z = 0; z < 33; ++z)
    CHECK(center >= extract_label_slice(lab, SliceAxis::Z, z, 1).count());
}

TEST_CASE("extract_slice: out-of-range index throws") {
  Volume v;
  v.dims = {2, 2, 3};
  v.data.assign(v.voxels(), 0.0f);
  CHECK_THROWS_AS(extract_slice(v, SliceAxis::Z, 3), Error);
  CHECK_THROWS_AS(extract_slice(v, SliceAxis::Z, -1), Error);
}

TEST_CASE("slices stacked back along the axis reproduce the volume") {
  auto [img, lab] = make_phantom(testutil::standard_phantom_spec(0), 11);
  for (SliceAxis a : {SliceAxis::X, SliceAxis::Y, SliceAxis::Z}) {
    Volume rebuilt;
    rebuilt.dims = img.dims;
    rebuilt.data.assign(img.voxels(), 0.0f);
    for (int i = 0; i < img.extent(a); ++i) {
      Grid2D g = extract_slice(img, a, i);
      for (int r = 0; r < g.h; ++r)
        for (int c = 0; c < g.w; ++c) {
          int x = 0, y = 0, z = 0;
          switch (a) {
            case SliceAxis::Z: x = c; y = r; z = i; break;
            case SliceAxis::Y: x = c; y = i; z = r; break;
            case SliceAxis::X: x = i; y = c; z = r; break;
          }
          rebuilt.at(x, y, z) = g.at(r, c);
        }
    }
    CHECK(rebuilt.data == img.data);
  }
}

TEST_CASE("make_phantom: discrete ball voxel count matches the brute-force oracle") {
  PhantomSpec spec;
  spec.dims = {64, 64, 64};
  PhantomObject o;
  o.shape = PhantomShape::Sphere;
  o.label = 1;
  o.center = {32, 32, 32};
  o.radius = 8;
  spec.objects = {o};
  auto [img, lab] = make_phantom(spec, 0);
  size_t count = 0;
  for (uint16_t l : lab.labels) count += l == 1;
  CHECK(count == ball_voxel_count(8));
}

TEST_CASE("make_phantom: ellipsoid and box interiors match brute-force counts") {
  PhantomSpec spec;
  spec.dims = {32, 32, 32};
  PhantomObject e;
  e.shape = PhantomShape::Ellipsoid;
  e.label = 1;
  e.center = {16, 16, 16};
  e.semi_axes = {9, 6, 4};
  PhantomObject b;
  b.shape = PhantomShape::Box;
  b.label = 2;
  b.center = {6, 6, 6};
  b.size = {5, 3, 7};
  spec.objects = {e, b};
  auto [img, lab] = make_phantom(spec, 0);

  size_t want_e = 0, want_b = 0;
  for (int z = 0; z < 32; ++z)
    for (int y = 0; y < 32; ++y)
      for (int x = 0; x < 32; ++x) {
        const double u = (x - 16) / 9.0, v = (y - 16) / 6.0, w = (z - 16) / 4.0;
        if (u * u + v * v + w * w <= 1.0) ++want_e;
        if (std::abs(x - 6) <= 2.5 && std::abs(y - 6) <= 1.5 && std::abs(z - 6) <= 3.5) ++want_b;
      }
  size_t got_e = 0, got_b = 0;
  for (uint16_t l : lab.labels) {
    got_e += l == 1;
    got_b += l == 2;
  }
  CHECK(got_e == want_e);
  CHECK(got_b == want_b);
  // box 5x3x7 covers exactly 5*3*7 voxel centers
  CHECK(got_b == size_t(5 * 3 * 7));
}

TEST_CASE("make_phantom: empty spec gives a zero volume and empty label set") {
  PhantomSpec spec;
  spec.dims = {8, 8, 8};
  auto [img, lab] = make_phantom(spec, 5);
  for (float x : img.data) CHECK(x == 0.0f);
  CHECK(lab.label_set().empty());
}

TEST_CASE("make_phantom: determinism and noise-seed independence of labels") {
  PhantomSpec spec = testutil::standard_phantom_spec(0);
  auto [img7a, lab7a] = make_phantom(spec, 7);
  auto [img7b, lab7b] = make_phantom(spec, 7);
  auto [img8, lab8] = make_phantom(spec, 8);
  CHECK(img7a.data == img7b.data);
  CHECK(lab7a.labels == lab7b.labels);
  CHECK(img7a.data != img8.data);    // sigma > 0, different noise
  CHECK(lab7a.labels == lab8.labels);  // geometry independent of the noise seed

  PhantomSpec quiet = spec;
  quiet.noise_sigma = 0.0;
  auto [imgq, labq] = make_phantom(quiet, 7);
  CHECK(labq.labels == lab7a.labels);  // geometry independent of sigma
}

TEST_CASE("make_phantom: forbidden overlap is reported") {
  PhantomSpec spec;
  spec.dims = {16, 16, 16};
  spec.forbid_overlap = true;
  PhantomObject a;
  a.shape = PhantomShape::Sphere;
  a.label = 1;
  a.center = {8, 8, 8};
  a.radius = 4;
  PhantomObject b = a;
  b.label = 2;
  b.center = {9, 8, 8};
  spec.objects = {a, b};
  CHECK_THROWS_AS(make_phantom(spec, 0), Error);
}

TEST_CASE("make_phantom: block-aligned masks are exact unions of blocks") {
  PhantomSpec spec = testutil::standard_phantom_spec(8);
  auto [img, lab] = make_phantom(spec, 1);
  for (int z = 0; z < 64; ++z) {
    MaskGrid m = extract_label_slice(lab, SliceAxis::Z, z, 1);
    for (int br = 0; br < 8; ++br)
      for (int bc = 0; bc < 8; ++bc) {
        size_t set = 0;
        for (int r = 0; r < 8; ++r)
          for (int c = 0; c < 8; ++c) set += m.at(br * 8 + r, bc * 8 + c);
        CHECK((set == 0 || set == 64));
      }
  }
}

TEST_CASE("phantom dataset: jitter moves geometry, seeds stay reproducible") {
  PhantomSpec spec = testutil::standard_phantom_spec(0);
  PhantomDataset a = make_phantom_dataset(spec, 3, 2, 42, 100);
  PhantomDataset b = make_phantom_dataset(spec, 3, 2, 42, 100);
  CHECK(a.images[2].data == b.images[2].data);
  CHECK(a.labels[1].labels == b.labels[1].labels);
  // different volumes differ in geometry (jitter) with high probability
  CHECK(a.labels[0].labels != a.labels[1].labels);
}
