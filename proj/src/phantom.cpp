#include "fateseg/phantom.hpp"

#include <cmath>
#include <cstdio>

#include <json.hpp>

#include "fateseg/error.hpp"
#include "fateseg/rng.hpp"

using nlohmann::json;

namespace fateseg {

namespace {

const char* shape_name(PhantomShape s) {
  switch (s) {
    case PhantomShape::Sphere: return "sphere";
    case PhantomShape::Ellipsoid: return "ellipsoid";
    case PhantomShape::Box: return "box";
    case PhantomShape::Shell: return "shell";
  }
  return "?";
}

PhantomShape parse_shape(const std::string& s) {
  if (s == "sphere") return PhantomShape::Sphere;
  if (s == "ellipsoid") return PhantomShape::Ellipsoid;
  if (s == "box") return PhantomShape::Box;
  if (s == "shell") return PhantomShape::Shell;
  fail(Err::ConfigParse, "unknown phantom shape '" + s + "'");
}

// Analytic interior test at a physical point (voxel coordinates).
bool inside_object(const PhantomObject& o, double x, double y, double z) {
  const double dx = x - o.center[0], dy = y - o.center[1], dz = z - o.center[2];
  switch (o.shape) {
    case PhantomShape::Sphere:
      return dx * dx + dy * dy + dz * dz <= o.radius * o.radius;
    case PhantomShape::Ellipsoid: {
      if (o.semi_axes[0] <= 0 || o.semi_axes[1] <= 0 || o.semi_axes[2] <= 0) return false;
      const double u = dx / o.semi_axes[0], v = dy / o.semi_axes[1], w = dz / o.semi_axes[2];
      return u * u + v * v + w * w <= 1.0;
    }
    case PhantomShape::Box:
      return std::abs(dx) <= o.size[0] / 2 && std::abs(dy) <= o.size[1] / 2 &&
             std::abs(dz) <= o.size[2] / 2;
    case PhantomShape::Shell: {
      const double r2 = dx * dx + dy * dy + dz * dz;
      const double inner = o.radius - o.thickness;
      if (r2 < inner * inner || r2 > o.radius * o.radius) return false;
      if (o.cap_angle_deg >= 180.0) return true;
      const double r = std::sqrt(r2);
      if (r == 0.0) return false;
      double nd = std::sqrt(o.cap_dir[0] * o.cap_dir[0] + o.cap_dir[1] * o.cap_dir[1] +
                            o.cap_dir[2] * o.cap_dir[2]);
      if (nd == 0.0) return true;
      const double cosang = (dx * o.cap_dir[0] + dy * o.cap_dir[1] + dz * o.cap_dir[2]) / (r * nd);
      return cosang >= std::cos(o.cap_angle_deg * 3.14159265358979323846 / 180.0);
    }
  }
  return false;
}

}  // namespace

std::pair<Volume, LabelVolume> make_phantom(const PhantomSpec& spec, uint64_t seed) {
  const int nx = spec.dims[0], ny = spec.dims[1], nz = spec.dims[2];
  if (nx <= 0 || ny <= 0 || nz <= 0) fail(Err::ConfigParse, "phantom dims must be positive");
  if (spec.noise_sigma < 0) fail(Err::ConfigParse, "noise sigma must be >= 0");
  const int ba = spec.block_align;
  if (ba < 0 || (ba > 0 && (nx % ba != 0 || ny % ba != 0)))
    fail(Err::ConfigParse, "block_align must divide in-plane dims");

  Volume img;
  img.dims = spec.dims;
  img.spacing = spec.spacing;
  img.data.assign(size_t(nx) * ny * nz, spec.background);
  LabelVolume lab;
  lab.dims = spec.dims;
  lab.spacing = spec.spacing;
  lab.labels.assign(img.data.size(), 0);

  // Rasterize objects in spec order. With block alignment the interior test is
  // evaluated once per in-plane block at its center; z stays voxel-exact.
  for (const auto& o : spec.objects) {
    for (int z = 0; z < nz; ++z) {
      if (ba > 0) {
        for (int by = 0; by < ny / ba; ++by) {
          for (int bx = 0; bx < nx / ba; ++bx) {
            const double cx = bx * ba + (ba - 1) / 2.0;
            const double cy = by * ba + (ba - 1) / 2.0;
            if (!inside_object(o, cx, cy, z)) continue;
            for (int y = by * ba; y < (by + 1) * ba; ++y)
              for (int x = bx * ba; x < (bx + 1) * ba; ++x) {
                size_t idx = img.index(x, y, z);
                if (lab.labels[idx] != 0 && lab.labels[idx] != o.label && spec.forbid_overlap)
                  fail(Err::OverlapPolicyViolation,
                       "objects " + std::to_string(lab.labels[idx]) + " and " +
                           std::to_string(o.label) + " overlap");
                img.data[idx] += o.intensity;
                lab.labels[idx] = o.label;
              }
          }
        }
      } else {
        for (int y = 0; y < ny; ++y)
          for (int x = 0; x < nx; ++x) {
            if (!inside_object(o, x, y, z)) continue;
            size_t idx = img.index(x, y, z);
            if (lab.labels[idx] != 0 && lab.labels[idx] != o.label && spec.forbid_overlap)
              fail(Err::OverlapPolicyViolation,
                   "objects " + std::to_string(lab.labels[idx]) + " and " +
                       std::to_string(o.label) + " overlap");
            img.data[idx] += o.intensity;
            lab.labels[idx] = o.label;
          }
      }
    }
  }

  if (spec.noise_sigma > 0) {
    DetRng rng("phantom/noise", seed);
    for (float& v : img.data) v += static_cast<float>(rng.next_normal() * spec.noise_sigma);
  }
  return {std::move(img), std::move(lab)};
}

PhantomDataset make_phantom_dataset(const PhantomSpec& base, int n, int jitter,
                                    uint64_t geometry_seed, uint64_t noise_seed0) {
  if (n <= 0) fail(Err::ConfigParse, "dataset size must be positive");
  if (jitter < 0) fail(Err::ConfigParse, "jitter must be >= 0");
  PhantomDataset ds;
  DetRng geo("phantom/jitter", geometry_seed);
  for (int v = 0; v < n; ++v) {
    PhantomSpec spec = base;
    for (auto& o : spec.objects) {
      std::array<int64_t, 3> off{0, 0, 0};
      for (int a = 0; a < 3; ++a) off[a] = jitter > 0 ? geo.next_int(-jitter, jitter) : 0;
      if (spec.block_align > 0) {
        // keep in-plane alignment: jitter x/y in whole blocks
        off[0] = (off[0] / spec.block_align) * spec.block_align;
        off[1] = (off[1] / spec.block_align) * spec.block_align;
      }
      for (int a = 0; a < 3; ++a) o.center[a] += double(off[a]);
    }
    char name[32];
    std::snprintf(name, sizeof(name), "phantom_%03d", v);
    auto [img, lab] = make_phantom(spec, noise_seed0 + uint64_t(v));
    ds.ids.emplace_back(name);
    ds.specs.push_back(std::move(spec));
    ds.images.push_back(std::move(img));
    ds.labels.push_back(std::move(lab));
  }
  return ds;
}

PhantomSpec phantom_spec_from_json(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    fail(Err::ConfigParse, std::string("phantom spec: ") + e.what());
  }
  PhantomSpec s;
  try {
    if (j.contains("dims")) for (int i = 0; i < 3; ++i) s.dims[i] = j["dims"][i].get<int>();
    if (j.contains("spacing")) for (int i = 0; i < 3; ++i) s.spacing[i] = j["spacing"][i].get<double>();
    s.background = j.value("background", 0.0f);
    s.noise_sigma = j.value("noise_sigma", 0.0);
    s.forbid_overlap = j.value("forbid_overlap", false);
    s.block_align = j.value("block_align", 0);
    for (const auto& jo : j.value("objects", json::array())) {
      PhantomObject o;
      o.shape = parse_shape(jo.at("shape").get<std::string>());
      o.label = jo.at("label").get<uint16_t>();
      o.intensity = jo.value("intensity", 1.0f);
      if (jo.contains("center")) for (int i = 0; i < 3; ++i) o.center[i] = jo["center"][i].get<double>();
      o.radius = jo.value("radius", 0.0);
      if (jo.contains("semi_axes")) for (int i = 0; i < 3; ++i) o.semi_axes[i] = jo["semi_axes"][i].get<double>();
      if (jo.contains("size")) for (int i = 0; i < 3; ++i) o.size[i] = jo["size"][i].get<double>();
      o.thickness = jo.value("thickness", 0.0);
      if (jo.contains("cap_dir")) for (int i = 0; i < 3; ++i) o.cap_dir[i] = jo["cap_dir"][i].get<double>();
      o.cap_angle_deg = jo.value("cap_angle_deg", 180.0);
      if (o.label == 0) fail(Err::ConfigParse, "label 0 is reserved for background");
      s.objects.push_back(o);
    }
  } catch (const json::exception& e) {
    fail(Err::ConfigParse, std::string("phantom spec: ") + e.what());
  }
  return s;
}

std::string phantom_spec_to_json(const PhantomSpec& s) {
  json j;
  j["dims"] = s.dims;
  j["spacing"] = s.spacing;
  j["background"] = s.background;
  j["noise_sigma"] = s.noise_sigma;
  j["forbid_overlap"] = s.forbid_overlap;
  j["block_align"] = s.block_align;
  json arr = json::array();
  for (const auto& o : s.objects) {
    json jo;
    jo["shape"] = shape_name(o.shape);
    jo["label"] = o.label;
    jo["intensity"] = o.intensity;
    jo["center"] = o.center;
    if (o.shape == PhantomShape::Sphere || o.shape == PhantomShape::Shell) jo["radius"] = o.radius;
    if (o.shape == PhantomShape::Ellipsoid) jo["semi_axes"] = o.semi_axes;
    if (o.shape == PhantomShape::Box) jo["size"] = o.size;
    if (o.shape == PhantomShape::Shell) {
      jo["thickness"] = o.thickness;
      jo["cap_dir"] = o.cap_dir;
      jo["cap_angle_deg"] = o.cap_angle_deg;
    }
    arr.push_back(jo);
  }
  j["objects"] = arr;
  return j.dump(2);
}

}  // namespace fateseg
