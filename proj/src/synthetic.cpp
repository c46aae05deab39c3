#include "u3ds3/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "u3ds3/rng.hpp"

namespace u3ds3 {

namespace {

constexpr double kPi = 3.14159265358979323846;

const std::vector<Vec3> kDefaultPalette = {
    {0.55, 0.55, 0.55},  // floor: gray
    {0.80, 0.78, 0.70},  // walls: beige
    {0.70, 0.25, 0.20},  // boxes
    {0.20, 0.45, 0.70},  // spheres
    {0.25, 0.60, 0.30},  // cylinders
};

struct Emitter {
  PointCloud& cloud;
  Rng& rng;
  const SceneSpec& spec;
  const std::vector<Vec3>& palette;

  void emit(const Vec3& p, int32_t cls) {
    Vec3 q = p;
    if (spec.sigma > 0)
      for (int a = 0; a < 3; ++a) q[a] += rng.gaussian(0.0, spec.sigma);
    Vec3 c = palette[cls];
    if (spec.color_noise > 0) {
      for (int a = 0; a < 3; ++a) {
        c[a] += rng.uniform(-spec.color_noise, spec.color_noise);
        c[a] = std::clamp(c[a], 0.0, 1.0);
      }
    }
    cloud.coords.push_back(q);
    cloud.colors.push_back(c);
    cloud.gt_labels.push_back(cls);
  }

  // Samples a parallelogram patch origin + s*u + t*v, s,t in [0,1).
  void patch(const Vec3& origin, const Vec3& u, const Vec3& v, int32_t cls) {
    double lu = std::sqrt(u[0] * u[0] + u[1] * u[1] + u[2] * u[2]);
    double lv = std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
    uint64_t n = rng.poisson(lu * lv * spec.density);
    for (uint64_t i = 0; i < n; ++i) {
      double s = rng.uniform(), t = rng.uniform();
      emit({origin[0] + s * u[0] + t * v[0], origin[1] + s * u[1] + t * v[1],
            origin[2] + s * u[2] + t * v[2]},
           cls);
    }
  }

  void sphere(const Vec3& center, double radius, int32_t cls) {
    uint64_t n = rng.poisson(4.0 * kPi * radius * radius * spec.density);
    for (uint64_t i = 0; i < n; ++i) {
      double z = rng.uniform(-1.0, 1.0);
      double phi = rng.uniform(0.0, 2.0 * kPi);
      double r = std::sqrt(std::max(0.0, 1.0 - z * z));
      emit({center[0] + radius * r * std::cos(phi),
            center[1] + radius * r * std::sin(phi), center[2] + radius * z},
           cls);
    }
  }

  void cylinder(const Vec3& base, double radius, double height, int32_t cls) {
    uint64_t n = rng.poisson(2.0 * kPi * radius * height * spec.density);
    for (uint64_t i = 0; i < n; ++i) {
      double phi = rng.uniform(0.0, 2.0 * kPi);
      double z = rng.uniform(0.0, height);
      emit({base[0] + radius * std::cos(phi), base[1] + radius * std::sin(phi),
            base[2] + z},
           cls);
    }
    // top cap
    uint64_t m = rng.poisson(kPi * radius * radius * spec.density);
    for (uint64_t i = 0; i < m; ++i) {
      double phi = rng.uniform(0.0, 2.0 * kPi);
      double r = radius * std::sqrt(rng.uniform());
      emit({base[0] + r * std::cos(phi), base[1] + r * std::sin(phi),
            base[2] + height},
           cls);
    }
  }

  void box(const Vec3& base, const Vec3& size, int32_t cls) {
    const double sx = size[0], sy = size[1], sz = size[2];
    // four sides plus top; the bottom face rests on the floor and is hidden
    patch(base, {sx, 0, 0}, {0, 0, sz}, cls);
    patch({base[0], base[1] + sy, base[2]}, {sx, 0, 0}, {0, 0, sz}, cls);
    patch(base, {0, sy, 0}, {0, 0, sz}, cls);
    patch({base[0] + sx, base[1], base[2]}, {0, sy, 0}, {0, 0, sz}, cls);
    patch({base[0], base[1], base[2] + sz}, {sx, 0, 0}, {0, sy, 0}, cls);
  }
};

}  // namespace

void SceneSpec::validate() const {
  if (extent[0] <= 0 || extent[1] <= 0 || extent[2] <= 0)
    throw std::runtime_error("scene extent must be positive");
  if (density <= 0) throw std::runtime_error("density must be positive");
  if (sigma < 0) throw std::runtime_error("noise sigma must be >= 0");
  if (num_classes() < 2) throw std::runtime_error("need floor plus at least one class");
  if (!palette.empty() && palette.size() < num_classes())
    throw std::runtime_error("palette smaller than class count");
}

PointCloud gen_synthetic(const SceneSpec& spec) {
  spec.validate();
  std::vector<Vec3> palette = spec.palette;
  if (palette.empty())
    palette.assign(kDefaultPalette.begin(),
                   kDefaultPalette.begin() + spec.num_classes());

  PointCloud cloud;
  cloud.scene_id = spec.scene_id;
  Rng rng = derive_rng(spec.seed, {0x5ce11eu});
  Emitter em{cloud, rng, spec, palette};

  const double lx = spec.extent[0], ly = spec.extent[1], h = spec.extent[2];
  em.patch({0, 0, 0}, {lx, 0, 0}, {0, ly, 0}, 0);
  em.patch({0, 0, 0}, {lx, 0, 0}, {0, 0, h}, 1);
  em.patch({0, ly, 0}, {lx, 0, 0}, {0, 0, h}, 1);
  em.patch({0, 0, 0}, {0, ly, 0}, {0, 0, h}, 1);
  em.patch({lx, 0, 0}, {0, ly, 0}, {0, 0, h}, 1);

  int32_t cls = 2;
  const double margin = 0.25;
  auto place_xy = [&](double obj_rx, double obj_ry) {
    double x = rng.uniform(margin + obj_rx, std::max(margin + obj_rx + 1e-6, lx - margin - obj_rx));
    double y = rng.uniform(margin + obj_ry, std::max(margin + obj_ry + 1e-6, ly - margin - obj_ry));
    return std::pair<double, double>(x, y);
  };

  if (spec.boxes > 0) {
    for (uint32_t i = 0; i < spec.boxes; ++i) {
      Vec3 size = {rng.uniform(0.3, 0.7), rng.uniform(0.3, 0.7), rng.uniform(0.3, 0.9)};
      auto [x, y] = place_xy(size[0] / 2, size[1] / 2);
      em.box({x - size[0] / 2, y - size[1] / 2, 0.0}, size, cls);
    }
    ++cls;
  }
  if (spec.spheres > 0) {
    for (uint32_t i = 0; i < spec.spheres; ++i) {
      double r = rng.uniform(0.15, 0.35);
      auto [x, y] = place_xy(r, r);
      em.sphere({x, y, r}, r, cls);
    }
    ++cls;
  }
  if (spec.cylinders > 0) {
    for (uint32_t i = 0; i < spec.cylinders; ++i) {
      double r = rng.uniform(0.12, 0.3);
      double height = rng.uniform(0.4, 1.0);
      auto [x, y] = place_xy(r, r);
      em.cylinder({x, y, 0.0}, r, height, cls);
    }
    ++cls;
  }
  cloud.validate();
  return cloud;
}

SceneSpec parse_scene_spec(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open scene spec " + path);
  SceneSpec spec;
  std::string line;
  size_t lineno = 0;
  auto parse_vec3 = [&](const std::string& v) {
    Vec3 out;
    std::istringstream ss(v);
    std::string part;
    for (int a = 0; a < 3; ++a) {
      if (!std::getline(ss, part, ','))
        throw std::runtime_error(path + ":" + std::to_string(lineno) + ": expected r,g,b");
      out[a] = std::stod(part);
    }
    return out;
  };
  while (std::getline(in, line)) {
    ++lineno;
    size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    size_t eq = line.find('=');
    if (eq == std::string::npos) continue;
    std::string key = line.substr(0, eq);
    std::string val = line.substr(eq + 1);
    auto strip = [](std::string& s) {
      size_t b = s.find_first_not_of(" \t");
      size_t e = s.find_last_not_of(" \t");
      s = b == std::string::npos ? "" : s.substr(b, e - b + 1);
    };
    strip(key);
    strip(val);
    if (key.empty() || val.empty()) continue;
    if (key == "extent") spec.extent = parse_vec3(val);
    else if (key == "boxes") spec.boxes = std::stoul(val);
    else if (key == "spheres") spec.spheres = std::stoul(val);
    else if (key == "cylinders") spec.cylinders = std::stoul(val);
    else if (key == "density") spec.density = std::stod(val);
    else if (key == "sigma") spec.sigma = std::stod(val);
    else if (key == "color_noise") spec.color_noise = std::stod(val);
    else if (key == "seed") spec.seed = std::stoull(val);
    else if (key == "scene_id") spec.scene_id = val;
    else if (key.rfind("palette", 0) == 0) {
      size_t idx = std::stoul(key.substr(7));
      if (spec.palette.size() <= idx) spec.palette.resize(idx + 1, {0.5, 0.5, 0.5});
      spec.palette[idx] = parse_vec3(val);
    } else {
      throw std::runtime_error(path + ":" + std::to_string(lineno) + ": unknown key '" + key + "'");
    }
  }
  return spec;
}

}  // namespace u3ds3
