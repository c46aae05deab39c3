#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "u3ds3/pointcloud.hpp"

namespace u3ds3 {

// Parameters for the synthetic room generator. Class ids: floor 0, walls 1,
// then one class per primitive kind with a nonzero count, in the order
// boxes, spheres, cylinders. The palette maps class id to a base color;
// entries may repeat so that color alone does not identify a class.
struct SceneSpec {
  Vec3 extent = {4.0, 4.0, 2.5};  // room size in meters (x, y, height)
  uint32_t boxes = 3;
  uint32_t spheres = 2;
  uint32_t cylinders = 2;
  std::vector<Vec3> palette;   // per class; filled with defaults when empty
  double density = 1000.0;     // surface sampling density, points per m^2
  double sigma = 0.0;          // Gaussian position noise, meters
  double color_noise = 0.0;    // uniform per-channel color jitter half-width
  uint64_t seed = 0;
  std::string scene_id = "synthetic";

  uint32_t num_classes() const {
    return 2 + (boxes > 0) + (spheres > 0) + (cylinders > 0);
  }
  void validate() const;  // throws on nonpositive density/extent etc.
};

// Samples a room: floor plane, four walls, and primitive objects resting on
// the floor, each surface sampled at `density` with Poisson-distributed
// counts, then position noise applied. Deterministic given spec.seed.
PointCloud gen_synthetic(const SceneSpec& spec);

// Parses key=value lines (extent=4,4,2.5 boxes=3 palette0=0.8,0.2,0.2 ...).
SceneSpec parse_scene_spec(const std::string& path);

}  // namespace u3ds3
