#pragma once

// Geometric pre-segmentation: supervoxel region growing over a fine voxel
// grid, greedy merging down to a target superpoint count, and RANSAC plane
// extraction for ground removal in outdoor scenes.

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "u3ds3/pointcloud.hpp"

namespace u3ds3 {

struct SuperpointPartition {
  std::vector<int> sp_id;                           // per point, 0..S-1
  std::vector<std::int64_t> sp_sizes;               // point counts
  std::vector<std::array<double, 3>> sp_centroid;   // mean member coordinate
  std::vector<std::array<double, 3>> sp_normal_sum; // sum of member unit normals

  int count() const { return static_cast<int>(sp_sizes.size()); }
  void validate(std::size_t n_points) const;

  // Builds aggregates from per-point ids (ids must be contiguous 0..S-1).
  static SuperpointPartition from_labels(const PointCloud& cloud,
                                         std::vector<int> ids);
};

struct VccsWeights {
  double spatial = 0.4;
  double color = 0.2;
  double normal = 1.0;
};

// Supervoxel segmentation: bins points into a voxel_res grid, seeds one
// region per occupied seed_res cell (the voxel nearest the cell center), and
// grows regions over 26-connected voxels by ascending feature distance to
// each region's running mean:
//   D = sqrt(w_s * (|dx| / (3 seed_res))^2 + w_c * |dcolor|^2
//            + w_n * (1 - |cos(dn)|)^2).
// Voxels unreachable from any seed form one superpoint per connected
// component. Requires normals.
SuperpointPartition vccs_superpoints(const PointCloud& cloud, double voxel_res,
                                     double seed_res,
                                     const VccsWeights& w = {});

// Greedy merge to exactly min(gamma, count()) superpoints. Repeatedly takes
// the smallest superpoint (ties: lowest id), finds its two nearest neighbors
// by centroid distance, and merges it into the one whose normal-sum vector
// has the higher cosine similarity (ties: the nearer neighbor). Aggregates
// are updated exactly; ids are re-compacted preserving order.
SuperpointPartition merge_superpoints(const SuperpointPartition& part, int gamma);

struct Plane {
  std::array<double, 3> normal{0.0, 0.0, 1.0};  // unit
  double d = 0.0;                               // plane: normal . x + d = 0
  std::vector<char> inlier_mask;
};

// Best-of-iters 3-point RANSAC plane: hypotheses scored by inlier count
// (|n.x + d| <= thresh), winner refit by PCA least squares on its inliers.
// The returned mask is the winning hypothesis's inlier set (the refit input),
// which keeps the result monotone in iters under a fixed seed.
Plane ransac_plane(const PointCloud& cloud, int iters, double thresh,
                   std::uint64_t seed);

struct SuperpointParams {
  double voxel_res = 0.03;
  double seed_res = 0.5;
  VccsWeights weights{};
  int gamma = 40;
  bool road_ransac = false;
  int ransac_iters = 200;
  double ransac_thresh = 0.2;
  std::uint64_t seed = 0;
};

// Full pre-segmentation: optional ground-plane extraction (the plane's
// inliers become one dedicated superpoint and region growing runs on the
// remainder), then supervoxels, then merge to gamma.
SuperpointPartition compute_superpoints(const PointCloud& cloud,
                                        const SuperpointParams& params);

// Superpoint file: one id per line, line i = point i.
void save_superpoints(const std::string& path, const std::vector<int>& sp_id);
std::vector<int> load_superpoints(const std::string& path);

}  // namespace u3ds3
