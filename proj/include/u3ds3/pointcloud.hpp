#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace u3ds3 {

using Vec3 = std::array<double, 3>;

// In-memory point cloud. Colors are RGB in [0,1] and normals are unit
// vectors; either may be absent (empty vector). gt_labels uses -1 for
// unlabeled points and is absent when the source had no labels.
struct PointCloud {
  std::vector<Vec3> coords;
  std::vector<Vec3> colors;
  std::vector<Vec3> normals;
  std::vector<int32_t> gt_labels;
  std::string scene_id;

  size_t size() const { return coords.size(); }
  bool has_colors() const { return !colors.empty(); }
  bool has_normals() const { return !normals.empty(); }
  bool has_labels() const { return !gt_labels.empty(); }

  // Throws std::runtime_error if attribute sizes disagree or values are out
  // of range (non-finite coords, colors outside [0,1], non-unit normals).
  void validate() const;
};

// Reads an ASCII PLY file. Recognized properties: x/y/z (required),
// red/green/blue (0-255, rescaled to [0,1]), nx/ny/nz, and label.
// Errors name the offending line number.
PointCloud load_ply(const std::string& path);

// Writes ASCII PLY with whichever attributes are present.
void save_ply(const PointCloud& cloud, const std::string& path);

// Voxel-grid downsample: points are bucketed into cells of size `cell`
// anchored at the coordinate minimum, and each occupied cell emits one point
// holding the mean of every attribute (majority label, ties to the smallest
// id; normals re-normalized). Output is ordered by cell index.
PointCloud grid_downsample(const PointCloud& cloud, double cell);

// PCA normal per point from its k nearest neighbors (the point itself
// included). The smallest-eigenvalue eigenvector is taken and its sign fixed
// so nz >= 0, with nx >= 0 then ny >= 0 breaking near-zero nz. Returns the
// number of degenerate neighborhoods (rank < 2), which receive (0,0,1).
size_t estimate_normals(PointCloud& cloud, uint32_t k = 20);

struct BlockParams {
  double block = 1.5;   // tile edge in meters (x and y)
  uint32_t pts = 4096;  // samples per block
  uint32_t min_pts = 64;  // tiles with fewer points are skipped
  uint64_t seed = 0;
};

// One training block: a fixed-size sample of a scene tile. features is
// row-major pts x 12: block-normalized xyz in [0,1] (min-max per axis,
// constant axis maps to 0.5), RGB (zeros when colorless), unit normal,
// scene-normalized xyz. norm_coord(i,a) is the block-normalized coordinate
// used for voxelization.
struct Block {
  std::vector<uint32_t> point_indices;
  std::vector<double> features;
  std::vector<int32_t> sp_ids;
  std::vector<int32_t> gt_labels;

  static constexpr int kDim = 12;
  size_t size() const { return point_indices.size(); }
  double norm_coord(size_t i, int axis) const { return features[i * kDim + axis]; }
};

// Splits the scene into block x block tiles on the xy grid anchored at the
// scene minimum and samples each tile that has at least min_pts points:
// a uniform sample without replacement when the tile has >= pts points,
// otherwise every tile point once plus uniform draws with replacement.
std::vector<Block> sample_blocks(const PointCloud& cloud, const BlockParams& params);

// Fills features/gt for a chunk of point indices belonging to one tile.
// Exposed separately so inference chunks use the identical assembly.
Block assemble_block(const PointCloud& cloud, const std::vector<uint32_t>& indices,
                     const Vec3& scene_min, const Vec3& scene_max);

}  // namespace u3ds3
