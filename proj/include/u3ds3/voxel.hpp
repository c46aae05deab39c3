#pragma once

#include <cstdint>
#include <vector>

#include "u3ds3/rng.hpp"

namespace u3ds3 {

// Dense cubic feature grid. data is cell-major: data[cell * channels + ch]
// with cell = (x * res + y) * res + z. Empty cells hold zeros.
template <class T>
struct VoxelGrid {
  int res = 0;
  int channels = 0;
  std::vector<T> data;
  std::vector<uint32_t> counts;

  VoxelGrid() = default;
  VoxelGrid(int r, int d)
      : res(r), channels(d), data(static_cast<size_t>(r) * r * r * d, T(0)),
        counts(static_cast<size_t>(r) * r * r, 0) {}

  size_t cells() const { return static_cast<size_t>(res) * res * res; }
  size_t cell_index(int x, int y, int z) const {
    return (static_cast<size_t>(x) * res + y) * res + z;
  }
  T* cell(int x, int y, int z) { return &data[cell_index(x, y, z) * channels]; }
  const T* cell(int x, int y, int z) const {
    return &data[cell_index(x, y, z) * channels];
  }
};

struct FlipSpec {
  bool axis[3] = {false, false, false};  // x, y, z

  bool any() const { return axis[0] || axis[1] || axis[2]; }
};

struct ColorJitter {
  double brightness = 0.0;  // additive offset b
  double contrast = 1.0;    // multiplicative factor cf

  static constexpr double kBrightnessMax = 0.2;
  static constexpr double kContrastLo = 0.8;
  static constexpr double kContrastHi = 1.2;

  bool is_identity() const { return brightness == 0.0 && contrast == 1.0; }

  // Draws b uniform in [-kBrightnessMax, kBrightnessMax] and cf uniform in
  // [kContrastLo, kContrastHi].
  static ColorJitter draw(Rng& rng);
};

// Mean-pools point features into cells: per axis, index = min(floor(c*r),
// r-1). Coordinates outside [0,1] by more than 1e-9 are an error; within
// tolerance they clamp.
template <class T>
VoxelGrid<T> voxelize(const double* features, size_t n, int d,
                      const double* norm_coords, int r);

// Trilinear interpolation at the 8 cell centers around each query; centers
// sit at (m+0.5)/r and queries beyond the outermost centers clamp to them.
// Works on a raw tensor so network outputs interpolate without a counts
// array.
template <class T>
void devoxelize(const T* grid_data, int r, int d, const double* norm_coords,
                size_t n, T* out);

// Adjoint of devoxelize: scatters per-point gradients back into a grid-shaped
// tensor (zero-initialized by the caller) with the same weights.
template <class T>
void devoxelize_backward(const T* grad_points, int r, int d,
                         const double* norm_coords, size_t n, T* grad_grid);

// Reverses cell order along the selected axes; channel values move intact.
// Applying the same spec twice restores the input bit-exactly.
template <class T>
void flip_tensor(const T* in, T* out, int r, int d, const FlipSpec& spec);

template <class T>
VoxelGrid<T> flip(const VoxelGrid<T>& grid, const FlipSpec& spec);

// Adjusts color columns 3-5 of an N x 12 feature matrix in place:
// c' = clamp((c - mean_c) * cf + mean_c + b, 0, 1), per-channel block mean.
// Blocks with all-zero color (colorless datasets) pass through unchanged.
void color_jitter(std::vector<double>& features, const ColorJitter& jitter);

}  // namespace u3ds3
