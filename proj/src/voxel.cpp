#include "u3ds3/voxel.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace u3ds3 {

namespace {

constexpr double kCoordTol = 1e-9;

int cell_of(double c, int r) {
  if (c < -kCoordTol || c > 1.0 + kCoordTol)
    throw std::runtime_error("voxelize: coordinate outside [0,1]");
  c = std::clamp(c, 0.0, 1.0);
  int idx = static_cast<int>(std::floor(c * r));
  return std::min(idx, r - 1);
}

struct AxisInterp {
  int i0, i1;
  double frac;  // weight of i1
};

AxisInterp interp_axis(double c, int r) {
  if (r == 1) return {0, 0, 0.0};
  double t = c * r - 0.5;
  t = std::clamp(t, 0.0, static_cast<double>(r - 1));
  int i0 = std::min(static_cast<int>(std::floor(t)), r - 2);
  return {i0, i0 + 1, t - i0};
}

}  // namespace

ColorJitter ColorJitter::draw(Rng& rng) {
  ColorJitter j;
  j.brightness = rng.uniform(-kBrightnessMax, kBrightnessMax);
  j.contrast = rng.uniform(kContrastLo, kContrastHi);
  return j;
}

template <class T>
VoxelGrid<T> voxelize(const double* features, size_t n, int d,
                      const double* norm_coords, int r) {
  if (r < 1) throw std::runtime_error("voxelize: resolution must be >= 1");
  VoxelGrid<T> grid(r, d);
  std::vector<double> accum(grid.cells() * d, 0.0);
  for (size_t i = 0; i < n; ++i) {
    int x = cell_of(norm_coords[i * 3 + 0], r);
    int y = cell_of(norm_coords[i * 3 + 1], r);
    int z = cell_of(norm_coords[i * 3 + 2], r);
    size_t cell = grid.cell_index(x, y, z);
    grid.counts[cell]++;
    double* acc = &accum[cell * d];
    const double* f = &features[i * static_cast<size_t>(d)];
    for (int c = 0; c < d; ++c) acc[c] += f[c];
  }
  for (size_t cell = 0; cell < grid.cells(); ++cell) {
    if (grid.counts[cell] == 0) continue;
    double inv = 1.0 / grid.counts[cell];
    const double* acc = &accum[cell * d];
    T* out = &grid.data[cell * d];
    for (int c = 0; c < d; ++c) out[c] = static_cast<T>(acc[c] * inv);
  }
  return grid;
}

template <class T>
void devoxelize(const T* grid_data, int r, int d, const double* norm_coords,
                size_t n, T* out) {
  const size_t plane = static_cast<size_t>(r) * r;
  for (size_t i = 0; i < n; ++i) {
    AxisInterp ax = interp_axis(norm_coords[i * 3 + 0], r);
    AxisInterp ay = interp_axis(norm_coords[i * 3 + 1], r);
    AxisInterp az = interp_axis(norm_coords[i * 3 + 2], r);
    T* dst = out + i * static_cast<size_t>(d);
    for (int c = 0; c < d; ++c) dst[c] = T(0);
    const int xs[2] = {ax.i0, ax.i1};
    const int ys[2] = {ay.i0, ay.i1};
    const int zs[2] = {az.i0, az.i1};
    const double wx[2] = {1.0 - ax.frac, ax.frac};
    const double wy[2] = {1.0 - ay.frac, ay.frac};
    const double wz[2] = {1.0 - az.frac, az.frac};
    for (int a = 0; a < 2; ++a) {
      for (int b = 0; b < 2; ++b) {
        for (int g = 0; g < 2; ++g) {
          double w = wx[a] * wy[b] * wz[g];
          if (w == 0.0) continue;
          const T* src =
              grid_data + (xs[a] * plane + static_cast<size_t>(ys[b]) * r + zs[g]) * d;
          T tw = static_cast<T>(w);
          for (int c = 0; c < d; ++c) dst[c] += tw * src[c];
        }
      }
    }
  }
}

template <class T>
void devoxelize_backward(const T* grad_points, int r, int d,
                         const double* norm_coords, size_t n, T* grad_grid) {
  const size_t plane = static_cast<size_t>(r) * r;
  for (size_t i = 0; i < n; ++i) {
    AxisInterp ax = interp_axis(norm_coords[i * 3 + 0], r);
    AxisInterp ay = interp_axis(norm_coords[i * 3 + 1], r);
    AxisInterp az = interp_axis(norm_coords[i * 3 + 2], r);
    const T* src = grad_points + i * static_cast<size_t>(d);
    const int xs[2] = {ax.i0, ax.i1};
    const int ys[2] = {ay.i0, ay.i1};
    const int zs[2] = {az.i0, az.i1};
    const double wx[2] = {1.0 - ax.frac, ax.frac};
    const double wy[2] = {1.0 - ay.frac, ay.frac};
    const double wz[2] = {1.0 - az.frac, az.frac};
    for (int a = 0; a < 2; ++a) {
      for (int b = 0; b < 2; ++b) {
        for (int g = 0; g < 2; ++g) {
          double w = wx[a] * wy[b] * wz[g];
          if (w == 0.0) continue;
          T* dst =
              grad_grid + (xs[a] * plane + static_cast<size_t>(ys[b]) * r + zs[g]) * d;
          T tw = static_cast<T>(w);
          for (int c = 0; c < d; ++c) dst[c] += tw * src[c];
        }
      }
    }
  }
}

template <class T>
void flip_tensor(const T* in, T* out, int r, int d, const FlipSpec& spec) {
  const size_t row = static_cast<size_t>(d);
  for (int x = 0; x < r; ++x) {
    int sx = spec.axis[0] ? r - 1 - x : x;
    for (int y = 0; y < r; ++y) {
      int sy = spec.axis[1] ? r - 1 - y : y;
      for (int z = 0; z < r; ++z) {
        int sz = spec.axis[2] ? r - 1 - z : z;
        const T* src = in + ((static_cast<size_t>(sx) * r + sy) * r + sz) * row;
        T* dst = out + ((static_cast<size_t>(x) * r + y) * r + z) * row;
        std::copy(src, src + row, dst);
      }
    }
  }
}

template <class T>
VoxelGrid<T> flip(const VoxelGrid<T>& grid, const FlipSpec& spec) {
  VoxelGrid<T> out(grid.res, grid.channels);
  flip_tensor(grid.data.data(), out.data.data(), grid.res, grid.channels, spec);
  for (int x = 0; x < grid.res; ++x) {
    int sx = spec.axis[0] ? grid.res - 1 - x : x;
    for (int y = 0; y < grid.res; ++y) {
      int sy = spec.axis[1] ? grid.res - 1 - y : y;
      for (int z = 0; z < grid.res; ++z) {
        int sz = spec.axis[2] ? grid.res - 1 - z : z;
        out.counts[out.cell_index(x, y, z)] = grid.counts[grid.cell_index(sx, sy, sz)];
      }
    }
  }
  return out;
}

void color_jitter(std::vector<double>& features, const ColorJitter& jitter) {
  constexpr int kDim = 12;
  size_t n = features.size() / kDim;
  bool any_color = false;
  for (size_t i = 0; i < n && !any_color; ++i)
    for (int c = 3; c < 6; ++c)
      if (features[i * kDim + c] != 0.0) any_color = true;
  if (!any_color) return;

  double mean[3] = {0, 0, 0};
  for (size_t i = 0; i < n; ++i)
    for (int c = 0; c < 3; ++c) mean[c] += features[i * kDim + 3 + c];
  for (int c = 0; c < 3; ++c) mean[c] /= static_cast<double>(n);

  for (size_t i = 0; i < n; ++i) {
    for (int c = 0; c < 3; ++c) {
      double v = features[i * kDim + 3 + c];
      v = (v - mean[c]) * jitter.contrast + mean[c] + jitter.brightness;
      features[i * kDim + 3 + c] = std::clamp(v, 0.0, 1.0);
    }
  }
}

template VoxelGrid<float> voxelize<float>(const double*, size_t, int, const double*, int);
template VoxelGrid<double> voxelize<double>(const double*, size_t, int, const double*, int);
template void devoxelize<float>(const float*, int, int, const double*, size_t, float*);
template void devoxelize<double>(const double*, int, int, const double*, size_t, double*);
template void devoxelize_backward<float>(const float*, int, int, const double*, size_t, float*);
template void devoxelize_backward<double>(const double*, int, int, const double*, size_t, double*);
template void flip_tensor<float>(const float*, float*, int, int, const FlipSpec&);
template void flip_tensor<double>(const double*, double*, int, int, const FlipSpec&);
template VoxelGrid<float> flip<float>(const VoxelGrid<float>&, const FlipSpec&);
template VoxelGrid<double> flip<double>(const VoxelGrid<double>&, const FlipSpec&);

}  // namespace u3ds3
