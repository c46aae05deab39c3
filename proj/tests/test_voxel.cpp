#include <doctest.h>

#include <array>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "u3ds3/rng.hpp"
#include "u3ds3/voxel.hpp"

using namespace u3ds3;

namespace {

// Independent flip oracle: plain triple-loop index remap.
template <class T>
std::vector<T> flip_oracle(const std::vector<T>& data, int r, int d,
                           const FlipSpec& spec) {
  std::vector<T> out(data.size());
  for (int x = 0; x < r; ++x)
    for (int y = 0; y < r; ++y)
      for (int z = 0; z < r; ++z) {
        int tx = spec.axis[0] ? r - 1 - x : x;
        int ty = spec.axis[1] ? r - 1 - y : y;
        int tz = spec.axis[2] ? r - 1 - z : z;
        for (int c = 0; c < d; ++c)
          out[(((size_t)tx * r + ty) * r + tz) * d + c] =
              data[(((size_t)x * r + y) * r + z) * d + c];
      }
  return out;
}

}  // namespace

TEST_SUITE_BEGIN("voxel");

TEST_CASE("voxelize index rule and boundary clamp") {
  std::vector<double> feats = {1.0, 2.0};
  std::vector<double> coords = {0.5, 0.5, 0.5, 1.0, 1.0, 1.0};
  auto grid = voxelize<double>(feats.data(), 2, 1, coords.data(), 32);
  CHECK(grid.counts[grid.cell_index(16, 16, 16)] == 1);
  CHECK(grid.counts[grid.cell_index(31, 31, 31)] == 1);
  CHECK(grid.cell(16, 16, 16)[0] == doctest::Approx(1.0));
  CHECK(grid.cell(31, 31, 31)[0] == doctest::Approx(2.0));
}

TEST_CASE("voxelize means same-cell features") {
  std::vector<double> feats = {2.0, 4.0};
  std::vector<double> coords = {0.11, 0.11, 0.11, 0.12, 0.12, 0.12};
  auto grid = voxelize<double>(feats.data(), 2, 1, coords.data(), 8);
  size_t cell = grid.cell_index(0, 0, 0);
  CHECK(grid.counts[cell] == 2);
  CHECK(grid.data[cell] == doctest::Approx(3.0));
}

TEST_CASE("voxelize rejects out-of-range coordinates") {
  std::vector<double> feats = {1.0};
  std::vector<double> coords = {0.5, 0.5, 1.1};
  CHECK_THROWS_AS(voxelize<double>(feats.data(), 1, 1, coords.data(), 8),
                  std::runtime_error);
  std::vector<double> almost = {0.5, 0.5, 1.0 + 5e-10};
  CHECK_NOTHROW(voxelize<double>(feats.data(), 1, 1, almost.data(), 8));
}

TEST_CASE("voxelize mass check over random sets") {
  Rng rng(61);
  for (int trial = 0; trial < 20; ++trial) {
    int n = 200 + static_cast<int>(rng.uniform_index(200));
    int d = 3;
    int r = 8;
    std::vector<double> feats(n * d), coords(n * 3);
    for (auto& v : feats) v = rng.uniform(-2, 2);
    for (auto& v : coords) v = rng.uniform();
    auto grid = voxelize<double>(feats.data(), n, d, coords.data(), r);

    uint64_t total = 0;
    for (auto c : grid.counts) total += c;
    CHECK(total == static_cast<uint64_t>(n));
    for (int c = 0; c < d; ++c) {
      double cell_sum = 0, point_sum = 0;
      for (size_t cell = 0; cell < grid.cells(); ++cell)
        cell_sum += grid.counts[cell] * grid.data[cell * d + c];
      for (int i = 0; i < n; ++i) point_sum += feats[i * d + c];
      CHECK(std::abs(cell_sum - point_sum) < 1e-5);
    }
    for (size_t cell = 0; cell < grid.cells(); ++cell)
      if (grid.counts[cell] == 0)
        for (int c = 0; c < d; ++c) CHECK(grid.data[cell * d + c] == 0.0);
  }
}

TEST_CASE("devoxelize returns exact cell value at cell centers") {
  Rng rng(62);
  int r = 4, d = 2;
  VoxelGrid<double> grid(r, d);
  for (auto& v : grid.data) v = rng.uniform(-1, 1);
  for (int x = 0; x < r; ++x)
    for (int y = 0; y < r; ++y)
      for (int z = 0; z < r; ++z) {
        double coords[3] = {(x + 0.5) / r, (y + 0.5) / r, (z + 0.5) / r};
        double out[2];
        devoxelize<double>(grid.data.data(), r, d, coords, 1, out);
        for (int c = 0; c < d; ++c)
          CHECK(out[c] == grid.cell(x, y, z)[c]);
      }
}

TEST_CASE("devoxelize interpolates constant grid to the constant") {
  int r = 8, d = 1;
  VoxelGrid<double> grid(r, d);
  for (auto& v : grid.data) v = 2.5;
  Rng rng(63);
  for (int i = 0; i < 100; ++i) {
    double coords[3] = {rng.uniform(), rng.uniform(), rng.uniform()};
    double out;
    devoxelize<double>(grid.data.data(), r, d, coords, 1, &out);
    CHECK(out == doctest::Approx(2.5).epsilon(1e-12));
  }
}

TEST_CASE("devoxelize midpoint between adjacent centers averages them") {
  int r = 4, d = 1;
  VoxelGrid<double> grid(r, d);
  for (int x = 0; x < r; ++x)
    for (int y = 0; y < r; ++y)
      for (int z = 0; z < r; ++z)
        grid.cell(x, y, z)[0] = static_cast<double>(x);  // varies along x only
  // midway between centers of x=1 and x=2: coord = 2.0/4 = 0.5
  double coords[3] = {0.5, (1 + 0.5) / 4.0, (2 + 0.5) / 4.0};
  double out;
  devoxelize<double>(grid.data.data(), r, d, coords, 1, &out);
  CHECK(out == doctest::Approx(1.5));  // weights (0.5, 0.5) by hand
}

TEST_CASE("devoxelize clamps beyond boundary cell centers") {
  int r = 4, d = 1;
  VoxelGrid<double> grid(r, d);
  for (int x = 0; x < r; ++x)
    for (int y = 0; y < r; ++y)
      for (int z = 0; z < r; ++z) grid.cell(x, y, z)[0] = x * 100.0 + y * 10.0 + z;
  double coords[3] = {0.0, 0.0, 0.0};
  double out;
  devoxelize<double>(grid.data.data(), r, d, coords, 1, &out);
  CHECK(out == doctest::Approx(0.0));  // clamps to cell (0,0,0) center
  double top[3] = {1.0, 1.0, 1.0};
  devoxelize<double>(grid.data.data(), r, d, top, 1, &out);
  CHECK(out == doctest::Approx(333.0));
}

TEST_CASE("devoxelize distinguishes nearby points in one cell") {
  int r = 4, d = 1;
  VoxelGrid<double> grid(r, d);
  for (int x = 0; x < r; ++x)
    for (int y = 0; y < r; ++y)
      for (int z = 0; z < r; ++z) grid.cell(x, y, z)[0] = static_cast<double>(x);
  double c1[3] = {0.30, 0.4, 0.4};  // both inside cell x=1
  double c2[3] = {0.45, 0.4, 0.4};
  double o1, o2;
  devoxelize<double>(grid.data.data(), r, d, c1, 1, &o1);
  devoxelize<double>(grid.data.data(), r, d, c2, 1, &o2);
  CHECK(o1 != o2);
}

TEST_CASE("devoxelize round trip at centers recovers features") {
  Rng rng(64);
  int r = 8, d = 4;
  int n = 50;
  std::vector<double> feats(n * d), coords(n * 3);
  std::vector<std::array<int, 3>> cells;
  // distinct cells, one point each, placed at the exact cell center
  for (int i = 0; i < n; ++i) {
    int x = i % 8, y = (i / 8) % 8, z = i / 64 + 2 * ((i / 8) / 8);
    cells.push_back({x, y, z});
    coords[i * 3 + 0] = (x + 0.5) / r;
    coords[i * 3 + 1] = (y + 0.5) / r;
    coords[i * 3 + 2] = (z + 0.5) / r;
    for (int c = 0; c < d; ++c) feats[i * d + c] = rng.uniform(-1, 1);
  }
  auto grid = voxelize<double>(feats.data(), n, d, coords.data(), r);
  std::vector<double> back(n * d);
  devoxelize<double>(grid.data.data(), r, d, coords.data(), n, back.data());
  for (int i = 0; i < n * d; ++i) CHECK(std::abs(back[i] - feats[i]) < 1e-6);
}

TEST_CASE("devoxelize backward matches forward as adjoint") {
  // <devox(G), P> == <G, devox_backward(P)> for random G, P
  Rng rng(65);
  int r = 4, d = 3, n = 20;
  std::vector<double> grid(static_cast<size_t>(r) * r * r * d), coords(n * 3);
  std::vector<double> point_grad(n * d);
  for (auto& v : grid) v = rng.uniform(-1, 1);
  for (auto& v : coords) v = rng.uniform();
  for (auto& v : point_grad) v = rng.uniform(-1, 1);

  std::vector<double> points(n * d);
  devoxelize<double>(grid.data(), r, d, coords.data(), n, points.data());
  std::vector<double> grid_grad(grid.size(), 0.0);
  devoxelize_backward<double>(point_grad.data(), r, d, coords.data(), n,
                              grid_grad.data());
  double lhs = 0, rhs = 0;
  for (size_t i = 0; i < points.size(); ++i) lhs += points[i] * point_grad[i];
  for (size_t i = 0; i < grid.size(); ++i) rhs += grid[i] * grid_grad[i];
  CHECK(lhs == doctest::Approx(rhs).epsilon(1e-10));
}

TEST_CASE("flip is an involution and matches the remap oracle") {
  Rng rng(66);
  for (int trial = 0; trial < 20; ++trial) {
    int r = 2 + static_cast<int>(rng.uniform_index(5));
    int d = 1 + static_cast<int>(rng.uniform_index(4));
    VoxelGrid<double> grid(r, d);
    for (auto& v : grid.data) v = rng.uniform(-1, 1);
    for (auto& c : grid.counts) c = static_cast<uint32_t>(rng.uniform_index(4));
    FlipSpec spec;
    for (int a = 0; a < 3; ++a) spec.axis[a] = rng.uniform() < 0.5;

    auto flipped = flip(grid, spec);
    CHECK(flipped.data == flip_oracle(grid.data, r, d, spec));
    auto twice = flip(flipped, spec);
    CHECK(twice.data == grid.data);
    CHECK(twice.counts == grid.counts);
  }
}

TEST_CASE("flip r=2 z swaps the expected cells") {
  VoxelGrid<double> grid(2, 1);
  grid.cell(0, 0, 0)[0] = 1.0;
  grid.cell(0, 0, 1)[0] = 2.0;
  FlipSpec spec;
  spec.axis[2] = true;
  auto flipped = flip(grid, spec);
  CHECK(flipped.cell(0, 0, 0)[0] == 2.0);
  CHECK(flipped.cell(0, 0, 1)[0] == 1.0);
}

TEST_CASE("flip composition equals sequential single-axis flips") {
  Rng rng(67);
  int r = 4, d = 2;
  VoxelGrid<double> grid(r, d);
  for (auto& v : grid.data) v = rng.uniform(-1, 1);
  FlipSpec fx, fz, fxz;
  fx.axis[0] = true;
  fz.axis[2] = true;
  fxz.axis[0] = fxz.axis[2] = true;
  auto combined = flip(grid, fxz);
  auto sequential = flip(flip(grid, fx), fz);
  CHECK(combined.data == sequential.data);
}

TEST_CASE("flip preserves the multiset of cell values") {
  Rng rng(68);
  int r = 4, d = 1;
  VoxelGrid<double> grid(r, d);
  for (auto& v : grid.data) v = rng.uniform(-1, 1);
  FlipSpec spec;
  spec.axis[1] = true;
  auto flipped = flip(grid, spec);
  auto a = grid.data, b = flipped.data;
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  CHECK(a == b);
}

TEST_CASE("color_jitter neutral parameters are the identity") {
  Rng rng(69);
  std::vector<double> feats(40 * 12);
  for (auto& v : feats) v = rng.uniform();
  auto copy = feats;
  color_jitter(feats, ColorJitter{});
  CHECK(feats == copy);
}

TEST_CASE("color_jitter clamps brightness overflow") {
  std::vector<double> feats(12, 0.0);
  feats[3] = 0.95;
  feats[4] = 0.95;
  feats[5] = 0.95;
  ColorJitter j;
  j.brightness = 0.1;
  color_jitter(feats, j);
  CHECK(feats[3] == doctest::Approx(1.0));
}

TEST_CASE("color_jitter contrast pivots on the block mean") {
  std::vector<double> feats(2 * 12, 0.0);
  feats[0 * 12 + 3] = 0.0;
  feats[1 * 12 + 3] = 1.0;
  feats[0 * 12 + 4] = 0.5;  // keep channel nonzero so the block has color
  feats[1 * 12 + 4] = 0.5;
  feats[0 * 12 + 5] = 0.5;
  feats[1 * 12 + 5] = 0.5;
  ColorJitter j;
  j.contrast = 0.8;
  color_jitter(feats, j);
  CHECK(feats[0 * 12 + 3] == doctest::Approx(0.1));  // (0-0.5)*0.8+0.5
  CHECK(feats[1 * 12 + 3] == doctest::Approx(0.9));
}

TEST_CASE("color_jitter leaves non-color columns bit-identical") {
  Rng rng(70);
  std::vector<double> feats(30 * 12);
  for (auto& v : feats) v = rng.uniform();
  auto copy = feats;
  ColorJitter j;
  j.brightness = 0.15;
  j.contrast = 1.1;
  color_jitter(feats, j);
  for (int i = 0; i < 30; ++i)
    for (int c = 0; c < 12; ++c)
      if (c < 3 || c > 5) CHECK(feats[i * 12 + c] == copy[i * 12 + c]);
}

TEST_CASE("color_jitter passes colorless blocks through unchanged") {
  std::vector<double> feats(10 * 12);
  Rng rng(71);
  for (int i = 0; i < 10; ++i)
    for (int c = 0; c < 12; ++c)
      feats[i * 12 + c] = (c >= 3 && c < 6) ? 0.0 : rng.uniform();
  auto copy = feats;
  ColorJitter j;
  j.brightness = 0.2;
  j.contrast = 0.9;
  color_jitter(feats, j);
  CHECK(feats == copy);
}

TEST_CASE("color_jitter draw respects the documented ranges") {
  Rng rng(72);
  for (int i = 0; i < 200; ++i) {
    ColorJitter j = ColorJitter::draw(rng);
    CHECK(j.brightness >= -0.2);
    CHECK(j.brightness <= 0.2);
    CHECK(j.contrast >= 0.8);
    CHECK(j.contrast <= 1.2);
  }
}

TEST_SUITE_END();
