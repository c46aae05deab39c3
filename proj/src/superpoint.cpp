#include "u3ds3/superpoint.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <queue>
#include <stdexcept>
#include <tuple>

#include "u3ds3/rng.hpp"

namespace u3ds3 {

namespace {

struct VoxKey {
  std::int64_t x, y, z;
  bool operator<(const VoxKey& o) const {
    return std::tie(x, y, z) < std::tie(o.x, o.y, o.z);
  }
};

double sq(double v) { return v * v; }

double norm3(const std::array<double, 3>& v) {
  return std::sqrt(sq(v[0]) + sq(v[1]) + sq(v[2]));
}

}  // namespace

void SuperpointPartition::validate(std::size_t n_points) const {
  if (sp_id.size() != n_points)
    throw std::runtime_error("SuperpointPartition: sp_id size mismatch");
  int s = count();
  std::vector<std::int64_t> seen(s, 0);
  for (std::size_t i = 0; i < sp_id.size(); ++i) {
    if (sp_id[i] < 0 || sp_id[i] >= s)
      throw std::runtime_error("SuperpointPartition: id out of range at point " + std::to_string(i));
    ++seen[sp_id[i]];
  }
  std::int64_t total = 0;
  for (int j = 0; j < s; ++j) {
    if (seen[j] == 0) throw std::runtime_error("SuperpointPartition: empty superpoint " + std::to_string(j));
    if (seen[j] != sp_sizes[j]) throw std::runtime_error("SuperpointPartition: size mismatch for " + std::to_string(j));
    total += sp_sizes[j];
  }
  if (total != static_cast<std::int64_t>(n_points))
    throw std::runtime_error("SuperpointPartition: sizes do not cover all points");
}

SuperpointPartition SuperpointPartition::from_labels(const PointCloud& cloud,
                                                     std::vector<int> ids) {
  SuperpointPartition p;
  std::size_t n = cloud.coords.size();
  if (ids.size() != n) throw std::runtime_error("from_labels: id count mismatch");
  int s = 0;
  for (int v : ids) {
    if (v < 0) throw std::runtime_error("from_labels: negative id");
    s = std::max(s, v + 1);
  }
  p.sp_id = std::move(ids);
  p.sp_sizes.assign(s, 0);
  p.sp_centroid.assign(s, {0.0, 0.0, 0.0});
  p.sp_normal_sum.assign(s, {0.0, 0.0, 0.0});
  for (std::size_t i = 0; i < n; ++i) {
    int j = p.sp_id[i];
    ++p.sp_sizes[j];
    for (int a = 0; a < 3; ++a) p.sp_centroid[j][a] += cloud.coords[i][a];
    if (!cloud.normals.empty()) {
      std::array<double, 3> nv = cloud.normals[i];
      double len = norm3(nv);
      if (len > 1e-12)
        for (int a = 0; a < 3; ++a) p.sp_normal_sum[j][a] += nv[a] / len;
    }
  }
  for (int j = 0; j < s; ++j) {
    if (p.sp_sizes[j] == 0) throw std::runtime_error("from_labels: empty superpoint id " + std::to_string(j));
    for (int a = 0; a < 3; ++a) p.sp_centroid[j][a] /= static_cast<double>(p.sp_sizes[j]);
  }
  return p;
}

SuperpointPartition vccs_superpoints(const PointCloud& cloud, double voxel_res,
                                     double seed_res, const VccsWeights& w) {
  std::size_t n = cloud.coords.size();
  if (n == 0) throw std::runtime_error("vccs_superpoints: empty cloud");
  if (cloud.normals.empty())
    throw std::runtime_error("vccs_superpoints: cloud has no normals; run estimate_normals first");
  if (!(voxel_res > 0.0) || !(seed_res > 0.0) || !(voxel_res < seed_res))
    throw std::runtime_error("vccs_superpoints: require 0 < voxel_res < seed_res");

  std::array<double, 3> lo = cloud.coords[0];
  for (const auto& c : cloud.coords)
    for (int a = 0; a < 3; ++a) lo[a] = std::min(lo[a], c[a]);

  // Bin points into fine voxels; std::map gives a deterministic voxel order.
  std::map<VoxKey, int> vox_of_key;
  std::vector<VoxKey> keys;
  std::vector<int> point_vox(n);
  for (std::size_t i = 0; i < n; ++i) {
    VoxKey k{static_cast<std::int64_t>(std::floor((cloud.coords[i][0] - lo[0]) / voxel_res)),
             static_cast<std::int64_t>(std::floor((cloud.coords[i][1] - lo[1]) / voxel_res)),
             static_cast<std::int64_t>(std::floor((cloud.coords[i][2] - lo[2]) / voxel_res))};
    auto [it, inserted] = vox_of_key.try_emplace(k, static_cast<int>(keys.size()));
    if (inserted) keys.push_back(k);
    point_vox[i] = it->second;
  }
  int nv = static_cast<int>(keys.size());

  struct VoxFeat {
    std::array<double, 3> pos{0, 0, 0};
    std::array<double, 3> color{0, 0, 0};
    std::array<double, 3> normal{0, 0, 0};
    std::int64_t npts = 0;
  };
  std::vector<VoxFeat> vox(nv);
  bool has_color = !cloud.colors.empty();
  for (std::size_t i = 0; i < n; ++i) {
    VoxFeat& f = vox[point_vox[i]];
    ++f.npts;
    for (int a = 0; a < 3; ++a) {
      f.pos[a] += cloud.coords[i][a];
      if (has_color) f.color[a] += cloud.colors[i][a];
      f.normal[a] += cloud.normals[i][a];
    }
  }
  for (VoxFeat& f : vox) {
    for (int a = 0; a < 3; ++a) {
      f.pos[a] /= static_cast<double>(f.npts);
      f.color[a] /= static_cast<double>(f.npts);
    }
    double len = norm3(f.normal);
    if (len > 1e-12)
      for (int a = 0; a < 3; ++a) f.normal[a] /= len;
  }

  // One seed per occupied seed-resolution cell: the voxel nearest the cell
  // center (ties: lowest voxel index).
  std::map<VoxKey, std::pair<double, int>> seed_cells;
  for (int v = 0; v < nv; ++v) {
    VoxKey sc{static_cast<std::int64_t>(std::floor((vox[v].pos[0] - lo[0]) / seed_res)),
              static_cast<std::int64_t>(std::floor((vox[v].pos[1] - lo[1]) / seed_res)),
              static_cast<std::int64_t>(std::floor((vox[v].pos[2] - lo[2]) / seed_res))};
    std::array<double, 3> center{lo[0] + (sc.x + 0.5) * seed_res,
                                 lo[1] + (sc.y + 0.5) * seed_res,
                                 lo[2] + (sc.z + 0.5) * seed_res};
    double d2 = sq(vox[v].pos[0] - center[0]) + sq(vox[v].pos[1] - center[1]) +
                sq(vox[v].pos[2] - center[2]);
    auto it = seed_cells.find(sc);
    if (it == seed_cells.end() || d2 < it->second.first)
      seed_cells.insert_or_assign(sc, std::make_pair(d2, v));
  }
  std::vector<int> seed_vox;
  seed_vox.reserve(seed_cells.size());
  for (const auto& [k, v] : seed_cells) seed_vox.push_back(v.second);
  std::sort(seed_vox.begin(), seed_vox.end());

  struct Region {
    std::array<double, 3> pos{0, 0, 0};
    std::array<double, 3> color{0, 0, 0};
    std::array<double, 3> normal{0, 0, 0};
    std::int64_t nvox = 0;
  };
  int nseeds = static_cast<int>(seed_vox.size());
  std::vector<Region> regions(nseeds);

  auto region_distance = [&](const Region& r, int v) {
    double inv = r.nvox > 0 ? 1.0 / static_cast<double>(r.nvox) : 1.0;
    std::array<double, 3> rp{r.pos[0] * inv, r.pos[1] * inv, r.pos[2] * inv};
    std::array<double, 3> rc{r.color[0] * inv, r.color[1] * inv, r.color[2] * inv};
    double dx = std::sqrt(sq(vox[v].pos[0] - rp[0]) + sq(vox[v].pos[1] - rp[1]) +
                          sq(vox[v].pos[2] - rp[2]));
    double dc2 = sq(vox[v].color[0] - rc[0]) + sq(vox[v].color[1] - rc[1]) +
                 sq(vox[v].color[2] - rc[2]);
    double nr = norm3(r.normal);
    double cosn = 0.0;
    if (nr > 1e-12) {
      double dot = vox[v].normal[0] * r.normal[0] + vox[v].normal[1] * r.normal[1] +
                   vox[v].normal[2] * r.normal[2];
      double nvn = norm3(vox[v].normal);
      if (nvn > 1e-12) cosn = dot / (nr * nvn);
    }
    return std::sqrt(w.spatial * sq(dx / (3.0 * seed_res)) + w.color * dc2 +
                     w.normal * sq(1.0 - std::abs(cosn)));
  };

  using Entry = std::tuple<double, int, int>;  // (distance, region, voxel)
  std::priority_queue<Entry, std::vector<Entry>, std::greater<Entry>> pq;
  std::vector<int> vox_sp(nv, -1);
  for (int s = 0; s < nseeds; ++s) {
    regions[s].nvox = 0;
    pq.emplace(0.0, s, seed_vox[s]);
  }

  auto neighbors = [&](int v, auto&& visit) {
    const VoxKey& k = keys[v];
    for (int dx = -1; dx <= 1; ++dx)
      for (int dy = -1; dy <= 1; ++dy)
        for (int dz = -1; dz <= 1; ++dz) {
          if (dx == 0 && dy == 0 && dz == 0) continue;
          auto it = vox_of_key.find(VoxKey{k.x + dx, k.y + dy, k.z + dz});
          if (it != vox_of_key.end()) visit(it->second);
        }
  };

  while (!pq.empty()) {
    auto [d, s, v] = pq.top();
    pq.pop();
    if (vox_sp[v] >= 0) continue;
    vox_sp[v] = s;
    Region& r = regions[s];
    ++r.nvox;
    for (int a = 0; a < 3; ++a) {
      r.pos[a] += vox[v].pos[a];
      r.color[a] += vox[v].color[a];
      r.normal[a] += vox[v].normal[a];
    }
    neighbors(v, [&](int u) {
      if (vox_sp[u] < 0) pq.emplace(region_distance(r, u), s, u);
    });
  }

  // Voxels unreachable from every seed: one region per connected component.
  int next_sp = nseeds;
  std::vector<int> stack;
  for (int v = 0; v < nv; ++v) {
    if (vox_sp[v] >= 0) continue;
    int s = next_sp++;
    stack.assign(1, v);
    vox_sp[v] = s;
    while (!stack.empty()) {
      int cur = stack.back();
      stack.pop_back();
      neighbors(cur, [&](int u) {
        if (vox_sp[u] < 0) {
          vox_sp[u] = s;
          stack.push_back(u);
        }
      });
    }
  }

  // Compact away regions that never claimed a voxel (a seed voxel can be
  // captured by a competing region before its own zero-distance entry pops).
  std::vector<int> remap(next_sp, -1);
  std::vector<char> used(next_sp, 0);
  for (int v = 0; v < nv; ++v) used[vox_sp[v]] = 1;
  int compact = 0;
  for (int s = 0; s < next_sp; ++s)
    if (used[s]) remap[s] = compact++;

  std::vector<int> ids(n);
  for (std::size_t i = 0; i < n; ++i) ids[i] = remap[vox_sp[point_vox[i]]];
  return SuperpointPartition::from_labels(cloud, std::move(ids));
}

SuperpointPartition merge_superpoints(const SuperpointPartition& part, int gamma) {
  if (gamma < 1) throw std::runtime_error("merge_superpoints: gamma must be >= 1");
  int s0 = part.count();
  if (s0 <= gamma) return part;

  std::vector<char> alive(s0, 1);
  std::vector<std::int64_t> sizes = part.sp_sizes;
  std::vector<std::array<double, 3>> cent = part.sp_centroid;
  std::vector<std::array<double, 3>> nsum = part.sp_normal_sum;
  std::vector<int> parent(s0);
  for (int i = 0; i < s0; ++i) parent[i] = i;

  auto cosine = [&](int a, int b) {
    double na = norm3(nsum[a]), nb = norm3(nsum[b]);
    if (na < 1e-12 || nb < 1e-12) return 0.0;
    double dot = nsum[a][0] * nsum[b][0] + nsum[a][1] * nsum[b][1] + nsum[a][2] * nsum[b][2];
    return dot / (na * nb);
  };

  int remaining = s0;
  while (remaining > gamma) {
    int smallest = -1;
    for (int i = 0; i < s0; ++i) {
      if (!alive[i]) continue;
      if (smallest < 0 || sizes[i] < sizes[smallest]) smallest = i;
    }
    // Two nearest neighbors by centroid distance (ties: lowest id).
    int k1 = -1, k2 = -1;
    double d1 = std::numeric_limits<double>::infinity();
    double d2 = std::numeric_limits<double>::infinity();
    for (int j = 0; j < s0; ++j) {
      if (!alive[j] || j == smallest) continue;
      double d = sq(cent[j][0] - cent[smallest][0]) + sq(cent[j][1] - cent[smallest][1]) +
                 sq(cent[j][2] - cent[smallest][2]);
      if (d < d1) {
        d2 = d1;
        k2 = k1;
        d1 = d;
        k1 = j;
      } else if (d < d2) {
        d2 = d;
        k2 = j;
      }
    }
    int target = k1;
    if (k2 >= 0 && cosine(smallest, k2) > cosine(smallest, k1)) target = k2;

    parent[smallest] = target;
    std::int64_t ns = sizes[smallest] + sizes[target];
    for (int a = 0; a < 3; ++a) {
      cent[target][a] = (cent[target][a] * static_cast<double>(sizes[target]) +
                         cent[smallest][a] * static_cast<double>(sizes[smallest])) /
                        static_cast<double>(ns);
      nsum[target][a] += nsum[smallest][a];
    }
    sizes[target] = ns;
    alive[smallest] = 0;
    --remaining;
  }

  auto root = [&](int i) {
    while (parent[i] != i) i = parent[i];
    return i;
  };
  std::vector<int> remap(s0, -1);
  int compact = 0;
  for (int i = 0; i < s0; ++i)
    if (alive[i]) remap[i] = compact++;

  std::vector<int> ids(part.sp_id.size());
  for (std::size_t p = 0; p < ids.size(); ++p) ids[p] = remap[root(part.sp_id[p])];

  SuperpointPartition out;
  out.sp_id = std::move(ids);
  out.sp_sizes.assign(compact, 0);
  out.sp_centroid.assign(compact, {0, 0, 0});
  out.sp_normal_sum.assign(compact, {0, 0, 0});
  for (int i = 0; i < s0; ++i) {
    if (!alive[i]) continue;
    int j = remap[i];
    out.sp_sizes[j] = sizes[i];
    out.sp_centroid[j] = cent[i];
    out.sp_normal_sum[j] = nsum[i];
  }
  return out;
}

Plane ransac_plane(const PointCloud& cloud, int iters, double thresh,
                   std::uint64_t seed) {
  std::size_t n = cloud.coords.size();
  if (n < 3) throw std::runtime_error("ransac_plane: need at least 3 points");
  if (iters < 1) throw std::runtime_error("ransac_plane: iters must be >= 1");
  if (!(thresh > 0.0)) throw std::runtime_error("ransac_plane: thresh must be positive");

  Rng rng = derive_rng(seed, {0x7a5ac});
  std::array<double, 3> best_n{0, 0, 1};
  double best_d = 0.0;
  std::int64_t best_count = -1;

  for (int it = 0; it < iters; ++it) {
    std::size_t ia = rng.uniform_index(n);
    std::size_t ib = rng.uniform_index(n);
    std::size_t ic = rng.uniform_index(n);
    if (ia == ib || ia == ic || ib == ic) continue;
    const auto& a = cloud.coords[ia];
    const auto& b = cloud.coords[ib];
    const auto& c = cloud.coords[ic];
    std::array<double, 3> u{b[0] - a[0], b[1] - a[1], b[2] - a[2]};
    std::array<double, 3> v{c[0] - a[0], c[1] - a[1], c[2] - a[2]};
    std::array<double, 3> nv{u[1] * v[2] - u[2] * v[1], u[2] * v[0] - u[0] * v[2],
                             u[0] * v[1] - u[1] * v[0]};
    double len = norm3(nv);
    if (len < 1e-12) continue;
    for (double& x : nv) x /= len;
    double d = -(nv[0] * a[0] + nv[1] * a[1] + nv[2] * a[2]);
    std::int64_t count = 0;
    for (const auto& p : cloud.coords)
      if (std::abs(nv[0] * p[0] + nv[1] * p[1] + nv[2] * p[2] + d) <= thresh) ++count;
    if (count > best_count) {
      best_count = count;
      best_n = nv;
      best_d = d;
    }
  }
  if (best_count < 0)
    throw std::runtime_error("ransac_plane: all hypotheses degenerate after " +
                             std::to_string(iters) + " attempts");

  Plane plane;
  plane.inlier_mask.assign(n, 0);
  std::array<double, 3> mean{0, 0, 0};
  std::int64_t m = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& p = cloud.coords[i];
    if (std::abs(best_n[0] * p[0] + best_n[1] * p[1] + best_n[2] * p[2] + best_d) <= thresh) {
      plane.inlier_mask[i] = 1;
      for (int a = 0; a < 3; ++a) mean[a] += p[a];
      ++m;
    }
  }
  for (int a = 0; a < 3; ++a) mean[a] /= static_cast<double>(m);

  // Least-squares refit: smallest covariance eigenvector via power iteration
  // on the two dominant directions and a cross product.
  double cov[3][3] = {{0, 0, 0}, {0, 0, 0}, {0, 0, 0}};
  for (std::size_t i = 0; i < n; ++i) {
    if (!plane.inlier_mask[i]) continue;
    double dx = cloud.coords[i][0] - mean[0];
    double dy = cloud.coords[i][1] - mean[1];
    double dz = cloud.coords[i][2] - mean[2];
    cov[0][0] += dx * dx; cov[0][1] += dx * dy; cov[0][2] += dx * dz;
    cov[1][1] += dy * dy; cov[1][2] += dy * dz; cov[2][2] += dz * dz;
  }
  cov[1][0] = cov[0][1]; cov[2][0] = cov[0][2]; cov[2][1] = cov[1][2];

  auto matvec = [&](const double mtx[3][3], const std::array<double, 3>& x) {
    return std::array<double, 3>{mtx[0][0] * x[0] + mtx[0][1] * x[1] + mtx[0][2] * x[2],
                                 mtx[1][0] * x[0] + mtx[1][1] * x[1] + mtx[1][2] * x[2],
                                 mtx[2][0] * x[0] + mtx[2][1] * x[1] + mtx[2][2] * x[2]};
  };
  auto power_top = [&](const double mtx[3][3]) {
    std::array<double, 3> best{1, 0, 0};
    double best_lambda = -1.0;
    const std::array<std::array<double, 3>, 3> starts{{{1, 0, 0}, {0, 1, 0}, {0, 0, 1}}};
    for (const auto& s : starts) {
      std::array<double, 3> x = s;
      for (int it = 0; it < 64; ++it) {
        auto y = matvec(mtx, x);
        double len = norm3(y);
        if (len < 1e-300) break;
        for (int a = 0; a < 3; ++a) x[a] = y[a] / len;
      }
      auto y = matvec(mtx, x);
      double lambda = x[0] * y[0] + x[1] * y[1] + x[2] * y[2];
      if (lambda > best_lambda) {
        best_lambda = lambda;
        best = x;
      }
    }
    return std::make_pair(best, best_lambda);
  };

  auto [e1, l1] = power_top(cov);
  double defl[3][3];
  for (int r = 0; r < 3; ++r)
    for (int c2 = 0; c2 < 3; ++c2) defl[r][c2] = cov[r][c2] - l1 * e1[r] * e1[c2];
  auto [e2, l2] = power_top(defl);
  (void)l2;
  std::array<double, 3> nrm{e1[1] * e2[2] - e1[2] * e2[1], e1[2] * e2[0] - e1[0] * e2[2],
                            e1[0] * e2[1] - e1[1] * e2[0]};
  double len = norm3(nrm);
  if (len < 1e-12) {
    nrm = best_n;
    len = 1.0;
  }
  for (double& x : nrm) x /= len;

  constexpr double kTie = 1e-9;
  bool flip = false;
  if (nrm[2] < -kTie) flip = true;
  else if (std::abs(nrm[2]) <= kTie) {
    if (nrm[0] < -kTie) flip = true;
    else if (std::abs(nrm[0]) <= kTie && nrm[1] < 0.0) flip = true;
  }
  if (flip)
    for (double& x : nrm) x = -x;

  plane.normal = nrm;
  plane.d = -(nrm[0] * mean[0] + nrm[1] * mean[1] + nrm[2] * mean[2]);
  return plane;
}

SuperpointPartition compute_superpoints(const PointCloud& cloud,
                                        const SuperpointParams& params) {
  std::size_t n = cloud.coords.size();
  if (n == 0) throw std::runtime_error("compute_superpoints: empty cloud");
  SuperpointPartition part;
  if (params.road_ransac) {
    Plane plane = ransac_plane(cloud, params.ransac_iters, params.ransac_thresh,
                               params.seed);
    std::vector<std::size_t> rest;
    for (std::size_t i = 0; i < n; ++i)
      if (!plane.inlier_mask[i]) rest.push_back(i);
    std::vector<int> ids(n, 0);
    if (!rest.empty()) {
      PointCloud sub;
      sub.scene_id = cloud.scene_id;
      sub.coords.reserve(rest.size());
      for (std::size_t i : rest) sub.coords.push_back(cloud.coords[i]);
      if (!cloud.colors.empty())
        for (std::size_t i : rest) sub.colors.push_back(cloud.colors[i]);
      if (!cloud.normals.empty())
        for (std::size_t i : rest) sub.normals.push_back(cloud.normals[i]);
      SuperpointPartition sp =
          vccs_superpoints(sub, params.voxel_res, params.seed_res, params.weights);
      for (std::size_t j = 0; j < rest.size(); ++j) ids[rest[j]] = sp.sp_id[j] + 1;
    }
    part = SuperpointPartition::from_labels(cloud, std::move(ids));
  } else {
    part = vccs_superpoints(cloud, params.voxel_res, params.seed_res, params.weights);
  }
  return merge_superpoints(part, params.gamma);
}

void save_superpoints(const std::string& path, const std::vector<int>& sp_id) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("save_superpoints: cannot open " + path);
  for (int v : sp_id) os << v << "\n";
  if (!os) throw std::runtime_error("save_superpoints: write failed for " + path);
}

std::vector<int> load_superpoints(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("load_superpoints: cannot open " + path);
  std::vector<int> ids;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::size_t pos = 0;
    int v;
    try {
      v = std::stoi(line, &pos);
    } catch (const std::exception&) {
      throw std::runtime_error("load_superpoints: " + path + " line " +
                               std::to_string(lineno) + ": not an integer");
    }
    if (v < 0)
      throw std::runtime_error("load_superpoints: " + path + " line " +
                               std::to_string(lineno) + ": negative id");
    ids.push_back(v);
  }
  return ids;
}

}  // namespace u3ds3
