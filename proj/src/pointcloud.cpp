#include "u3ds3/pointcloud.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <unordered_map>

#include "u3ds3/kdtree.hpp"
#include "u3ds3/rng.hpp"

namespace u3ds3 {

namespace {

[[noreturn]] void fail(const std::string& msg) { throw std::runtime_error(msg); }

std::string fmt_double(double v) {
  char buf[32];
  auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  (void)ec;
  return std::string(buf, p);
}

}  // namespace

void PointCloud::validate() const {
  size_t n = coords.size();
  if (n == 0) fail("point cloud is empty");
  if (!colors.empty() && colors.size() != n) fail("colors size mismatch");
  if (!normals.empty() && normals.size() != n) fail("normals size mismatch");
  if (!gt_labels.empty() && gt_labels.size() != n) fail("labels size mismatch");
  for (size_t i = 0; i < n; ++i) {
    for (int a = 0; a < 3; ++a)
      if (!std::isfinite(coords[i][a])) fail("non-finite coordinate at point " + std::to_string(i));
  }
  for (const auto& c : colors)
    for (int a = 0; a < 3; ++a)
      if (!(c[a] >= 0.0 && c[a] <= 1.0)) fail("color channel outside [0,1]");
  for (const auto& m : normals) {
    double norm = std::sqrt(m[0] * m[0] + m[1] * m[1] + m[2] * m[2]);
    if (std::abs(norm - 1.0) > 1e-6) fail("normal is not unit length");
  }
}

PointCloud load_ply(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail("cannot open " + path);

  std::string line;
  size_t lineno = 0;
  auto next_line = [&]() -> bool {
    while (std::getline(in, line)) {
      ++lineno;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      return true;
    }
    return false;
  };
  auto parse_error = [&](const std::string& what) {
    fail(path + ":" + std::to_string(lineno) + ": " + what);
  };

  if (!next_line() || line != "ply") parse_error("missing ply magic");

  size_t vertex_count = 0;
  std::vector<std::string> props;
  bool in_vertex = false, saw_format = false;
  while (next_line()) {
    std::istringstream ss(line);
    std::string tok;
    ss >> tok;
    if (tok == "comment" || tok.empty()) continue;
    if (tok == "format") {
      std::string kind;
      ss >> kind;
      if (kind != "ascii") parse_error("only ascii PLY is supported");
      saw_format = true;
    } else if (tok == "element") {
      std::string name;
      size_t count;
      ss >> name >> count;
      in_vertex = (name == "vertex");
      if (in_vertex) vertex_count = count;
    } else if (tok == "property") {
      if (!in_vertex) continue;
      std::string type, name;
      ss >> type >> name;
      if (type == "list") parse_error("list property not supported on vertex");
      props.push_back(name);
    } else if (tok == "end_header") {
      break;
    } else if (tok != "ply") {
      parse_error("unknown header token '" + tok + "'");
    }
  }
  if (!saw_format) fail(path + ": header has no format line");
  if (vertex_count == 0) fail(path + ": no vertex element");

  int ix = -1, iy = -1, iz = -1, ir = -1, ig = -1, ib = -1;
  int inx = -1, iny = -1, inz = -1, ilabel = -1;
  for (int i = 0; i < static_cast<int>(props.size()); ++i) {
    const std::string& p = props[i];
    if (p == "x") ix = i;
    else if (p == "y") iy = i;
    else if (p == "z") iz = i;
    else if (p == "red") ir = i;
    else if (p == "green") ig = i;
    else if (p == "blue") ib = i;
    else if (p == "nx") inx = i;
    else if (p == "ny") iny = i;
    else if (p == "nz") inz = i;
    else if (p == "label") ilabel = i;
  }
  if (ix < 0 || iy < 0 || iz < 0) fail(path + ": x/y/z properties missing");
  bool has_color = ir >= 0 && ig >= 0 && ib >= 0;
  bool has_normal = inx >= 0 && iny >= 0 && inz >= 0;

  PointCloud cloud;
  cloud.scene_id = path;
  cloud.coords.reserve(vertex_count);
  if (has_color) cloud.colors.reserve(vertex_count);
  if (has_normal) cloud.normals.reserve(vertex_count);
  if (ilabel >= 0) cloud.gt_labels.reserve(vertex_count);

  std::vector<double> row(props.size());
  for (size_t v = 0; v < vertex_count; ++v) {
    if (!next_line()) fail(path + ":" + std::to_string(lineno) + ": vertex count mismatch");
    std::istringstream ss(line);
    for (size_t c = 0; c < props.size(); ++c) {
      if (!(ss >> row[c])) parse_error("vertex count mismatch");
    }
    Vec3 p = {row[ix], row[iy], row[iz]};
    for (int a = 0; a < 3; ++a)
      if (!std::isfinite(p[a])) parse_error("non-finite coordinate");
    cloud.coords.push_back(p);
    if (has_color)
      cloud.colors.push_back({row[ir] / 255.0, row[ig] / 255.0, row[ib] / 255.0});
    if (has_normal) {
      Vec3 n = {row[inx], row[iny], row[inz]};
      double norm = std::sqrt(n[0] * n[0] + n[1] * n[1] + n[2] * n[2]);
      if (norm > 0) for (int a = 0; a < 3; ++a) n[a] /= norm;
      cloud.normals.push_back(n);
    }
    if (ilabel >= 0) cloud.gt_labels.push_back(static_cast<int32_t>(row[ilabel]));
  }
  return cloud;
}

void save_ply(const PointCloud& cloud, const std::string& path) {
  std::ofstream out(path);
  if (!out) fail("cannot write " + path);
  size_t n = cloud.size();
  out << "ply\nformat ascii 1.0\nelement vertex " << n << "\n";
  out << "property float x\nproperty float y\nproperty float z\n";
  if (cloud.has_colors())
    out << "property uchar red\nproperty uchar green\nproperty uchar blue\n";
  if (cloud.has_normals())
    out << "property float nx\nproperty float ny\nproperty float nz\n";
  if (cloud.has_labels()) out << "property int label\n";
  out << "end_header\n";
  for (size_t i = 0; i < n; ++i) {
    out << fmt_double(cloud.coords[i][0]) << ' ' << fmt_double(cloud.coords[i][1])
        << ' ' << fmt_double(cloud.coords[i][2]);
    if (cloud.has_colors()) {
      for (int a = 0; a < 3; ++a) {
        int v = static_cast<int>(std::lround(cloud.colors[i][a] * 255.0));
        out << ' ' << std::clamp(v, 0, 255);
      }
    }
    if (cloud.has_normals())
      for (int a = 0; a < 3; ++a) out << ' ' << fmt_double(cloud.normals[i][a]);
    if (cloud.has_labels()) out << ' ' << cloud.gt_labels[i];
    out << '\n';
  }
  if (!out) fail("write failed for " + path);
}

namespace {

struct CellKey {
  int64_t x, y, z;
  bool operator<(const CellKey& o) const {
    if (x != o.x) return x < o.x;
    if (y != o.y) return y < o.y;
    return z < o.z;
  }
};

Vec3 min_coords(const PointCloud& cloud) {
  Vec3 mn = cloud.coords[0];
  for (const auto& p : cloud.coords)
    for (int a = 0; a < 3; ++a) mn[a] = std::min(mn[a], p[a]);
  return mn;
}

Vec3 max_coords(const PointCloud& cloud) {
  Vec3 mx = cloud.coords[0];
  for (const auto& p : cloud.coords)
    for (int a = 0; a < 3; ++a) mx[a] = std::max(mx[a], p[a]);
  return mx;
}

}  // namespace

PointCloud grid_downsample(const PointCloud& cloud, double cell) {
  if (cell <= 0) fail("grid_downsample: cell must be positive");
  cloud.validate();
  Vec3 mn = min_coords(cloud);

  struct Acc {
    Vec3 coord{0, 0, 0}, color{0, 0, 0}, normal{0, 0, 0};
    std::map<int32_t, uint32_t> labels;
    uint32_t count = 0;
  };
  std::map<CellKey, Acc> cells;
  for (size_t i = 0; i < cloud.size(); ++i) {
    const Vec3& p = cloud.coords[i];
    CellKey key = {static_cast<int64_t>(std::floor((p[0] - mn[0]) / cell)),
                   static_cast<int64_t>(std::floor((p[1] - mn[1]) / cell)),
                   static_cast<int64_t>(std::floor((p[2] - mn[2]) / cell))};
    Acc& acc = cells[key];
    for (int a = 0; a < 3; ++a) acc.coord[a] += p[a];
    if (cloud.has_colors())
      for (int a = 0; a < 3; ++a) acc.color[a] += cloud.colors[i][a];
    if (cloud.has_normals())
      for (int a = 0; a < 3; ++a) acc.normal[a] += cloud.normals[i][a];
    if (cloud.has_labels()) acc.labels[cloud.gt_labels[i]]++;
    acc.count++;
  }

  PointCloud out;
  out.scene_id = cloud.scene_id;
  out.coords.reserve(cells.size());
  for (const auto& [key, acc] : cells) {
    double inv = 1.0 / acc.count;
    out.coords.push_back({acc.coord[0] * inv, acc.coord[1] * inv, acc.coord[2] * inv});
    if (cloud.has_colors()) {
      Vec3 c = {acc.color[0] * inv, acc.color[1] * inv, acc.color[2] * inv};
      for (int a = 0; a < 3; ++a) c[a] = std::clamp(c[a], 0.0, 1.0);
      out.colors.push_back(c);
    }
    if (cloud.has_normals()) {
      Vec3 nrm = acc.normal;
      double norm = std::sqrt(nrm[0] * nrm[0] + nrm[1] * nrm[1] + nrm[2] * nrm[2]);
      if (norm > 1e-12) {
        for (int a = 0; a < 3; ++a) nrm[a] /= norm;
      } else {
        nrm = {0, 0, 1};
      }
      out.normals.push_back(nrm);
    }
    if (cloud.has_labels()) {
      int32_t best = -1;
      uint32_t best_count = 0;
      for (const auto& [label, count] : acc.labels) {
        if (count > best_count) {  // map order makes ties pick the smallest id
          best = label;
          best_count = count;
        }
      }
      out.gt_labels.push_back(best);
    }
  }
  return out;
}

size_t estimate_normals(PointCloud& cloud, uint32_t k) {
  cloud.validate();
  if (cloud.size() <= k || k < 3) fail("estimate_normals: need N > k >= 3");
  KdTree tree(cloud.coords);
  cloud.normals.assign(cloud.size(), {0, 0, 1});
  size_t degenerate = 0;

  for (size_t i = 0; i < cloud.size(); ++i) {
    auto nn = tree.knn(cloud.coords[i], k);
    Vec3 mean = {0, 0, 0};
    for (uint32_t j : nn)
      for (int a = 0; a < 3; ++a) mean[a] += cloud.coords[j][a];
    for (int a = 0; a < 3; ++a) mean[a] /= nn.size();

    double cov[3][3] = {};
    for (uint32_t j : nn) {
      Vec3 d;
      for (int a = 0; a < 3; ++a) d[a] = cloud.coords[j][a] - mean[a];
      for (int a = 0; a < 3; ++a)
        for (int b = 0; b < 3; ++b) cov[a][b] += d[a] * d[b];
    }
    double scale = 0;
    for (int a = 0; a < 3; ++a) scale = std::max(scale, cov[a][a]);
    if (scale < 1e-18) {
      ++degenerate;
      continue;
    }

    // Smallest eigenvector via two rounds of deflated power iteration on the
    // 3x3 covariance: find the top eigenvector, deflate, find the next, and
    // take the cross product. Robust for the symmetric PSD case.
    auto matvec = [&](const Vec3& v, const double m[3][3]) {
      Vec3 r;
      for (int a = 0; a < 3; ++a)
        r[a] = m[a][0] * v[0] + m[a][1] * v[1] + m[a][2] * v[2];
      return r;
    };
    auto normalize = [](Vec3& v) {
      double s = std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
      if (s > 0) for (int a = 0; a < 3; ++a) v[a] /= s;
      return s;
    };
    auto power_top = [&](const double m[3][3]) {
      Vec3 best = {1, 0, 0};
      double best_len = 0;
      for (int s = 0; s < 3; ++s) {
        Vec3 v = {s == 0 ? 1.0 : 0.0, s == 1 ? 1.0 : 0.0, s == 2 ? 1.0 : 0.0};
        for (int it = 0; it < 60; ++it) {
          v = matvec(v, m);
          if (normalize(v) == 0) break;
        }
        Vec3 mv = matvec(v, m);
        double len = std::sqrt(mv[0] * mv[0] + mv[1] * mv[1] + mv[2] * mv[2]);
        if (len > best_len) {
          best_len = len;
          best = v;
        }
      }
      return std::pair<Vec3, double>(best, best_len);
    };

    auto [e1, l1] = power_top(cov);
    double defl[3][3];
    for (int a = 0; a < 3; ++a)
      for (int b = 0; b < 3; ++b) defl[a][b] = cov[a][b] - l1 * e1[a] * e1[b];
    auto [e2, l2] = power_top(defl);
    if (l2 < 1e-12 * l1) {
      // rank-1 neighborhood (collinear points): no stable normal
      ++degenerate;
      continue;
    }
    Vec3 nrm = {e1[1] * e2[2] - e1[2] * e2[1], e1[2] * e2[0] - e1[0] * e2[2],
                e1[0] * e2[1] - e1[1] * e2[0]};
    if (normalize(nrm) == 0) {
      ++degenerate;
      continue;
    }
    constexpr double kTie = 1e-9;
    bool flip = nrm[2] < -kTie ||
                (std::abs(nrm[2]) <= kTie &&
                 (nrm[0] < -kTie || (std::abs(nrm[0]) <= kTie && nrm[1] < 0)));
    if (flip)
      for (int a = 0; a < 3; ++a) nrm[a] = -nrm[a];
    cloud.normals[i] = nrm;
  }
  return degenerate;
}

Block assemble_block(const PointCloud& cloud, const std::vector<uint32_t>& indices,
                     const Vec3& scene_min, const Vec3& scene_max) {
  Block block;
  block.point_indices = indices;
  size_t n = indices.size();
  block.features.assign(n * Block::kDim, 0.0);
  if (cloud.has_labels()) block.gt_labels.resize(n);

  Vec3 bmin = cloud.coords[indices[0]], bmax = cloud.coords[indices[0]];
  for (uint32_t idx : indices) {
    for (int a = 0; a < 3; ++a) {
      bmin[a] = std::min(bmin[a], cloud.coords[idx][a]);
      bmax[a] = std::max(bmax[a], cloud.coords[idx][a]);
    }
  }

  for (size_t i = 0; i < n; ++i) {
    uint32_t idx = indices[i];
    double* f = &block.features[i * Block::kDim];
    for (int a = 0; a < 3; ++a) {
      double ext = bmax[a] - bmin[a];
      f[a] = ext > 0 ? (cloud.coords[idx][a] - bmin[a]) / ext : 0.5;
    }
    if (cloud.has_colors())
      for (int a = 0; a < 3; ++a) f[3 + a] = cloud.colors[idx][a];
    for (int a = 0; a < 3; ++a) f[6 + a] = cloud.normals[idx][a];
    for (int a = 0; a < 3; ++a) {
      double ext = scene_max[a] - scene_min[a];
      f[9 + a] = ext > 0 ? (cloud.coords[idx][a] - scene_min[a]) / ext : 0.5;
    }
    if (cloud.has_labels()) block.gt_labels[i] = cloud.gt_labels[idx];
  }
  return block;
}

std::vector<Block> sample_blocks(const PointCloud& cloud, const BlockParams& params) {
  cloud.validate();
  if (!cloud.has_normals()) fail("sample_blocks: normals required (run estimate_normals)");
  Vec3 mn = min_coords(cloud);
  Vec3 mx = max_coords(cloud);

  std::map<std::pair<int64_t, int64_t>, std::vector<uint32_t>> tiles;
  for (size_t i = 0; i < cloud.size(); ++i) {
    int64_t tx = static_cast<int64_t>(std::floor((cloud.coords[i][0] - mn[0]) / params.block));
    int64_t ty = static_cast<int64_t>(std::floor((cloud.coords[i][1] - mn[1]) / params.block));
    tiles[{tx, ty}].push_back(static_cast<uint32_t>(i));
  }

  std::vector<Block> blocks;
  uint64_t tile_counter = 0;
  for (auto& [key, members] : tiles) {
    ++tile_counter;
    if (members.size() < params.min_pts) continue;
    Rng rng = derive_rng(params.seed, {0x6b1u, tile_counter});
    std::vector<uint32_t> chosen;
    chosen.reserve(params.pts);
    if (members.size() >= params.pts) {
      std::vector<uint32_t> pool = members;
      rng.shuffle(pool);
      chosen.assign(pool.begin(), pool.begin() + params.pts);
    } else {
      chosen = members;
      while (chosen.size() < params.pts)
        chosen.push_back(members[rng.uniform_index(members.size())]);
    }
    blocks.push_back(assemble_block(cloud, chosen, mn, mx));
  }
  if (blocks.empty()) fail("sample_blocks: no tile reached the minimum point count");
  return blocks;
}

}  // namespace u3ds3
