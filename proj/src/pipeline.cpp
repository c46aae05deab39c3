#include "u3ds3/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include "u3ds3/checkpoint.hpp"
#include "u3ds3/clustering.hpp"
#include "u3ds3/eval.hpp"
#include "u3ds3/superpoint.hpp"
#include "u3ds3/synthetic.hpp"
#include "u3ds3/voxel.hpp"

namespace fs = std::filesystem;

namespace u3ds3 {

std::array<double, 3> class_color(int label) {
  static const std::array<std::array<double, 3>, 20> kPalette = {{
      {0.894, 0.102, 0.110}, {0.216, 0.494, 0.722}, {0.302, 0.686, 0.290},
      {0.596, 0.306, 0.639}, {1.000, 0.498, 0.000}, {1.000, 1.000, 0.200},
      {0.651, 0.337, 0.157}, {0.969, 0.506, 0.749}, {0.600, 0.600, 0.600},
      {0.122, 0.471, 0.706}, {0.682, 0.780, 0.910}, {0.090, 0.745, 0.812},
      {0.737, 0.741, 0.133}, {0.804, 0.521, 0.247}, {0.580, 0.404, 0.741},
      {0.549, 0.337, 0.294}, {0.890, 0.467, 0.761}, {0.498, 0.498, 0.498},
      {0.737, 0.502, 0.741}, {0.173, 0.627, 0.173},
  }};
  if (label < 0) return {0.0, 0.0, 0.0};
  return kPalette[static_cast<std::size_t>(label) % kPalette.size()];
}

void run_gen_synth(const std::string& spec_path, const std::string& out_ply,
                   bool override_seed, std::uint64_t seed) {
  SceneSpec spec = parse_scene_spec(spec_path);
  if (override_seed) spec.seed = seed;
  spec.validate();
  PointCloud cloud = gen_synthetic(spec);
  save_ply(cloud, out_ply);
  std::printf("gen-synth: %zu points, %u classes -> %s\n", cloud.size(),
              spec.num_classes(), out_ply.c_str());
}

namespace {

std::string stem_of(const std::string& path) {
  return fs::path(path).stem().string();
}

}  // namespace

void run_preprocess(const std::string& in_ply, const std::string& out_dir,
                    const Config& cfg) {
  cfg.validate();
  PointCloud raw = load_ply(in_ply);
  raw.validate();
  PointCloud down = grid_downsample(raw, cfg.cell);
  std::size_t degenerate = estimate_normals(down, 20);
  fs::create_directories(out_dir);
  std::string stem = stem_of(in_ply);
  std::string ply_out = (fs::path(out_dir) / (stem + ".ply")).string();
  save_ply(down, ply_out);
  BlockParams bp;
  bp.block = cfg.block;
  bp.pts = static_cast<std::uint32_t>(cfg.pts);
  bp.seed = cfg.seed;
  std::vector<Block> blocks = sample_blocks(down, bp);
  std::string blocks_out = (fs::path(out_dir) / (stem + ".blocks")).string();
  save_blocks_file(blocks_out, blocks);
  std::printf("preprocess: %zu -> %zu points, %zu blocks, %zu degenerate normals -> %s\n",
              raw.size(), down.size(), blocks.size(), degenerate, out_dir.c_str());
}

void run_superpoints(const std::string& in_ply, const std::string& out_sp,
                     const Config& cfg) {
  cfg.validate();
  PointCloud cloud = load_ply(in_ply);
  SuperpointParams sp;
  sp.voxel_res = cfg.cell;
  sp.seed_res = cfg.road_ransac ? 2.0 : 0.5;
  sp.gamma = cfg.gamma;
  sp.road_ransac = cfg.road_ransac;
  sp.seed = cfg.seed;
  SuperpointPartition part = compute_superpoints(cloud, sp);
  part.validate(cloud.size());
  save_superpoints(out_sp, part.sp_id);
  std::printf("superpoints: %zu points -> %d superpoints -> %s\n", cloud.size(),
              part.count(), out_sp.c_str());
}

std::vector<SceneData> load_train_data(const std::string& data_dir, const Config& cfg) {
  if (!fs::is_directory(data_dir))
    throw std::runtime_error("load_train_data: not a directory: " + data_dir);
  std::vector<std::string> stems;
  for (const auto& entry : fs::directory_iterator(data_dir))
    if (entry.is_regular_file() && entry.path().extension() == ".ply")
      stems.push_back(entry.path().stem().string());
  std::sort(stems.begin(), stems.end());
  if (stems.empty())
    throw std::runtime_error("load_train_data: no .ply scenes in " + data_dir);

  std::vector<SceneData> scenes;
  scenes.reserve(stems.size());
  for (const std::string& stem : stems) {
    SceneData sd;
    sd.stem = stem;
    fs::path base = fs::path(data_dir) / stem;
    sd.cloud = load_ply(base.string() + ".ply");
    std::string sp_path = base.string() + ".sp";
    if (!fs::exists(sp_path))
      throw std::runtime_error("load_train_data: missing superpoint file " + sp_path);
    sd.sp_ids = load_superpoints(sp_path);
    if (sd.sp_ids.size() != sd.cloud.size())
      throw std::runtime_error("load_train_data: " + sp_path + " has " +
                               std::to_string(sd.sp_ids.size()) + " ids but the scene has " +
                               std::to_string(sd.cloud.size()) + " points");
    std::string blocks_path = base.string() + ".blocks";
    if (!fs::exists(blocks_path))
      throw std::runtime_error("load_train_data: missing blocks file " + blocks_path);
    sd.blocks = load_blocks_file(blocks_path);
    for (Block& b : sd.blocks) {
      b.sp_ids.resize(b.size());
      b.gt_labels.assign(b.size(), -1);
      for (std::size_t i = 0; i < b.size(); ++i) {
        std::uint32_t idx = b.point_indices[i];
        if (idx >= sd.cloud.size())
          throw std::runtime_error("load_train_data: " + blocks_path +
                                   " references point " + std::to_string(idx) +
                                   " beyond the scene");
        b.sp_ids[i] = sd.sp_ids[idx];
        if (sd.cloud.has_labels()) b.gt_labels[i] = sd.cloud.gt_labels[idx];
      }
    }
    if (sd.cloud.has_labels() && cfg.classes > 0) {
      for (std::int32_t g : sd.cloud.gt_labels)
        if (g >= cfg.classes)
          throw std::runtime_error("load_train_data: scene " + stem +
                                   " has ground-truth class " + std::to_string(g) +
                                   " but classes = " + std::to_string(cfg.classes));
    }
    scenes.push_back(std::move(sd));
  }
  return scenes;
}

void run_train(const std::string& data_dir, const Config& cfg,
               const std::string& out_ckpt) {
  cfg.validate();
  cfg.require_classes();
  std::vector<SceneData> scenes = load_train_data(data_dir, cfg);
  std::vector<const Block*> blocks;
  for (const SceneData& sd : scenes)
    for (const Block& b : sd.blocks) blocks.push_back(&b);
  if (blocks.empty()) throw std::runtime_error("run_train: no blocks in " + data_dir);

  bool have_gt = std::all_of(scenes.begin(), scenes.end(),
                             [](const SceneData& s) { return s.cloud.has_labels(); });

  TrainState state = init_train_state(cfg);
  Workspace<float> ws;

  fs::path report_path = fs::path(out_ckpt).parent_path();
  if (report_path.empty()) report_path = ".";
  report_path /= "report.csv";
  std::string report;
  if (have_gt) report = csv_header(cfg.classes);

  for (int e = 0; e < cfg.epochs; ++e) {
    run_epoch(state, blocks, ws);
    if (have_gt) {
      std::vector<std::uint64_t> confusion(
          static_cast<std::size_t>(cfg.classes) * cfg.classes, 0);
      for (SceneData& sd : scenes) {
        std::vector<int> pred = infer_labels(state, sd.cloud, sd.sp_ids, ws);
        std::vector<int> gt(sd.cloud.gt_labels.begin(), sd.cloud.gt_labels.end());
        accumulate_confusion(confusion, cfg.classes, pred, gt);
      }
      EvalReport rep = metrics_from_confusion(confusion, cfg.classes);
      report += csv_row(e, rep);
      std::printf("epoch %d oAcc %.4f mAcc %.4f mIoU %.4f\n", e, rep.oacc, rep.macc,
                  rep.miou);
    } else {
      std::printf("epoch %d done (no ground truth; skipping evaluation)\n", e);
    }
    std::fflush(stdout);
  }

  save_checkpoint(out_ckpt, state);
  if (have_gt) {
    std::ofstream os(report_path);
    if (!os) throw std::runtime_error("run_train: cannot write " + report_path.string());
    os << report;
  }
  std::printf("train: checkpoint -> %s\n", out_ckpt.c_str());
}

void run_segment(const std::string& ckpt_path, const std::string& in_ply,
                 const std::string& sp_path, const std::string& out_ply) {
  TrainState state = load_checkpoint(ckpt_path);
  PointCloud cloud = load_ply(in_ply);
  std::vector<int> sp_ids = load_superpoints(sp_path);
  if (sp_ids.size() != cloud.size())
    throw std::runtime_error("run_segment: " + sp_path + " has " +
                             std::to_string(sp_ids.size()) + " ids but the scene has " +
                             std::to_string(cloud.size()) + " points");
  Workspace<float> ws;
  std::vector<int> labels = infer_labels(state, cloud, sp_ids, ws);

  PointCloud out = cloud;
  out.gt_labels.assign(labels.begin(), labels.end());
  out.colors.resize(out.size());
  for (std::size_t i = 0; i < out.size(); ++i) out.colors[i] = class_color(labels[i]);
  save_ply(out, out_ply);
  std::printf("segment: %zu points labeled -> %s\n", cloud.size(), out_ply.c_str());
}

namespace {

std::vector<int> load_predictions(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("eval: cannot open " + path);
  std::string head;
  std::getline(is, head);
  is.close();
  if (head.rfind("ply", 0) == 0) {
    PointCloud cloud = load_ply(path);
    if (!cloud.has_labels())
      throw std::runtime_error("eval: " + path + " has no label property");
    return std::vector<int>(cloud.gt_labels.begin(), cloud.gt_labels.end());
  }
  return load_superpoints(path);  // same one-integer-per-line format
}

}  // namespace

void run_eval(const std::string& pred_path, const std::string& gt_ply, int classes,
              const std::string& out_csv) {
  if (classes < 1) throw std::runtime_error("eval: --classes is required and must be at least 1");
  std::vector<int> pred = load_predictions(pred_path);
  PointCloud gt_cloud = load_ply(gt_ply);
  if (!gt_cloud.has_labels())
    throw std::runtime_error("eval: " + gt_ply + " has no label property");
  std::vector<int> gt(gt_cloud.gt_labels.begin(), gt_cloud.gt_labels.end());
  if (pred.size() != gt.size())
    throw std::runtime_error("eval: " + std::to_string(pred.size()) + " predictions vs " +
                             std::to_string(gt.size()) + " ground-truth points");
  EvalReport rep = evaluate(pred, gt, classes);
  std::fputs(format_report(rep).c_str(), stdout);
  if (!out_csv.empty()) {
    std::ofstream os(out_csv);
    if (!os) throw std::runtime_error("eval: cannot write " + out_csv);
    os << csv_header(classes) << csv_row(0, rep);
  }
}

void run_export_ply(const std::string& in_ply, const std::string& labels_path,
                    const std::string& out_ply) {
  PointCloud cloud = load_ply(in_ply);
  std::vector<int> labels = load_superpoints(labels_path);
  if (labels.size() != cloud.size())
    throw std::runtime_error("export-ply: " + std::to_string(labels.size()) +
                             " labels vs " + std::to_string(cloud.size()) + " points");
  cloud.gt_labels.assign(labels.begin(), labels.end());
  cloud.colors.resize(cloud.size());
  for (std::size_t i = 0; i < cloud.size(); ++i) cloud.colors[i] = class_color(labels[i]);
  save_ply(cloud, out_ply);
  std::printf("export-ply: %zu points -> %s\n", cloud.size(), out_ply.c_str());
}

std::vector<std::vector<int>> baseline_labels(const std::vector<SceneData>& scenes,
                                              int classes, std::uint64_t seed, int pts) {
  if (classes < 1) throw std::runtime_error("baseline_labels: classes must be >= 1");
  // First-occurrence feature row per point, chunked exactly like inference.
  std::vector<double> pool;
  std::vector<std::vector<std::int64_t>> row_of_point(scenes.size());
  std::int64_t rows = 0;
  for (std::size_t si = 0; si < scenes.size(); ++si) {
    const PointCloud& cloud = scenes[si].cloud;
    std::size_t n = cloud.size();
    if (n == 0) throw std::runtime_error("baseline_labels: empty scene");
    row_of_point[si].assign(n, -1);
    Vec3 mn = cloud.coords[0], mx = cloud.coords[0];
    for (const auto& p : cloud.coords)
      for (int a = 0; a < 3; ++a) {
        mn[a] = std::min(mn[a], p[a]);
        mx[a] = std::max(mx[a], p[a]);
      }
    Rng rng = derive_rng(seed, {0xBA});
    std::vector<std::uint32_t> order(n);
    std::iota(order.begin(), order.end(), 0u);
    rng.shuffle(order);
    std::vector<std::uint32_t> chunk;
    for (std::size_t start = 0; start < n; start += static_cast<std::size_t>(pts)) {
      chunk.assign(order.begin() + start,
                   order.begin() + std::min(n, start + static_cast<std::size_t>(pts)));
      for (std::size_t fill = 0; chunk.size() < static_cast<std::size_t>(pts); ++fill)
        chunk.push_back(order[fill % n]);
      Block blk = assemble_block(cloud, chunk, mn, mx);
      for (std::size_t r = 0; r < chunk.size(); ++r) {
        std::uint32_t p = chunk[r];
        if (row_of_point[si][p] >= 0) continue;
        row_of_point[si][p] = rows++;
        pool.insert(pool.end(), blk.features.begin() + r * Block::kDim,
                    blk.features.begin() + (r + 1) * Block::kDim);
      }
    }
  }
  Rng km_rng = derive_rng(seed, {0xBB});
  KmeansResult km = lloyd_kmeans(pool.data(), static_cast<int>(rows), Block::kDim,
                                 classes, km_rng, 100);
  std::vector<std::vector<int>> out(scenes.size());
  for (std::size_t si = 0; si < scenes.size(); ++si) {
    out[si].resize(row_of_point[si].size());
    for (std::size_t p = 0; p < out[si].size(); ++p)
      out[si][p] = km.labels[row_of_point[si][p]];
  }
  return out;
}

// ---------------------------------------------------------------------------
// Self-test: fast invariant checks exercised through the public interfaces.

namespace {

struct SelfTest {
  int failed = 0;
  void check(const char* name, bool ok) {
    std::printf("%s %s\n", ok ? "ok" : "FAIL", name);
    if (!ok) ++failed;
  }
};

void selftest_core(SelfTest& t) {
  Rng a(123), b(123);
  bool same = true;
  for (int i = 0; i < 100; ++i) same = same && a.next_u64() == b.next_u64();
  t.check("rng determinism", same);

  // Voxel mass conservation.
  Rng rng(7);
  int n = 500, d = 4, r = 4;
  std::vector<double> feats(n * d), coords(n * 3);
  for (auto& v : feats) v = rng.uniform(-1.0, 1.0);
  for (auto& v : coords) v = rng.uniform();
  VoxelGrid<double> g = voxelize<double>(feats.data(), n, d, coords.data(), r);
  std::vector<double> cell_sum(d, 0.0), pt_sum(d, 0.0);
  for (std::size_t cidx = 0; cidx < g.cells(); ++cidx)
    for (int c = 0; c < d; ++c)
      cell_sum[c] += g.data[cidx * d + c] * g.counts[cidx];
  for (int i = 0; i < n; ++i)
    for (int c = 0; c < d; ++c) pt_sum[c] += feats[i * d + c];
  bool mass = true;
  for (int c = 0; c < d; ++c) mass = mass && std::abs(cell_sum[c] - pt_sum[c]) < 1e-5;
  t.check("voxelize mass conservation", mass);

  // Devoxelize adjoint identity: <devox(G), P> == <G, devox_adj(P)>.
  std::vector<double> grid(g.cells() * d), pvec(n * d), back(g.cells() * d, 0.0),
      points(n * d, 0.0);
  for (auto& v : grid) v = rng.uniform(-1.0, 1.0);
  for (auto& v : pvec) v = rng.uniform(-1.0, 1.0);
  devoxelize(grid.data(), r, d, coords.data(), n, points.data());
  devoxelize_backward(pvec.data(), r, d, coords.data(), n, back.data());
  double lhs = 0.0, rhs = 0.0;
  for (std::size_t i = 0; i < points.size(); ++i) lhs += points[i] * pvec[i];
  for (std::size_t i = 0; i < grid.size(); ++i) rhs += grid[i] * back[i];
  t.check("devoxelize adjoint identity", std::abs(lhs - rhs) < 1e-9 * (1.0 + std::abs(lhs)));

  // Flip involution.
  FlipSpec spec;
  spec.axis[0] = spec.axis[2] = true;
  std::vector<double> once(grid.size()), twice(grid.size());
  flip_tensor(grid.data(), once.data(), r, d, spec);
  flip_tensor(once.data(), twice.data(), r, d, spec);
  t.check("flip involution", twice == grid);
}

void selftest_network(SelfTest& t) {
  // Pointwise (k=1) network commutes with flips bit-exactly.
  Rng rng(11);
  std::vector<LayerSpec> plan{{3, 8, 1, true, true}, {8, 4, 1, true, false}};
  NetworkParams<float> net = NetworkParams<float>::create(plan, rng);
  int r = 8;
  Tensor3<float> in(r, 3);
  for (auto& v : in.data) v = static_cast<float>(rng.uniform(-1.0, 1.0));
  Workspace<float> ws;
  FlipSpec spec;
  spec.axis[1] = true;
  Tensor3<float> out_plain, out_flip_in;
  forward(net, in, Mode::eval, ws, static_cast<Tape<float>*>(nullptr), out_plain);
  Tensor3<float> flipped(r, 3);
  flip_tensor(in.data.data(), flipped.data.data(), r, 3, spec);
  forward(net, flipped, Mode::eval, ws, static_cast<Tape<float>*>(nullptr), out_flip_in);
  Tensor3<float> unflipped(r, 4);
  flip_tensor(out_flip_in.data.data(), unflipped.data.data(), r, 4, spec);
  t.check("pointwise flip equivariance", unflipped.data == out_plain.data);

  // Gradient check: one k=3 norm+act layer in double precision.
  Rng grng(13);
  std::vector<LayerSpec> tiny{{2, 3, 3, true, true}};
  NetworkParams<double> dnet = NetworkParams<double>::create(tiny, grng);
  int res = 4;
  Tensor3<double> din(res, 2), dout;
  for (auto& v : din.data) v = grng.uniform(-1.0, 1.0);
  Workspace<double> dws;
  Tape<double> tape;
  NetworkParams<double> work = dnet;
  forward(work, din, Mode::train, dws, &tape, dout);
  std::vector<double> seed_grad(dout.data.size());
  for (auto& v : seed_grad) v = grng.uniform(-1.0, 1.0);
  auto loss_of = [&](NetworkParams<double>& p) {
    Tensor3<double> o;
    NetworkParams<double> copy = p;  // keep running stats untouched
    Tape<double> tp;
    forward(copy, din, Mode::train, dws, &tp, o);
    double s = 0.0;
    for (std::size_t i = 0; i < o.data.size(); ++i) s += o.data[i] * seed_grad[i];
    return s;
  };
  Tensor3<double> gseed(res, 3);
  gseed.data = seed_grad;
  NetworkGrads<double> grads = NetworkGrads<double>::zeros_like(dnet);
  {
    NetworkParams<double> copy = dnet;
    Tape<double> tp;
    Tensor3<double> o;
    forward(copy, din, Mode::train, dws, &tp, o);
    backward(dnet, tp, gseed, dws, grads, static_cast<Tensor3<double>*>(nullptr));
  }
  double h = 1e-4, max_rel = 0.0;
  auto fd_param = [&](std::vector<double>& vec, std::size_t idx, double analytic) {
    double keep = vec[idx];
    vec[idx] = keep + h;
    double fp = loss_of(dnet);
    vec[idx] = keep - h;
    double fm = loss_of(dnet);
    vec[idx] = keep;
    double fd = (fp - fm) / (2 * h);
    double rel = std::abs(fd - analytic) / std::max({1e-4, std::abs(fd), std::abs(analytic)});
    max_rel = std::max(max_rel, rel);
  };
  ConvLayer<double>& l0 = dnet.layers[0];
  for (std::size_t i = 0; i < l0.w.size(); i += 7) fd_param(l0.w, i, grads.layers[0].w[i]);
  for (std::size_t i = 0; i < l0.gamma.size(); ++i)
    fd_param(l0.gamma, i, grads.layers[0].gamma[i]);
  for (std::size_t i = 0; i < l0.beta.size(); ++i)
    fd_param(l0.beta, i, grads.layers[0].beta[i]);
  t.check("conv layer gradient check", max_rel < 1e-3);
}

void selftest_clustering(SelfTest& t) {
  // Closed-form loss value.
  CentroidSet c(2, 3);
  c.mu = {1, 0, 0, 0, 1, 0};
  c.counts = {0, 0};
  std::vector<double> f{1, 0, 0};
  std::vector<int> labels{0};
  std::vector<double> w{1.0, 1.0};
  double loss = cluster_loss(f.data(), 1, 3, labels, c, w, static_cast<double*>(nullptr));
  t.check("cluster loss closed form", std::abs(loss - std::log(1.0 + std::exp(-1.0))) < 1e-6);

  CentroidSet c1(1, 3);
  c1.mu = {1, 0, 0};
  c1.counts = {0};
  std::vector<double> w1{1.0};
  double zero = cluster_loss(f.data(), 1, 3, labels, c1, w1, static_cast<double*>(nullptr));
  t.check("cluster loss single centroid", zero == 0.0);

  // Streaming update replay.
  CentroidSet cs(2, 2);
  cs.mu = {1, 0, 0, 1};
  cs.counts = {0, 0};
  std::vector<double> pts{0.0, 1.0, 1.0, 0.0, 0.6, 0.8};
  std::vector<int> ls{1, 0, 1};
  Rng prng(3);
  minibatch_update(cs, pts.data(), 3, 2, ls, prng, 0.0);
  double m0[2] = {1, 0}, m1[2] = {0, 1};
  std::uint64_t n0 = 0, n1 = 0;
  auto upd = [](double* m, std::uint64_t& cnt, const double* x) {
    ++cnt;
    for (int d = 0; d < 2; ++d) m[d] += (x[d] - m[d]) / static_cast<double>(cnt);
  };
  upd(m1, n1, pts.data());
  upd(m0, n0, pts.data() + 2);
  upd(m1, n1, pts.data() + 4);
  auto renorm = [](double* m) {
    double len = std::sqrt(m[0] * m[0] + m[1] * m[1]);
    m[0] /= len;
    m[1] /= len;
  };
  renorm(m0);
  renorm(m1);
  bool replay = std::abs(cs.mu[0] - m0[0]) < 1e-12 && std::abs(cs.mu[1] - m0[1]) < 1e-12 &&
                std::abs(cs.mu[2] - m1[0]) < 1e-12 && std::abs(cs.mu[3] - m1[1]) < 1e-12;
  t.check("minibatch update replay", replay);

  // Degenerate cluster split.
  CentroidSet cd(3, 2);
  cd.mu = {1, 0, 0, 1, 1, 0};
  cd.counts = {10, 0, 2};
  std::vector<std::uint64_t> hist{10, 0, 2};
  Rng drng(5);
  handle_degenerate(cd, hist, drng);
  t.check("degenerate split", hist[0] == 5 && hist[1] == 5 && hist[2] == 2 &&
                                  cd.counts[0] == 5 && cd.counts[1] == 5);

  // Assignment tie-break and superpoint pooling.
  CentroidSet ca(2, 2);
  ca.mu = {-0.1, 0, 1.9, 0};
  ca.counts = {0, 0};
  std::vector<double> feats{0, 0, 2, 0};
  std::vector<int> sp{0, 0};
  std::vector<int> got = assign_labels(feats.data(), 2, 2, sp, ca);
  t.check("superpoint assignment", got[0] == 1 && got[1] == 1);
}

void selftest_eval(SelfTest& t) {
  std::vector<std::uint64_t> s{1, 5, 2, 1};
  std::vector<int> f = hungarian_max(s, 2);
  t.check("hungarian example", f[0] == 1 && f[1] == 0 && mapping_score(s, 2, f) == 7);

  std::vector<std::uint64_t> m{3, 1, 1, 3};
  EvalReport rep = metrics_from_confusion(m, 2);
  t.check("metrics example", std::abs(rep.oacc - 0.75) < 1e-12 &&
                                 std::abs(rep.macc - 0.75) < 1e-12 &&
                                 std::abs(rep.miou - 0.6) < 1e-12);
}

void selftest_superpoint(SelfTest& t) {
  // Normal-similarity merge example: the smallest superpoint joins the
  // farther neighbor whose normals agree.
  SuperpointPartition part;
  part.sp_id = {0, 0, 1, 1, 1, 1, 1, 2, 2, 2, 2, 2};
  part.sp_sizes = {2, 5, 5};
  part.sp_centroid = {{0, 0, 0}, {1, 0, 0}, {0.5, 0, 0}};
  part.sp_normal_sum = {{0, 0, 2}, {0, 0, 5}, {5, 0, 0}};
  SuperpointPartition merged = merge_superpoints(part, 2);
  bool ok = merged.count() == 2 && merged.sp_id[0] == merged.sp_id[2] &&
            merged.sp_id[0] != merged.sp_id[7];
  t.check("superpoint merge by normal similarity", ok);
}

}  // namespace

int run_selftest() {
  SelfTest t;
  selftest_core(t);
  selftest_network(t);
  selftest_clustering(t);
  selftest_eval(t);
  selftest_superpoint(t);
  std::printf(t.failed == 0 ? "selftest passed\n" : "selftest FAILED (%d checks)\n",
              t.failed);
  return t.failed;
}

}  // namespace u3ds3
