#include "u3ds3/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <stdexcept>

namespace u3ds3 {

namespace {

std::vector<double> block_coords(const Block& block) {
  std::size_t n = block.size();
  std::vector<double> coords(n * 3);
  for (std::size_t i = 0; i < n; ++i)
    for (int a = 0; a < 3; ++a) coords[i * 3 + a] = block.features[i * Block::kDim + a];
  return coords;
}

Tensor3<float> grid_to_tensor(VoxelGrid<float>&& grid) {
  Tensor3<float> t;
  t.res = grid.res;
  t.ch = grid.channels;
  t.data = std::move(grid.data);
  return t;
}

// Devoxelize + L2-normalize one network output at the block coordinates.
void devox_normalized(const Tensor3<float>& out, const std::vector<double>& coords,
                      std::size_t n, std::vector<float>& fp, std::vector<float>& norms) {
  int dim = out.ch;
  fp.assign(n * dim, 0.0f);
  norms.assign(n, 0.0f);
  devoxelize(out.data.data(), out.res, dim, coords.data(), n, fp.data());
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    float* row = fp.data() + i * dim;
    for (int d = 0; d < dim; ++d) s += static_cast<double>(row[d]) * row[d];
    double len = std::sqrt(s);
    if (len > 1e-20) {
      for (int d = 0; d < dim; ++d) row[d] = static_cast<float>(row[d] / len);
      norms[i] = static_cast<float>(len);
    }
  }
}

FlipSpec draw_flip(Rng& rng) {
  FlipSpec spec;
  spec.axis[rng.uniform_index(3)] = true;
  return spec;
}

// Phase transform schedule: one flip axis per batch group, two jitters per
// block, drawn in block order from a single stream.
struct TransformPlan {
  std::vector<FlipSpec> flip;
  std::vector<ColorJitter> j1, j2;
};

TransformPlan draw_transforms(std::size_t nblocks, int batch, Rng& rng) {
  TransformPlan plan;
  plan.flip.resize(nblocks);
  plan.j1.resize(nblocks);
  plan.j2.resize(nblocks);
  FlipSpec cur;
  for (std::size_t i = 0; i < nblocks; ++i) {
    if (i % static_cast<std::size_t>(batch) == 0) cur = draw_flip(rng);
    plan.flip[i] = cur;
    plan.j1[i] = ColorJitter::draw(rng);
    plan.j2[i] = ColorJitter::draw(rng);
  }
  return plan;
}

std::vector<int> to_int_labels(const std::vector<std::int32_t>& v) {
  return std::vector<int>(v.begin(), v.end());
}

}  // namespace

TrainState init_train_state(const Config& cfg) {
  cfg.validate();
  cfg.require_classes();
  TrainState st;
  st.config = cfg;
  Rng rng = derive_rng(cfg.seed, {0x4e7});
  st.net = NetworkParams<float>::create(feature_net_plan(), rng);
  for (int p = 0; p < 2; ++p) {
    st.hist[p].assign(cfg.classes, 0);
    st.weights[p].assign(cfg.classes, 1.0);
  }
  return st;
}

PathwayBatch pathway_forward(const Block& block, NetworkParams<float>& net,
                             int res, const FlipSpec& flip,
                             const ColorJitter& jitter1, const ColorJitter& jitter2,
                             Mode mode, Workspace<float>& ws, bool single_pathway) {
  std::size_t n = block.size();
  if (n == 0) throw std::runtime_error("pathway_forward: empty block");
  if (net.in_channels() != Block::kDim)
    throw std::runtime_error("pathway_forward: network input width mismatch");

  PathwayBatch pb;
  pb.n = static_cast<int>(n);
  pb.flip = flip;
  pb.coords = block_coords(block);

  Tape<float>* t1 = mode == Mode::train ? &pb.tape1 : nullptr;
  Tape<float>* t2 = mode == Mode::train ? &pb.tape2 : nullptr;

  // Pathway 1: jitter, voxelize, flip, network, un-flip.
  {
    std::vector<double> feats = block.features;
    color_jitter(feats, jitter1);
    VoxelGrid<float> v = voxelize<float>(feats.data(), n, Block::kDim, pb.coords.data(), res);
    Tensor3<float> in = grid_to_tensor(flip.any() ? u3ds3::flip(v, flip) : std::move(v));
    Tensor3<float> raw;
    forward(net, in, mode, ws, t1, raw);
    if (flip.any()) {
      pb.out1 = Tensor3<float>(raw.res, raw.ch);
      flip_tensor(raw.data.data(), pb.out1.data.data(), raw.res, raw.ch, flip);
    } else {
      pb.out1 = std::move(raw);
    }
    devox_normalized(pb.out1, pb.coords, n, pb.fp1, pb.norm1);
  }

  if (!single_pathway) {
    std::vector<double> feats = block.features;
    color_jitter(feats, jitter2);
    VoxelGrid<float> v = voxelize<float>(feats.data(), n, Block::kDim, pb.coords.data(), res);
    Tensor3<float> in = grid_to_tensor(std::move(v));
    forward(net, in, mode, ws, t2, pb.out2);
    devox_normalized(pb.out2, pb.coords, n, pb.fp2, pb.norm2);
  }
  return pb;
}

template <typename T>
double cluster_loss(const T* features, int n, int dim,
                    const std::vector<int>& labels, const CentroidSet& c,
                    const std::vector<double>& weights, T* grad_out) {
  if (c.dim != dim) throw std::runtime_error("cluster_loss: dim mismatch");
  if (labels.size() != static_cast<std::size_t>(n))
    throw std::runtime_error("cluster_loss: labels size mismatch");
  if (weights.size() != static_cast<std::size_t>(c.k))
    throw std::runtime_error("cluster_loss: weights size mismatch");
  int k = c.k;
  std::vector<double> mu_norm(k);
  for (int t = 0; t < k; ++t) {
    double s = 0.0;
    const double* m = c.centroid(t);
    for (int d = 0; d < dim; ++d) s += m[d] * m[d];
    mu_norm[t] = std::sqrt(s);
  }
  std::vector<double> f(dim), cosv(k), p(k);
  double total = 0.0;
  double inv_n = 1.0 / static_cast<double>(n);
  for (int i = 0; i < n; ++i) {
    int l = labels[i];
    if (l < 0 || l >= k) throw std::runtime_error("cluster_loss: label out of range");
    const T* fr = features + static_cast<std::size_t>(i) * dim;
    double fs = 0.0;
    for (int d = 0; d < dim; ++d) {
      f[d] = static_cast<double>(fr[d]);
      fs += f[d] * f[d];
    }
    double fnorm = std::sqrt(fs);
    double w = weights[l];
    if (fnorm < 1e-12) {
      // Degenerate feature: all logits tie, uniform softmax, zero gradient.
      total += w * std::log(static_cast<double>(k)) * inv_n;
      continue;
    }
    double smax = -std::numeric_limits<double>::infinity();
    for (int t = 0; t < k; ++t) {
      double dot = 0.0;
      const double* m = c.centroid(t);
      for (int d = 0; d < dim; ++d) dot += f[d] * m[d];
      double denom = fnorm * mu_norm[t];
      cosv[t] = denom > 0.0 ? dot / denom : 0.0;
      smax = std::max(smax, cosv[t] - 1.0);
    }
    double sumexp = 0.0;
    for (int t = 0; t < k; ++t) {
      p[t] = std::exp(cosv[t] - 1.0 - smax);
      sumexp += p[t];
    }
    double lse = smax + std::log(sumexp);
    total += w * (lse - (cosv[l] - 1.0)) * inv_n;
    if (grad_out) {
      T* g = grad_out + static_cast<std::size_t>(i) * dim;
      double scale = w * inv_n;
      for (int t = 0; t < k; ++t) {
        double coef = scale * (p[t] / sumexp - (t == l ? 1.0 : 0.0));
        if (coef == 0.0) continue;
        const double* m = c.centroid(t);
        // d cos / d f = mu_hat / |f| - cos * f / |f|^2
        double a = coef / (fnorm * mu_norm[t]);
        double b = coef * cosv[t] / fs;
        for (int d = 0; d < dim; ++d)
          g[d] += static_cast<T>(a * m[d] - b * f[d]);
      }
    }
  }
  return total;
}

TwoPathwayLoss two_pathway_loss(const float* f1, const float* f2, int n, int dim,
                                const std::vector<int>& labels1,
                                const std::vector<int>& labels2,
                                const CentroidSet& c1, const CentroidSet& c2,
                                const std::vector<double>& w1,
                                const std::vector<double>& w2, float* grad1,
                                float* grad2, bool single_pathway) {
  TwoPathwayLoss out;
  if (single_pathway) {
    out.l1 = cluster_loss(f1, n, dim, labels1, c1, w1, grad1);
    out.total = out.l1;
    return out;
  }
  out.l1 = cluster_loss(f1, n, dim, labels1, c1, w1, grad1) +
           cluster_loss(f2, n, dim, labels2, c2, w2, grad2);
  out.l2 = cluster_loss(f1, n, dim, labels2, c2, w2, grad1) +
           cluster_loss(f2, n, dim, labels1, c1, w1, grad2);
  out.total = out.l1 + out.l2;
  return out;
}

template <typename T>
void feature_grad_to_grid(const T* grad_features, const T* fp, const T* norms,
                          int n, int dim, const double* coords,
                          Tensor3<T>& grad_grid) {
  std::vector<T> gpre(static_cast<std::size_t>(n) * dim, T(0));
  for (int i = 0; i < n; ++i) {
    double len = static_cast<double>(norms[i]);
    if (len <= 0.0) continue;
    const T* g = grad_features + static_cast<std::size_t>(i) * dim;
    const T* u = fp + static_cast<std::size_t>(i) * dim;
    double dot = 0.0;
    for (int d = 0; d < dim; ++d) dot += static_cast<double>(g[d]) * u[d];
    T* o = gpre.data() + static_cast<std::size_t>(i) * dim;
    for (int d = 0; d < dim; ++d)
      o[d] = static_cast<T>((static_cast<double>(g[d]) - dot * u[d]) / len);
  }
  devoxelize_backward(gpre.data(), grad_grid.res, dim, coords,
                      static_cast<std::size_t>(n), grad_grid.data.data());
}

void run_epoch(TrainState& st, const std::vector<const Block*>& blocks,
               Workspace<float>& ws) {
  if (blocks.empty()) throw std::runtime_error("run_epoch: no blocks");
  const Config& cfg = st.config;
  const int k = cfg.classes;
  const int dim = cfg.dim;
  const int res = cfg.res;
  const int paths = cfg.single_pathway ? 1 : 2;
  const std::uint64_t e = st.epoch;
  const std::size_t nb = blocks.size();

  // Clustering phase: transforms are pre-drawn in block order so the stream
  // is independent of caching.
  Rng rng_a = derive_rng(cfg.seed, {0xA1, e});
  TransformPlan plan = draw_transforms(nb, cfg.batch, rng_a);

  std::array<std::vector<std::vector<float>>, 2> cache;
  if (!st.centroids_ready) {
    // First epoch: seed centroids with k-means++ over the features of up to
    // 50 leading batches, then reuse those features for the streaming pass.
    std::size_t cap = std::min(nb, static_cast<std::size_t>(50) * cfg.batch);
    cache[0].resize(nb);
    cache[1].resize(nb);
    std::array<std::vector<float>, 2> pool;
    for (std::size_t i = 0; i < cap; ++i) {
      PathwayBatch pb = pathway_forward(*blocks[i], st.net, res, plan.flip[i],
                                        plan.j1[i], plan.j2[i], Mode::eval, ws,
                                        cfg.single_pathway);
      cache[0][i] = pb.fp1;
      pool[0].insert(pool[0].end(), pb.fp1.begin(), pb.fp1.end());
      if (paths == 2) {
        cache[1][i] = pb.fp2;
        pool[1].insert(pool[1].end(), pb.fp2.begin(), pb.fp2.end());
      }
    }
    for (int p = 0; p < paths; ++p) {
      int rows = static_cast<int>(pool[p].size() / dim);
      if (rows < k)
        throw std::runtime_error("run_epoch: fewer feature rows than clusters");
      Rng ri = derive_rng(cfg.seed, {0xE0, static_cast<std::uint64_t>(p + 1)});
      std::vector<int> picks = kmeans_pp_init(pool[p].data(), rows, dim, k, ri);
      st.centroids[p] = CentroidSet(k, dim, p + 1);
      for (int j = 0; j < k; ++j) {
        const float* row = pool[p].data() + static_cast<std::size_t>(picks[j]) * dim;
        double* m = st.centroids[p].centroid(j);
        for (int d = 0; d < dim; ++d) m[d] = static_cast<double>(row[d]);
      }
      renormalize_centroids(st.centroids[p], ri);
    }
    st.centroids_ready = true;
  }

  std::array<Rng, 2> pert{derive_rng(cfg.seed, {0xA2, e, 1}),
                          derive_rng(cfg.seed, {0xA2, e, 2})};
  std::array<std::vector<std::uint64_t>, 2> hist_now;
  for (int p = 0; p < 2; ++p) hist_now[p].assign(k, 0);

  for (std::size_t i = 0; i < nb; ++i) {
    const Block& block = *blocks[i];
    std::size_t n = block.size();
    std::array<const std::vector<float>*, 2> feats{nullptr, nullptr};
    PathwayBatch pb;
    bool cached = !cache[0].empty() && !cache[0][i].empty();
    if (cached) {
      feats[0] = &cache[0][i];
      if (paths == 2) feats[1] = &cache[1][i];
    } else {
      pb = pathway_forward(block, st.net, res, plan.flip[i], plan.j1[i], plan.j2[i],
                           Mode::eval, ws, cfg.single_pathway);
      feats[0] = &pb.fp1;
      if (paths == 2) feats[1] = &pb.fp2;
    }
    std::vector<int> sp = to_int_labels(block.sp_ids);
    for (int p = 0; p < paths; ++p) {
      std::vector<int> labels =
          assign_labels(feats[p]->data(), static_cast<int>(n), dim, sp, st.centroids[p]);
      for (int l : labels) ++hist_now[p][l];
      minibatch_update(st.centroids[p], feats[p]->data(), static_cast<int>(n), dim,
                       labels, pert[p], 1e-4);
    }
  }
  cache[0].clear();
  cache[1].clear();

  for (int p = 0; p < paths; ++p) {
    Rng rd = derive_rng(cfg.seed, {0xA3, e, static_cast<std::uint64_t>(p + 1)});
    handle_degenerate(st.centroids[p], hist_now[p], rd);
  }

  // Loss weights lag one epoch: the first epoch trains unweighted.
  for (int p = 0; p < paths; ++p) {
    bool have_prev = e > 0 && std::accumulate(st.hist[p].begin(), st.hist[p].end(),
                                              std::uint64_t{0}) > 0;
    st.weights[p] = have_prev ? class_weights(st.hist[p]) : std::vector<double>(k, 1.0);
  }

  // Training phase.
  Rng rng_b = derive_rng(cfg.seed, {0xB1, e});
  Rng rng_order = derive_rng(cfg.seed, {0xB2, e});
  std::vector<std::size_t> order(nb);
  std::iota(order.begin(), order.end(), std::size_t{0});
  rng_order.shuffle(order);

  NetworkGrads<float> grads = NetworkGrads<float>::zeros_like(st.net);
  std::vector<float> g1, g2;
  for (std::size_t start = 0; start < nb; start += cfg.batch) {
    std::size_t bs = std::min(static_cast<std::size_t>(cfg.batch), nb - start);
    FlipSpec flip = draw_flip(rng_b);
    grads.zero();
    double inv_bs = 1.0 / static_cast<double>(bs);
    for (std::size_t bi = 0; bi < bs; ++bi) {
      const Block& block = *blocks[order[start + bi]];
      std::size_t n = block.size();
      ColorJitter j1 = ColorJitter::draw(rng_b);
      ColorJitter j2 = ColorJitter::draw(rng_b);
      PathwayBatch pb = pathway_forward(block, st.net, res, flip, j1, j2,
                                        Mode::train, ws, cfg.single_pathway);
      std::vector<int> sp = to_int_labels(block.sp_ids);
      std::vector<int> l1 = assign_labels(pb.fp1.data(), static_cast<int>(n), dim,
                                          sp, st.centroids[0]);
      std::vector<int> l2;
      if (paths == 2)
        l2 = assign_labels(pb.fp2.data(), static_cast<int>(n), dim, sp, st.centroids[1]);
      g1.assign(n * dim, 0.0f);
      g2.assign(n * dim, 0.0f);
      two_pathway_loss(pb.fp1.data(), paths == 2 ? pb.fp2.data() : nullptr,
                       static_cast<int>(n), dim, l1, l2, st.centroids[0],
                       st.centroids[1], st.weights[0], st.weights[1], g1.data(),
                       g2.data(), cfg.single_pathway);
      // Mean over the batch's blocks.
      for (float& v : g1) v = static_cast<float>(v * inv_bs);
      if (paths == 2)
        for (float& v : g2) v = static_cast<float>(v * inv_bs);

      Tensor3<float> grad_out1(res, dim);
      feature_grad_to_grid(g1.data(), pb.fp1.data(), pb.norm1.data(),
                           static_cast<int>(n), dim, pb.coords.data(), grad_out1);
      if (flip.any()) {
        Tensor3<float> flipped(res, dim);
        flip_tensor(grad_out1.data.data(), flipped.data.data(), res, dim, flip);
        backward(st.net, pb.tape1, flipped, ws, grads, static_cast<Tensor3<float>*>(nullptr));
      } else {
        backward(st.net, pb.tape1, grad_out1, ws, grads, static_cast<Tensor3<float>*>(nullptr));
      }
      if (paths == 2) {
        Tensor3<float> grad_out2(res, dim);
        feature_grad_to_grid(g2.data(), pb.fp2.data(), pb.norm2.data(),
                             static_cast<int>(n), dim, pb.coords.data(), grad_out2);
        backward(st.net, pb.tape2, grad_out2, ws, grads, static_cast<Tensor3<float>*>(nullptr));
      }
    }
    sgd_step(st.net, grads, cfg.lr, cfg.wd);
  }

  st.hist = hist_now;
  ++st.epoch;
}

std::vector<int> infer_labels(TrainState& st, const PointCloud& cloud,
                              const std::vector<int>& sp_ids, Workspace<float>& ws) {
  std::size_t n = cloud.size();
  if (n == 0) throw std::runtime_error("infer_labels: empty cloud");
  if (!cloud.has_normals())
    throw std::runtime_error("infer_labels: cloud has no normals; preprocess it first");
  if (sp_ids.size() != n)
    throw std::runtime_error("infer_labels: superpoint count does not match cloud");
  const CentroidSet& c = st.config.single_pathway ? st.centroids[0] : st.centroids[1];
  if (c.k == 0) throw std::runtime_error("infer_labels: checkpoint has no centroids");
  const int dim = st.config.dim;
  const int res = st.config.res;
  const std::size_t pts = static_cast<std::size_t>(st.config.pts);

  int num_sp = 0;
  for (int s : sp_ids) {
    if (s < 0) throw std::runtime_error("infer_labels: negative superpoint id");
    num_sp = std::max(num_sp, s + 1);
  }
  std::vector<double> sp_sum(static_cast<std::size_t>(num_sp) * dim, 0.0);
  std::vector<std::int64_t> sp_n(num_sp, 0);

  Vec3 mn = cloud.coords[0], mx = cloud.coords[0];
  for (const auto& p : cloud.coords)
    for (int a = 0; a < 3; ++a) {
      mn[a] = std::min(mn[a], p[a]);
      mx[a] = std::max(mx[a], p[a]);
    }

  Rng rng = derive_rng(st.config.seed, {0x1F});
  std::vector<std::uint32_t> order(n);
  std::iota(order.begin(), order.end(), 0u);
  rng.shuffle(order);

  FlipSpec no_flip;
  ColorJitter identity;
  // Inference chunks hold twice the training block size: the network cost is
  // fixed by the grid resolution, so denser grids cost nothing and a typical
  // scene runs in one pass.
  const std::size_t cap = 2 * pts;
  std::vector<std::uint32_t> chunk;
  for (std::size_t start = 0; start < n; start += cap) {
    chunk.assign(order.begin() + start,
                 order.begin() + std::min(n, start + cap));
    // Short final chunk: pad by cycling the shuffled order.
    for (std::size_t fill = 0; chunk.size() < pts; ++fill)
      chunk.push_back(order[fill % n]);
    Block blk = assemble_block(cloud, chunk, mn, mx);
    PathwayBatch pb = pathway_forward(blk, st.net, res, no_flip, identity, identity,
                                      Mode::eval, ws, st.config.single_pathway);
    const std::vector<float>& fp = st.config.single_pathway ? pb.fp1 : pb.fp2;
    for (std::size_t r = 0; r < chunk.size(); ++r) {
      int s = sp_ids[chunk[r]];
      double* row = sp_sum.data() + static_cast<std::size_t>(s) * dim;
      const float* f = fp.data() + r * dim;
      for (int d = 0; d < dim; ++d) row[d] += static_cast<double>(f[d]);
      ++sp_n[s];
    }
  }

  std::vector<int> sp_label(num_sp, 0);
  std::vector<double> mean(dim);
  for (int s = 0; s < num_sp; ++s) {
    if (sp_n[s] == 0) continue;
    const double* row = sp_sum.data() + static_cast<std::size_t>(s) * dim;
    for (int d = 0; d < dim; ++d) mean[d] = row[d] / static_cast<double>(sp_n[s]);
    sp_label[s] = nearest_centroid(mean.data(), c);
  }
  std::vector<int> labels(n);
  for (std::size_t i = 0; i < n; ++i) labels[i] = sp_label[sp_ids[i]];
  return labels;
}

template double cluster_loss<float>(const float*, int, int, const std::vector<int>&,
                                    const CentroidSet&, const std::vector<double>&, float*);
template double cluster_loss<double>(const double*, int, int, const std::vector<int>&,
                                     const CentroidSet&, const std::vector<double>&, double*);
template void feature_grad_to_grid<float>(const float*, const float*, const float*, int,
                                          int, const double*, Tensor3<float>&);
template void feature_grad_to_grid<double>(const double*, const double*, const double*,
                                           int, int, const double*, Tensor3<double>&);

}  // namespace u3ds3
