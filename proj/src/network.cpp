#include "u3ds3/network.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <stdexcept>

#include "u3ds3/gemm.hpp"

namespace {

// OpenBLAS picks its kernel set from CPU detection that misfires on some
// virtualized hosts, falling back to generic kernels at a 4x slowdown.
// Steer the choice from the feature flags before any BLAS initializer runs.
// This lives here rather than in its own translation unit so that every
// binary linking the BLAS user also links the constructor (a static-library
// member with no referenced symbol would be dropped). Explicit
// OPENBLAS_CORETYPE / OPENBLAS_NUM_THREADS settings from the user win.
__attribute__((constructor(101))) void configure_blas_env() {
#if defined(__x86_64__)
  // The feature-detection tables are themselves filled by a constructor, so
  // they must be initialized by hand this early.
  __builtin_cpu_init();
  if (__builtin_cpu_supports("avx512f") && __builtin_cpu_supports("avx512dq"))
    setenv("OPENBLAS_CORETYPE", "SKYLAKEX", 0);
  else if (__builtin_cpu_supports("avx2"))
    setenv("OPENBLAS_CORETYPE", "HASWELL", 0);
#endif
  setenv("OPENBLAS_NUM_THREADS", "1", 0);
}

}  // namespace

namespace u3ds3 {

std::vector<LayerSpec> feature_net_plan() {
  const int ch[9] = {12, 32, 64, 64, 128, 128, 128, 128, 128};
  std::vector<LayerSpec> plan(8);
  for (int i = 0; i < 8; ++i) {
    plan[i].in_ch = ch[i];
    plan[i].out_ch = ch[i + 1];
    plan[i].kernel = 3;
    plan[i].norm = true;
    plan[i].act = i < 7;
  }
  return plan;
}

template <class T>
NetworkParams<T> NetworkParams<T>::create(const std::vector<LayerSpec>& plan,
                                          Rng& rng) {
  NetworkParams<T> params;
  params.layers.resize(plan.size());
  for (size_t l = 0; l < plan.size(); ++l) {
    ConvLayer<T>& layer = params.layers[l];
    layer.spec = plan[l];
    if (l > 0 && plan[l].in_ch != plan[l - 1].out_ch)
      throw std::runtime_error("layer plan channel mismatch");
    int k3 = plan[l].kernel * plan[l].kernel * plan[l].kernel;
    size_t wn = static_cast<size_t>(k3) * plan[l].in_ch * plan[l].out_ch;
    layer.w.resize(wn);
    double stddev = std::sqrt(2.0 / (static_cast<double>(plan[l].in_ch) * k3));
    for (size_t i = 0; i < wn; ++i)
      layer.w[i] = static_cast<T>(rng.gaussian(0.0, stddev));
    layer.b.assign(plan[l].out_ch, T(0));
    if (plan[l].norm) {
      layer.gamma.assign(plan[l].out_ch, T(1));
      layer.beta.assign(plan[l].out_ch, T(0));
      layer.run_mean.assign(plan[l].out_ch, T(0));
      layer.run_var.assign(plan[l].out_ch, T(1));
    }
  }
  return params;
}

template <class T>
NetworkGrads<T> NetworkGrads<T>::zeros_like(const NetworkParams<T>& params) {
  NetworkGrads<T> grads;
  grads.layers.resize(params.layers.size());
  for (size_t l = 0; l < params.layers.size(); ++l) {
    grads.layers[l].w.assign(params.layers[l].w.size(), T(0));
    grads.layers[l].b.assign(params.layers[l].b.size(), T(0));
    grads.layers[l].gamma.assign(params.layers[l].gamma.size(), T(0));
    grads.layers[l].beta.assign(params.layers[l].beta.size(), T(0));
  }
  return grads;
}

template <class T>
void NetworkGrads<T>::zero() {
  for (auto& layer : layers) {
    std::fill(layer.w.begin(), layer.w.end(), T(0));
    std::fill(layer.b.begin(), layer.b.end(), T(0));
    std::fill(layer.gamma.begin(), layer.gamma.end(), T(0));
    std::fill(layer.beta.begin(), layer.beta.end(), T(0));
  }
}

template <class T>
void NetworkGrads<T>::add(const NetworkGrads<T>& other) {
  for (size_t l = 0; l < layers.size(); ++l) {
    auto acc = [](std::vector<T>& a, const std::vector<T>& o) {
      for (size_t i = 0; i < a.size(); ++i) a[i] += o[i];
    };
    acc(layers[l].w, other.layers[l].w);
    acc(layers[l].b, other.layers[l].b);
    acc(layers[l].gamma, other.layers[l].gamma);
    acc(layers[l].beta, other.layers[l].beta);
  }
}

template <class T>
void NetworkGrads<T>::scale(T factor) {
  for (auto& layer : layers) {
    for (T& v : layer.w) v *= factor;
    for (T& v : layer.b) v *= factor;
    for (T& v : layer.gamma) v *= factor;
    for (T& v : layer.beta) v *= factor;
  }
}

namespace {

// dst(x,y,z) = src(x+dx, y+dy, z+dz), zero outside the grid. Rows are
// channel vectors; the z runs copy contiguously.
template <class T>
void gather_shifted(const T* src, T* dst, int r, int ch, int dx, int dy, int dz) {
  const size_t row = ch;
  int z0 = std::max(0, -dz);
  int z1 = std::min(r, r - dz);
  if (z1 < z0) z1 = z0;
  for (int x = 0; x < r; ++x) {
    int sx = x + dx;
    T* slab = dst + (static_cast<size_t>(x) * r * r) * row;
    if (sx < 0 || sx >= r) {
      std::fill(slab, slab + static_cast<size_t>(r) * r * row, T(0));
      continue;
    }
    for (int y = 0; y < r; ++y) {
      int sy = y + dy;
      T* drow = slab + static_cast<size_t>(y) * r * row;
      if (sy < 0 || sy >= r) {
        std::fill(drow, drow + static_cast<size_t>(r) * row, T(0));
        continue;
      }
      if (z0 > 0) std::fill(drow, drow + static_cast<size_t>(z0) * row, T(0));
      if (z1 > z0) {
        const T* srow = src + ((static_cast<size_t>(sx) * r + sy) * r + z0 + dz) * row;
        std::memcpy(drow + static_cast<size_t>(z0) * row, srow,
                    static_cast<size_t>(z1 - z0) * row * sizeof(T));
      }
      if (z1 < r)
        std::fill(drow + static_cast<size_t>(z1) * row,
                  drow + static_cast<size_t>(r) * row, T(0));
    }
  }
}

template <class T>
void vec_add(T* a, const T* b, size_t n) {
  for (size_t i = 0; i < n; ++i) a[i] += b[i];
}

template <class T>
void channel_tree_sums_impl(const T* data, size_t cells, int channels,
                            std::vector<double>& scratch, double* out) {
  if (cells == 0) {
    std::fill(out, out + channels, 0.0);
    return;
  }
  if (cells == 1) {
    for (int c = 0; c < channels; ++c) out[c] = static_cast<double>(data[c]);
    return;
  }
  size_t half = cells / 2;
  size_t m = half + (cells & 1);
  scratch.resize(m * channels);
  for (size_t i = 0; i < half; ++i) {
    const T* a = data + (2 * i) * channels;
    const T* b = data + (2 * i + 1) * channels;
    double* d = scratch.data() + i * channels;
    for (int c = 0; c < channels; ++c)
      d[c] = static_cast<double>(a[c]) + static_cast<double>(b[c]);
  }
  if (cells & 1) {
    const T* a = data + (cells - 1) * channels;
    double* d = scratch.data() + half * channels;
    for (int c = 0; c < channels; ++c) d[c] = static_cast<double>(a[c]);
  }
  while (m > 1) {
    half = m / 2;
    for (size_t i = 0; i < half; ++i) {
      const double* a = scratch.data() + (2 * i) * channels;
      const double* b = scratch.data() + (2 * i + 1) * channels;
      double* d = scratch.data() + i * channels;
      for (int c = 0; c < channels; ++c) d[c] = a[c] + b[c];
    }
    if (m & 1) {
      std::memcpy(scratch.data() + half * channels,
                  scratch.data() + (m - 1) * channels, channels * sizeof(double));
      m = half + 1;
    } else {
      m = half;
    }
  }
  std::memcpy(out, scratch.data(), channels * sizeof(double));
}

// Per-channel tree sum of squared deviations from the given means.
template <class T>
void channel_tree_sumsq(const T* data, size_t cells, int channels,
                        const double* mean, std::vector<double>& scratch,
                        double* out) {
  if (cells == 0) {
    std::fill(out, out + channels, 0.0);
    return;
  }
  auto sq = [&](size_t i, int c) {
    double d = static_cast<double>(data[i * channels + c]) - mean[c];
    return d * d;
  };
  if (cells == 1) {
    for (int c = 0; c < channels; ++c) out[c] = sq(0, c);
    return;
  }
  size_t half = cells / 2;
  size_t m = half + (cells & 1);
  scratch.resize(m * channels);
  for (size_t i = 0; i < half; ++i) {
    double* d = scratch.data() + i * channels;
    for (int c = 0; c < channels; ++c) d[c] = sq(2 * i, c) + sq(2 * i + 1, c);
  }
  if (cells & 1) {
    double* d = scratch.data() + half * channels;
    for (int c = 0; c < channels; ++c) d[c] = sq(cells - 1, c);
  }
  while (m > 1) {
    half = m / 2;
    for (size_t i = 0; i < half; ++i) {
      const double* a = scratch.data() + (2 * i) * channels;
      const double* b = scratch.data() + (2 * i + 1) * channels;
      double* d = scratch.data() + i * channels;
      for (int c = 0; c < channels; ++c) d[c] = a[c] + b[c];
    }
    if (m & 1) {
      std::memcpy(scratch.data() + half * channels,
                  scratch.data() + (m - 1) * channels, channels * sizeof(double));
      m = half + 1;
    } else {
      m = half;
    }
  }
  std::memcpy(out, scratch.data(), channels * sizeof(double));
}

// Mirror-balanced accumulation of the 27 offset products: z pairs combine
// inside chained GEMMs, y and x pairs combine via zero-initialized adds.
// Swapping the two members of any mirror pair only commutes one IEEE
// addition, so flipped inputs produce bit-identical flipped outputs.
constexpr int kMirrorOrder[3] = {-1, +1, 0};

template <class T>
void conv_forward(const ConvLayer<T>& layer, const T* in, T* out, int r,
                  Workspace<T>& ws) {
  const int in_ch = layer.spec.in_ch;
  const int out_ch = layer.spec.out_ch;
  const size_t cells = static_cast<size_t>(r) * r * r;
  if (layer.spec.kernel == 1) {
    gemm(false, false, static_cast<int>(cells), out_ch, in_ch, T(1), in, in_ch,
         layer.w.data(), out_ch, T(0), out, out_ch);
  } else {
    ws.gather.resize(cells * in_ch);
    ws.s.resize(cells * out_ch);
    ws.u.resize(cells * out_ch);
    std::fill(out, out + cells * out_ch, T(0));
    for (int ix = 0; ix < 3; ++ix) {
      int dx = kMirrorOrder[ix];
      std::fill(ws.u.begin(), ws.u.end(), T(0));
      for (int iy = 0; iy < 3; ++iy) {
        int dy = kMirrorOrder[iy];
        for (int iz = 0; iz < 3; ++iz) {
          int dz = kMirrorOrder[iz];
          gather_shifted(in, ws.gather.data(), r, in_ch, dx, dy, dz);
          int o = ((dx + 1) * 3 + (dy + 1)) * 3 + (dz + 1);
          gemm(false, false, static_cast<int>(cells), out_ch, in_ch, T(1),
               ws.gather.data(), in_ch,
               layer.w.data() + static_cast<size_t>(o) * in_ch * out_ch, out_ch,
               iz == 0 ? T(0) : T(1), ws.s.data(), out_ch);
        }
        vec_add(ws.u.data(), ws.s.data(), cells * out_ch);
      }
      vec_add(out, ws.u.data(), cells * out_ch);
    }
  }
  for (size_t e = 0; e < cells; ++e) {
    T* row = out + e * out_ch;
    for (int c = 0; c < out_ch; ++c) row[c] += layer.b[c];
  }
}

}  // namespace

void channel_tree_sums(const float* data, size_t cells, int channels,
                       std::vector<double>& scratch, double* out) {
  channel_tree_sums_impl(data, cells, channels, scratch, out);
}
void channel_tree_sums(const double* data, size_t cells, int channels,
                       std::vector<double>& scratch, double* out) {
  channel_tree_sums_impl(data, cells, channels, scratch, out);
}

template <class T>
void forward(NetworkParams<T>& params, const Tensor3<T>& in, Mode mode,
             Workspace<T>& ws, Tape<T>* tape, Tensor3<T>& out) {
  if (params.layers.empty()) throw std::runtime_error("forward: empty network");
  if (in.ch != params.in_channels())
    throw std::runtime_error("forward: input has " + std::to_string(in.ch) +
                             " channels, network expects " +
                             std::to_string(params.in_channels()));
  if (tape && mode != Mode::train)
    throw std::runtime_error("forward: tape requires train mode");

  const int r = in.res;
  const size_t cells = in.cells();
  if (tape) {
    tape->res = r;
    tape->layers.assign(params.layers.size(), {});
  }

  std::vector<T> cur(in.data);
  std::vector<T> next;
  std::vector<double> mean, var, invstd;
  for (size_t l = 0; l < params.layers.size(); ++l) {
    ConvLayer<T>& layer = params.layers[l];
    const int out_ch = layer.spec.out_ch;
    next.resize(cells * out_ch);
    if (tape) tape->layers[l].input = cur;
    conv_forward(layer, cur.data(), next.data(), r, ws);
    if (tape) tape->layers[l].conv = next;

    if (layer.spec.norm) {
      mean.resize(out_ch);
      var.resize(out_ch);
      invstd.resize(out_ch);
      if (mode == Mode::train) {
        channel_tree_sums_impl(next.data(), cells, out_ch, ws.tree, mean.data());
        double inv_n = 1.0 / static_cast<double>(cells);
        for (int c = 0; c < out_ch; ++c) mean[c] *= inv_n;
        channel_tree_sumsq(next.data(), cells, out_ch, mean.data(), ws.tree,
                           var.data());
        for (int c = 0; c < out_ch; ++c) var[c] *= inv_n;
        for (int c = 0; c < out_ch; ++c) {
          double rm = (1.0 - kNormMomentum) * static_cast<double>(layer.run_mean[c]) +
                      kNormMomentum * mean[c];
          double rv = (1.0 - kNormMomentum) * static_cast<double>(layer.run_var[c]) +
                      kNormMomentum * var[c];
          layer.run_mean[c] = static_cast<T>(rm);
          layer.run_var[c] = static_cast<T>(rv);
        }
      } else {
        for (int c = 0; c < out_ch; ++c) {
          mean[c] = static_cast<double>(layer.run_mean[c]);
          var[c] = static_cast<double>(layer.run_var[c]);
        }
      }
      for (int c = 0; c < out_ch; ++c) invstd[c] = 1.0 / std::sqrt(var[c] + kNormEps);
      if (tape) {
        tape->layers[l].mean = mean;
        tape->layers[l].invstd = invstd;
      }
      for (size_t e = 0; e < cells; ++e) {
        T* row = next.data() + e * out_ch;
        for (int c = 0; c < out_ch; ++c) {
          double xhat = (static_cast<double>(row[c]) - mean[c]) * invstd[c];
          row[c] = static_cast<T>(static_cast<double>(layer.gamma[c]) * xhat +
                                  static_cast<double>(layer.beta[c]));
        }
      }
    }
    if (layer.spec.act) {
      for (T& v : next)
        if (v < T(0)) v = static_cast<T>(kLeakySlope) * v;
    }
    cur.swap(next);
  }
  out.res = r;
  out.ch = params.out_channels();
  out.data = std::move(cur);
}

template <class T>
void backward(const NetworkParams<T>& params, const Tape<T>& tape,
              const Tensor3<T>& grad_out, Workspace<T>& ws,
              NetworkGrads<T>& grads, Tensor3<T>* grad_in) {
  if (tape.layers.size() != params.layers.size())
    throw std::runtime_error("backward: tape/params mismatch");
  if (grads.layers.size() != params.layers.size())
    throw std::runtime_error("backward: grads/params mismatch");
  const int r = tape.res;
  const size_t cells = static_cast<size_t>(r) * r * r;
  if (grad_out.res != r || grad_out.ch != params.out_channels())
    throw std::runtime_error("backward: gradient shape mismatch");

  ws.grad_cur.assign(grad_out.data.begin(), grad_out.data.end());
  std::vector<double> sum_dh, sum_dhx, prod;
  for (size_t li = params.layers.size(); li-- > 0;) {
    const ConvLayer<T>& layer = params.layers[li];
    const LayerTape<T>& lt = tape.layers[li];
    const int in_ch = layer.spec.in_ch;
    const int out_ch = layer.spec.out_ch;
    if (lt.conv.size() != cells * static_cast<size_t>(out_ch))
      throw std::runtime_error("backward: tape layer shape mismatch");
    T* dY = ws.grad_cur.data();

    if (layer.spec.norm) {
      const double* mean = lt.mean.data();
      const double* invstd = lt.invstd.data();
      // leaky backward fused with the (dh, dh*xhat) products
      prod.resize(cells * out_ch);
      for (size_t e = 0; e < cells; ++e) {
        const T* crow = lt.conv.data() + e * out_ch;
        T* grow = dY + e * out_ch;
        double* prow = prod.data() + e * out_ch;
        for (int c = 0; c < out_ch; ++c) {
          double xhat = (static_cast<double>(crow[c]) - mean[c]) * invstd[c];
          double pre = static_cast<double>(layer.gamma[c]) * xhat +
                       static_cast<double>(layer.beta[c]);
          double g = static_cast<double>(grow[c]);
          if (layer.spec.act && pre < 0.0) g *= kLeakySlope;
          grow[c] = static_cast<T>(g);
          prow[c] = g * xhat;
        }
      }
      sum_dh.resize(out_ch);
      sum_dhx.resize(out_ch);
      channel_tree_sums_impl(dY, cells, out_ch, ws.tree, sum_dh.data());
      channel_tree_sums_impl(prod.data(), cells, out_ch, ws.tree, sum_dhx.data());
      for (int c = 0; c < out_ch; ++c) {
        grads.layers[li].gamma[c] += static_cast<T>(sum_dhx[c]);
        grads.layers[li].beta[c] += static_cast<T>(sum_dh[c]);
      }
      double inv_n = 1.0 / static_cast<double>(cells);
      for (size_t e = 0; e < cells; ++e) {
        const T* crow = lt.conv.data() + e * out_ch;
        T* grow = dY + e * out_ch;
        for (int c = 0; c < out_ch; ++c) {
          double xhat = (static_cast<double>(crow[c]) - mean[c]) * invstd[c];
          double g = static_cast<double>(grow[c]);
          double dc = static_cast<double>(layer.gamma[c]) * invstd[c] *
                      (g - sum_dh[c] * inv_n - xhat * sum_dhx[c] * inv_n);
          grow[c] = static_cast<T>(dc);
        }
      }
    } else if (layer.spec.act) {
      for (size_t e = 0; e < cells * out_ch; ++e)
        if (lt.conv[e] < T(0)) dY[e] = static_cast<T>(kLeakySlope) * dY[e];
    }

    // dY now holds the gradient at the conv+bias output
    sum_dh.resize(out_ch);
    channel_tree_sums_impl(dY, cells, out_ch, ws.tree, sum_dh.data());
    for (int c = 0; c < out_ch; ++c)
      grads.layers[li].b[c] += static_cast<T>(sum_dh[c]);

    const int k = layer.spec.kernel;
    const bool want_dx = li > 0 || grad_in != nullptr;
    if (k == 1) {
      gemm(true, false, in_ch, out_ch, static_cast<int>(cells), T(1),
           lt.input.data(), in_ch, dY, out_ch, T(1), grads.layers[li].w.data(),
           out_ch);
      if (want_dx) {
        ws.grad_next.resize(cells * in_ch);
        gemm(false, true, static_cast<int>(cells), in_ch, out_ch, T(1), dY,
             out_ch, layer.w.data(), out_ch, T(0), ws.grad_next.data(), in_ch);
      }
    } else {
      ws.gather.resize(cells * std::max(in_ch, out_ch));
      if (want_dx) {
        ws.grad_next.assign(cells * in_ch, T(0));
        ws.tmp.resize(cells * in_ch);
      }
      for (int dx = -1; dx <= 1; ++dx) {
        for (int dy = -1; dy <= 1; ++dy) {
          for (int dz = -1; dz <= 1; ++dz) {
            int o = ((dx + 1) * 3 + (dy + 1)) * 3 + (dz + 1);
            const T* wblock =
                layer.w.data() + static_cast<size_t>(o) * in_ch * out_ch;
            gather_shifted(lt.input.data(), ws.gather.data(), r, in_ch, dx, dy, dz);
            gemm(true, false, in_ch, out_ch, static_cast<int>(cells), T(1),
                 ws.gather.data(), in_ch, dY, out_ch, T(1),
                 grads.layers[li].w.data() + static_cast<size_t>(o) * in_ch * out_ch,
                 out_ch);
            if (want_dx) {
              gather_shifted(dY, ws.gather.data(), r, out_ch, -dx, -dy, -dz);
              gemm(false, true, static_cast<int>(cells), in_ch, out_ch, T(1),
                   ws.gather.data(), out_ch, wblock, out_ch, T(0),
                   ws.tmp.data(), in_ch);
              vec_add(ws.grad_next.data(), ws.tmp.data(), cells * in_ch);
            }
          }
        }
      }
    }
    if (want_dx) ws.grad_cur.swap(ws.grad_next);
  }
  if (grad_in) {
    grad_in->res = r;
    grad_in->ch = params.in_channels();
    grad_in->data.assign(ws.grad_cur.begin(), ws.grad_cur.end());
  }
}

template <class T>
void sgd_step(NetworkParams<T>& params, const NetworkGrads<T>& grads, double lr,
              double weight_decay) {
  if (grads.layers.size() != params.layers.size())
    throw std::runtime_error("sgd_step: grads/params mismatch");
  for (size_t l = 0; l < params.layers.size(); ++l) {
    ConvLayer<T>& layer = params.layers[l];
    const auto& lg = grads.layers[l];
    for (size_t i = 0; i < layer.w.size(); ++i) {
      double p = static_cast<double>(layer.w[i]);
      p -= lr * (static_cast<double>(lg.w[i]) + weight_decay * p);
      layer.w[i] = static_cast<T>(p);
    }
    auto plain = [&](std::vector<T>& p, const std::vector<T>& g) {
      for (size_t i = 0; i < p.size(); ++i)
        p[i] = static_cast<T>(static_cast<double>(p[i]) -
                              lr * static_cast<double>(g[i]));
    };
    plain(layer.b, lg.b);
    plain(layer.gamma, lg.gamma);
    plain(layer.beta, lg.beta);
  }
}

template struct NetworkParams<float>;
template struct NetworkParams<double>;
template struct NetworkGrads<float>;
template struct NetworkGrads<double>;
template void forward<float>(NetworkParams<float>&, const Tensor3<float>&, Mode,
                             Workspace<float>&, Tape<float>*, Tensor3<float>&);
template void forward<double>(NetworkParams<double>&, const Tensor3<double>&, Mode,
                              Workspace<double>&, Tape<double>*, Tensor3<double>&);
template void backward<float>(const NetworkParams<float>&, const Tape<float>&,
                              const Tensor3<float>&, Workspace<float>&,
                              NetworkGrads<float>&, Tensor3<float>*);
template void backward<double>(const NetworkParams<double>&, const Tape<double>&,
                               const Tensor3<double>&, Workspace<double>&,
                               NetworkGrads<double>&, Tensor3<double>*);
template void sgd_step<float>(NetworkParams<float>&, const NetworkGrads<float>&,
                              double, double);
template void sgd_step<double>(NetworkParams<double>&, const NetworkGrads<double>&,
                               double, double);

}  // namespace u3ds3
