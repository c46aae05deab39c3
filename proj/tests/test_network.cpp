#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "u3ds3/network.hpp"
#include "u3ds3/rng.hpp"
#include "u3ds3/voxel.hpp"

using namespace u3ds3;

namespace {

// Dense reference convolution: plain 6-nested loop, zero padding, no GEMM.
template <class T>
Tensor3<T> conv_oracle(const ConvLayer<T>& layer, const Tensor3<T>& in) {
  int r = in.res, k = layer.spec.kernel, ic = layer.spec.in_ch,
      oc = layer.spec.out_ch;
  int half = k / 2;
  Tensor3<T> out(r, oc);
  for (int x = 0; x < r; ++x)
    for (int y = 0; y < r; ++y)
      for (int z = 0; z < r; ++z)
        for (int j = 0; j < oc; ++j) {
          double acc = layer.b[j];
          for (int kx = 0; kx < k; ++kx)
            for (int ky = 0; ky < k; ++ky)
              for (int kz = 0; kz < k; ++kz) {
                int sx = x + kx - half, sy = y + ky - half, sz = z + kz - half;
                if (sx < 0 || sx >= r || sy < 0 || sy >= r || sz < 0 || sz >= r)
                  continue;
                int o = (kx * k + ky) * k + kz;
                const T* cell =
                    &in.data[(((size_t)sx * r + sy) * r + sz) * ic];
                for (int i = 0; i < ic; ++i)
                  acc += cell[i] * layer.w[((size_t)o * ic + i) * oc + j];
              }
          out.data[(((size_t)x * r + y) * r + z) * oc + j] = static_cast<T>(acc);
        }
  return out;
}

template <class T>
void randomize(Tensor3<T>& t, Rng& rng, double lo = -1.0, double hi = 1.0) {
  for (auto& v : t.data) v = static_cast<T>(rng.uniform(lo, hi));
}

// Kernel with every spatial offset mirrored along the flipped axes.
template <class T>
ConvLayer<T> mirror_kernel(const ConvLayer<T>& layer, const FlipSpec& spec) {
  ConvLayer<T> out = layer;
  int k = layer.spec.kernel, ic = layer.spec.in_ch, oc = layer.spec.out_ch;
  for (int kx = 0; kx < k; ++kx)
    for (int ky = 0; ky < k; ++ky)
      for (int kz = 0; kz < k; ++kz) {
        int tx = spec.axis[0] ? k - 1 - kx : kx;
        int ty = spec.axis[1] ? k - 1 - ky : ky;
        int tz = spec.axis[2] ? k - 1 - kz : kz;
        int src = (kx * k + ky) * k + kz;
        int dst = (tx * k + ty) * k + tz;
        std::copy_n(layer.w.begin() + (size_t)src * ic * oc, (size_t)ic * oc,
                    out.w.begin() + (size_t)dst * ic * oc);
      }
  return out;
}

// Finite-difference harness over one scalar loss of the network output.
struct FdCheck {
  double h = 1e-4;
  double max_rel = 0.0;

  void compare(double fd, double analytic) {
    double rel = std::abs(fd - analytic) /
                 std::max({1e-4, std::abs(fd), std::abs(analytic)});
    max_rel = std::max(max_rel, rel);
  }
};

double dot_loss(const std::vector<double>& out, const std::vector<double>& seed) {
  double s = 0.0;
  for (size_t i = 0; i < out.size(); ++i) s += out[i] * seed[i];
  return s;
}

// Runs forward in train mode on a scratch copy so running stats never leak
// into the finite-difference evaluations.
double net_loss(const NetworkParams<double>& params, const Tensor3<double>& in,
                const std::vector<double>& seed, Workspace<double>& ws) {
  NetworkParams<double> copy = params;
  Tape<double> tape;
  Tensor3<double> out;
  forward(copy, in, Mode::train, ws, &tape, out);
  return dot_loss(out.data, seed);
}

struct NetGradients {
  NetworkGrads<double> grads;
  Tensor3<double> grad_in;
};

NetGradients net_backward(const NetworkParams<double>& params,
                          const Tensor3<double>& in,
                          const std::vector<double>& seed,
                          Workspace<double>& ws) {
  NetworkParams<double> copy = params;
  Tape<double> tape;
  Tensor3<double> out;
  forward(copy, in, Mode::train, ws, &tape, out);
  Tensor3<double> gseed(out.res, out.ch);
  gseed.data = seed;
  NetGradients r;
  r.grads = NetworkGrads<double>::zeros_like(params);
  r.grad_in = Tensor3<double>(in.res, in.ch);
  backward(params, tape, gseed, ws, r.grads, &r.grad_in);
  return r;
}

void fd_network(const std::vector<LayerSpec>& plan, uint64_t seed_val,
                double tol = 1e-3) {
  Rng rng(seed_val);
  NetworkParams<double> params = NetworkParams<double>::create(plan, rng);
  int r = 4;
  Tensor3<double> in(r, plan.front().in_ch);
  randomize(in, rng);
  std::vector<double> seed(static_cast<size_t>(r) * r * r * plan.back().out_ch);
  for (auto& v : seed) v = rng.uniform(-1.0, 1.0);
  Workspace<double> ws;

  NetGradients an = net_backward(params, in, seed, ws);
  FdCheck fd;
  auto probe = [&](std::vector<double>& vec, size_t idx, double analytic) {
    double keep = vec[idx];
    vec[idx] = keep + fd.h;
    double fp = net_loss(params, in, seed, ws);
    vec[idx] = keep - fd.h;
    double fm = net_loss(params, in, seed, ws);
    vec[idx] = keep;
    fd.compare((fp - fm) / (2 * fd.h), analytic);
  };

  for (size_t li = 0; li < params.layers.size(); ++li) {
    ConvLayer<double>& l = params.layers[li];
    auto& g = an.grads.layers[li];
    size_t wstep = std::max<size_t>(1, l.w.size() / 40);
    for (size_t i = 0; i < l.w.size(); i += wstep) probe(l.w, i, g.w[i]);
    for (size_t i = 0; i < l.b.size(); ++i) probe(l.b, i, g.b[i]);
    for (size_t i = 0; i < l.gamma.size(); ++i) probe(l.gamma, i, g.gamma[i]);
    for (size_t i = 0; i < l.beta.size(); ++i) probe(l.beta, i, g.beta[i]);
  }
  size_t istep = std::max<size_t>(1, in.data.size() / 60);
  for (size_t i = 0; i < in.data.size(); i += istep) {
    double keep = in.data[i];
    in.data[i] = keep + fd.h;
    double fp = net_loss(params, in, seed, ws);
    in.data[i] = keep - fd.h;
    double fm = net_loss(params, in, seed, ws);
    in.data[i] = keep;
    fd.compare((fp - fm) / (2 * fd.h), an.grad_in.data[i]);
  }
  CHECK(fd.max_rel < tol);
}

}  // namespace

TEST_SUITE_BEGIN("network");

TEST_CASE("feature net plan matches the advertised channel ladder") {
  auto plan = feature_net_plan();
  REQUIRE(plan.size() == 8);
  int expect[9] = {12, 32, 64, 64, 128, 128, 128, 128, 128};
  for (int i = 0; i < 8; ++i) {
    CHECK(plan[i].in_ch == expect[i]);
    CHECK(plan[i].out_ch == expect[i + 1]);
    CHECK(plan[i].kernel == 3);
    CHECK(plan[i].norm);
    CHECK(plan[i].act == (i < 7));
  }
}

TEST_CASE("conv with a delta kernel is the identity") {
  Rng rng(101);
  std::vector<LayerSpec> plan{{3, 3, 3, false, false}};
  NetworkParams<float> params = NetworkParams<float>::create(plan, rng);
  ConvLayer<float>& l = params.layers[0];
  std::fill(l.w.begin(), l.w.end(), 0.0f);
  int center = (1 * 3 + 1) * 3 + 1;
  for (int i = 0; i < 3; ++i) l.w[((size_t)center * 3 + i) * 3 + i] = 1.0f;

  Tensor3<float> in(5, 3), out;
  randomize(in, rng);
  Workspace<float> ws;
  forward(params, in, Mode::eval, ws, static_cast<Tape<float>*>(nullptr), out);
  for (size_t i = 0; i < in.data.size(); ++i)
    CHECK(out.data[i] == doctest::Approx(in.data[i]).epsilon(1e-6));
}

TEST_CASE("conv matches the dense loop oracle") {
  Rng rng(102);
  for (int kernel : {1, 3}) {
    std::vector<LayerSpec> plan{{4, 5, kernel, false, false}};
    NetworkParams<float> params = NetworkParams<float>::create(plan, rng);
    for (auto& b : params.layers[0].b) b = static_cast<float>(rng.uniform(-0.5, 0.5));
    Tensor3<float> in(6, 4), out;
    randomize(in, rng);
    Workspace<float> ws;
    forward(params, in, Mode::eval, ws, static_cast<Tape<float>*>(nullptr), out);
    Tensor3<float> ref = conv_oracle(params.layers[0], in);
    for (size_t i = 0; i < out.data.size(); ++i)
      CHECK(out.data[i] == doctest::Approx(ref.data[i]).epsilon(1e-4));
  }
}

TEST_CASE("forward rejects a channel mismatch") {
  Rng rng(103);
  std::vector<LayerSpec> plan{{4, 5, 3, true, true}};
  NetworkParams<float> params = NetworkParams<float>::create(plan, rng);
  Tensor3<float> in(4, 3), out;
  Workspace<float> ws;
  CHECK_THROWS_AS(
      forward(params, in, Mode::eval, ws, static_cast<Tape<float>*>(nullptr), out),
      std::runtime_error);
}

TEST_CASE("train-mode normalization zeroes mean and unitizes variance") {
  Rng rng(104);
  std::vector<LayerSpec> plan{{2, 3, 1, true, false}};
  NetworkParams<float> params = NetworkParams<float>::create(plan, rng);
  Tensor3<float> in(4, 2), out;
  randomize(in, rng);
  Workspace<float> ws;
  Tape<float> tape;
  forward(params, in, Mode::train, ws, &tape, out);
  size_t cells = out.cells();
  for (int c = 0; c < 3; ++c) {
    double mean = 0, var = 0;
    for (size_t i = 0; i < cells; ++i) mean += out.data[i * 3 + c];
    mean /= static_cast<double>(cells);
    for (size_t i = 0; i < cells; ++i) {
      double d = out.data[i * 3 + c] - mean;
      var += d * d;
    }
    var /= static_cast<double>(cells);
    CHECK(std::abs(mean) < 1e-5);
    CHECK(var == doctest::Approx(1.0).epsilon(1e-3));  // biased, eps-damped
  }
}

TEST_CASE("train mode updates running stats with momentum 0.1") {
  Rng rng(105);
  std::vector<LayerSpec> plan{{2, 2, 1, true, false}};
  NetworkParams<float> params = NetworkParams<float>::create(plan, rng);
  Tensor3<float> in(4, 2), out;
  randomize(in, rng);
  Workspace<float> ws;
  Tape<float> tape;
  forward(params, in, Mode::train, ws, &tape, out);
  // run_mean moved from 0 toward the batch mean by exactly the momentum
  for (int c = 0; c < 2; ++c) {
    double expect = 0.1 * tape.layers[0].mean[c];
    CHECK(params.layers[0].run_mean[c] == doctest::Approx(expect).epsilon(1e-5));
  }
}

TEST_CASE("eval mode leaves parameters untouched") {
  Rng rng(106);
  NetworkParams<float> params =
      NetworkParams<float>::create({{2, 2, 3, true, true}}, rng);
  NetworkParams<float> before = params;
  Tensor3<float> in(4, 2), out;
  randomize(in, rng);
  Workspace<float> ws;
  forward(params, in, Mode::eval, ws, static_cast<Tape<float>*>(nullptr), out);
  CHECK(params.layers[0].run_mean == before.layers[0].run_mean);
  CHECK(params.layers[0].run_var == before.layers[0].run_var);
}

TEST_CASE("eval-mode normalization applies running stats by the book") {
  Rng rng(107);
  std::vector<LayerSpec> plan{{1, 1, 1, true, false}};
  NetworkParams<float> params = NetworkParams<float>::create(plan, rng);
  ConvLayer<float>& l = params.layers[0];
  l.w[0] = 1.0f;
  l.run_mean[0] = 0.5f;
  l.run_var[0] = 4.0f;
  l.gamma[0] = 2.0f;
  l.beta[0] = 1.0f;
  Tensor3<float> in(2, 1), out;
  std::fill(in.data.begin(), in.data.end(), 2.5f);
  Workspace<float> ws;
  forward(params, in, Mode::eval, ws, static_cast<Tape<float>*>(nullptr), out);
  double expect = 2.0 * (2.5 - 0.5) / std::sqrt(4.0 + kNormEps) + 1.0;
  for (float v : out.data) CHECK(v == doctest::Approx(expect).epsilon(1e-5));
}

TEST_CASE("leaky relu slope applies only to negative preactivations") {
  Rng rng(108);
  std::vector<LayerSpec> plan{{1, 1, 1, false, true}};
  NetworkParams<float> params = NetworkParams<float>::create(plan, rng);
  params.layers[0].w[0] = 1.0f;
  Tensor3<float> in(2, 1), out;
  in.data[0] = 3.0f;
  in.data[1] = -3.0f;
  Workspace<float> ws;
  forward(params, in, Mode::eval, ws, static_cast<Tape<float>*>(nullptr), out);
  CHECK(out.data[0] == doctest::Approx(3.0f));
  CHECK(out.data[1] == doctest::Approx(-0.3f));
}

TEST_CASE("zero input stays finite through normalization") {
  Rng rng(109);
  NetworkParams<float> params = NetworkParams<float>::create(feature_net_plan(), rng);
  Tensor3<float> in(4, 12), out;
  Workspace<float> ws;
  Tape<float> tape;
  forward(params, in, Mode::train, ws, &tape, out);
  for (float v : out.data) CHECK(std::isfinite(v));
}

TEST_CASE("he init spread tracks fan-in") {
  Rng rng(110);
  std::vector<LayerSpec> plan{{64, 64, 3, true, true}};
  NetworkParams<float> params = NetworkParams<float>::create(plan, rng);
  const auto& w = params.layers[0].w;
  double mean = 0, var = 0;
  for (float v : w) mean += v;
  mean /= static_cast<double>(w.size());
  for (float v : w) var += (v - mean) * (v - mean);
  var /= static_cast<double>(w.size());
  double expect = 2.0 / (64.0 * 27.0);
  CHECK(std::abs(mean) < 0.001);
  CHECK(var == doctest::Approx(expect).epsilon(0.1));
  for (float b : params.layers[0].b) CHECK(b == 0.0f);
  for (float g : params.layers[0].gamma) CHECK(g == 1.0f);
  for (float v : params.layers[0].run_var) CHECK(v == 1.0f);
}

TEST_CASE("channel sums are invariant under mirror cell permutations") {
  Rng rng(111);
  int r = 8, d = 3;
  Tensor3<float> t(r, d), flipped(r, d);
  randomize(t, rng);
  FlipSpec spec;
  spec.axis[0] = spec.axis[2] = true;
  flip_tensor(t.data.data(), flipped.data.data(), r, d, spec);
  std::vector<double> scratch, a(d), b(d);
  channel_tree_sums(t.data.data(), t.cells(), d, scratch, a.data());
  channel_tree_sums(flipped.data.data(), flipped.cells(), d, scratch, b.data());
  CHECK(a == b);  // bit-exact
}

TEST_CASE("flipping input and kernels commutes with convolution bit-exactly") {
  Rng rng(112);
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<LayerSpec> plan{{3, 4, 3, false, false}};
    NetworkParams<float> params = NetworkParams<float>::create(plan, rng);
    int r = 8;
    Tensor3<float> in(r, 3);
    randomize(in, rng);
    FlipSpec spec;
    for (int a = 0; a < 3; ++a) spec.axis[a] = rng.uniform() < 0.5;

    Workspace<float> ws;
    Tensor3<float> base;
    forward(params, in, Mode::eval, ws, static_cast<Tape<float>*>(nullptr), base);

    NetworkParams<float> mirrored = params;
    mirrored.layers[0] = mirror_kernel(params.layers[0], spec);
    Tensor3<float> flipped_in(r, 3), out_m;
    flip_tensor(in.data.data(), flipped_in.data.data(), r, 3, spec);
    forward(mirrored, flipped_in, Mode::eval, ws,
            static_cast<Tape<float>*>(nullptr), out_m);
    Tensor3<float> back(r, 4);
    flip_tensor(out_m.data.data(), back.data.data(), r, 4, spec);

    CHECK(back.data == base.data);  // bitwise
  }
}

TEST_CASE("full normalized net is flip-equivariant with mirrored kernels") {
  Rng rng(113);
  std::vector<LayerSpec> plan{{3, 4, 3, true, true}, {4, 4, 3, true, false}};
  NetworkParams<float> params = NetworkParams<float>::create(plan, rng);
  int r = 8;
  Tensor3<float> in(r, 3);
  randomize(in, rng);
  FlipSpec spec;
  spec.axis[1] = true;

  Workspace<float> ws;
  Tape<float> t1, t2;
  NetworkParams<float> run1 = params;
  Tensor3<float> base;
  forward(run1, in, Mode::train, ws, &t1, base);

  NetworkParams<float> run2 = params;
  for (auto& l : run2.layers) l = mirror_kernel(l, spec);
  Tensor3<float> flipped_in(r, 3), out_m;
  flip_tensor(in.data.data(), flipped_in.data.data(), r, 3, spec);
  forward(run2, flipped_in, Mode::train, ws, &t2, out_m);
  Tensor3<float> back(r, 4);
  flip_tensor(out_m.data.data(), back.data.data(), r, 4, spec);

  // Train-mode statistics see a permuted cell set; the pairwise-tree sums
  // keep them bit-identical, so the outputs must agree bitwise too.
  CHECK(back.data == base.data);
  CHECK(t1.layers[0].mean == t2.layers[0].mean);
}

TEST_CASE("gradient check: plain k1 conv") { fd_network({{3, 4, 1, false, false}}, 200); }

TEST_CASE("gradient check: plain k3 conv") { fd_network({{2, 3, 3, false, false}}, 201); }

TEST_CASE("gradient check: normalized k1 conv") {
  fd_network({{3, 4, 1, true, false}}, 202);
}

TEST_CASE("gradient check: normalized k3 conv with activation") {
  fd_network({{2, 3, 3, true, true}}, 203);
}

TEST_CASE("gradient check: composed three-layer net") {
  fd_network({{3, 4, 3, true, true}, {4, 4, 3, true, true}, {4, 3, 1, true, false}},
             204);
}

TEST_CASE("backward accumulates into the gradient buffers") {
  Rng rng(114);
  std::vector<LayerSpec> plan{{2, 2, 1, false, false}};
  NetworkParams<double> params = NetworkParams<double>::create(plan, rng);
  Tensor3<double> in(2, 2);
  randomize(in, rng);
  std::vector<double> seed(in.cells() * 2);
  for (auto& v : seed) v = rng.uniform(-1, 1);
  Workspace<double> ws;
  NetGradients once = net_backward(params, in, seed, ws);

  NetworkParams<double> copy = params;
  Tape<double> tape;
  Tensor3<double> out;
  forward(copy, in, Mode::train, ws, &tape, out);
  Tensor3<double> gseed(out.res, out.ch);
  gseed.data = seed;
  NetworkGrads<double> grads = NetworkGrads<double>::zeros_like(params);
  backward(params, tape, gseed, ws, grads, static_cast<Tensor3<double>*>(nullptr));
  backward(params, tape, gseed, ws, grads, static_cast<Tensor3<double>*>(nullptr));
  for (size_t i = 0; i < grads.layers[0].w.size(); ++i)
    CHECK(grads.layers[0].w[i] ==
          doctest::Approx(2.0 * once.grads.layers[0].w[i]).epsilon(1e-9));
}

TEST_CASE("sgd step decays weights but not biases or scales") {
  Rng rng(115);
  std::vector<LayerSpec> plan{{1, 1, 1, true, false}};
  NetworkParams<float> params = NetworkParams<float>::create(plan, rng);
  ConvLayer<float>& l = params.layers[0];
  l.w[0] = 1.0f;
  l.b[0] = 1.0f;
  l.gamma[0] = 1.0f;
  l.beta[0] = 1.0f;
  NetworkGrads<float> grads = NetworkGrads<float>::zeros_like(params);
  sgd_step(params, grads, 0.1, 0.1);
  CHECK(l.w[0] == doctest::Approx(0.99f));  // 1 - 0.1 * (0 + 0.1 * 1)
  CHECK(l.b[0] == 1.0f);
  CHECK(l.gamma[0] == 1.0f);
  CHECK(l.beta[0] == 1.0f);
}

TEST_CASE("sgd step applies plain gradients everywhere") {
  Rng rng(116);
  std::vector<LayerSpec> plan{{1, 2, 1, true, true}};
  NetworkParams<float> params = NetworkParams<float>::create(plan, rng);
  NetworkGrads<float> grads = NetworkGrads<float>::zeros_like(params);
  for (auto& g : grads.layers[0].w) g = 1.0f;
  for (auto& g : grads.layers[0].gamma) g = 2.0f;
  std::vector<float> w0 = params.layers[0].w;
  sgd_step(params, grads, 0.5, 0.0);
  for (size_t i = 0; i < w0.size(); ++i)
    CHECK(params.layers[0].w[i] == doctest::Approx(w0[i] - 0.5f));
  CHECK(params.layers[0].gamma[0] == doctest::Approx(0.0f));
}

TEST_CASE("grads add and scale elementwise") {
  Rng rng(117);
  NetworkParams<float> params =
      NetworkParams<float>::create({{2, 2, 1, true, true}}, rng);
  NetworkGrads<float> a = NetworkGrads<float>::zeros_like(params);
  NetworkGrads<float> b = NetworkGrads<float>::zeros_like(params);
  a.layers[0].w[0] = 1.0f;
  b.layers[0].w[0] = 2.0f;
  a.add(b);
  CHECK(a.layers[0].w[0] == 3.0f);
  a.scale(0.5f);
  CHECK(a.layers[0].w[0] == 1.5f);
  a.zero();
  CHECK(a.layers[0].w[0] == 0.0f);
}

TEST_SUITE_END();
