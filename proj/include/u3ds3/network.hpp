#pragma once

#include <cstdint>
#include <vector>

#include "u3ds3/rng.hpp"

namespace u3ds3 {

// Dense cubic activation tensor, cell-major (cell = (x*res + y)*res + z,
// channels contiguous per cell).
template <class T>
struct Tensor3 {
  int res = 0;
  int ch = 0;
  std::vector<T> data;

  Tensor3() = default;
  Tensor3(int r, int c)
      : res(r), ch(c), data(static_cast<size_t>(r) * r * r * c, T(0)) {}
  size_t cells() const { return static_cast<size_t>(res) * res * res; }
};

struct LayerSpec {
  int in_ch = 0;
  int out_ch = 0;
  int kernel = 3;  // 1 or 3
  bool norm = true;
  bool act = true;
};

// The production feature extractor: 8 conv layers (k=3, stride 1, pad 1),
// 12 -> 32 -> 64 -> 64 -> 128 -> 128 -> 128 -> 128 -> 128, each with
// normalization and leaky ReLU 0.1 except the last, which is linear after
// its normalization so the features feed cosine clustering directly.
std::vector<LayerSpec> feature_net_plan();

inline constexpr double kLeakySlope = 0.1;
inline constexpr double kNormEps = 1e-5;
inline constexpr double kNormMomentum = 0.1;

template <class T>
struct ConvLayer {
  LayerSpec spec;
  // Weights are stored offset-major: w[(o * in_ch + i) * out_ch + j] with
  // o = (kx*k + ky)*k + kz, so each offset slice is a ready GEMM operand.
  std::vector<T> w, b;
  std::vector<T> gamma, beta, run_mean, run_var;
};

template <class T>
struct NetworkParams {
  std::vector<ConvLayer<T>> layers;

  int in_channels() const { return layers.front().spec.in_ch; }
  int out_channels() const { return layers.back().spec.out_ch; }

  // He-initialized weights (fan_in = in_ch * k^3), zero biases and shifts,
  // unit scales, running stats (0, 1).
  static NetworkParams create(const std::vector<LayerSpec>& plan, Rng& rng);
};

template <class T>
struct LayerTape {
  std::vector<T> input;          // layer input activations
  std::vector<T> conv;           // conv + bias, before normalization
  std::vector<double> mean, invstd;  // batch statistics (norm layers)
};

template <class T>
struct Tape {
  int res = 0;
  std::vector<LayerTape<T>> layers;
};

template <class T>
struct NetworkGrads {
  struct LayerGrads {
    std::vector<T> w, b, gamma, beta;
  };
  std::vector<LayerGrads> layers;

  static NetworkGrads zeros_like(const NetworkParams<T>& params);
  void zero();
  // this += other, elementwise
  void add(const NetworkGrads& other);
  void scale(T factor);
};

enum class Mode { train, eval };

// Reusable scratch for forward/backward; keeps the large gather and
// accumulator buffers alive across calls.
template <class T>
struct Workspace {
  std::vector<T> gather, s, u, acc, tmp, grad_cur, grad_next;
  std::vector<double> tree, tree2;
};

// Runs the network on one grid. Train mode records a tape, normalizes with
// per-grid batch statistics, and updates running stats (momentum 0.1); eval
// mode uses running stats and leaves params untouched. Throws on channel
// mismatch.
template <class T>
void forward(NetworkParams<T>& params, const Tensor3<T>& in, Mode mode,
             Workspace<T>& ws, Tape<T>* tape, Tensor3<T>& out);

// Exact reverse-mode gradients for the tape's forward pass. grad_in is
// optional; pass nullptr when the input gradient is not needed.
template <class T>
void backward(const NetworkParams<T>& params, const Tape<T>& tape,
              const Tensor3<T>& grad_out, Workspace<T>& ws,
              NetworkGrads<T>& grads, Tensor3<T>* grad_in);

// p <- p - lr * (g + wd * p) for conv weights; biases and normalization
// parameters skip the decay term.
template <class T>
void sgd_step(NetworkParams<T>& params, const NetworkGrads<T>& grads, double lr,
              double weight_decay);

// Per-channel sums of a cell-major tensor, accumulated as a perfect pairwise
// tree over cells in double. For power-of-two cell counts the tree makes the
// result bit-invariant under axis-mirror cell permutations, which is what
// keeps training-mode normalization exactly flip-equivariant.
void channel_tree_sums(const float* data, size_t cells, int channels,
                       std::vector<double>& scratch, double* out);
void channel_tree_sums(const double* data, size_t cells, int channels,
                       std::vector<double>& scratch, double* out);

}  // namespace u3ds3
