#pragma once

#include <cblas.h>

#include <cstddef>
#include <vector>

namespace u3ds3 {

// Row-major C = alpha * op(A) op(B) + beta * C.
inline void gemm(bool trans_a, bool trans_b, int m, int n, int k, float alpha,
                 const float* a, int lda, const float* b, int ldb, float beta,
                 float* c, int ldc) {
  cblas_sgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans,
              trans_b ? CblasTrans : CblasNoTrans, m, n, k, alpha, a, lda, b,
              ldb, beta, c, ldc);
}

inline void gemm(bool trans_a, bool trans_b, int m, int n, int k, double alpha,
                 const double* a, int lda, const double* b, int ldb, double beta,
                 double* c, int ldc) {
  cblas_dgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans,
              trans_b ? CblasTrans : CblasNoTrans, m, n, k, alpha, a, lda, b,
              ldb, beta, c, ldc);
}

// Pairwise tree sum over a strided sequence, accumulated in double. For n a
// power of two the addition order forms a perfect binary tree, which makes
// the result invariant under any permutation that swaps subtrees (in
// particular the axis-mirror index maps used by the voxel flips).
inline double tree_sum(const double* buf, size_t n) {
  if (n == 0) return 0.0;
  // bottom-up halving without modifying the input
  thread_local std::vector<double> scratch;
  scratch.assign(buf, buf + n);
  size_t m = n;
  while (m > 1) {
    size_t half = m / 2;
    for (size_t i = 0; i < half; ++i)
      scratch[i] = scratch[2 * i] + scratch[2 * i + 1];
    if (m & 1) {
      scratch[half] = scratch[m - 1];
      m = half + 1;
    } else {
      m = half;
    }
  }
  return scratch[0];
}

}  // namespace u3ds3
