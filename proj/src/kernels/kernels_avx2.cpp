#if defined(__x86_64__) || defined(_M_X64)

#include <immintrin.h>

#include <cmath>

#include "kernel_table.hpp"

// AVX2 + FMA variants of the float kernels. Semantics match
// kernels/reference.hpp; the equivalence suite compares them directly.

namespace gridsight::kernels {

namespace {

// ---------------------------------------------------------------------------
// Vector exp, Cephes polynomial (same scheme as the widely used
// avx_mathfun port). Max observed relative error ~2 ulp on [-87, 88].
// ---------------------------------------------------------------------------
inline __m256 exp256(__m256 x) {
  const __m256 hi = _mm256_set1_ps(88.3762626647950f);
  const __m256 lo = _mm256_set1_ps(-88.3762626647949f);
  const __m256 log2e = _mm256_set1_ps(1.44269504088896341f);
  const __m256 c1 = _mm256_set1_ps(0.693359375f);
  const __m256 c2 = _mm256_set1_ps(-2.12194440e-4f);
  const __m256 one = _mm256_set1_ps(1.0f);

  x = _mm256_min_ps(x, hi);
  x = _mm256_max_ps(x, lo);

  __m256 fx = _mm256_fmadd_ps(x, log2e, _mm256_set1_ps(0.5f));
  fx = _mm256_floor_ps(fx);

  x = _mm256_fnmadd_ps(fx, c1, x);
  x = _mm256_fnmadd_ps(fx, c2, x);

  const __m256 z = _mm256_mul_ps(x, x);
  __m256 y = _mm256_set1_ps(1.9875691500e-4f);
  y = _mm256_fmadd_ps(y, x, _mm256_set1_ps(1.3981999507e-3f));
  y = _mm256_fmadd_ps(y, x, _mm256_set1_ps(8.3334519073e-3f));
  y = _mm256_fmadd_ps(y, x, _mm256_set1_ps(4.1665795894e-2f));
  y = _mm256_fmadd_ps(y, x, _mm256_set1_ps(1.6666665459e-1f));
  y = _mm256_fmadd_ps(y, x, _mm256_set1_ps(5.0000001201e-1f));
  y = _mm256_fmadd_ps(y, z, _mm256_add_ps(x, one));

  const __m256i emm0 =
      _mm256_slli_epi32(_mm256_add_epi32(_mm256_cvttps_epi32(fx), _mm256_set1_epi32(0x7f)), 23);
  return _mm256_mul_ps(y, _mm256_castsi256_ps(emm0));
}

inline __m256 sigmoid256(__m256 x) {
  const __m256 one = _mm256_set1_ps(1.0f);
  const __m256 e = exp256(_mm256_sub_ps(_mm256_setzero_ps(), x));
  return _mm256_div_ps(one, _mm256_add_ps(one, e));
}

// tanh(x) = sign(x) * (1 - e) / (1 + e), e = exp(-2|x|).
inline __m256 tanh256(__m256 x) {
  const __m256 sign_mask = _mm256_set1_ps(-0.0f);
  const __m256 sign = _mm256_and_ps(x, sign_mask);
  const __m256 ax = _mm256_andnot_ps(sign_mask, x);
  const __m256 e = exp256(_mm256_mul_ps(ax, _mm256_set1_ps(-2.0f)));
  const __m256 one = _mm256_set1_ps(1.0f);
  const __m256 r = _mm256_div_ps(_mm256_sub_ps(one, e), _mm256_add_ps(one, e));
  return _mm256_or_ps(r, sign);
}

float sigmoid_scalar(float x) { return 1.0f / (1.0f + std::exp(-x)); }

void a_vsigmoid(int n, const float* x, float* y) {
  int i = 0;
  for (; i + 8 <= n; i += 8) _mm256_storeu_ps(y + i, sigmoid256(_mm256_loadu_ps(x + i)));
  for (; i < n; ++i) y[i] = sigmoid_scalar(x[i]);
}

void a_vtanh(int n, const float* x, float* y) {
  int i = 0;
  for (; i + 8 <= n; i += 8) _mm256_storeu_ps(y + i, tanh256(_mm256_loadu_ps(x + i)));
  for (; i < n; ++i) {
    const float e = std::exp(-2.0f * std::fabs(x[i]));
    const float r = (1.0f - e) / (1.0f + e);
    y[i] = x[i] < 0.0f ? -r : r;
  }
}

void a_axpy(int n, float a, const float* x, float* y) {
  const __m256 av = _mm256_set1_ps(a);
  int i = 0;
  for (; i + 8 <= n; i += 8) {
    _mm256_storeu_ps(y + i, _mm256_fmadd_ps(av, _mm256_loadu_ps(x + i), _mm256_loadu_ps(y + i)));
  }
  for (; i < n; ++i) y[i] += a * x[i];
}

void a_leaky(int n, const float* x, float* y, float slope) {
  // slope < 1, so leaky(x) = max(x, slope*x).
  const __m256 sv = _mm256_set1_ps(slope);
  int i = 0;
  for (; i + 8 <= n; i += 8) {
    const __m256 v = _mm256_loadu_ps(x + i);
    _mm256_storeu_ps(y + i, _mm256_max_ps(v, _mm256_mul_ps(sv, v)));
  }
  for (; i < n; ++i) y[i] = x[i] > 0.0f ? x[i] : slope * x[i];
}

void a_leaky_grad(int n, const float* x, const float* dy, float* dx, float slope) {
  const __m256 sv = _mm256_set1_ps(slope);
  const __m256 onev = _mm256_set1_ps(1.0f);
  const __m256 zero = _mm256_setzero_ps();
  int i = 0;
  for (; i + 8 <= n; i += 8) {
    const __m256 mask = _mm256_cmp_ps(_mm256_loadu_ps(x + i), zero, _CMP_GT_OQ);
    const __m256 f = _mm256_blendv_ps(sv, onev, mask);
    _mm256_storeu_ps(dx + i, _mm256_mul_ps(_mm256_loadu_ps(dy + i), f));
  }
  for (; i < n; ++i) dx[i] = dy[i] * (x[i] > 0.0f ? 1.0f : slope);
}

void a_adam(int n, float* p, const float* g, float* m, float* v, float lr, float b1, float b2,
            float eps, float bc1, float bc2) {
  const __m256 b1v = _mm256_set1_ps(b1), ob1 = _mm256_set1_ps(1.0f - b1);
  const __m256 b2v = _mm256_set1_ps(b2), ob2 = _mm256_set1_ps(1.0f - b2);
  const __m256 lrv = _mm256_set1_ps(lr), epsv = _mm256_set1_ps(eps);
  const __m256 bc1v = _mm256_set1_ps(bc1), bc2v = _mm256_set1_ps(bc2);
  int i = 0;
  for (; i + 8 <= n; i += 8) {
    const __m256 gv = _mm256_loadu_ps(g + i);
    __m256 mv = _mm256_fmadd_ps(b1v, _mm256_loadu_ps(m + i), _mm256_mul_ps(ob1, gv));
    __m256 vv =
        _mm256_fmadd_ps(b2v, _mm256_loadu_ps(v + i), _mm256_mul_ps(ob2, _mm256_mul_ps(gv, gv)));
    _mm256_storeu_ps(m + i, mv);
    _mm256_storeu_ps(v + i, vv);
    const __m256 mhat = _mm256_mul_ps(mv, bc1v);
    const __m256 vhat = _mm256_mul_ps(vv, bc2v);
    const __m256 denom = _mm256_add_ps(_mm256_sqrt_ps(vhat), epsv);
    const __m256 upd = _mm256_div_ps(_mm256_mul_ps(lrv, mhat), denom);
    _mm256_storeu_ps(p + i, _mm256_sub_ps(_mm256_loadu_ps(p + i), upd));
  }
  for (; i < n; ++i) {
    m[i] = b1 * m[i] + (1.0f - b1) * g[i];
    v[i] = b2 * v[i] + (1.0f - b2) * g[i] * g[i];
    p[i] -= lr * (m[i] * bc1) / (std::sqrt(v[i] * bc2) + eps);
  }
}

void a_sgdm(int n, float* p, const float* g, float* u, float lr, float mu) {
  const __m256 muv = _mm256_set1_ps(mu), lrv = _mm256_set1_ps(lr);
  int i = 0;
  for (; i + 8 <= n; i += 8) {
    const __m256 uv = _mm256_fmadd_ps(muv, _mm256_loadu_ps(u + i), _mm256_loadu_ps(g + i));
    _mm256_storeu_ps(u + i, uv);
    _mm256_storeu_ps(p + i, _mm256_fnmadd_ps(lrv, uv, _mm256_loadu_ps(p + i)));
  }
  for (; i < n; ++i) {
    u[i] = mu * u[i] + g[i];
    p[i] -= lr * u[i];
  }
}

// ---------------------------------------------------------------------------
// GEMM. 4-row by 16-column microkernel (8 independent FMA chains), scalar
// edges. Plenty for the feature-map sizes this project runs.
// ---------------------------------------------------------------------------

inline void nn_row_block16(int n16, int k, const float* a0, const float* a1, const float* a2,
                           const float* a3, const float* b, int ldb, float* c0, float* c1,
                           float* c2, float* c3, int j, bool accumulate) {
  __m256 acc00, acc01, acc10, acc11, acc20, acc21, acc30, acc31;
  if (accumulate) {
    acc00 = _mm256_loadu_ps(c0 + j);
    acc01 = _mm256_loadu_ps(c0 + j + 8);
    acc10 = _mm256_loadu_ps(c1 + j);
    acc11 = _mm256_loadu_ps(c1 + j + 8);
    acc20 = _mm256_loadu_ps(c2 + j);
    acc21 = _mm256_loadu_ps(c2 + j + 8);
    acc30 = _mm256_loadu_ps(c3 + j);
    acc31 = _mm256_loadu_ps(c3 + j + 8);
  } else {
    acc00 = acc01 = acc10 = acc11 = acc20 = acc21 = acc30 = acc31 = _mm256_setzero_ps();
  }
  for (int p = 0; p < k; ++p) {
    const float* brow = b + static_cast<std::size_t>(p) * ldb + j;
    const __m256 b0 = _mm256_loadu_ps(brow);
    const __m256 b1 = _mm256_loadu_ps(brow + 8);
    const __m256 av0 = _mm256_broadcast_ss(a0 + p);
    const __m256 av1 = _mm256_broadcast_ss(a1 + p);
    const __m256 av2 = _mm256_broadcast_ss(a2 + p);
    const __m256 av3 = _mm256_broadcast_ss(a3 + p);
    acc00 = _mm256_fmadd_ps(av0, b0, acc00);
    acc01 = _mm256_fmadd_ps(av0, b1, acc01);
    acc10 = _mm256_fmadd_ps(av1, b0, acc10);
    acc11 = _mm256_fmadd_ps(av1, b1, acc11);
    acc20 = _mm256_fmadd_ps(av2, b0, acc20);
    acc21 = _mm256_fmadd_ps(av2, b1, acc21);
    acc30 = _mm256_fmadd_ps(av3, b0, acc30);
    acc31 = _mm256_fmadd_ps(av3, b1, acc31);
  }
  (void)n16;
  _mm256_storeu_ps(c0 + j, acc00);
  _mm256_storeu_ps(c0 + j + 8, acc01);
  _mm256_storeu_ps(c1 + j, acc10);
  _mm256_storeu_ps(c1 + j + 8, acc11);
  _mm256_storeu_ps(c2 + j, acc20);
  _mm256_storeu_ps(c2 + j + 8, acc21);
  _mm256_storeu_ps(c3 + j, acc30);
  _mm256_storeu_ps(c3 + j + 8, acc31);
}

inline void nn_single_row(int n, int k, const float* arow, const float* b, int ldb, float* crow,
                          bool accumulate) {
  int j = 0;
  for (; j + 8 <= n; j += 8) {
    __m256 acc = accumulate ? _mm256_loadu_ps(crow + j) : _mm256_setzero_ps();
    for (int p = 0; p < k; ++p) {
      acc = _mm256_fmadd_ps(_mm256_broadcast_ss(arow + p),
                            _mm256_loadu_ps(b + static_cast<std::size_t>(p) * ldb + j), acc);
    }
    _mm256_storeu_ps(crow + j, acc);
  }
  for (; j < n; ++j) {
    float acc = accumulate ? crow[j] : 0.0f;
    for (int p = 0; p < k; ++p) acc += arow[p] * b[static_cast<std::size_t>(p) * ldb + j];
    crow[j] = acc;
  }
}

void a_gemm_nn(int m, int n, int k, const float* a, int lda, const float* b, int ldb, float* c,
               int ldc, bool accumulate) {
  int i = 0;
  for (; i + 4 <= m; i += 4) {
    const float* a0 = a + static_cast<std::size_t>(i) * lda;
    const float* a1 = a0 + lda;
    const float* a2 = a1 + lda;
    const float* a3 = a2 + lda;
    float* c0 = c + static_cast<std::size_t>(i) * ldc;
    float* c1 = c0 + ldc;
    float* c2 = c1 + ldc;
    float* c3 = c2 + ldc;
    int j = 0;
    for (; j + 16 <= n; j += 16) {
      nn_row_block16(16, k, a0, a1, a2, a3, b, ldb, c0, c1, c2, c3, j, accumulate);
    }
    if (j < n) {
      for (int r = 0; r < 4; ++r) {
        const float* arow = a + static_cast<std::size_t>(i + r) * lda;
        float* crow = c + static_cast<std::size_t>(i + r) * ldc;
        nn_single_row(n - j, k, arow, b + j, ldb, crow + j, accumulate);
      }
    }
  }
  for (; i < m; ++i) {
    nn_single_row(n, k, a + static_cast<std::size_t>(i) * lda, b, ldb,
                  c + static_cast<std::size_t>(i) * ldc, accumulate);
  }
}

inline float hsum256(__m256 v) {
  const __m128 lo = _mm256_castps256_ps128(v);
  const __m128 hi = _mm256_extractf128_ps(v, 1);
  __m128 s = _mm_add_ps(lo, hi);
  s = _mm_hadd_ps(s, s);
  s = _mm_hadd_ps(s, s);
  return _mm_cvtss_f32(s);
}

void a_gemm_nt(int m, int n, int k, const float* a, int lda, const float* b, int ldb, float* c,
               int ldc, bool accumulate) {
  for (int i = 0; i < m; ++i) {
    const float* arow = a + static_cast<std::size_t>(i) * lda;
    float* crow = c + static_cast<std::size_t>(i) * ldc;
    int j = 0;
    for (; j + 4 <= n; j += 4) {
      const float* b0 = b + static_cast<std::size_t>(j) * ldb;
      const float* b1 = b0 + ldb;
      const float* b2 = b1 + ldb;
      const float* b3 = b2 + ldb;
      __m256 s0 = _mm256_setzero_ps(), s1 = _mm256_setzero_ps();
      __m256 s2 = _mm256_setzero_ps(), s3 = _mm256_setzero_ps();
      int p = 0;
      for (; p + 8 <= k; p += 8) {
        const __m256 av = _mm256_loadu_ps(arow + p);
        s0 = _mm256_fmadd_ps(av, _mm256_loadu_ps(b0 + p), s0);
        s1 = _mm256_fmadd_ps(av, _mm256_loadu_ps(b1 + p), s1);
        s2 = _mm256_fmadd_ps(av, _mm256_loadu_ps(b2 + p), s2);
        s3 = _mm256_fmadd_ps(av, _mm256_loadu_ps(b3 + p), s3);
      }
      float r0 = hsum256(s0), r1 = hsum256(s1), r2 = hsum256(s2), r3 = hsum256(s3);
      for (; p < k; ++p) {
        r0 += arow[p] * b0[p];
        r1 += arow[p] * b1[p];
        r2 += arow[p] * b2[p];
        r3 += arow[p] * b3[p];
      }
      if (accumulate) {
        crow[j] += r0;
        crow[j + 1] += r1;
        crow[j + 2] += r2;
        crow[j + 3] += r3;
      } else {
        crow[j] = r0;
        crow[j + 1] = r1;
        crow[j + 2] = r2;
        crow[j + 3] = r3;
      }
    }
    for (; j < n; ++j) {
      const float* brow = b + static_cast<std::size_t>(j) * ldb;
      __m256 s = _mm256_setzero_ps();
      int p = 0;
      for (; p + 8 <= k; p += 8)
        s = _mm256_fmadd_ps(_mm256_loadu_ps(arow + p), _mm256_loadu_ps(brow + p), s);
      float r = hsum256(s);
      for (; p < k; ++p) r += arow[p] * brow[p];
      crow[j] = accumulate ? crow[j] + r : r;
    }
  }
}

void a_gemm_tn(int m, int n, int k, const float* a, int lda, const float* b, int ldb, float* c,
               int ldc, bool accumulate) {
  // C[i,:] += sum_p A[p,i] * B[p,:]; process 2 rows of C to reuse B rows.
  int i = 0;
  for (; i + 2 <= m; i += 2) {
    float* c0 = c + static_cast<std::size_t>(i) * ldc;
    float* c1 = c0 + ldc;
    if (!accumulate) {
      for (int j = 0; j < n; ++j) {
        c0[j] = 0.0f;
        c1[j] = 0.0f;
      }
    }
    for (int p = 0; p < k; ++p) {
      const float* brow = b + static_cast<std::size_t>(p) * ldb;
      const __m256 a0 = _mm256_broadcast_ss(a + static_cast<std::size_t>(p) * lda + i);
      const __m256 a1 = _mm256_broadcast_ss(a + static_cast<std::size_t>(p) * lda + i + 1);
      const float a0s = a[static_cast<std::size_t>(p) * lda + i];
      const float a1s = a[static_cast<std::size_t>(p) * lda + i + 1];
      int j = 0;
      for (; j + 8 <= n; j += 8) {
        const __m256 bv = _mm256_loadu_ps(brow + j);
        _mm256_storeu_ps(c0 + j, _mm256_fmadd_ps(a0, bv, _mm256_loadu_ps(c0 + j)));
        _mm256_storeu_ps(c1 + j, _mm256_fmadd_ps(a1, bv, _mm256_loadu_ps(c1 + j)));
      }
      for (; j < n; ++j) {
        c0[j] += a0s * brow[j];
        c1[j] += a1s * brow[j];
      }
    }
  }
  for (; i < m; ++i) {
    float* crow = c + static_cast<std::size_t>(i) * ldc;
    if (!accumulate) {
      for (int j = 0; j < n; ++j) crow[j] = 0.0f;
    }
    for (int p = 0; p < k; ++p) {
      const float av = a[static_cast<std::size_t>(p) * lda + i];
      const float* brow = b + static_cast<std::size_t>(p) * ldb;
      const __m256 avv = _mm256_set1_ps(av);
      int j = 0;
      for (; j + 8 <= n; j += 8) {
        _mm256_storeu_ps(crow + j, _mm256_fmadd_ps(avv, _mm256_loadu_ps(brow + j),
                                                   _mm256_loadu_ps(crow + j)));
      }
      for (; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

}  // namespace

KernelTable avx2_table() {
  return KernelTable{a_gemm_nn, a_gemm_nt,   a_gemm_tn,    a_axpy, a_vsigmoid,
                     a_vtanh,   a_leaky,     a_leaky_grad, a_adam, a_sgdm};
}

}  // namespace gridsight::kernels

#endif  // x86_64
