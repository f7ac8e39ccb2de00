#if defined(__ARM_NEON) || defined(__aarch64__)

#include <arm_neon.h>

#include <cmath>

#include "kernel_table.hpp"

// NEON variants, 4 lanes. Same Cephes exp polynomial as the AVX2 file.

namespace gridsight::kernels {

namespace {

inline float32x4_t exp_neon(float32x4_t x) {
  const float32x4_t hi = vdupq_n_f32(88.3762626647950f);
  const float32x4_t lo = vdupq_n_f32(-88.3762626647949f);
  const float32x4_t log2e = vdupq_n_f32(1.44269504088896341f);
  const float32x4_t c1 = vdupq_n_f32(0.693359375f);
  const float32x4_t c2 = vdupq_n_f32(-2.12194440e-4f);
  const float32x4_t one = vdupq_n_f32(1.0f);

  x = vminq_f32(x, hi);
  x = vmaxq_f32(x, lo);

  float32x4_t fx = vmlaq_f32(vdupq_n_f32(0.5f), x, log2e);
  fx = vrndmq_f32(fx);  // floor

  x = vmlsq_f32(x, fx, c1);
  x = vmlsq_f32(x, fx, c2);

  const float32x4_t z = vmulq_f32(x, x);
  float32x4_t y = vdupq_n_f32(1.9875691500e-4f);
  y = vmlaq_f32(vdupq_n_f32(1.3981999507e-3f), y, x);
  y = vmlaq_f32(vdupq_n_f32(8.3334519073e-3f), y, x);
  y = vmlaq_f32(vdupq_n_f32(4.1665795894e-2f), y, x);
  y = vmlaq_f32(vdupq_n_f32(1.6666665459e-1f), y, x);
  y = vmlaq_f32(vdupq_n_f32(5.0000001201e-1f), y, x);
  y = vmlaq_f32(vaddq_f32(x, one), y, z);

  const int32x4_t emm0 = vshlq_n_s32(vaddq_s32(vcvtq_s32_f32(fx), vdupq_n_s32(0x7f)), 23);
  return vmulq_f32(y, vreinterpretq_f32_s32(emm0));
}

inline float32x4_t sigmoid_neon(float32x4_t x) {
  const float32x4_t one = vdupq_n_f32(1.0f);
  const float32x4_t e = exp_neon(vnegq_f32(x));
#if defined(__aarch64__)
  return vdivq_f32(one, vaddq_f32(one, e));
#else
  float32x4_t d = vaddq_f32(one, e);
  float32x4_t r = vrecpeq_f32(d);
  r = vmulq_f32(r, vrecpsq_f32(d, r));
  r = vmulq_f32(r, vrecpsq_f32(d, r));
  return r;
#endif
}

inline float32x4_t tanh_neon(float32x4_t x) {
  const uint32x4_t sign = vandq_u32(vreinterpretq_u32_f32(x), vdupq_n_u32(0x80000000u));
  const float32x4_t ax = vabsq_f32(x);
  const float32x4_t e = exp_neon(vmulq_n_f32(ax, -2.0f));
  const float32x4_t one = vdupq_n_f32(1.0f);
#if defined(__aarch64__)
  const float32x4_t r = vdivq_f32(vsubq_f32(one, e), vaddq_f32(one, e));
#else
  float32x4_t d = vaddq_f32(one, e);
  float32x4_t inv = vrecpeq_f32(d);
  inv = vmulq_f32(inv, vrecpsq_f32(d, inv));
  inv = vmulq_f32(inv, vrecpsq_f32(d, inv));
  const float32x4_t r = vmulq_f32(vsubq_f32(one, e), inv);
#endif
  return vreinterpretq_f32_u32(vorrq_u32(vreinterpretq_u32_f32(r), sign));
}

void n_vsigmoid(int n, const float* x, float* y) {
  int i = 0;
  for (; i + 4 <= n; i += 4) vst1q_f32(y + i, sigmoid_neon(vld1q_f32(x + i)));
  for (; i < n; ++i) y[i] = 1.0f / (1.0f + std::exp(-x[i]));
}

void n_vtanh(int n, const float* x, float* y) {
  int i = 0;
  for (; i + 4 <= n; i += 4) vst1q_f32(y + i, tanh_neon(vld1q_f32(x + i)));
  for (; i < n; ++i) {
    const float e = std::exp(-2.0f * std::fabs(x[i]));
    const float r = (1.0f - e) / (1.0f + e);
    y[i] = x[i] < 0.0f ? -r : r;
  }
}

void n_axpy(int n, float a, const float* x, float* y) {
  const float32x4_t av = vdupq_n_f32(a);
  int i = 0;
  for (; i + 4 <= n; i += 4) vst1q_f32(y + i, vmlaq_f32(vld1q_f32(y + i), av, vld1q_f32(x + i)));
  for (; i < n; ++i) y[i] += a * x[i];
}

void n_leaky(int n, const float* x, float* y, float slope) {
  const float32x4_t sv = vdupq_n_f32(slope);
  int i = 0;
  for (; i + 4 <= n; i += 4) {
    const float32x4_t v = vld1q_f32(x + i);
    vst1q_f32(y + i, vmaxq_f32(v, vmulq_f32(sv, v)));
  }
  for (; i < n; ++i) y[i] = x[i] > 0.0f ? x[i] : slope * x[i];
}

void n_leaky_grad(int n, const float* x, const float* dy, float* dx, float slope) {
  const float32x4_t sv = vdupq_n_f32(slope);
  const float32x4_t onev = vdupq_n_f32(1.0f);
  int i = 0;
  for (; i + 4 <= n; i += 4) {
    const uint32x4_t mask = vcgtq_f32(vld1q_f32(x + i), vdupq_n_f32(0.0f));
    const float32x4_t f = vbslq_f32(mask, onev, sv);
    vst1q_f32(dx + i, vmulq_f32(vld1q_f32(dy + i), f));
  }
  for (; i < n; ++i) dx[i] = dy[i] * (x[i] > 0.0f ? 1.0f : slope);
}

void n_adam(int n, float* p, const float* g, float* m, float* v, float lr, float b1, float b2,
            float eps, float bc1, float bc2) {
  int i = 0;
#if defined(__aarch64__)
  const float32x4_t b1v = vdupq_n_f32(b1), ob1 = vdupq_n_f32(1.0f - b1);
  const float32x4_t b2v = vdupq_n_f32(b2), ob2 = vdupq_n_f32(1.0f - b2);
  for (; i + 4 <= n; i += 4) {
    const float32x4_t gv = vld1q_f32(g + i);
    const float32x4_t mv = vmlaq_f32(vmulq_f32(ob1, gv), b1v, vld1q_f32(m + i));
    const float32x4_t vv = vmlaq_f32(vmulq_f32(ob2, vmulq_f32(gv, gv)), b2v, vld1q_f32(v + i));
    vst1q_f32(m + i, mv);
    vst1q_f32(v + i, vv);
    const float32x4_t mhat = vmulq_n_f32(mv, bc1);
    const float32x4_t vhat = vmulq_n_f32(vv, bc2);
    const float32x4_t denom = vaddq_f32(vsqrtq_f32(vhat), vdupq_n_f32(eps));
    vst1q_f32(p + i, vsubq_f32(vld1q_f32(p + i), vdivq_f32(vmulq_n_f32(mhat, lr), denom)));
  }
#endif
  for (; i < n; ++i) {
    m[i] = b1 * m[i] + (1.0f - b1) * g[i];
    v[i] = b2 * v[i] + (1.0f - b2) * g[i] * g[i];
    p[i] -= lr * (m[i] * bc1) / (std::sqrt(v[i] * bc2) + eps);
  }
}

void n_sgdm(int n, float* p, const float* g, float* u, float lr, float mu) {
  const float32x4_t muv = vdupq_n_f32(mu);
  int i = 0;
  for (; i + 4 <= n; i += 4) {
    const float32x4_t uv = vmlaq_f32(vld1q_f32(g + i), muv, vld1q_f32(u + i));
    vst1q_f32(u + i, uv);
    vst1q_f32(p + i, vmlsq_f32(vld1q_f32(p + i), vdupq_n_f32(lr), uv));
  }
  for (; i < n; ++i) {
    u[i] = mu * u[i] + g[i];
    p[i] -= lr * u[i];
  }
}

void n_gemm_nn(int m, int n, int k, const float* a, int lda, const float* b, int ldb, float* c,
               int ldc, bool accumulate) {
  for (int i = 0; i < m; ++i) {
    const float* arow = a + static_cast<std::size_t>(i) * lda;
    float* crow = c + static_cast<std::size_t>(i) * ldc;
    int j = 0;
    for (; j + 8 <= n; j += 8) {
      float32x4_t acc0, acc1;
      if (accumulate) {
        acc0 = vld1q_f32(crow + j);
        acc1 = vld1q_f32(crow + j + 4);
      } else {
        acc0 = vdupq_n_f32(0.0f);
        acc1 = vdupq_n_f32(0.0f);
      }
      for (int p = 0; p < k; ++p) {
        const float32x4_t av = vdupq_n_f32(arow[p]);
        const float* brow = b + static_cast<std::size_t>(p) * ldb + j;
        acc0 = vmlaq_f32(acc0, av, vld1q_f32(brow));
        acc1 = vmlaq_f32(acc1, av, vld1q_f32(brow + 4));
      }
      vst1q_f32(crow + j, acc0);
      vst1q_f32(crow + j + 4, acc1);
    }
    for (; j < n; ++j) {
      float acc = accumulate ? crow[j] : 0.0f;
      for (int p = 0; p < k; ++p) acc += arow[p] * b[static_cast<std::size_t>(p) * ldb + j];
      crow[j] = acc;
    }
  }
}

void n_gemm_nt(int m, int n, int k, const float* a, int lda, const float* b, int ldb, float* c,
               int ldc, bool accumulate) {
  for (int i = 0; i < m; ++i) {
    const float* arow = a + static_cast<std::size_t>(i) * lda;
    float* crow = c + static_cast<std::size_t>(i) * ldc;
    for (int j = 0; j < n; ++j) {
      const float* brow = b + static_cast<std::size_t>(j) * ldb;
      float32x4_t s = vdupq_n_f32(0.0f);
      int p = 0;
      for (; p + 4 <= k; p += 4) s = vmlaq_f32(s, vld1q_f32(arow + p), vld1q_f32(brow + p));
#if defined(__aarch64__)
      float r = vaddvq_f32(s);
#else
      float32x2_t s2 = vadd_f32(vget_low_f32(s), vget_high_f32(s));
      float r = vget_lane_f32(vpadd_f32(s2, s2), 0);
#endif
      for (; p < k; ++p) r += arow[p] * brow[p];
      crow[j] = accumulate ? crow[j] + r : r;
    }
  }
}

void n_gemm_tn(int m, int n, int k, const float* a, int lda, const float* b, int ldb, float* c,
               int ldc, bool accumulate) {
  for (int i = 0; i < m; ++i) {
    float* crow = c + static_cast<std::size_t>(i) * ldc;
    if (!accumulate) {
      for (int j = 0; j < n; ++j) crow[j] = 0.0f;
    }
    for (int p = 0; p < k; ++p) {
      const float av = a[static_cast<std::size_t>(p) * lda + i];
      const float32x4_t avv = vdupq_n_f32(av);
      const float* brow = b + static_cast<std::size_t>(p) * ldb;
      int j = 0;
      for (; j + 4 <= n; j += 4)
        vst1q_f32(crow + j, vmlaq_f32(vld1q_f32(crow + j), avv, vld1q_f32(brow + j)));
      for (; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

}  // namespace

KernelTable neon_table() {
  return KernelTable{n_gemm_nn, n_gemm_nt,   n_gemm_tn,    n_axpy, n_vsigmoid,
                     n_vtanh,   n_leaky,     n_leaky_grad, n_adam, n_sgdm};
}

}  // namespace gridsight::kernels

#endif  // __ARM_NEON
