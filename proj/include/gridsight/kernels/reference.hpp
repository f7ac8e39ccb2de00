#pragma once

#include <cmath>

// Scalar reference kernels. These are the semantics the SIMD variants are
// tested against, and the only path used for double (the gradient-check
// suite runs at 64-bit through these templates).

namespace gridsight::kernels::ref {

template <typename T>
void gemm_nn(int m, int n, int k, const T* a, int lda, const T* b, int ldb, T* c, int ldc,
             bool accumulate) {
  for (int i = 0; i < m; ++i) {
    T* crow = c + static_cast<std::size_t>(i) * ldc;
    if (!accumulate) {
      for (int j = 0; j < n; ++j) crow[j] = T(0);
    }
    for (int p = 0; p < k; ++p) {
      const T av = a[static_cast<std::size_t>(i) * lda + p];
      const T* brow = b + static_cast<std::size_t>(p) * ldb;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

template <typename T>
void gemm_nt(int m, int n, int k, const T* a, int lda, const T* b, int ldb, T* c, int ldc,
             bool accumulate) {
  for (int i = 0; i < m; ++i) {
    const T* arow = a + static_cast<std::size_t>(i) * lda;
    T* crow = c + static_cast<std::size_t>(i) * ldc;
    for (int j = 0; j < n; ++j) {
      const T* brow = b + static_cast<std::size_t>(j) * ldb;
      T acc = T(0);
      for (int p = 0; p < k; ++p) acc += arow[p] * brow[p];
      crow[j] = accumulate ? crow[j] + acc : acc;
    }
  }
}

template <typename T>
void gemm_tn(int m, int n, int k, const T* a, int lda, const T* b, int ldb, T* c, int ldc,
             bool accumulate) {
  for (int i = 0; i < m; ++i) {
    T* crow = c + static_cast<std::size_t>(i) * ldc;
    if (!accumulate) {
      for (int j = 0; j < n; ++j) crow[j] = T(0);
    }
    for (int p = 0; p < k; ++p) {
      const T av = a[static_cast<std::size_t>(p) * lda + i];
      const T* brow = b + static_cast<std::size_t>(p) * ldb;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

template <typename T>
void axpy(int n, T a, const T* x, T* y) {
  for (int i = 0; i < n; ++i) y[i] += a * x[i];
}

template <typename T>
T sigmoid(T x) {
  return T(1) / (T(1) + std::exp(-x));
}

template <typename T>
void vsigmoid(int n, const T* x, T* y) {
  for (int i = 0; i < n; ++i) y[i] = sigmoid(x[i]);
}

template <typename T>
void vtanh(int n, const T* x, T* y) {
  for (int i = 0; i < n; ++i) y[i] = std::tanh(x[i]);
}

template <typename T>
void leaky_relu(int n, const T* x, T* y, T slope) {
  for (int i = 0; i < n; ++i) y[i] = x[i] > T(0) ? x[i] : slope * x[i];
}

template <typename T>
void leaky_relu_grad(int n, const T* x, const T* dy, T* dx, T slope) {
  for (int i = 0; i < n; ++i) dx[i] = dy[i] * (x[i] > T(0) ? T(1) : slope);
}

template <typename T>
void adam_step(int n, T* p, const T* g, T* m, T* v, T lr, T beta1, T beta2, T eps, T bc1, T bc2) {
  for (int i = 0; i < n; ++i) {
    m[i] = beta1 * m[i] + (T(1) - beta1) * g[i];
    v[i] = beta2 * v[i] + (T(1) - beta2) * g[i] * g[i];
    const T mhat = m[i] * bc1;
    const T vhat = v[i] * bc2;
    p[i] -= lr * mhat / (std::sqrt(vhat) + eps);
  }
}

template <typename T>
void sgd_momentum_step(int n, T* p, const T* g, T* u, T lr, T mu) {
  for (int i = 0; i < n; ++i) {
    u[i] = mu * u[i] + g[i];
    p[i] -= lr * u[i];
  }
}

}  // namespace gridsight::kernels::ref
