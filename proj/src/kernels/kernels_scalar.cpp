#include "gridsight/kernels/reference.hpp"
#include "kernel_table.hpp"

namespace gridsight::kernels {

namespace {

void s_gemm_nn(int m, int n, int k, const float* a, int lda, const float* b, int ldb, float* c,
               int ldc, bool acc) {
  ref::gemm_nn(m, n, k, a, lda, b, ldb, c, ldc, acc);
}
void s_gemm_nt(int m, int n, int k, const float* a, int lda, const float* b, int ldb, float* c,
               int ldc, bool acc) {
  ref::gemm_nt(m, n, k, a, lda, b, ldb, c, ldc, acc);
}
void s_gemm_tn(int m, int n, int k, const float* a, int lda, const float* b, int ldb, float* c,
               int ldc, bool acc) {
  ref::gemm_tn(m, n, k, a, lda, b, ldb, c, ldc, acc);
}
void s_axpy(int n, float a, const float* x, float* y) { ref::axpy(n, a, x, y); }
void s_vsigmoid(int n, const float* x, float* y) { ref::vsigmoid(n, x, y); }
void s_vtanh(int n, const float* x, float* y) { ref::vtanh(n, x, y); }
void s_leaky(int n, const float* x, float* y, float s) { ref::leaky_relu(n, x, y, s); }
void s_leaky_grad(int n, const float* x, const float* dy, float* dx, float s) {
  ref::leaky_relu_grad(n, x, dy, dx, s);
}
void s_adam(int n, float* p, const float* g, float* m, float* v, float lr, float b1, float b2,
            float eps, float bc1, float bc2) {
  ref::adam_step(n, p, g, m, v, lr, b1, b2, eps, bc1, bc2);
}
void s_sgdm(int n, float* p, const float* g, float* u, float lr, float mu) {
  ref::sgd_momentum_step(n, p, g, u, lr, mu);
}

}  // namespace

KernelTable scalar_table() {
  return KernelTable{s_gemm_nn, s_gemm_nt,   s_gemm_tn, s_axpy, s_vsigmoid,
                     s_vtanh,   s_leaky,     s_leaky_grad, s_adam, s_sgdm};
}

}  // namespace gridsight::kernels
