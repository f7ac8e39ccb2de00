#pragma once

#include <cstdint>
#include <string>

namespace gridsight::kernels {

enum class Isa { scalar, avx2, neon };

// Active instruction set for the dispatched float kernels. Resolved once
// from CPU capabilities; GRIDSIGHT_KERNELS=scalar|avx2|neon overrides.
Isa active_isa();
const char* isa_name(Isa isa);

// Force a specific ISA (throws ConfigError if unsupported on this CPU).
// Used by the equivalence tests to compare variants directly.
void force_isa(Isa isa);

// True if the variant can run on this machine/build.
bool isa_supported(Isa isa);

// ---------------------------------------------------------------------------
// Dispatched float32 kernels. Row-major storage throughout.
//
// gemm_nn: C[M,N] (+)= A[M,K]  * B[K,N]
// gemm_nt: C[M,N] (+)= A[M,K]  * B[N,K]^T
// gemm_tn: C[M,N] (+)= A[K,M]^T * B[K,N]
// ---------------------------------------------------------------------------
void gemm_nn(int m, int n, int k, const float* a, int lda, const float* b, int ldb, float* c,
             int ldc, bool accumulate);
void gemm_nt(int m, int n, int k, const float* a, int lda, const float* b, int ldb, float* c,
             int ldc, bool accumulate);
void gemm_tn(int m, int n, int k, const float* a, int lda, const float* b, int ldb, float* c,
             int ldc, bool accumulate);

// y[i] += a * x[i]
void axpy(int n, float a, const float* x, float* y);

// Elementwise logistic / tanh over a contiguous span.
void vsigmoid(int n, const float* x, float* y);
void vtanh(int n, const float* x, float* y);

// Leaky ReLU forward and input-gradient (dx = dy * (x > 0 ? 1 : slope)).
void leaky_relu(int n, const float* x, float* y, float slope);
void leaky_relu_grad(int n, const float* x, const float* dy, float* dx, float slope);

// Fused optimizer updates over one parameter span.
// adam: m = b1*m + (1-b1)*g; v = b2*v + (1-b2)*g^2;
//       p -= lr * mhat / (sqrt(vhat) + eps)  with bias corrections given
//       as precomputed 1/(1-b1^t), 1/(1-b2^t).
void adam_step(int n, float* p, const float* g, float* m, float* v, float lr, float beta1,
               float beta2, float eps, float bc1, float bc2);
// sgd momentum: u = mu*u + g; p -= lr*u
void sgd_momentum_step(int n, float* p, const float* g, float* u, float lr, float mu);

// ---------------------------------------------------------------------------
// FLOP accounting. gemm_* add 2*M*N*K to a thread-local counter; pipeline
// stages snapshot it to prove count-independence of the tensor work.
// ---------------------------------------------------------------------------
std::uint64_t flop_counter();
void reset_flop_counter();

}  // namespace gridsight::kernels
