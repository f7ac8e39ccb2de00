#include <atomic>
#include <cstdlib>
#include <cstring>
#include <string>

#include "gridsight/common.hpp"
#include "gridsight/kernels/kernels.hpp"
#include "kernel_table.hpp"

namespace gridsight::kernels {

namespace {

thread_local std::uint64_t t_flops = 0;

bool cpu_has_avx2_fma() {
#if defined(__x86_64__) || defined(_M_X64)
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

Isa default_isa() {
  if (const char* env = std::getenv("GRIDSIGHT_KERNELS")) {
    if (std::strcmp(env, "scalar") == 0) return Isa::scalar;
    if (std::strcmp(env, "avx2") == 0) return Isa::avx2;
    if (std::strcmp(env, "neon") == 0) return Isa::neon;
    throw ConfigError(std::string("GRIDSIGHT_KERNELS: unknown value '") + env + "'");
  }
#if defined(__ARM_NEON) || defined(__aarch64__)
  return Isa::neon;
#else
  return cpu_has_avx2_fma() ? Isa::avx2 : Isa::scalar;
#endif
}

struct State {
  Isa isa;
  KernelTable table;
};

State make_state(Isa isa) {
  if (!isa_supported(isa))
    throw ConfigError(std::string("kernel ISA not supported on this machine: ") + isa_name(isa));
  switch (isa) {
    case Isa::avx2:
#if defined(__x86_64__) || defined(_M_X64)
      return {isa, avx2_table()};
#else
      break;
#endif
    case Isa::neon:
#if defined(__ARM_NEON) || defined(__aarch64__)
      return {isa, neon_table()};
#else
      break;
#endif
    case Isa::scalar:
      break;
  }
  return {Isa::scalar, scalar_table()};
}

State& state() {
  static State s = make_state(default_isa());
  return s;
}

}  // namespace

Isa active_isa() { return state().isa; }

const char* isa_name(Isa isa) {
  switch (isa) {
    case Isa::scalar: return "scalar";
    case Isa::avx2: return "avx2";
    case Isa::neon: return "neon";
  }
  return "?";
}

bool isa_supported(Isa isa) {
  switch (isa) {
    case Isa::scalar: return true;
    case Isa::avx2: return cpu_has_avx2_fma();
    case Isa::neon:
#if defined(__ARM_NEON) || defined(__aarch64__)
      return true;
#else
      return false;
#endif
  }
  return false;
}

void force_isa(Isa isa) { state() = make_state(isa); }

std::uint64_t flop_counter() { return t_flops; }
void reset_flop_counter() { t_flops = 0; }

void gemm_nn(int m, int n, int k, const float* a, int lda, const float* b, int ldb, float* c,
             int ldc, bool accumulate) {
  t_flops += 2ull * m * n * k;
  state().table.gemm_nn(m, n, k, a, lda, b, ldb, c, ldc, accumulate);
}
void gemm_nt(int m, int n, int k, const float* a, int lda, const float* b, int ldb, float* c,
             int ldc, bool accumulate) {
  t_flops += 2ull * m * n * k;
  state().table.gemm_nt(m, n, k, a, lda, b, ldb, c, ldc, accumulate);
}
void gemm_tn(int m, int n, int k, const float* a, int lda, const float* b, int ldb, float* c,
             int ldc, bool accumulate) {
  t_flops += 2ull * m * n * k;
  state().table.gemm_tn(m, n, k, a, lda, b, ldb, c, ldc, accumulate);
}
void axpy(int n, float a, const float* x, float* y) {
  t_flops += 2ull * n;
  state().table.axpy(n, a, x, y);
}
void vsigmoid(int n, const float* x, float* y) { state().table.vsigmoid(n, x, y); }
void vtanh(int n, const float* x, float* y) { state().table.vtanh(n, x, y); }
void leaky_relu(int n, const float* x, float* y, float slope) {
  state().table.leaky_relu(n, x, y, slope);
}
void leaky_relu_grad(int n, const float* x, const float* dy, float* dx, float slope) {
  state().table.leaky_relu_grad(n, x, dy, dx, slope);
}
void adam_step(int n, float* p, const float* g, float* m, float* v, float lr, float beta1,
               float beta2, float eps, float bc1, float bc2) {
  state().table.adam_step(n, p, g, m, v, lr, beta1, beta2, eps, bc1, bc2);
}
void sgd_momentum_step(int n, float* p, const float* g, float* u, float lr, float mu) {
  state().table.sgd_momentum_step(n, p, g, u, lr, mu);
}

}  // namespace gridsight::kernels
