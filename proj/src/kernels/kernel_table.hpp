#pragma once

// Internal: per-ISA entry points filled into the dispatch table.

namespace gridsight::kernels {

struct KernelTable {
  void (*gemm_nn)(int, int, int, const float*, int, const float*, int, float*, int, bool);
  void (*gemm_nt)(int, int, int, const float*, int, const float*, int, float*, int, bool);
  void (*gemm_tn)(int, int, int, const float*, int, const float*, int, float*, int, bool);
  void (*axpy)(int, float, const float*, float*);
  void (*vsigmoid)(int, const float*, float*);
  void (*vtanh)(int, const float*, float*);
  void (*leaky_relu)(int, const float*, float*, float);
  void (*leaky_relu_grad)(int, const float*, const float*, float*, float);
  void (*adam_step)(int, float*, const float*, float*, float*, float, float, float, float, float,
                    float);
  void (*sgd_momentum_step)(int, float*, const float*, float*, float, float);
};

KernelTable scalar_table();

#if defined(__x86_64__) || defined(_M_X64)
KernelTable avx2_table();
#endif

#if defined(__ARM_NEON) || defined(__aarch64__)
KernelTable neon_table();
#endif

}  // namespace gridsight::kernels
