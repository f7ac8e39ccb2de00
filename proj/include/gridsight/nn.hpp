#pragma once

#include <map>
#include <string>
#include <vector>

#include "gridsight/common.hpp"
#include "gridsight/kernels/kernels.hpp"
#include "gridsight/kernels/reference.hpp"
#include "gridsight/tensor.hpp"

// Neural-net primitives on (C,H,W) feature maps with hand-written backward
// passes. Everything is templated on the scalar type: float runs through
// the dispatched SIMD kernels, double through the scalar reference path
// (that is what the finite-difference gradient suite checks).

namespace gridsight::nn {

// Scalar-type shim over the kernel layer: float runs the dispatched SIMD
// kernels, every other scalar type the reference templates.
template <typename T>
struct Ops {
  static void gemm_nn(int m, int n, int k, const T* a, int lda, const T* b, int ldb, T* c, int ldc,
                      bool acc) {
    kernels::ref::gemm_nn(m, n, k, a, lda, b, ldb, c, ldc, acc);
  }
  static void gemm_nt(int m, int n, int k, const T* a, int lda, const T* b, int ldb, T* c, int ldc,
                      bool acc) {
    kernels::ref::gemm_nt(m, n, k, a, lda, b, ldb, c, ldc, acc);
  }
  static void gemm_tn(int m, int n, int k, const T* a, int lda, const T* b, int ldb, T* c, int ldc,
                      bool acc) {
    kernels::ref::gemm_tn(m, n, k, a, lda, b, ldb, c, ldc, acc);
  }
  static void vsigmoid(int n, const T* x, T* y) { kernels::ref::vsigmoid(n, x, y); }
  static void vtanh(int n, const T* x, T* y) { kernels::ref::vtanh(n, x, y); }
  static void leaky_relu(int n, const T* x, T* y, T slope) {
    kernels::ref::leaky_relu(n, x, y, slope);
  }
  static void leaky_relu_grad(int n, const T* x, const T* dy, T* dx, T slope) {
    kernels::ref::leaky_relu_grad(n, x, dy, dx, slope);
  }
};

template <>
struct Ops<float> {
  static void gemm_nn(int m, int n, int k, const float* a, int lda, const float* b, int ldb,
                      float* c, int ldc, bool acc) {
    kernels::gemm_nn(m, n, k, a, lda, b, ldb, c, ldc, acc);
  }
  static void gemm_nt(int m, int n, int k, const float* a, int lda, const float* b, int ldb,
                      float* c, int ldc, bool acc) {
    kernels::gemm_nt(m, n, k, a, lda, b, ldb, c, ldc, acc);
  }
  static void gemm_tn(int m, int n, int k, const float* a, int lda, const float* b, int ldb,
                      float* c, int ldc, bool acc) {
    kernels::gemm_tn(m, n, k, a, lda, b, ldb, c, ldc, acc);
  }
  static void vsigmoid(int n, const float* x, float* y) { kernels::vsigmoid(n, x, y); }
  static void vtanh(int n, const float* x, float* y) { kernels::vtanh(n, x, y); }
  static void leaky_relu(int n, const float* x, float* y, float slope) {
    kernels::leaky_relu(n, x, y, slope);
  }
  static void leaky_relu_grad(int n, const float* x, const float* dy, float* dx, float slope) {
    kernels::leaky_relu_grad(n, x, dy, dx, slope);
  }
};

// ---------------------------------------------------------------------------
// Parameter store: named tensors with grad buffers and a trainable flag.
// std::map keeps iteration order deterministic for checkpoints/optimizers.
// ---------------------------------------------------------------------------
template <typename T>
class ParamStore {
 public:
  struct Entry {
    Tensor<T> value;
    Tensor<T> grad;
    bool trainable = true;
  };

  Tensor<T>& add(const std::string& name, const std::vector<int>& shape, bool trainable = true) {
    if (entries_.count(name)) throw ConfigError("duplicate parameter name: " + name);
    Entry e;
    e.value = Tensor<T>(shape);
    e.grad = Tensor<T>(shape);
    e.trainable = trainable;
    auto [it, ok] = entries_.emplace(name, std::move(e));
    (void)ok;
    return it->second.value;
  }

  bool has(const std::string& name) const { return entries_.count(name) != 0; }

  Entry& at(const std::string& name) {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw ConfigError("unknown parameter: " + name);
    return it->second;
  }
  const Entry& at(const std::string& name) const {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw ConfigError("unknown parameter: " + name);
    return it->second;
  }

  Tensor<T>& value(const std::string& name) { return at(name).value; }
  const Tensor<T>& value(const std::string& name) const { return at(name).value; }
  Tensor<T>& grad(const std::string& name) { return at(name).grad; }

  void zero_grads() {
    for (auto& [k, e] : entries_) e.grad.zero();
  }

  std::size_t total_params() const {
    std::size_t n = 0;
    for (const auto& [k, e] : entries_) n += e.value.size();
    return n;
  }

  auto begin() { return entries_.begin(); }
  auto end() { return entries_.end(); }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }
  std::size_t size() const { return entries_.size(); }

 private:
  std::map<std::string, Entry> entries_;
};

// ---------------------------------------------------------------------------
// Convolution (im2col + GEMM). Weight layout (OC, IC, k, k).
// ---------------------------------------------------------------------------
struct Conv2dSpec {
  int in_ch = 0;
  int out_ch = 0;
  int kernel = 3;
  int stride = 1;
  int pad = 1;
};

inline int conv_out_dim(int in, int kernel, int stride, int pad) {
  return (in + 2 * pad - kernel) / stride + 1;
}

template <typename T>
void conv2d_forward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>* bias,
                    const Conv2dSpec& spec, Tensor<T>& y);

// dx may be null (no input gradient needed, e.g. first layer).
// dw/dbias are accumulated into.
template <typename T>
void conv2d_backward(const Tensor<T>& x, const Tensor<T>& w, const Conv2dSpec& spec,
                     const Tensor<T>& dy, Tensor<T>* dx, Tensor<T>& dw, Tensor<T>* dbias);

// ---------------------------------------------------------------------------
// Batch normalization over each sample's own spatial extent (batch-size-1
// semantics); running statistics are what inference consumes.
// ---------------------------------------------------------------------------
template <typename T>
struct BnCache {
  Tensor<T> xhat;
  std::vector<T> inv_std;
};

template <typename T>
void bn_forward_train(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                      Tensor<T>* running_mean, Tensor<T>* running_var, T momentum, T eps,
                      Tensor<T>& y, BnCache<T>* cache);

template <typename T>
void bn_forward_eval(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     const Tensor<T>& running_mean, const Tensor<T>& running_var, T eps,
                     Tensor<T>& y);

template <typename T>
void bn_backward(const Tensor<T>& dy, const BnCache<T>& cache, const Tensor<T>& gamma,
                 Tensor<T>& dx, Tensor<T>& dgamma, Tensor<T>& dbeta);

// ---------------------------------------------------------------------------
// ConvLSTM cell. One convolution over [x ; h_prev] producing the four gate
// pre-activations stacked as (i, f, o, g); c = f.c_prev + i.g, h = o.tanh(c).
// ---------------------------------------------------------------------------
struct ConvLstmSpec {
  int in_ch = 0;
  int hidden_ch = 0;
  int kernel = 3;  // padding kernel/2 keeps spatial dims
};

template <typename T>
struct ConvLstmCache {
  Tensor<T> concat_in;  // (in+hidden, H, W)
  Tensor<T> gates;      // (4*hidden, H, W), post-activation
  Tensor<T> c_prev;
  Tensor<T> tanh_c;
};

template <typename T>
void convlstm_forward(const Tensor<T>& x, const Tensor<T>& h_prev, const Tensor<T>& c_prev,
                      const Tensor<T>& w, const Tensor<T>& b, const ConvLstmSpec& spec,
                      Tensor<T>& h_out, Tensor<T>& c_out, ConvLstmCache<T>* cache);

// dh: gradient w.r.t. h_out; dc_future: gradient w.r.t. c_out accumulated
// from the next timestep (may be null). Outputs accumulate into dw/db and
// overwrite dx/dh_prev/dc_prev.
template <typename T>
void convlstm_backward(const Tensor<T>& dh, const Tensor<T>* dc_future, const Tensor<T>& w,
                       const ConvLstmSpec& spec, const ConvLstmCache<T>& cache, Tensor<T>& dw,
                       Tensor<T>& db, Tensor<T>* dx, Tensor<T>* dh_prev, Tensor<T>* dc_prev);

// ---------------------------------------------------------------------------
// Small helpers shared by the model code.
// ---------------------------------------------------------------------------
template <typename T>
void check_finite(const Tensor<T>& t, const char* what);

template <typename T>
T sigmoid(T x) {
  return T(1) / (T(1) + std::exp(-x));
}

// Numerically safe binary cross entropy on a logit z against target in {0,1}:
// bce = max(z,0) - z*target + log(1+exp(-|z|)).
template <typename T>
T bce_with_logit(T z, T target) {
  const T zp = z > T(0) ? z : T(0);
  return zp - z * target + std::log1p(std::exp(-std::abs(z)));
}

}  // namespace gridsight::nn
