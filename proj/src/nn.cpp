#include "gridsight/nn.hpp"

#include <cmath>

#include "gridsight/kernels/kernels.hpp"
#include "gridsight/kernels/reference.hpp"

namespace gridsight::nn {

namespace {

template <typename T>
void im2col(const T* x, int c_in, int h, int w, int kernel, int stride, int pad, int oh, int ow,
            T* col) {
  for (int c = 0; c < c_in; ++c) {
    for (int ky = 0; ky < kernel; ++ky) {
      for (int kx = 0; kx < kernel; ++kx) {
        T* dst = col + (static_cast<std::size_t>(c) * kernel * kernel + ky * kernel + kx) *
                           (static_cast<std::size_t>(oh) * ow);
        for (int oy = 0; oy < oh; ++oy) {
          const int iy = oy * stride + ky - pad;
          T* drow = dst + static_cast<std::size_t>(oy) * ow;
          if (iy < 0 || iy >= h) {
            for (int ox = 0; ox < ow; ++ox) drow[ox] = T(0);
            continue;
          }
          const T* srow = x + (static_cast<std::size_t>(c) * h + iy) * w;
          if (stride == 1 && kx >= pad && w - 1 + kx - pad < w) {
            // fully interior in x for every ox: plain copy
            for (int ox = 0; ox < ow; ++ox) drow[ox] = srow[ox + kx - pad];
          } else {
            for (int ox = 0; ox < ow; ++ox) {
              const int ix = ox * stride + kx - pad;
              drow[ox] = (ix >= 0 && ix < w) ? srow[ix] : T(0);
            }
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_acc(const T* col, int c_in, int h, int w, int kernel, int stride, int pad, int oh,
                int ow, T* dx) {
  for (int c = 0; c < c_in; ++c) {
    for (int ky = 0; ky < kernel; ++ky) {
      for (int kx = 0; kx < kernel; ++kx) {
        const T* src = col + (static_cast<std::size_t>(c) * kernel * kernel + ky * kernel + kx) *
                                 (static_cast<std::size_t>(oh) * ow);
        for (int oy = 0; oy < oh; ++oy) {
          const int iy = oy * stride + ky - pad;
          if (iy < 0 || iy >= h) continue;
          T* drow = dx + (static_cast<std::size_t>(c) * h + iy) * w;
          const T* srow = src + static_cast<std::size_t>(oy) * ow;
          for (int ox = 0; ox < ow; ++ox) {
            const int ix = ox * stride + kx - pad;
            if (ix >= 0 && ix < w) drow[ix] += srow[ox];
          }
        }
      }
    }
  }
}

template <typename T>
std::vector<T>& scratch_a() {
  thread_local std::vector<T> buf;
  return buf;
}
template <typename T>
std::vector<T>& scratch_b() {
  thread_local std::vector<T> buf;
  return buf;
}

}  // namespace

template <typename T>
void conv2d_forward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>* bias,
                    const Conv2dSpec& spec, Tensor<T>& y) {
  const int h = x.dim(1), wd = x.dim(2);
  if (x.dim(0) != spec.in_ch) throw ConfigError("conv2d: input channel mismatch");
  const int oh = conv_out_dim(h, spec.kernel, spec.stride, spec.pad);
  const int ow = conv_out_dim(wd, spec.kernel, spec.stride, spec.pad);
  if (oh <= 0 || ow <= 0) throw ConfigError("conv2d: empty output");
  y = Tensor<T>({spec.out_ch, oh, ow});
  const int kdim = spec.in_ch * spec.kernel * spec.kernel;
  const int l = oh * ow;

  const T* bmat;
  if (spec.kernel == 1 && spec.stride == 1 && spec.pad == 0) {
    bmat = x.data();
  } else {
    auto& col = scratch_a<T>();
    col.resize(static_cast<std::size_t>(kdim) * l);
    im2col(x.data(), spec.in_ch, h, wd, spec.kernel, spec.stride, spec.pad, oh, ow, col.data());
    bmat = col.data();
  }
  Ops<T>::gemm_nn(spec.out_ch, l, kdim, w.data(), kdim, bmat, l, y.data(), l, false);
  if (bias) {
    for (int oc = 0; oc < spec.out_ch; ++oc) {
      const T bv = (*bias)[static_cast<std::size_t>(oc)];
      T* row = y.data() + static_cast<std::size_t>(oc) * l;
      for (int i = 0; i < l; ++i) row[i] += bv;
    }
  }
}

template <typename T>
void conv2d_backward(const Tensor<T>& x, const Tensor<T>& w, const Conv2dSpec& spec,
                     const Tensor<T>& dy, Tensor<T>* dx, Tensor<T>& dw, Tensor<T>* dbias) {
  const int h = x.dim(1), wd = x.dim(2);
  const int oh = dy.dim(1), ow = dy.dim(2);
  const int kdim = spec.in_ch * spec.kernel * spec.kernel;
  const int l = oh * ow;
  const bool pointwise = spec.kernel == 1 && spec.stride == 1 && spec.pad == 0;

  if (dbias) {
    for (int oc = 0; oc < spec.out_ch; ++oc) {
      const T* row = dy.data() + static_cast<std::size_t>(oc) * l;
      T s = T(0);
      for (int i = 0; i < l; ++i) s += row[i];
      (*dbias)[static_cast<std::size_t>(oc)] += s;
    }
  }

  // dW += dY * col^T  (im2col recomputed; cheaper than caching it per frame)
  const T* bmat;
  if (pointwise) {
    bmat = x.data();
  } else {
    auto& col = scratch_a<T>();
    col.resize(static_cast<std::size_t>(kdim) * l);
    im2col(x.data(), spec.in_ch, h, wd, spec.kernel, spec.stride, spec.pad, oh, ow, col.data());
    bmat = col.data();
  }
  Ops<T>::gemm_nt(spec.out_ch, kdim, l, dy.data(), l, bmat, l, dw.data(), kdim, true);

  if (dx) {
    if (dx->shape() != x.shape()) *dx = Tensor<T>(x.shape());
    if (pointwise) {
      // dX = W^T * dY directly into dx (overwrite)
      Ops<T>::gemm_tn(kdim, l, spec.out_ch, w.data(), kdim, dy.data(), l, dx->data(), l, false);
    } else {
      auto& dcol = scratch_b<T>();
      dcol.resize(static_cast<std::size_t>(kdim) * l);
      Ops<T>::gemm_tn(kdim, l, spec.out_ch, w.data(), kdim, dy.data(), l, dcol.data(), l, false);
      dx->zero();
      col2im_acc(dcol.data(), spec.in_ch, h, wd, spec.kernel, spec.stride, spec.pad, oh, ow,
                 dx->data());
    }
  }
}

template <typename T>
void bn_forward_train(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                      Tensor<T>* running_mean, Tensor<T>* running_var, T momentum, T eps,
                      Tensor<T>& y, BnCache<T>* cache) {
  const int c = x.dim(0);
  const int n = x.dim(1) * x.dim(2);
  if (y.shape() != x.shape()) y = Tensor<T>(x.shape());
  if (cache) {
    cache->xhat = Tensor<T>(x.shape());
    cache->inv_std.assign(static_cast<std::size_t>(c), T(0));
  }
  for (int ch = 0; ch < c; ++ch) {
    const T* xc = x.data() + static_cast<std::size_t>(ch) * n;
    T* yc = y.data() + static_cast<std::size_t>(ch) * n;
    T mean = T(0);
    for (int i = 0; i < n; ++i) mean += xc[i];
    mean /= T(n);
    T var = T(0);
    for (int i = 0; i < n; ++i) {
      const T d = xc[i] - mean;
      var += d * d;
    }
    var /= T(n);
    const T inv_std = T(1) / std::sqrt(var + eps);
    const T g = gamma[static_cast<std::size_t>(ch)];
    const T b = beta[static_cast<std::size_t>(ch)];
    if (cache) {
      T* xh = cache->xhat.data() + static_cast<std::size_t>(ch) * n;
      for (int i = 0; i < n; ++i) {
        xh[i] = (xc[i] - mean) * inv_std;
        yc[i] = g * xh[i] + b;
      }
      cache->inv_std[static_cast<std::size_t>(ch)] = inv_std;
    } else {
      for (int i = 0; i < n; ++i) yc[i] = g * (xc[i] - mean) * inv_std + b;
    }
    if (running_mean) {
      auto& rm = (*running_mean)[static_cast<std::size_t>(ch)];
      auto& rv = (*running_var)[static_cast<std::size_t>(ch)];
      rm = (T(1) - momentum) * rm + momentum * mean;
      rv = (T(1) - momentum) * rv + momentum * var;
    }
  }
}

template <typename T>
void bn_forward_eval(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     const Tensor<T>& running_mean, const Tensor<T>& running_var, T eps,
                     Tensor<T>& y) {
  const int c = x.dim(0);
  const int n = x.dim(1) * x.dim(2);
  if (y.shape() != x.shape()) y = Tensor<T>(x.shape());
  for (int ch = 0; ch < c; ++ch) {
    const T scale = gamma[static_cast<std::size_t>(ch)] /
                    std::sqrt(running_var[static_cast<std::size_t>(ch)] + eps);
    const T shift =
        beta[static_cast<std::size_t>(ch)] - scale * running_mean[static_cast<std::size_t>(ch)];
    const T* xc = x.data() + static_cast<std::size_t>(ch) * n;
    T* yc = y.data() + static_cast<std::size_t>(ch) * n;
    for (int i = 0; i < n; ++i) yc[i] = scale * xc[i] + shift;
  }
}

template <typename T>
void bn_backward(const Tensor<T>& dy, const BnCache<T>& cache, const Tensor<T>& gamma,
                 Tensor<T>& dx, Tensor<T>& dgamma, Tensor<T>& dbeta) {
  const int c = dy.dim(0);
  const int n = dy.dim(1) * dy.dim(2);
  if (dx.shape() != dy.shape()) dx = Tensor<T>(dy.shape());
  for (int ch = 0; ch < c; ++ch) {
    const T* dyc = dy.data() + static_cast<std::size_t>(ch) * n;
    const T* xh = cache.xhat.data() + static_cast<std::size_t>(ch) * n;
    T* dxc = dx.data() + static_cast<std::size_t>(ch) * n;
    T sum_dy = T(0), sum_dy_xh = T(0);
    for (int i = 0; i < n; ++i) {
      sum_dy += dyc[i];
      sum_dy_xh += dyc[i] * xh[i];
    }
    dgamma[static_cast<std::size_t>(ch)] += sum_dy_xh;
    dbeta[static_cast<std::size_t>(ch)] += sum_dy;
    const T g = gamma[static_cast<std::size_t>(ch)];
    const T inv_std = cache.inv_std[static_cast<std::size_t>(ch)];
    const T k = g * inv_std / T(n);
    for (int i = 0; i < n; ++i) {
      dxc[i] = k * (T(n) * dyc[i] - sum_dy - xh[i] * sum_dy_xh);
    }
  }
}

template <typename T>
void convlstm_forward(const Tensor<T>& x, const Tensor<T>& h_prev, const Tensor<T>& c_prev,
                      const Tensor<T>& w, const Tensor<T>& b, const ConvLstmSpec& spec,
                      Tensor<T>& h_out, Tensor<T>& c_out, ConvLstmCache<T>* cache) {
  const int h = x.dim(1), wd = x.dim(2);
  const int hc = spec.hidden_ch;
  const std::size_t plane = static_cast<std::size_t>(h) * wd;

  Tensor<T> concat({spec.in_ch + hc, h, wd});
  std::copy(x.data(), x.data() + x.size(), concat.data());
  std::copy(h_prev.data(), h_prev.data() + h_prev.size(), concat.data() + x.size());

  Conv2dSpec cs{spec.in_ch + hc, 4 * hc, spec.kernel, 1, spec.kernel / 2};
  Tensor<T> gates;
  conv2d_forward(concat, w, &b, cs, gates);

  // slabs: [i | f | o | g]
  T* gi = gates.data();
  T* gf = gi + static_cast<std::size_t>(hc) * plane;
  T* go = gf + static_cast<std::size_t>(hc) * plane;
  T* gg = go + static_cast<std::size_t>(hc) * plane;
  const int slab = hc * static_cast<int>(plane);
  Ops<T>::vsigmoid(3 * slab, gi, gi);  // i, f, o are contiguous
  Ops<T>::vtanh(slab, gg, gg);

  if (h_out.shape() != h_prev.shape()) h_out = Tensor<T>({hc, h, wd});
  if (c_out.shape() != c_prev.shape()) c_out = Tensor<T>({hc, h, wd});
  Tensor<T> tanh_c({hc, h, wd});
  for (int i = 0; i < slab; ++i) c_out[i] = gf[i] * c_prev[i] + gi[i] * gg[i];
  Ops<T>::vtanh(slab, c_out.data(), tanh_c.data());
  for (int i = 0; i < slab; ++i) h_out[i] = go[i] * tanh_c[i];

  if (cache) {
    cache->concat_in = std::move(concat);
    cache->gates = std::move(gates);
    cache->c_prev = c_prev;
    cache->tanh_c = std::move(tanh_c);
  }
}

template <typename T>
void convlstm_backward(const Tensor<T>& dh, const Tensor<T>* dc_future, const Tensor<T>& w,
                       const ConvLstmSpec& spec, const ConvLstmCache<T>& cache, Tensor<T>& dw,
                       Tensor<T>& db, Tensor<T>* dx, Tensor<T>* dh_prev, Tensor<T>* dc_prev) {
  const int hc = spec.hidden_ch;
  const int h = dh.dim(1), wd = dh.dim(2);
  const std::size_t plane = static_cast<std::size_t>(h) * wd;
  const int slab = hc * static_cast<int>(plane);

  const T* gi = cache.gates.data();
  const T* gf = gi + slab;
  const T* go = gf + slab;
  const T* gg = go + slab;

  Tensor<T> dz({4 * hc, h, wd});
  T* dzi = dz.data();
  T* dzf = dzi + slab;
  T* dzo = dzf + slab;
  T* dzg = dzo + slab;

  if (dc_prev && dc_prev->shape() != cache.c_prev.shape()) *dc_prev = Tensor<T>(cache.c_prev.shape());

  for (int i = 0; i < slab; ++i) {
    const T tc = cache.tanh_c[i];
    const T d_o = dh[i] * tc;
    T dc = dh[i] * go[i] * (T(1) - tc * tc);
    if (dc_future) dc += (*dc_future)[i];
    const T d_i = dc * gg[i];
    const T d_f = dc * cache.c_prev[i];
    const T d_g = dc * gi[i];
    if (dc_prev) (*dc_prev)[i] = dc * gf[i];
    dzi[i] = d_i * gi[i] * (T(1) - gi[i]);
    dzf[i] = d_f * gf[i] * (T(1) - gf[i]);
    dzo[i] = d_o * go[i] * (T(1) - go[i]);
    dzg[i] = d_g * (T(1) - gg[i] * gg[i]);
  }

  Conv2dSpec cs{spec.in_ch + hc, 4 * hc, spec.kernel, 1, spec.kernel / 2};
  Tensor<T> dconcat;
  conv2d_backward(cache.concat_in, w, cs, dz, &dconcat, dw, &db);

  if (dx) {
    if (dx->shape() != std::vector<int>{spec.in_ch, h, wd}) *dx = Tensor<T>({spec.in_ch, h, wd});
    std::copy(dconcat.data(), dconcat.data() + dx->size(), dx->data());
  }
  if (dh_prev) {
    if (dh_prev->shape() != std::vector<int>{hc, h, wd}) *dh_prev = Tensor<T>({hc, h, wd});
    std::copy(dconcat.data() + static_cast<std::size_t>(spec.in_ch) * plane,
              dconcat.data() + dconcat.size(), dh_prev->data());
  }
}

template <typename T>
void check_finite(const Tensor<T>& t, const char* what) {
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (!std::isfinite(t[i])) throw NumericError(std::string("non-finite value in ") + what);
  }
}

#define GS_INSTANTIATE(T)                                                                        \
  template void conv2d_forward<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>*,         \
                                  const Conv2dSpec&, Tensor<T>&);                                \
  template void conv2d_backward<T>(const Tensor<T>&, const Tensor<T>&, const Conv2dSpec&,       \
                                   const Tensor<T>&, Tensor<T>*, Tensor<T>&, Tensor<T>*);       \
  template void bn_forward_train<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,       \
                                    Tensor<T>*, Tensor<T>*, T, T, Tensor<T>&, BnCache<T>*);     \
  template void bn_forward_eval<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,        \
                                   const Tensor<T>&, const Tensor<T>&, T, Tensor<T>&);          \
  template void bn_backward<T>(const Tensor<T>&, const BnCache<T>&, const Tensor<T>&,           \
                               Tensor<T>&, Tensor<T>&, Tensor<T>&);                             \
  template void convlstm_forward<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,       \
                                    const Tensor<T>&, const Tensor<T>&, const ConvLstmSpec&,    \
                                    Tensor<T>&, Tensor<T>&, ConvLstmCache<T>*);                 \
  template void convlstm_backward<T>(const Tensor<T>&, const Tensor<T>*, const Tensor<T>&,      \
                                     const ConvLstmSpec&, const ConvLstmCache<T>&, Tensor<T>&,  \
                                     Tensor<T>&, Tensor<T>*, Tensor<T>*, Tensor<T>*);           \
  template void check_finite<T>(const Tensor<T>&, const char*);

GS_INSTANTIATE(float)
GS_INSTANTIATE(double)

#undef GS_INSTANTIATE

}  // namespace gridsight::nn
