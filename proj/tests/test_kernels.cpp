#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "gridsight/common.hpp"
#include "gridsight/kernels/kernels.hpp"
#include "gridsight/kernels/reference.hpp"

using namespace gridsight;
namespace K = gridsight::kernels;

namespace {

std::vector<float> random_vec(Rng& rng, int n, double lo = -3.0, double hi = 3.0) {
  std::vector<float> v(static_cast<std::size_t>(n));
  for (auto& x : v) x = static_cast<float>(rng.uniform(lo, hi));
  return v;
}

void check_close(const std::vector<float>& a, const std::vector<float>& b, float atol, float rtol) {
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    const float tol = atol + rtol * std::fabs(b[i]);
    CHECK(std::fabs(a[i] - b[i]) <= tol);
    if (std::fabs(a[i] - b[i]) > tol) return;  // one detailed failure is enough
  }
}

// Runs `f` once per supported SIMD ISA, restoring the default afterwards.
template <typename F>
void for_each_simd_isa(F&& f) {
  const K::Isa original = K::active_isa();
  for (K::Isa isa : {K::Isa::avx2, K::Isa::neon}) {
    if (!K::isa_supported(isa)) continue;
    K::force_isa(isa);
    f(isa);
  }
  K::force_isa(original);
}

}  // namespace

TEST_CASE("gemm_nn matches reference on random shapes") {
  Rng rng(42);
  for (int trial = 0; trial < 20; ++trial) {
    const int m = 1 + static_cast<int>(rng.uniform_int(12));
    const int n = 1 + static_cast<int>(rng.uniform_int(40));
    const int k = 1 + static_cast<int>(rng.uniform_int(30));
    auto a = random_vec(rng, m * k);
    auto b = random_vec(rng, k * n);
    auto c0 = random_vec(rng, m * n);
    const bool acc = rng.bernoulli(0.5);

    auto want = c0;
    K::ref::gemm_nn(m, n, k, a.data(), k, b.data(), n, want.data(), n, acc);

    for_each_simd_isa([&](K::Isa) {
      auto got = c0;
      K::gemm_nn(m, n, k, a.data(), k, b.data(), n, got.data(), n, acc);
      check_close(got, want, 1e-4f, 1e-5f);
    });
  }
}

TEST_CASE("gemm_nt and gemm_tn match reference") {
  Rng rng(43);
  for (int trial = 0; trial < 20; ++trial) {
    const int m = 1 + static_cast<int>(rng.uniform_int(10));
    const int n = 1 + static_cast<int>(rng.uniform_int(33));
    const int k = 1 + static_cast<int>(rng.uniform_int(50));
    auto a_nt = random_vec(rng, m * k);
    auto b_nt = random_vec(rng, n * k);
    auto a_tn = random_vec(rng, k * m);
    auto b_tn = random_vec(rng, k * n);
    auto c0 = random_vec(rng, m * n);
    const bool acc = rng.bernoulli(0.5);

    auto want_nt = c0;
    K::ref::gemm_nt(m, n, k, a_nt.data(), k, b_nt.data(), k, want_nt.data(), n, acc);
    auto want_tn = c0;
    K::ref::gemm_tn(m, n, k, a_tn.data(), m, b_tn.data(), n, want_tn.data(), n, acc);

    for_each_simd_isa([&](K::Isa) {
      auto got = c0;
      K::gemm_nt(m, n, k, a_nt.data(), k, b_nt.data(), k, got.data(), n, acc);
      check_close(got, want_nt, 1e-4f, 1e-5f);
      got = c0;
      K::gemm_tn(m, n, k, a_tn.data(), m, b_tn.data(), n, got.data(), n, acc);
      check_close(got, want_tn, 1e-4f, 1e-5f);
    });
  }
}

TEST_CASE("gemm against brute-force triple loop oracle") {
  // Independent of the reference kernels: literal sum over products.
  Rng rng(4242);
  const int m = 7, n = 19, k = 23;
  auto a = random_vec(rng, m * k);
  auto b = random_vec(rng, k * n);
  std::vector<float> want(static_cast<std::size_t>(m) * n, 0.0f);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) {
      double s = 0.0;
      for (int p = 0; p < k; ++p) s += double(a[i * k + p]) * double(b[p * n + j]);
      want[i * n + j] = static_cast<float>(s);
    }
  std::vector<float> got(static_cast<std::size_t>(m) * n, -1.0f);
  K::gemm_nn(m, n, k, a.data(), k, b.data(), n, got.data(), n, false);
  check_close(got, want, 1e-4f, 1e-5f);
}

TEST_CASE("vsigmoid / vtanh match libm within mixed tolerance") {
  Rng rng(7);
  auto x = random_vec(rng, 517, -12.0, 12.0);
  x[0] = 0.0f;
  x[1] = -0.0f;
  x[2] = 100.0f;
  x[3] = -100.0f;
  x[4] = 1e-5f;
  std::vector<float> want_s(x.size()), want_t(x.size());
  K::ref::vsigmoid(static_cast<int>(x.size()), x.data(), want_s.data());
  K::ref::vtanh(static_cast<int>(x.size()), x.data(), want_t.data());

  for_each_simd_isa([&](K::Isa) {
    std::vector<float> got(x.size());
    K::vsigmoid(static_cast<int>(x.size()), x.data(), got.data());
    check_close(got, want_s, 2e-7f, 2e-6f);
    K::vtanh(static_cast<int>(x.size()), x.data(), got.data());
    check_close(got, want_t, 4e-7f, 4e-6f);
  });
}

TEST_CASE("leaky relu forward/grad and axpy match reference") {
  Rng rng(8);
  const int n = 333;
  auto x = random_vec(rng, n);
  auto dy = random_vec(rng, n);
  std::vector<float> want(x.size()), want_g(x.size());
  K::ref::leaky_relu(n, x.data(), want.data(), 0.1f);
  K::ref::leaky_relu_grad(n, x.data(), dy.data(), want_g.data(), 0.1f);
  auto y0 = random_vec(rng, n);
  auto want_axpy = y0;
  K::ref::axpy(n, 1.7f, x.data(), want_axpy.data());

  for_each_simd_isa([&](K::Isa) {
    std::vector<float> got(x.size());
    K::leaky_relu(n, x.data(), got.data(), 0.1f);
    check_close(got, want, 0.0f, 0.0f);
    K::leaky_relu_grad(n, x.data(), dy.data(), got.data(), 0.1f);
    check_close(got, want_g, 0.0f, 0.0f);
    auto got_axpy = y0;
    K::axpy(n, 1.7f, x.data(), got_axpy.data());
    check_close(got_axpy, want_axpy, 1e-6f, 1e-6f);
  });
}

TEST_CASE("optimizer kernels match reference") {
  Rng rng(9);
  const int n = 259;
  auto p0 = random_vec(rng, n);
  auto g = random_vec(rng, n);
  auto m0 = random_vec(rng, n, -0.1, 0.1);
  auto v0 = random_vec(rng, n, 0.0, 0.1);
  auto u0 = random_vec(rng, n, -0.1, 0.1);

  auto wp = p0;
  auto wm = m0;
  auto wv = v0;
  K::ref::adam_step(n, wp.data(), g.data(), wm.data(), wv.data(), 1e-3f, 0.9f, 0.999f, 1e-8f,
                    1.25f, 1.05f);
  auto wps = p0;
  auto wu = u0;
  K::ref::sgd_momentum_step(n, wps.data(), g.data(), wu.data(), 1e-2f, 0.9f);

  for_each_simd_isa([&](K::Isa) {
    auto gp = p0;
    auto gm = m0;
    auto gv = v0;
    K::adam_step(n, gp.data(), g.data(), gm.data(), gv.data(), 1e-3f, 0.9f, 0.999f, 1e-8f, 1.25f,
                 1.05f);
    check_close(gp, wp, 1e-6f, 1e-5f);
    check_close(gm, wm, 1e-7f, 1e-6f);
    check_close(gv, wv, 1e-7f, 1e-6f);
    auto gps = p0;
    auto gu = u0;
    K::sgd_momentum_step(n, gps.data(), g.data(), gu.data(), 1e-2f, 0.9f);
    check_close(gps, wps, 1e-7f, 1e-6f);
    check_close(gu, wu, 1e-7f, 1e-6f);
  });
}

TEST_CASE("flop counter tracks gemm work") {
  K::reset_flop_counter();
  std::vector<float> a(6), b(8), c(12, 0.0f);
  K::gemm_nn(3, 4, 2, a.data(), 2, b.data(), 4, c.data(), 4, false);
  CHECK(K::flop_counter() == 2ull * 3 * 4 * 2);
}
