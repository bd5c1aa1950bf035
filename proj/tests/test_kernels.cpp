#include "doctest.h"

#include <cmath>
#include <vector>

#include "prcl/kernels.hpp"
#include "prcl/parallel.hpp"
#include "prcl/rng.hpp"

using namespace prcl;
namespace ker = prcl::kernels;

namespace {

std::vector<double> random_vec(RngStream& s, size_t n, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(n);
  for (double& x : v) x = s.next_uniform(lo, hi);
  return v;
}

}  // namespace

TEST_CASE("matmul matches hand result") {
  // [1 2; 3 4] * [5 6; 7 8] = [19 22; 43 50]
  std::vector<double> a{1, 2, 3, 4}, b{5, 6, 7, 8}, c(4);
  ker::matmul(a.data(), b.data(), c.data(), 2, 2, 2);
  CHECK(c == std::vector<double>{19, 22, 43, 50});
}

TEST_CASE("matmul_nt and matmul_tn agree with explicit transposition") {
  RngStream s(101, "matmul");
  const int m = 5, k = 4, n = 3;
  auto a = random_vec(s, m * k);
  auto b = random_vec(s, k * n);
  // bt[n,k] is b transposed; matmul_nt(a, bt) must equal matmul(a, b).
  std::vector<double> bt(n * k);
  for (int i = 0; i < k; ++i)
    for (int j = 0; j < n; ++j) bt[j * k + i] = b[i * n + j];
  std::vector<double> c0(m * n), c1(m * n);
  ker::matmul(a.data(), b.data(), c0.data(), m, k, n);
  ker::matmul_nt(a.data(), bt.data(), c1.data(), m, k, n);
  for (int i = 0; i < m * n; ++i) CHECK(c1[i] == doctest::Approx(c0[i]).epsilon(1e-12));

  // at[k,m] is a transposed; matmul_tn(a, c) computes a^T*c, check vs matmul(at, c).
  std::vector<double> at(k * m);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < k; ++j) at[j * m + i] = a[i * k + j];
  auto c2 = random_vec(s, m * n);
  std::vector<double> d0(k * n), d1(k * n);
  ker::matmul(at.data(), c2.data(), d0.data(), k, m, n);
  ker::matmul_tn(a.data(), c2.data(), d1.data(), m, k, n);
  for (int i = 0; i < k * n; ++i) CHECK(d1[i] == doctest::Approx(d0[i]).epsilon(1e-12));
}

TEST_CASE("relu and its gradient use the zero subgradient at zero") {
  std::vector<double> x{-1.0, 0.0, 2.0}, y(3);
  ker::relu(x.data(), y.data(), 3);
  CHECK(y == std::vector<double>{0.0, 0.0, 2.0});
  std::vector<double> dy{1.0, 1.0, 1.0}, dx(3, 0.0);
  ker::relu_grad_accum(x.data(), dy.data(), dx.data(), 3);
  CHECK(dx == std::vector<double>{0.0, 0.0, 1.0});
}

TEST_CASE("conv2d identity kernel reproduces input") {
  // 1x1 kernel with weight 1, stride 1, no pad: output == input.
  RngStream s(7, "conv");
  auto x = random_vec(s, 1 * 1 * 4 * 4);
  std::vector<double> w{1.0};
  std::vector<double> y(16);
  ker::conv2d(x.data(), w.data(), y.data(), 1, 1, 4, 4, 1, 1, 1, 0);
  for (int i = 0; i < 16; ++i) CHECK(y[i] == x[i]);
}

TEST_CASE("conv2d 3x3 hand check with padding") {
  // All-ones 3x3 kernel over all-ones 3x3 input, pad 1: center sees 9, edges 6, corners 4.
  std::vector<double> x(9, 1.0), w(9, 1.0), y(9);
  ker::conv2d(x.data(), w.data(), y.data(), 1, 1, 3, 3, 1, 3, 1, 1);
  CHECK(y == std::vector<double>{4, 6, 4, 6, 9, 6, 4, 6, 4});
}

TEST_CASE("conv output dim formula") {
  CHECK(ker::conv_out_dim(8, 3, 1, 1) == 8);
  CHECK(ker::conv_out_dim(8, 3, 2, 1) == 4);
  CHECK(ker::conv_out_dim(5, 1, 1, 0) == 5);
}

TEST_CASE("softmax cross entropy hand values") {
  // Logits [0,0] vs class 0: loss = ln 2.
  std::vector<double> z{0.0, 0.0}, y{0.0}, loss(1);
  ker::softmax_ce(z.data(), y.data(), loss.data(), 1, 2);
  CHECK(loss[0] == doctest::Approx(std::log(2.0)).epsilon(1e-12));

  // Shift invariance: adding a constant to all logits keeps the loss.
  std::vector<double> z2{1000.0, 1000.0};
  ker::softmax_ce(z2.data(), y.data(), loss.data(), 1, 2);
  CHECK(loss[0] == doctest::Approx(std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("softmax cross entropy gradient is softmax minus onehot") {
  std::vector<double> z{1.0, 2.0, 0.5}, y{1.0}, g{1.0};
  std::vector<double> dz(3, 0.0);
  ker::softmax_ce_grad_accum(z.data(), y.data(), g.data(), dz.data(), 1, 3);
  double denom = std::exp(1.0) + std::exp(2.0) + std::exp(0.5);
  CHECK(dz[0] == doctest::Approx(std::exp(1.0) / denom).epsilon(1e-12));
  CHECK(dz[1] == doctest::Approx(std::exp(2.0) / denom - 1.0).epsilon(1e-12));
  CHECK(dz[2] == doctest::Approx(std::exp(0.5) / denom).epsilon(1e-12));
}

TEST_CASE("mse per-row half sum of squares") {
  std::vector<double> p{2.0, 0.0}, t{0.0, 0.0}, loss(1);
  ker::mse(p.data(), t.data(), loss.data(), 1, 2);
  CHECK(loss[0] == doctest::Approx(2.0).epsilon(1e-15));
}

TEST_CASE("global average pool and gradient") {
  std::vector<double> x{1, 2, 3, 4, 10, 10, 10, 10}, y(2);
  ker::global_avg_pool(x.data(), y.data(), 1, 2, 4);
  CHECK(y[0] == doctest::Approx(2.5));
  CHECK(y[1] == doctest::Approx(10.0));
  std::vector<double> dy{4.0, 8.0}, dx(8, 0.0);
  ker::global_avg_pool_grad_accum(dy.data(), dx.data(), 1, 2, 4);
  for (int i = 0; i < 4; ++i) CHECK(dx[i] == doctest::Approx(1.0));
  for (int i = 4; i < 8; ++i) CHECK(dx[i] == doctest::Approx(2.0));
}

TEST_CASE("bias and reduction helpers") {
  std::vector<double> x{1, 2, 3, 4}, b{10, 20}, y(4);
  ker::bias_rows(x.data(), b.data(), y.data(), 2, 2);
  CHECK(y == std::vector<double>{11, 22, 13, 24});
  std::vector<double> db(2, 0.0);
  ker::colsum_accum(y.data(), db.data(), 2, 2);
  CHECK(db == std::vector<double>{24, 46});

  std::vector<double> xc{1, 1, 2, 2}, bc{5, 7}, yc(4);
  ker::bias_chw(xc.data(), bc.data(), yc.data(), 1, 2, 2);
  CHECK(yc == std::vector<double>{6, 6, 9, 9});
  std::vector<double> dbc(2, 0.0);
  ker::chwsum_accum(yc.data(), dbc.data(), 1, 2, 2);
  CHECK(dbc == std::vector<double>{12, 18});
}

TEST_CASE("parallel kernels are bit-identical to serial reference") {
  RngStream s(2024, "parcheck");
  const int m = 17, k = 23, n = 13;
  auto a = random_vec(s, m * k);
  auto b = random_vec(s, k * n);
  std::vector<double> cp(m * n), cs(m * n);
  ker::matmul(a.data(), b.data(), cp.data(), m, k, n);
  ker::serial::matmul(a.data(), b.data(), cs.data(), m, k, n);
  CHECK(cp == cs);

  std::vector<double> bt(n * k);
  for (int i = 0; i < k; ++i)
    for (int j = 0; j < n; ++j) bt[j * k + i] = b[i * n + j];
  std::vector<double> dp(m * n), ds(m * n);
  ker::matmul_nt(a.data(), bt.data(), dp.data(), m, k, n);
  ker::serial::matmul_nt(a.data(), bt.data(), ds.data(), m, k, n);
  CHECK(dp == ds);

  auto c2 = random_vec(s, m * n);
  std::vector<double> ep(k * n), es(k * n);
  ker::matmul_tn(a.data(), c2.data(), ep.data(), m, k, n);
  ker::serial::matmul_tn(a.data(), c2.data(), es.data(), m, k, n);
  CHECK(ep == es);

  const int batch = 2, ci = 3, h = 8, w = 8, co = 4, kk = 3, stride = 2, pad = 1;
  auto x = random_vec(s, batch * ci * h * w);
  auto wt = random_vec(s, co * ci * kk * kk);
  int ho = ker::conv_out_dim(h, kk, stride, pad), wo = ker::conv_out_dim(w, kk, stride, pad);
  std::vector<double> yp(batch * co * ho * wo), ys(yp.size());
  ker::conv2d(x.data(), wt.data(), yp.data(), batch, ci, h, w, co, kk, stride, pad);
  ker::serial::conv2d(x.data(), wt.data(), ys.data(), batch, ci, h, w, co, kk, stride, pad);
  CHECK(yp == ys);

  auto dy = random_vec(s, yp.size());
  std::vector<double> dxp(x.size(), 0.0), dxs(x.size(), 0.0);
  ker::conv2d_grad_input_accum(wt.data(), dy.data(), dxp.data(), batch, ci, h, w, co, kk, stride, pad);
  ker::serial::conv2d_grad_input_accum(wt.data(), dy.data(), dxs.data(), batch, ci, h, w, co, kk, stride, pad);
  CHECK(dxp == dxs);

  std::vector<double> dwp(wt.size(), 0.0), dws(wt.size(), 0.0);
  ker::conv2d_grad_weight_accum(x.data(), dy.data(), dwp.data(), batch, ci, h, w, co, kk, stride, pad);
  ker::serial::conv2d_grad_weight_accum(x.data(), dy.data(), dws.data(), batch, ci, h, w, co, kk, stride, pad);
  CHECK(dwp == dws);

  auto z = random_vec(s, 6 * 10);
  std::vector<double> yl(6);
  for (int i = 0; i < 6; ++i) yl[i] = static_cast<double>(i % 10);
  std::vector<double> lp(6), ls(6);
  ker::softmax_ce(z.data(), yl.data(), lp.data(), 6, 10);
  ker::serial::softmax_ce(z.data(), yl.data(), ls.data(), 6, 10);
  CHECK(lp == ls);

  auto rx = random_vec(s, 257);
  std::vector<double> rp(257), rs(257);
  ker::relu(rx.data(), rp.data(), 257);
  ker::serial::relu(rx.data(), rs.data(), 257);
  CHECK(rp == rs);
}

TEST_CASE("worker count does not change kernel output") {
  RngStream s(555, "workers");
  const int m = 9, k = 31, n = 7;
  auto a = random_vec(s, m * k);
  auto b = random_vec(s, k * n);
  std::vector<double> c1v(m * n), c2v(m * n);
  set_workers(1);
  ker::matmul(a.data(), b.data(), c1v.data(), m, k, n);
  set_workers(max_workers());
  ker::matmul(a.data(), b.data(), c2v.data(), m, k, n);
  set_workers(0);
  CHECK(c1v == c2v);
}
