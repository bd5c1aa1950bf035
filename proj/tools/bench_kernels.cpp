// Times the OpenMP kernels against the serial reference implementations and
// verifies that both produce bit-identical output.
#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <functional>
#include <vector>

#include "prcl/kernels.hpp"
#include "prcl/parallel.hpp"
#include "prcl/rng.hpp"

namespace ker = prcl::kernels;

namespace {

using Clock = std::chrono::steady_clock;

double time_ms(const std::function<void()>& fn, int reps) {
  fn();  // warm up
  auto t0 = Clock::now();
  for (int i = 0; i < reps; ++i) fn();
  auto t1 = Clock::now();
  return std::chrono::duration<double, std::milli>(t1 - t0).count() / reps;
}

std::vector<double> random_vec(prcl::RngStream& s, size_t n) {
  std::vector<double> v(n);
  for (double& x : v) x = s.next_uniform(-1.0, 1.0);
  return v;
}

void report(const char* name, double serial_ms, double parallel_ms, bool identical) {
  std::printf("%-28s serial %9.3f ms   parallel %9.3f ms   speedup %5.2fx   %s\n", name, serial_ms,
              parallel_ms, serial_ms / parallel_ms, identical ? "bit-identical" : "MISMATCH");
}

}  // namespace

int main(int argc, char** argv) {
  int reps = 5;
  for (int i = 1; i < argc; ++i) {
    if (std::strcmp(argv[i], "--reps") == 0 && i + 1 < argc) reps = std::atoi(argv[++i]);
  }
  std::printf("workers: %d (max %d, openmp %s)\n\n", prcl::workers(), prcl::max_workers(),
              prcl::openmp_enabled() ? "on" : "off");

  prcl::RngStream s(1234, "bench");

  {
    const int m = 256, k = 256, n = 256;
    auto a = random_vec(s, m * k);
    auto b = random_vec(s, k * n);
    std::vector<double> cs(m * n), cp(m * n);
    double ts = time_ms([&] { ker::serial::matmul(a.data(), b.data(), cs.data(), m, k, n); }, reps);
    double tp = time_ms([&] { ker::matmul(a.data(), b.data(), cp.data(), m, k, n); }, reps);
    report("matmul 256x256x256", ts, tp, cs == cp);
  }
  {
    const int batch = 8, ci = 8, h = 32, w = 32, co = 16, kk = 3, stride = 1, pad = 1;
    auto x = random_vec(s, batch * ci * h * w);
    auto wt = random_vec(s, co * ci * kk * kk);
    int ho = ker::conv_out_dim(h, kk, stride, pad), wo = ker::conv_out_dim(w, kk, stride, pad);
    std::vector<double> ys(batch * co * ho * wo), yp(ys.size());
    double ts = time_ms([&] { ker::serial::conv2d(x.data(), wt.data(), ys.data(), batch, ci, h, w, co, kk, stride, pad); }, reps);
    double tp = time_ms([&] { ker::conv2d(x.data(), wt.data(), yp.data(), batch, ci, h, w, co, kk, stride, pad); }, reps);
    report("conv2d 8x8x32x32 -> 16ch", ts, tp, ys == yp);

    auto dy = random_vec(s, ys.size());
    std::vector<double> dxs(x.size(), 0.0), dxp(x.size(), 0.0);
    ts = time_ms([&] {
      std::fill(dxs.begin(), dxs.end(), 0.0);
      ker::serial::conv2d_grad_input_accum(wt.data(), dy.data(), dxs.data(), batch, ci, h, w, co, kk, stride, pad);
    }, reps);
    tp = time_ms([&] {
      std::fill(dxp.begin(), dxp.end(), 0.0);
      ker::conv2d_grad_input_accum(wt.data(), dy.data(), dxp.data(), batch, ci, h, w, co, kk, stride, pad);
    }, reps);
    report("conv2d grad input", ts, tp, dxs == dxp);

    std::vector<double> dws(wt.size(), 0.0), dwp(wt.size(), 0.0);
    ts = time_ms([&] {
      std::fill(dws.begin(), dws.end(), 0.0);
      ker::serial::conv2d_grad_weight_accum(x.data(), dy.data(), dws.data(), batch, ci, h, w, co, kk, stride, pad);
    }, reps);
    tp = time_ms([&] {
      std::fill(dwp.begin(), dwp.end(), 0.0);
      ker::conv2d_grad_weight_accum(x.data(), dy.data(), dwp.data(), batch, ci, h, w, co, kk, stride, pad);
    }, reps);
    report("conv2d grad weight", ts, tp, dws == dwp);
  }
  {
    const int m = 4096, classes = 64;
    auto z = random_vec(s, m * classes);
    std::vector<double> y(m);
    for (int i = 0; i < m; ++i) y[i] = static_cast<double>(i % classes);
    std::vector<double> ls(m), lp(m);
    double ts = time_ms([&] { ker::serial::softmax_ce(z.data(), y.data(), ls.data(), m, classes); }, reps);
    double tp = time_ms([&] { ker::softmax_ce(z.data(), y.data(), lp.data(), m, classes); }, reps);
    report("softmax_ce 4096x64", ts, tp, ls == lp);
  }
  {
    const size_t n = 1 << 22;
    auto x = random_vec(s, n);
    std::vector<double> ys(n), yp(n);
    double ts = time_ms([&] { ker::serial::relu(x.data(), ys.data(), static_cast<int64_t>(n)); }, reps);
    double tp = time_ms([&] { ker::relu(x.data(), yp.data(), static_cast<int64_t>(n)); }, reps);
    report("relu 4M", ts, tp, ys == yp);
  }
  return 0;
}
