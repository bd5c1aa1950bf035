#include "prcl/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace prcl::kernels {

namespace {

inline double dot_stride(const double* a, const double* b, int k, int bstride) {
  double s = 0.0;
  for (int i = 0; i < k; ++i) s += a[i] * b[static_cast<int64_t>(i) * bstride];
  return s;
}

// shared per-row softmax-CE pieces so the serial reference and the parallel
// path cannot drift numerically
inline double ce_row(const double* z, double label, int classes) {
  int cls = static_cast<int>(label);
  double mx = z[0];
  for (int j = 1; j < classes; ++j) mx = std::max(mx, z[j]);
  double sum = 0.0;
  for (int j = 0; j < classes; ++j) sum += std::exp(z[j] - mx);
  return mx + std::log(sum) - z[cls];
}

}  // namespace

void matmul(const double* a, const double* b, double* c, int m, int k, int n) {
#pragma omp parallel for schedule(static)
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < n; ++j) c[static_cast<int64_t>(i) * n + j] = dot_stride(a + static_cast<int64_t>(i) * k, b + j, k, n);
  }
}

void matmul_nt(const double* a, const double* b, double* c, int m, int k, int n) {
#pragma omp parallel for schedule(static)
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < n; ++j) {
      double s = 0.0;
      const double* ai = a + static_cast<int64_t>(i) * k;
      const double* bj = b + static_cast<int64_t>(j) * k;
      for (int t = 0; t < k; ++t) s += ai[t] * bj[t];
      c[static_cast<int64_t>(i) * n + j] = s;
    }
  }
}

void matmul_tn(const double* a, const double* b, double* c, int m, int k, int n) {
#pragma omp parallel for schedule(static)
  for (int i = 0; i < k; ++i) {
    for (int j = 0; j < n; ++j) {
      double s = 0.0;
      for (int t = 0; t < m; ++t) s += a[static_cast<int64_t>(t) * k + i] * b[static_cast<int64_t>(t) * n + j];
      c[static_cast<int64_t>(i) * n + j] = s;
    }
  }
}

void relu(const double* x, double* y, int64_t n) {
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < n; ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;
}

void relu_grad_accum(const double* x, const double* dy, double* dx, int64_t n) {
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < n; ++i) {
    if (x[i] > 0.0) dx[i] += dy[i];
  }
}

void add(const double* a, const double* b, double* y, int64_t n) {
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < n; ++i) y[i] = a[i] + b[i];
}

void sub(const double* a, const double* b, double* y, int64_t n) {
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < n; ++i) y[i] = a[i] - b[i];
}

void mul(const double* a, const double* b, double* y, int64_t n) {
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < n; ++i) y[i] = a[i] * b[i];
}

void scale(const double* x, double c, double* y, int64_t n) {
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < n; ++i) y[i] = c * x[i];
}

void accum(const double* src, double* dst, int64_t n) {
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < n; ++i) dst[i] += src[i];
}

void scale_accum(const double* src, double c, double* dst, int64_t n) {
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < n; ++i) dst[i] += c * src[i];
}

void mul_accum(const double* a, const double* b, double* dst, int64_t n) {
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < n; ++i) dst[i] += a[i] * b[i];
}

void bias_rows(const double* x, const double* b, double* y, int m, int n) {
#pragma omp parallel for schedule(static)
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < n; ++j) y[static_cast<int64_t>(i) * n + j] = x[static_cast<int64_t>(i) * n + j] + b[j];
  }
}

void colsum_accum(const double* dy, double* db, int m, int n) {
  // one thread per column; rows accumulated in ascending order
#pragma omp parallel for schedule(static)
  for (int j = 0; j < n; ++j) {
    double s = 0.0;
    for (int i = 0; i < m; ++i) s += dy[static_cast<int64_t>(i) * n + j];
    db[j] += s;
  }
}

void bias_chw(const double* x, const double* b, double* y, int batch, int c, int hw) {
  int64_t total = static_cast<int64_t>(batch) * c * hw;
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < total; ++i) {
    int ch = static_cast<int>((i / hw) % c);
    y[i] = x[i] + b[ch];
  }
}

void chwsum_accum(const double* dy, double* db, int batch, int c, int hw) {
#pragma omp parallel for schedule(static)
  for (int ch = 0; ch < c; ++ch) {
    double s = 0.0;
    for (int bi = 0; bi < batch; ++bi) {
      const double* p = dy + (static_cast<int64_t>(bi) * c + ch) * hw;
      for (int i = 0; i < hw; ++i) s += p[i];
    }
    db[ch] += s;
  }
}

int conv_out_dim(int in, int kernel, int stride, int pad) {
  int out = (in + 2 * pad - kernel) / stride + 1;
  if (out <= 0) {
    throw std::invalid_argument("conv output dim <= 0 for input " + std::to_string(in) + ", kernel " +
                                std::to_string(kernel) + ", stride " + std::to_string(stride) +
                                ", pad " + std::to_string(pad));
  }
  return out;
}

void conv2d(const double* x, const double* w, double* y, int batch, int cin, int h, int win,
            int cout, int kernel, int stride, int pad) {
  int ho = conv_out_dim(h, kernel, stride, pad);
  int wo = conv_out_dim(win, kernel, stride, pad);
#pragma omp parallel for schedule(static)
  for (int bc = 0; bc < batch * cout; ++bc) {
    int b = bc / cout, co = bc % cout;
    for (int oy = 0; oy < ho; ++oy) {
      for (int ox = 0; ox < wo; ++ox) {
        double s = 0.0;
        for (int ci = 0; ci < cin; ++ci) {
          const double* xp = x + (static_cast<int64_t>(b) * cin + ci) * h * win;
          const double* wp = w + ((static_cast<int64_t>(co) * cin + ci) * kernel) * kernel;
          for (int ky = 0; ky < kernel; ++ky) {
            int iy = oy * stride - pad + ky;
            if (iy < 0 || iy >= h) continue;
            for (int kx = 0; kx < kernel; ++kx) {
              int ix = ox * stride - pad + kx;
              if (ix < 0 || ix >= win) continue;
              s += xp[iy * win + ix] * wp[ky * kernel + kx];
            }
          }
        }
        y[((static_cast<int64_t>(b) * cout + co) * ho + oy) * wo + ox] = s;
      }
    }
  }
}

void conv2d_grad_input_accum(const double* w, const double* dy, double* dx, int batch, int cin,
                             int h, int win, int cout, int kernel, int stride, int pad) {
  int ho = conv_out_dim(h, kernel, stride, pad);
  int wo = conv_out_dim(win, kernel, stride, pad);
#pragma omp parallel for schedule(static)
  for (int bc = 0; bc < batch * cin; ++bc) {
    int b = bc / cin, ci = bc % cin;
    double* dxp = dx + (static_cast<int64_t>(b) * cin + ci) * h * win;
    for (int iy = 0; iy < h; ++iy) {
      for (int ix = 0; ix < win; ++ix) {
        double s = 0.0;
        for (int co = 0; co < cout; ++co) {
          const double* wp = w + ((static_cast<int64_t>(co) * cin + ci) * kernel) * kernel;
          const double* dyp = dy + (static_cast<int64_t>(b) * cout + co) * ho * wo;
          for (int ky = 0; ky < kernel; ++ky) {
            int num = iy + pad - ky;
            if (num < 0 || num % stride != 0) continue;
            int oy = num / stride;
            if (oy >= ho) continue;
            for (int kx = 0; kx < kernel; ++kx) {
              int numx = ix + pad - kx;
              if (numx < 0 || numx % stride != 0) continue;
              int ox = numx / stride;
              if (ox >= wo) continue;
              s += wp[ky * kernel + kx] * dyp[oy * wo + ox];
            }
          }
        }
        dxp[iy * win + ix] += s;
      }
    }
  }
}

void conv2d_grad_weight_accum(const double* x, const double* dy, double* dw, int batch, int cin,
                              int h, int win, int cout, int kernel, int stride, int pad) {
  int ho = conv_out_dim(h, kernel, stride, pad);
  int wo = conv_out_dim(win, kernel, stride, pad);
  int64_t wcount = static_cast<int64_t>(cout) * cin * kernel * kernel;
  // one thread per weight element; batch and positions accumulated in fixed order
#pragma omp parallel for schedule(static)
  for (int64_t wi = 0; wi < wcount; ++wi) {
    int kx = static_cast<int>(wi % kernel);
    int ky = static_cast<int>((wi / kernel) % kernel);
    int ci = static_cast<int>((wi / (kernel * kernel)) % cin);
    int co = static_cast<int>(wi / (static_cast<int64_t>(kernel) * kernel * cin));
    double s = 0.0;
    for (int b = 0; b < batch; ++b) {
      const double* xp = x + (static_cast<int64_t>(b) * cin + ci) * h * win;
      const double* dyp = dy + (static_cast<int64_t>(b) * cout + co) * ho * wo;
      for (int oy = 0; oy < ho; ++oy) {
        int iy = oy * stride - pad + ky;
        if (iy < 0 || iy >= h) continue;
        for (int ox = 0; ox < wo; ++ox) {
          int ix = ox * stride - pad + kx;
          if (ix < 0 || ix >= win) continue;
          s += xp[iy * win + ix] * dyp[oy * wo + ox];
        }
      }
    }
    dw[wi] += s;
  }
}

void global_avg_pool(const double* x, double* y, int batch, int c, int hw) {
#pragma omp parallel for schedule(static)
  for (int i = 0; i < batch * c; ++i) {
    const double* p = x + static_cast<int64_t>(i) * hw;
    double s = 0.0;
    for (int j = 0; j < hw; ++j) s += p[j];
    y[i] = s / hw;
  }
}

void global_avg_pool_grad_accum(const double* dy, double* dx, int batch, int c, int hw) {
  int64_t total = static_cast<int64_t>(batch) * c * hw;
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < total; ++i) dx[i] += dy[i / hw] / hw;
}

void softmax_ce(const double* logits, const double* labels, double* loss, int m, int classes) {
#pragma omp parallel for schedule(static)
  for (int r = 0; r < m; ++r) loss[r] = ce_row(logits + static_cast<int64_t>(r) * classes, labels[r], classes);
}

void softmax_ce_grad_accum(const double* logits, const double* labels, const double* g,
                           double* dlogits, int m, int classes) {
#pragma omp parallel for schedule(static)
  for (int r = 0; r < m; ++r) {
    const double* z = logits + static_cast<int64_t>(r) * classes;
    double* dz = dlogits + static_cast<int64_t>(r) * classes;
    int cls = static_cast<int>(labels[r]);
    double mx = z[0];
    for (int j = 1; j < classes; ++j) mx = std::max(mx, z[j]);
    double sum = 0.0;
    for (int j = 0; j < classes; ++j) sum += std::exp(z[j] - mx);
    for (int j = 0; j < classes; ++j) {
      double p = std::exp(z[j] - mx) / sum;
      dz[j] += g[r] * (p - (j == cls ? 1.0 : 0.0));
    }
  }
}

void mse(const double* pred, const double* target, double* loss, int m, int dim) {
#pragma omp parallel for schedule(static)
  for (int r = 0; r < m; ++r) {
    const double* p = pred + static_cast<int64_t>(r) * dim;
    const double* t = target + static_cast<int64_t>(r) * dim;
    double s = 0.0;
    for (int d = 0; d < dim; ++d) {
      double e = p[d] - t[d];
      s += e * e;
    }
    loss[r] = 0.5 * s;
  }
}

void mse_grad_accum(const double* pred, const double* target, const double* g, double* dpred,
                    double* dtarget, int m, int dim) {
#pragma omp parallel for schedule(static)
  for (int r = 0; r < m; ++r) {
    for (int d = 0; d < dim; ++d) {
      int64_t i = static_cast<int64_t>(r) * dim + d;
      double e = pred[i] - target[i];
      dpred[i] += g[r] * e;
      dtarget[i] -= g[r] * e;
    }
  }
}

namespace serial {

void matmul(const double* a, const double* b, double* c, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < n; ++j) {
      double s = 0.0;
      for (int t = 0; t < k; ++t) s += a[static_cast<int64_t>(i) * k + t] * b[static_cast<int64_t>(t) * n + j];
      c[static_cast<int64_t>(i) * n + j] = s;
    }
  }
}

void matmul_nt(const double* a, const double* b, double* c, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < n; ++j) {
      double s = 0.0;
      for (int t = 0; t < k; ++t) s += a[static_cast<int64_t>(i) * k + t] * b[static_cast<int64_t>(j) * k + t];
      c[static_cast<int64_t>(i) * n + j] = s;
    }
  }
}

void matmul_tn(const double* a, const double* b, double* c, int m, int k, int n) {
  for (int i = 0; i < k; ++i) {
    for (int j = 0; j < n; ++j) {
      double s = 0.0;
      for (int t = 0; t < m; ++t) s += a[static_cast<int64_t>(t) * k + i] * b[static_cast<int64_t>(t) * n + j];
      c[static_cast<int64_t>(i) * n + j] = s;
    }
  }
}

void relu(const double* x, double* y, int64_t n) {
  for (int64_t i = 0; i < n; ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;
}

void relu_grad_accum(const double* x, const double* dy, double* dx, int64_t n) {
  for (int64_t i = 0; i < n; ++i) {
    if (x[i] > 0.0) dx[i] += dy[i];
  }
}

void conv2d(const double* x, const double* w, double* y, int batch, int cin, int h, int win,
            int cout, int kernel, int stride, int pad) {
  int ho = conv_out_dim(h, kernel, stride, pad);
  int wo = conv_out_dim(win, kernel, stride, pad);
  for (int b = 0; b < batch; ++b) {
    for (int co = 0; co < cout; ++co) {
      for (int oy = 0; oy < ho; ++oy) {
        for (int ox = 0; ox < wo; ++ox) {
          double s = 0.0;
          for (int ci = 0; ci < cin; ++ci) {
            for (int ky = 0; ky < kernel; ++ky) {
              int iy = oy * stride - pad + ky;
              if (iy < 0 || iy >= h) continue;
              for (int kx = 0; kx < kernel; ++kx) {
                int ix = ox * stride - pad + kx;
                if (ix < 0 || ix >= win) continue;
                s += x[((static_cast<int64_t>(b) * cin + ci) * h + iy) * win + ix] *
                     w[((static_cast<int64_t>(co) * cin + ci) * kernel + ky) * kernel + kx];
              }
            }
          }
          y[((static_cast<int64_t>(b) * cout + co) * ho + oy) * wo + ox] = s;
        }
      }
    }
  }
}

void conv2d_grad_input_accum(const double* w, const double* dy, double* dx, int batch, int cin,
                             int h, int win, int cout, int kernel, int stride, int pad) {
  int ho = conv_out_dim(h, kernel, stride, pad);
  int wo = conv_out_dim(win, kernel, stride, pad);
  for (int b = 0; b < batch; ++b) {
    for (int ci = 0; ci < cin; ++ci) {
      for (int iy = 0; iy < h; ++iy) {
        for (int ix = 0; ix < win; ++ix) {
          double s = 0.0;
          for (int co = 0; co < cout; ++co) {
            for (int ky = 0; ky < kernel; ++ky) {
              int num = iy + pad - ky;
              if (num < 0 || num % stride != 0) continue;
              int oy = num / stride;
              if (oy >= ho) continue;
              for (int kx = 0; kx < kernel; ++kx) {
                int numx = ix + pad - kx;
                if (numx < 0 || numx % stride != 0) continue;
                int ox = numx / stride;
                if (ox >= wo) continue;
                s += w[((static_cast<int64_t>(co) * cin + ci) * kernel + ky) * kernel + kx] *
                     dy[((static_cast<int64_t>(b) * cout + co) * ho + oy) * wo + ox];
              }
            }
          }
          dx[((static_cast<int64_t>(b) * cin + ci) * h + iy) * win + ix] += s;
        }
      }
    }
  }
}

void conv2d_grad_weight_accum(const double* x, const double* dy, double* dw, int batch, int cin,
                              int h, int win, int cout, int kernel, int stride, int pad) {
  int ho = conv_out_dim(h, kernel, stride, pad);
  int wo = conv_out_dim(win, kernel, stride, pad);
  for (int co = 0; co < cout; ++co) {
    for (int ci = 0; ci < cin; ++ci) {
      for (int ky = 0; ky < kernel; ++ky) {
        for (int kx = 0; kx < kernel; ++kx) {
          double s = 0.0;
          for (int b = 0; b < batch; ++b) {
            for (int oy = 0; oy < ho; ++oy) {
              int iy = oy * stride - pad + ky;
              if (iy < 0 || iy >= h) continue;
              for (int ox = 0; ox < wo; ++ox) {
                int ix = ox * stride - pad + kx;
                if (ix < 0 || ix >= win) continue;
                s += x[((static_cast<int64_t>(b) * cin + ci) * h + iy) * win + ix] *
                     dy[((static_cast<int64_t>(b) * cout + co) * ho + oy) * wo + ox];
              }
            }
          }
          dw[((static_cast<int64_t>(co) * cin + ci) * kernel + ky) * kernel + kx] += s;
        }
      }
    }
  }
}

void softmax_ce(const double* logits, const double* labels, double* loss, int m, int classes) {
  for (int r = 0; r < m; ++r) loss[r] = ce_row(logits + static_cast<int64_t>(r) * classes, labels[r], classes);
}

}  // namespace serial

}  // namespace prcl::kernels
