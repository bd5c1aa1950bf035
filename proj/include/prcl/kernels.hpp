#pragma once

#include <cstdint>

// Dense compute kernels behind the tape. The default entry points are
// OpenMP-parallel; prcl::kernels::serial holds the plain-loop reference
// implementations used by the equivalence tests and the benchmark tool.
//
// Bit-reproducibility contract: a parallel kernel writes each output element
// from exactly one thread and accumulates it in the same order as the serial
// reference, so results are identical for any thread count.

namespace prcl::kernels {

// c[m,n] = a[m,k] * b[k,n]
void matmul(const double* a, const double* b, double* c, int m, int k, int n);
// c[m,n] = a[m,k] * b[n,k]^T
void matmul_nt(const double* a, const double* b, double* c, int m, int k, int n);
// c[k,n] = a[m,k]^T * b[m,n]
void matmul_tn(const double* a, const double* b, double* c, int m, int k, int n);

void relu(const double* x, double* y, int64_t n);
// dx += dy where x > 0 (derivative at exactly 0 is 0)
void relu_grad_accum(const double* x, const double* dy, double* dx, int64_t n);

void add(const double* a, const double* b, double* y, int64_t n);
void sub(const double* a, const double* b, double* y, int64_t n);
void mul(const double* a, const double* b, double* y, int64_t n);
void scale(const double* x, double c, double* y, int64_t n);
void accum(const double* src, double* dst, int64_t n);             // dst += src
void scale_accum(const double* src, double c, double* dst, int64_t n);  // dst += c*src
void mul_accum(const double* a, const double* b, double* dst, int64_t n);  // dst += a.*b

// y[m,n] = x[m,n] + b[n] per row
void bias_rows(const double* x, const double* b, double* y, int m, int n);
// db[j] += sum over rows of dy[:,j]
void colsum_accum(const double* dy, double* db, int m, int n);

// x[batch, c, h, w] layouts
void bias_chw(const double* x, const double* b, double* y, int batch, int c, int hw);
void chwsum_accum(const double* dy, double* db, int batch, int c, int hw);

int conv_out_dim(int in, int kernel, int stride, int pad);
void conv2d(const double* x, const double* w, double* y, int batch, int cin, int h, int win,
            int cout, int kernel, int stride, int pad);
void conv2d_grad_input_accum(const double* w, const double* dy, double* dx, int batch, int cin,
                             int h, int win, int cout, int kernel, int stride, int pad);
void conv2d_grad_weight_accum(const double* x, const double* dy, double* dw, int batch, int cin,
                              int h, int win, int cout, int kernel, int stride, int pad);

// y[b,c] = mean over h*w of x[b,c,:,:]
void global_avg_pool(const double* x, double* y, int batch, int c, int hw);
void global_avg_pool_grad_accum(const double* dy, double* dx, int batch, int c, int hw);

// Per-row softmax cross-entropy. labels[r] holds the class index as a double.
void softmax_ce(const double* logits, const double* labels, double* loss, int m, int classes);
// dlogits[r,:] += g[r] * (softmax(logits[r,:]) - onehot(labels[r]))
void softmax_ce_grad_accum(const double* logits, const double* labels, const double* g,
                           double* dlogits, int m, int classes);

// Per-row 0.5*||pred-target||^2.
void mse(const double* pred, const double* target, double* loss, int m, int dim);
void mse_grad_accum(const double* pred, const double* target, const double* g, double* dpred,
                    double* dtarget, int m, int dim);

namespace serial {
void matmul(const double* a, const double* b, double* c, int m, int k, int n);
void matmul_nt(const double* a, const double* b, double* c, int m, int k, int n);
void matmul_tn(const double* a, const double* b, double* c, int m, int k, int n);
void relu(const double* x, double* y, int64_t n);
void relu_grad_accum(const double* x, const double* dy, double* dx, int64_t n);
void conv2d(const double* x, const double* w, double* y, int batch, int cin, int h, int win,
            int cout, int kernel, int stride, int pad);
void conv2d_grad_input_accum(const double* w, const double* dy, double* dx, int batch, int cin,
                             int h, int win, int cout, int kernel, int stride, int pad);
void conv2d_grad_weight_accum(const double* x, const double* dy, double* dw, int batch, int cin,
                              int h, int win, int cout, int kernel, int stride, int pad);
void softmax_ce(const double* logits, const double* labels, double* loss, int m, int classes);
}  // namespace serial

}  // namespace prcl::kernels
