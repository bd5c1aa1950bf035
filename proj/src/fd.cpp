#include "prcl/fd.hpp"

#include <cmath>
#include <stdexcept>

namespace prcl::fd {

namespace {

double eval_checked(const ScalarFn& f, const std::vector<double>& x) {
  double v = f(x);
  if (!std::isfinite(v)) throw std::runtime_error("finite_diff: function value is not finite");
  return v;
}

}  // namespace

std::vector<double> finite_diff_grad(const ScalarFn& f, const std::vector<double>& x, double step) {
  if (!(step > 0)) throw std::invalid_argument("finite_diff_grad: step must be positive");
  std::vector<double> g(x.size());
  std::vector<double> p = x;
  for (size_t k = 0; k < x.size(); ++k) {
    p[k] = x[k] + step;
    double hi = eval_checked(f, p);
    p[k] = x[k] - step;
    double lo = eval_checked(f, p);
    p[k] = x[k];
    g[k] = (hi - lo) / (2.0 * step);
  }
  return g;
}

std::vector<double> hvp(const GradFn& grad, const std::vector<double>& w,
                        const std::vector<double>& v, double step) {
  if (w.size() != v.size()) {
    throw std::invalid_argument("hvp: direction has dimension " + std::to_string(v.size()) +
                                ", expected " + std::to_string(w.size()));
  }
  if (!(step > 0)) throw std::invalid_argument("hvp: step must be positive");
  std::vector<double> p(w.size());
  for (size_t k = 0; k < w.size(); ++k) p[k] = w[k] + step * v[k];
  std::vector<double> hi = grad(p);
  for (size_t k = 0; k < w.size(); ++k) p[k] = w[k] - step * v[k];
  std::vector<double> lo = grad(p);
  if (hi.size() != w.size() || lo.size() != w.size()) {
    throw std::runtime_error("hvp: gradient function returned wrong dimension");
  }
  std::vector<double> out(w.size());
  for (size_t k = 0; k < w.size(); ++k) out[k] = (hi[k] - lo[k]) / (2.0 * step);
  return out;
}

std::vector<std::vector<double>> finite_diff_hessian(const ScalarFn& f, const std::vector<double>& x,
                                                     double step) {
  GradFn g = [&f, step](const std::vector<double>& p) { return finite_diff_grad(f, p, step); };
  std::vector<std::vector<double>> h(x.size());
  std::vector<double> e(x.size(), 0.0);
  for (size_t k = 0; k < x.size(); ++k) {
    e[k] = 1.0;
    h[k] = hvp(g, x, e, step);
    e[k] = 0.0;
  }
  return h;
}

}  // namespace prcl::fd
