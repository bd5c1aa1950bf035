#pragma once

#include <functional>
#include <vector>

namespace prcl::fd {

using ScalarFn = std::function<double(const std::vector<double>&)>;
using GradFn = std::function<std::vector<double>(const std::vector<double>&)>;

inline constexpr double kDefaultGradStep = 1e-5;
inline constexpr double kDefaultHvpStep = 1e-4;

// Central difference (f(x+s*e_k) - f(x-s*e_k)) / (2s) per coordinate.
std::vector<double> finite_diff_grad(const ScalarFn& f, const std::vector<double>& x,
                                     double step = kDefaultGradStep);

// (grad(w+s*v) - grad(w-s*v)) / (2s); exact for quadratics up to rounding.
std::vector<double> hvp(const GradFn& grad, const std::vector<double>& w,
                        const std::vector<double>& v, double step = kDefaultHvpStep);

// Dense Hessian assembled column by column from finite_diff_grad; oracle use only.
std::vector<std::vector<double>> finite_diff_hessian(const ScalarFn& f, const std::vector<double>& x,
                                                     double step = kDefaultHvpStep);

}  // namespace prcl::fd
