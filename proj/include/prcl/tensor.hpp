#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace prcl {

// Shape extents. Row-major layout throughout.
using Shape = std::vector<int>;

int64_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

// Dense array of 64-bit floats. All arithmetic in the project runs on these;
// reduced precision is only ever *simulated* by noise or grid snapping.
struct Tensor {
  Shape shape;
  std::vector<double> data;
  bool requires_grad = false;

  Tensor() = default;
  explicit Tensor(Shape s);
  Tensor(Shape s, std::vector<double> d);

  static Tensor zeros(Shape s);
  static Tensor full(Shape s, double v);
  static Tensor scalar(double v);
  // Construction from untrusted input: rejects NaN/Inf.
  static Tensor from_external(Shape s, std::vector<double> d);

  int64_t numel() const { return static_cast<int64_t>(data.size()); }
  int rank() const { return static_cast<int>(shape.size()); }
  double scalar_value() const;
  bool all_finite() const;
};

bool same_shape(const Shape& a, const Shape& b);

double l2_norm(const std::vector<double>& v);
double dot(const std::vector<double>& a, const std::vector<double>& b);

}  // namespace prcl
