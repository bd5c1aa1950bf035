#include "doctest.h"

#include <cmath>
#include <limits>
#include <stdexcept>

#include "prcl/rng.hpp"
#include "prcl/tensor.hpp"

using namespace prcl;

TEST_CASE("shape numel and printing") {
  CHECK(shape_numel({2, 3, 4}) == 24);
  CHECK(shape_numel({1}) == 1);
  CHECK(shape_str({2, 3}) == "[2,3]");
  CHECK_THROWS_AS(shape_numel({2, 0}), std::invalid_argument);
  CHECK_THROWS_AS(shape_numel({-1, 3}), std::invalid_argument);
}

TEST_CASE("tensor construction and accessors") {
  Tensor t = Tensor::zeros({2, 3});
  CHECK(t.numel() == 6);
  CHECK(t.rank() == 2);
  for (double v : t.data) CHECK(v == 0.0);

  Tensor f = Tensor::full({2, 2}, 1.5);
  CHECK(f.data[3] == 1.5);

  Tensor s = Tensor::scalar(4.25);
  CHECK(s.scalar_value() == 4.25);
  CHECK_THROWS_AS(f.scalar_value(), std::logic_error);

  CHECK_THROWS_AS(Tensor({2, 2}, {1.0, 2.0, 3.0}), std::invalid_argument);
}

TEST_CASE("from_external rejects non-finite values") {
  CHECK_THROWS_AS(Tensor::from_external({2}, {1.0, std::numeric_limits<double>::quiet_NaN()}),
                  std::invalid_argument);
  CHECK_THROWS_AS(Tensor::from_external({2}, {std::numeric_limits<double>::infinity(), 0.0}),
                  std::invalid_argument);
  Tensor ok = Tensor::from_external({2}, {1.0, -2.0});
  CHECK(ok.all_finite());
}

TEST_CASE("l2_norm and dot") {
  CHECK(l2_norm({3.0, 4.0}) == doctest::Approx(5.0));
  CHECK(l2_norm({}) == 0.0);
  CHECK(dot({1.0, 2.0}, {3.0, 4.0}) == doctest::Approx(11.0));
}

TEST_CASE("rng streams are deterministic and key-separated") {
  RngStream a(42, "noise", 0);
  RngStream b(42, "noise", 0);
  RngStream c(42, "noise", 1);
  for (int i = 0; i < 16; ++i) {
    uint64_t va = a.next_u64();
    CHECK(va == b.next_u64());
    CHECK(va != c.next_u64());
  }
}

TEST_CASE("rng uniform draws stay inside the requested interval") {
  RngStream s(7, "unit");
  for (int i = 0; i < 1000; ++i) {
    double u = s.next_unit();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
    double q = s.next_symmetric(1e-3);
    CHECK(std::abs(q) <= 1e-3);
  }
}

TEST_CASE("rng symmetric draws have near-zero mean") {
  RngStream s(11, "mean");
  double acc = 0.0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) acc += s.next_symmetric(1.0);
  CHECK(std::abs(acc / n) < 0.02);
}

TEST_CASE("rng sign is plus or minus one") {
  RngStream s(3, "sign");
  int pos = 0;
  for (int i = 0; i < 1000; ++i) {
    double v = s.next_sign();
    CHECK((v == 1.0 || v == -1.0));
    if (v > 0) ++pos;
  }
  CHECK(pos > 400);
  CHECK(pos < 600);
}
