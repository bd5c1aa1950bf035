#include "doctest.h"

#include <cmath>
#include <map>
#include <stdexcept>
#include <vector>

#include "prcl/fd.hpp"
#include "prcl/rng.hpp"
#include "prcl/tape.hpp"
#include "prcl/tensor.hpp"

using namespace prcl;

namespace {

double rel_err(double got, double want) {
  double denom = std::max(std::abs(want), 1e-8);
  return std::abs(got - want) / denom;
}

// Random values kept away from zero so no ReLU kink sits within the FD step.
Tensor random_tensor(RngStream& s, const Shape& shape, double margin = 0.05) {
  Tensor t(shape);
  for (double& v : t.data) {
    do {
      v = s.next_uniform(-1.0, 1.0);
    } while (std::abs(v) < margin);
  }
  return t;
}

}  // namespace

TEST_CASE("scalar chain loss and both gradient families") {
  // loss = 1/2 (w*x - t)^2 at w=2, x=1, t=0.
  TapeGraph g;
  int x = g.add_leaf("x", {1, 1});
  int w = g.add_leaf("w", {1, 1});
  int t = g.add_leaf("t", {1, 1});
  int xb = g.add_boundary(x, 0);
  int z = g.add_matmul(xb, w);
  int l = g.add_mse_loss(z, t);
  int sum = g.add_reduce_sum(l);
  g.set_loss(sum);

  std::map<std::string, Tensor> binds;
  binds.emplace("x", Tensor::from_external({1, 1}, {1.0}));
  binds.emplace("w", Tensor::from_external({1, 1}, {2.0}));
  binds.emplace("t", Tensor::from_external({1, 1}, {0.0}));

  auto ev = g.evaluate(binds);
  CHECK(ev.loss == doctest::Approx(2.0).epsilon(1e-15));

  auto grads = g.backward(ev);
  CHECK(grads[static_cast<size_t>(w)].data[0] == doctest::Approx(2.0).epsilon(1e-12));
  CHECK(grads[static_cast<size_t>(x)].data[0] == doctest::Approx(4.0).epsilon(1e-12));
  CHECK(grads[static_cast<size_t>(xb)].data[0] == doctest::Approx(4.0).epsilon(1e-12));
}

TEST_CASE("identity graph returns the bound scalar") {
  TapeGraph g;
  int x = g.add_leaf("x", {1});
  int s = g.add_reduce_sum(x);
  g.set_loss(s);
  std::map<std::string, Tensor> binds;
  binds.emplace("x", Tensor::scalar(3.5));
  CHECK(g.evaluate(binds).loss == 3.5);
}

TEST_CASE("uniform softmax cross entropy is ln 2") {
  TapeGraph g;
  int z = g.add_leaf("z", {1, 2});
  int y = g.add_leaf("y", {1});
  int l = g.add_softmax_cross_entropy(z, y);
  int s = g.add_reduce_sum(l);
  g.set_loss(s);
  std::map<std::string, Tensor> binds;
  binds.emplace("z", Tensor::from_external({1, 2}, {0.0, 0.0}));
  binds.emplace("y", Tensor::from_external({1}, {0.0}));
  CHECK(g.evaluate(binds).loss == doctest::Approx(std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("constant graph has zero gradients") {
  TapeGraph g;
  int x = g.add_leaf("x", {3});
  int t = g.add_leaf("t", {3});
  int d = g.add_sub(t, t);  // zero regardless of t
  int m = g.add_mul(x, d);
  int s = g.add_reduce_sum(m);
  g.set_loss(s);
  std::map<std::string, Tensor> binds;
  binds.emplace("x", Tensor::from_external({3}, {1.0, 2.0, 3.0}));
  binds.emplace("t", Tensor::from_external({3}, {4.0, 5.0, 6.0}));
  auto ev = g.evaluate(binds);
  CHECK(ev.loss == 0.0);
  auto grads = g.backward(ev);
  for (double v : grads[static_cast<size_t>(x)].data) CHECK(v == 0.0);
}

TEST_CASE("shape errors name the offending node") {
  TapeGraph g;
  int a = g.add_leaf("a", {2, 3});
  int b = g.add_leaf("b", {2, 3});
  try {
    g.add_matmul(a, b);
    FAIL("expected shape error");
  } catch (const std::invalid_argument& e) {
    std::string msg = e.what();
    CHECK(msg.find("node 2") != std::string::npos);
    CHECK(msg.find("matmul") != std::string::npos);
  }
}

TEST_CASE("missing binding and non-scalar sink are rejected") {
  TapeGraph g;
  int a = g.add_leaf("a", {2, 2});
  CHECK_THROWS_AS(g.set_loss(a), std::invalid_argument);
  int s = g.add_reduce_sum(a);
  g.set_loss(s);
  std::map<std::string, Tensor> binds;
  CHECK_THROWS_AS(g.evaluate(binds), std::invalid_argument);
}

TEST_CASE("backward requires a matching evaluation") {
  TapeGraph g;
  int a = g.add_leaf("a", {2});
  int s = g.add_reduce_sum(a);
  g.set_loss(s);
  TapeGraph::Eval empty;
  CHECK_THROWS_AS(g.backward(empty), std::logic_error);
}

TEST_CASE("re-evaluation is bit-identical") {
  RngStream rs(31, "det");
  TapeGraph g;
  int x = g.add_leaf("x", {4, 6});
  int w = g.add_leaf("w", {6, 3});
  int z = g.add_matmul(x, w);
  int r = g.add_relu(z);
  int s = g.add_reduce_sum(r);
  g.set_loss(s);
  std::map<std::string, Tensor> binds;
  binds.emplace("x", random_tensor(rs, {4, 6}));
  binds.emplace("w", random_tensor(rs, {6, 3}));
  auto e1 = g.evaluate(binds);
  auto e2 = g.evaluate(binds);
  CHECK(e1.loss == e2.loss);
  auto g1 = g.backward(e1);
  auto g2 = g.backward(e2);
  for (size_t i = 0; i < g1.size(); ++i) CHECK(g1[i].data == g2[i].data);
}

namespace {

// Loss as a function of one leaf's flat values, all other bindings fixed.
double loss_at(const TapeGraph& g, std::map<std::string, Tensor> binds, const std::string& leaf,
               const std::vector<double>& v) {
  binds.at(leaf).data = v;
  return g.evaluate(binds).loss;
}

void check_leaf_gradient(const TapeGraph& g, const std::map<std::string, Tensor>& binds,
                         const std::string& leaf, int leaf_node, double tol = 1e-5) {
  auto ev = g.evaluate(binds);
  auto grads = g.backward(ev);
  const std::vector<double>& got = grads[static_cast<size_t>(leaf_node)].data;
  auto f = [&](const std::vector<double>& v) { return loss_at(g, binds, leaf, v); };
  std::vector<double> want = fd::finite_diff_grad(f, binds.at(leaf).data);
  REQUIRE(got.size() == want.size());
  for (size_t i = 0; i < got.size(); ++i) {
    if (std::abs(want[i]) < 1e-7) {
      CHECK(std::abs(got[i] - want[i]) < 1e-6);
    } else {
      CHECK(rel_err(got[i], want[i]) <= tol);
    }
  }
}

}  // namespace

TEST_CASE("finite_diff_grad oracle sanity") {
  auto half_norm = [](const std::vector<double>& x) {
    double s = 0.0;
    for (double v : x) s += v * v;
    return 0.5 * s;
  };
  auto g = fd::finite_diff_grad(half_norm, {1.0, 2.0}, 1e-5);
  CHECK(g[0] == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(g[1] == doctest::Approx(2.0).epsilon(1e-9));

  auto constant = [](const std::vector<double>&) { return 4.0; };
  auto gz = fd::finite_diff_grad(constant, {1.0, 2.0, 3.0});
  for (double v : gz) CHECK(v == 0.0);

  auto prod = [](const std::vector<double>& x) { return x[0] * x[1]; };
  auto gp = fd::finite_diff_grad(prod, {3.0, 4.0});
  CHECK(gp[0] == doctest::Approx(4.0).epsilon(1e-9));
  CHECK(gp[1] == doctest::Approx(3.0).epsilon(1e-9));

  auto bad = [](const std::vector<double>&) { return std::nan(""); };
  CHECK_THROWS_AS(fd::finite_diff_grad(bad, {1.0}), std::runtime_error);
  CHECK_THROWS_AS(fd::finite_diff_grad(prod, {1.0, 2.0}, 0.0), std::invalid_argument);
}

TEST_CASE("every primitive matches central differences over random inputs") {
  RngStream rs(77, "fdcheck");
  // 50 random shape/input draws spread across the primitive set.
  for (int iter = 0; iter < 50; ++iter) {
    int m = 1 + static_cast<int>(rs.next_below(3));
    int k = 1 + static_cast<int>(rs.next_below(4));
    int n = 1 + static_cast<int>(rs.next_below(3));
    int kind = iter % 5;
    TapeGraph g;
    std::map<std::string, Tensor> binds;
    int probe = -1;
    if (kind == 0) {
      // matmul + bias_rows + relu + mse
      int x = g.add_leaf("x", {m, k});
      int w = g.add_leaf("w", {k, n});
      int b = g.add_leaf("b", {n});
      int t = g.add_leaf("t", {m, n});
      int h = g.add_relu(g.add_bias_rows(g.add_matmul(x, w), b));
      g.set_loss(g.add_reduce_sum(g.add_mse_loss(h, t)));
      binds.emplace("x", random_tensor(rs, {m, k}));
      binds.emplace("w", random_tensor(rs, {k, n}));
      binds.emplace("b", random_tensor(rs, {n}));
      binds.emplace("t", random_tensor(rs, {m, n}));
      probe = (iter / 5) % 2 ? x : w;
      check_leaf_gradient(g, binds, (iter / 5) % 2 ? "x" : "w", probe);
    } else if (kind == 1) {
      // elementwise add/sub/mul chain
      int a = g.add_leaf("a", {m, k});
      int b = g.add_leaf("b", {m, k});
      int c = g.add_leaf("c", {m, k});
      int z = g.add_mul(g.add_add(a, b), g.add_sub(a, c));
      g.set_loss(g.add_reduce_sum(z));
      binds.emplace("a", random_tensor(rs, {m, k}));
      binds.emplace("b", random_tensor(rs, {m, k}));
      binds.emplace("c", random_tensor(rs, {m, k}));
      probe = a;
      check_leaf_gradient(g, binds, "a", probe);
    } else if (kind == 2) {
      // conv2d + bias_channels + relu + global_avg_pool
      int h = 3 + static_cast<int>(rs.next_below(3));
      int x = g.add_leaf("x", {m, k, h, h});
      int w = g.add_leaf("w", {n, k, 3, 3});
      int b = g.add_leaf("b", {n});
      int conv = g.add_conv2d(x, w, {1, 1});
      int act = g.add_relu(g.add_bias_channels(conv, b));
      int pooled = g.add_global_avg_pool(act);
      g.set_loss(g.add_reduce_sum(pooled));
      binds.emplace("x", random_tensor(rs, {m, k, h, h}));
      binds.emplace("w", random_tensor(rs, {n, k, 3, 3}));
      binds.emplace("b", random_tensor(rs, {n}));
      check_leaf_gradient(g, binds, (iter / 5) % 2 ? "x" : "w", (iter / 5) % 2 ? x : w);
    } else if (kind == 3) {
      // softmax cross entropy with scale
      int classes = 2 + static_cast<int>(rs.next_below(4));
      int z = g.add_leaf("z", {m, classes});
      int y = g.add_leaf("y", {m});
      int sc = g.add_scale(z, 1.7);
      int l = g.add_softmax_cross_entropy(sc, y);
      g.set_loss(g.add_scale(g.add_reduce_sum(l), 1.0 / m));
      binds.emplace("z", random_tensor(rs, {m, classes}));
      Tensor labels({m});
      for (int r = 0; r < m; ++r) labels.data[static_cast<size_t>(r)] = static_cast<double>(rs.next_below(static_cast<uint64_t>(classes)));
      binds.emplace("y", labels);
      check_leaf_gradient(g, binds, "z", z);
    } else {
      // flatten + matmul through a boundary
      int x = g.add_leaf("x", {m, k, 2, 2});
      int w = g.add_leaf("w", {4 * k, n});
      int fb = g.add_boundary(g.add_flatten(x), 0);
      int z = g.add_matmul(fb, w);
      g.set_loss(g.add_reduce_sum(g.add_relu(z)));
      binds.emplace("x", random_tensor(rs, {m, k, 2, 2}));
      binds.emplace("w", random_tensor(rs, {4 * k, n}));
      check_leaf_gradient(g, binds, "x", x);
    }
  }
}

namespace {

struct DenseNet3 {
  TapeGraph g;
  std::vector<int> leaves;
  std::vector<Shape> shapes;
  std::map<std::string, Tensor> base;

  DenseNet3(RngStream& rs, int in, int h1, int h2, int out) {
    int x = g.add_leaf("x", {2, in});
    int w0 = g.add_leaf("w0", {in, h1});
    int b0 = g.add_leaf("b0", {h1});
    int w1 = g.add_leaf("w1", {h1, h2});
    int b1 = g.add_leaf("b1", {h2});
    int w2 = g.add_leaf("w2", {h2, out});
    int b2 = g.add_leaf("b2", {out});
    int t = g.add_leaf("t", {2, out});
    int a0 = g.add_relu(g.add_bias_rows(g.add_matmul(g.add_boundary(x, 0), w0), b0));
    int a1 = g.add_relu(g.add_bias_rows(g.add_matmul(g.add_boundary(a0, 1), w1), b1));
    int z = g.add_bias_rows(g.add_matmul(g.add_boundary(a1, 2), w2), b2);
    g.set_loss(g.add_reduce_sum(g.add_mse_loss(z, t)));
    leaves = {w0, b0, w1, b1, w2, b2};
    for (int id : leaves) shapes.push_back(g.node(id).shape);
    base.emplace("x", random_tensor(rs, {2, in}));
    base.emplace("t", random_tensor(rs, {2, out}));
    base.emplace("w0", random_tensor(rs, {in, h1}));
    base.emplace("b0", random_tensor(rs, {h1}));
    base.emplace("w1", random_tensor(rs, {h1, h2}));
    base.emplace("b1", random_tensor(rs, {h2}));
    base.emplace("w2", random_tensor(rs, {h2, out}));
    base.emplace("b2", random_tensor(rs, {out}));
  }

  static const char* names(int i) {
    static const char* kNames[] = {"w0", "b0", "w1", "b1", "w2", "b2"};
    return kNames[i];
  }

  std::map<std::string, Tensor> bind(const std::vector<double>& flat) const {
    std::map<std::string, Tensor> out = base;
    size_t pos = 0;
    for (size_t i = 0; i < leaves.size(); ++i) {
      Tensor& t = out.at(names(static_cast<int>(i)));
      for (size_t j = 0; j < t.data.size(); ++j) t.data[j] = flat[pos++];
    }
    return out;
  }

  std::vector<double> flat_params() const {
    std::vector<double> out;
    for (size_t i = 0; i < leaves.size(); ++i) {
      const Tensor& t = base.at(names(static_cast<int>(i)));
      out.insert(out.end(), t.data.begin(), t.data.end());
    }
    return out;
  }

  double loss(const std::vector<double>& flat) const { return g.evaluate(bind(flat)).loss; }

  std::vector<double> grad(const std::vector<double>& flat) const {
    auto binds = bind(flat);
    auto ev = g.evaluate(binds);
    auto grads = g.backward(ev);
    std::vector<double> out;
    for (int id : leaves) {
      const Tensor& t = grads[static_cast<size_t>(id)];
      out.insert(out.end(), t.data.begin(), t.data.end());
    }
    return out;
  }
};

}  // namespace

TEST_CASE("three-layer dense net gradient matches the finite-difference oracle") {
  RngStream rs(404, "net3");
  DenseNet3 net(rs, 3, 5, 4, 2);
  std::vector<double> w = net.flat_params();
  std::vector<double> got = net.grad(w);
  auto f = [&](const std::vector<double>& p) { return net.loss(p); };
  std::vector<double> want = fd::finite_diff_grad(f, w);
  REQUIRE(got.size() == want.size());
  for (size_t i = 0; i < got.size(); ++i) {
    if (std::abs(want[i]) < 1e-7) {
      CHECK(std::abs(got[i] - want[i]) < 1e-6);
    } else {
      CHECK(rel_err(got[i], want[i]) <= 1e-5);
    }
  }
}

TEST_CASE("backward is linear in the loss scale") {
  RngStream rs(505, "linear");
  TapeGraph g;
  int x = g.add_leaf("x", {3, 3});
  int w = g.add_leaf("w", {3, 3});
  int z = g.add_relu(g.add_matmul(x, w));
  int base = g.add_reduce_sum(z);
  g.set_loss(base);
  std::map<std::string, Tensor> binds;
  binds.emplace("x", random_tensor(rs, {3, 3}));
  binds.emplace("w", random_tensor(rs, {3, 3}));
  auto ev1 = g.evaluate(binds);
  auto g1 = g.backward(ev1);

  TapeGraph g2;
  int x2 = g2.add_leaf("x", {3, 3});
  int w2 = g2.add_leaf("w", {3, 3});
  int z2 = g2.add_relu(g2.add_matmul(x2, w2));
  int scaled = g2.add_scale(g2.add_reduce_sum(z2), 3.0);
  g2.set_loss(scaled);
  auto ev2 = g2.evaluate(binds);
  auto gg = g2.backward(ev2);
  for (size_t i = 0; i < g1[static_cast<size_t>(x)].data.size(); ++i) {
    CHECK(gg[static_cast<size_t>(x2)].data[i] == doctest::Approx(3.0 * g1[static_cast<size_t>(x)].data[i]).epsilon(1e-14));
  }
}

TEST_CASE("hvp identities on simple quadratics") {
  auto grad_half_norm = [](const std::vector<double>& w) { return w; };
  std::vector<double> v{0.3, -0.7, 2.0};
  auto hv = fd::hvp(grad_half_norm, {1.0, 1.0, 1.0}, v, 1e-4);
  for (size_t i = 0; i < v.size(); ++i) CHECK(hv[i] == doctest::Approx(v[i]).epsilon(1e-9));

  auto grad_diag = [](const std::vector<double>& w) {
    return std::vector<double>{1.0 * w[0], 2.0 * w[1], 3.0 * w[2]};
  };
  auto hv2 = fd::hvp(grad_diag, {0.5, 0.5, 0.5}, {1.0, 1.0, 1.0}, 1e-4);
  CHECK(hv2[0] == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(hv2[1] == doctest::Approx(2.0).epsilon(1e-9));
  CHECK(hv2[2] == doctest::Approx(3.0).epsilon(1e-9));

  CHECK_THROWS_AS(fd::hvp(grad_half_norm, {1.0, 2.0}, {1.0}, 1e-4), std::invalid_argument);
}

TEST_CASE("hvp columns assemble the finite-difference Hessian on a small net") {
  RngStream rs(606, "hess");
  DenseNet3 net(rs, 2, 3, 3, 2);  // 6+3+9+3+6+2 = 29 params
  std::vector<double> w = net.flat_params();
  REQUIRE(w.size() <= 200);
  auto gradfn = [&](const std::vector<double>& p) { return net.grad(p); };
  auto f = [&](const std::vector<double>& p) { return net.loss(p); };
  auto href = fd::finite_diff_hessian(f, w, 1e-4);
  std::vector<double> e(w.size(), 0.0);
  for (size_t k = 0; k < w.size(); ++k) {
    e[k] = 1.0;
    auto col = fd::hvp(gradfn, w, e, 1e-4);
    e[k] = 0.0;
    for (size_t j = 0; j < w.size(); ++j) {
      CHECK(std::abs(col[j] - href[k][j]) < 1e-4);
    }
  }
}

TEST_CASE("hvp is symmetric as a bilinear form") {
  RngStream rs(707, "sym");
  DenseNet3 net(rs, 2, 4, 3, 2);
  std::vector<double> w = net.flat_params();
  auto gradfn = [&](const std::vector<double>& p) { return net.grad(p); };
  std::vector<double> u(w.size()), v(w.size());
  for (double& x : u) x = rs.next_uniform(-1.0, 1.0);
  for (double& x : v) x = rs.next_uniform(-1.0, 1.0);
  auto hu = fd::hvp(gradfn, w, u, 1e-4);
  auto hv = fd::hvp(gradfn, w, v, 1e-4);
  CHECK(std::abs(dot(u, hv) - dot(v, hu)) < 1e-6);
}

TEST_CASE("noise hook fires at boundaries with site ids") {
  TapeGraph g;
  int x = g.add_leaf("x", {2, 2});
  int w = g.add_leaf("w", {2, 2});
  int b0 = g.add_boundary(x, 0);
  int z = g.add_matmul(b0, w);
  int b1 = g.add_boundary(z, 1);
  g.set_loss(g.add_reduce_sum(b1));
  CHECK(g.boundary_nodes().size() == 2);

  std::map<std::string, Tensor> binds;
  binds.emplace("x", Tensor::full({2, 2}, 1.0));
  binds.emplace("w", Tensor::full({2, 2}, 1.0));
  std::vector<int> sites_seen;
  auto hook = [&](int site, Tensor& value) {
    sites_seen.push_back(site);
    if (site == 1) {
      for (double& v : value.data) v += 0.5;
    }
  };
  auto ev = g.evaluate(binds, hook);
  CHECK(sites_seen == std::vector<int>{0, 1});
  CHECK(ev.loss == doctest::Approx(4 * 2.5).epsilon(1e-15));
  // Without the hook the loss is the clean value.
  CHECK(g.evaluate(binds).loss == doctest::Approx(8.0).epsilon(1e-15));
}
