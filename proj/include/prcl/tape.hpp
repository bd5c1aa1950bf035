#pragma once

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "prcl/tensor.hpp"

namespace prcl {

enum class OpKind {
  kLeaf,
  kBoundary,  // identity; marks a noise-injection site
  kMatMul,
  kConv2d,
  kRelu,
  kAdd,
  kSub,
  kMul,
  kScale,
  kBiasRows,
  kBiasChannels,
  kGlobalAvgPool,
  kFlatten,
  kSoftmaxCrossEntropy,
  kMseLoss,
  kReduceSum,
};

const char* op_name(OpKind k);

struct Conv2dAttrs {
  int stride = 1;
  int pad = 0;
};

struct TapeNode {
  OpKind kind = OpKind::kLeaf;
  std::vector<int> inputs;
  Shape shape;        // output shape, inferred at build time
  std::string name;   // leaves: binding name
  Conv2dAttrs conv;
  double factor = 1.0;  // kScale
  int site = -1;        // kBoundary
};

// Records the primitives of one forward computation in topological order.
// Shapes are checked when a node is added, so a malformed graph fails at
// build time with the offending node named. A built graph is immutable;
// evaluations carry their own buffers, so one graph may serve many
// evaluations, including concurrently.
class TapeGraph {
 public:
  int add_leaf(const std::string& name, Shape shape);
  int add_boundary(int input, int site);
  int add_matmul(int a, int b);
  int add_conv2d(int x, int w, Conv2dAttrs attrs);
  int add_relu(int x);
  int add_add(int a, int b);
  int add_sub(int a, int b);
  int add_mul(int a, int b);
  int add_scale(int x, double factor);
  int add_bias_rows(int x, int b);
  int add_bias_channels(int x, int b);
  int add_global_avg_pool(int x);
  int add_flatten(int x);
  int add_softmax_cross_entropy(int logits, int labels);  // -> per-row loss [m]
  int add_mse_loss(int pred, int target);                 // -> per-row loss [m]
  int add_reduce_sum(int x);                              // -> scalar
  void set_loss(int node);

  int node_count() const { return static_cast<int>(nodes_.size()); }
  const TapeNode& node(int i) const { return nodes_[static_cast<size_t>(i)]; }
  int loss_node() const { return loss_; }
  // boundary node ids ordered by site index
  const std::vector<int>& boundary_nodes() const { return boundaries_; }

  // Called as a boundary value flows forward; may perturb it in place.
  using NoiseHook = std::function<void(int site, Tensor& value)>;

  struct Eval {
    std::vector<Tensor> values;
    double loss = 0.0;
    const TapeGraph* graph = nullptr;
  };

  // Runs the forward pass. All free leaves must be bound; shapes must match.
  Eval evaluate(const std::map<std::string, Tensor>& bindings, const NoiseHook& hook = {}) const;

  // Gradient of the scalar loss w.r.t. every node value, as a dense
  // node-aligned vector. Deterministic for a fixed graph and eval.
  std::vector<Tensor> backward(const Eval& eval) const;

 private:
  int push(TapeNode n);
  const Shape& shape_of(int id, const char* ctx) const;
  std::vector<TapeNode> nodes_;
  std::vector<int> boundaries_;
  int loss_ = -1;
};

}  // namespace prcl
