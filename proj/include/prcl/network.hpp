#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "prcl/dataset.hpp"
#include "prcl/tape.hpp"
#include "prcl/tensor.hpp"

namespace prcl {

enum class LayerKind { kDense, kConv, kRelu, kResidualBlock, kGlobalAvgPool, kFlatten };
enum class LossKind { kSoftmaxCrossEntropy, kMse };

struct LayerSpec {
  LayerKind kind;
  // dense: in/out features; conv: in/out channels; residual block: in = width,
  // out = hidden width of the bottleneck.
  int in = 0;
  int out = 0;
  int kernel = 0;
  int stride = 1;
  int pad = 0;
  bool bias = true;  // dense only; conv and residual blocks always carry biases

  bool has_params() const {
    return kind == LayerKind::kDense || kind == LayerKind::kConv || kind == LayerKind::kResidualBlock;
  }
};

struct NetworkSpec {
  Shape input_shape;  // per sample, no batch dimension
  std::vector<LayerSpec> layers;
  LossKind loss = LossKind::kSoftmaxCrossEntropy;
  double loss_scale = 1.0;  // per-sample loss weight, must be > 0
};

// Textual form: "input(1x8x8); conv(1,6,3,1,1); relu; gap; dense(6,10); ce".
// Layer tokens: dense(in,out[,nobias]), conv(cin,cout,k[,stride[,pad]]),
// relu, resblock(width,hidden), gap, flatten; loss tokens: ce, mse,
// optionally weighted as ce(scale) / mse(scale).
NetworkSpec parse_arch(const std::string& text);
std::string arch_str(const NetworkSpec& spec);
std::string layer_str(const LayerSpec& layer);

// A network is an immutable layer stack plus mutable parameter tensors.
// Layers are stored input to output; layer 0 touches the sample first.
// Noise/capture site s (0-based) is the tensor entering layer s; site
// layer_count() is the loss input.
struct Network {
  NetworkSpec spec;
  std::vector<std::vector<Tensor>> params;  // aligned with spec.layers

  int layer_count() const { return static_cast<int>(spec.layers.size()); }
  int site_count() const { return layer_count() + 1; }
  bool layer_has_params(int i) const { return spec.layers[static_cast<size_t>(i)].has_params(); }
  int64_t layer_param_count(int i) const;
  int64_t param_count() const;
  std::vector<double> flat_params() const;
  void set_flat_params(const std::vector<double>& v);
  // 1-based distance of a site from the loss (loss input is 1, the sample
  // is layer_count()+1); some numbering conventions count sites this way.
  int depth_from_loss(int site) const { return layer_count() + 1 - site; }
};

// He-style fan-in uniform init for weights, zeros for biases; deterministic in
// init_seed. Throws when consecutive layer shapes do not compose, naming the
// offending pair.
Network build_network(const NetworkSpec& spec, uint64_t init_seed);

// Per-sample shape entering `site` (site == layer_count() -> loss input shape).
Shape boundary_sample_shape(const NetworkSpec& spec, int site);

enum class Reduction { kMean, kSum };

// Tape graph evaluating the loss of one batch; one boundary node per site.
struct BatchGraph {
  TapeGraph graph;
  int input_node = -1;
  int label_node = -1;
  int per_sample_loss_node = -1;  // [m] losses before reduction
  std::vector<std::vector<int>> layer_param_nodes;
  int batch = 0;
  Reduction reduction = Reduction::kMean;
};

BatchGraph build_graph(const Network& net, int batch, Reduction reduction);
std::map<std::string, Tensor> graph_bindings(const Network& net, const Batch& batch);

struct ForwardCapture {
  double loss = 0.0;           // canonical mean per-sample loss (see below)
  std::vector<Tensor> inputs;  // captured batch tensor per site, 0..layer_count()
};

// Datasets with class labels feed a regression head as one-hot targets;
// anything else passes through unchanged. Every dataset-consuming entry
// point below applies this first.
Dataset adapt_labels(const Network& net, const Dataset& ds);

// Mean loss plus every captured boundary tensor, input to output. The mean is
// computed by summing per-sample losses in ascending value order, so it is
// bit-exactly invariant to batch reordering.
ForwardCapture forward_capture(const Network& net, const Dataset& batch);

// Canonical mean over per-sample losses of the whole dataset (chunked).
double mean_loss(const Network& net, const Dataset& data);

// Fraction of samples whose argmax logit matches the class label.
double accuracy(const Network& net, const Dataset& data);

enum class Optimizer { kSgd, kMomentum };

struct TrainOptions {
  Optimizer opt = Optimizer::kSgd;
  double lr = 0.05;
  int epochs = 100;
  double grad_norm_target = 1e-3;
  int batch_size = 32;
  double momentum = 0.9;
  uint64_t seed = 1;  // mini-batch shuffle seed
};

struct TrainResult {
  double final_loss = 0.0;       // canonical mean loss over the full dataset
  double final_grad_norm = 0.0;  // L2 norm of the dataset-summed gradient / param count
  int epochs_run = 0;
  uint64_t seed = 0;
  std::string dataset_id;
};

// Mini-batch descent; stops early once the dataset-summed gradient norm per
// parameter reaches grad_norm_target. Throws on divergence, naming the epoch.
TrainResult train(Network& net, const Dataset& data, const TrainOptions& opt);

// Dataset-summed parameter gradient, one flat vector per layer (empty for
// param-free layers); fixed chunk order keeps the result bit-reproducible.
std::vector<std::vector<double>> summed_param_gradients(const Network& net, const Dataset& data);

}  // namespace prcl
