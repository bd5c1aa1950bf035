#include "prcl/network.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "prcl/kernels.hpp"
#include "prcl/rng.hpp"

namespace prcl {

namespace {

constexpr int kEvalChunk = 256;

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\n");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\n");
  return s.substr(a, b - a + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == sep) {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

int parse_int(const std::string& s, const std::string& ctx) {
  try {
    size_t pos = 0;
    int v = std::stoi(s, &pos);
    if (pos != s.size()) throw std::invalid_argument("trailing");
    return v;
  } catch (const std::exception&) {
    throw std::invalid_argument("parse_arch: bad integer '" + s + "' in " + ctx);
  }
}

// "name" or "name(a,b,...)" -> (name, args)
std::pair<std::string, std::vector<std::string>> parse_call(const std::string& token) {
  size_t open = token.find('(');
  if (open == std::string::npos) return {token, {}};
  if (token.back() != ')') throw std::invalid_argument("parse_arch: unbalanced parentheses in '" + token + "'");
  std::string name = token.substr(0, open);
  std::string inner = token.substr(open + 1, token.size() - open - 2);
  std::vector<std::string> args;
  if (!trim(inner).empty()) {
    for (const std::string& a : split(inner, ',')) args.push_back(trim(a));
  }
  return {name, args};
}

}  // namespace

NetworkSpec parse_arch(const std::string& text) {
  NetworkSpec spec;
  bool have_input = false;
  for (const std::string& raw : split(text, ';')) {
    std::string token = trim(raw);
    if (token.empty()) continue;
    auto [name, args] = parse_call(token);
    if (name == "input") {
      if (args.size() != 1) throw std::invalid_argument("parse_arch: input wants one extent list, e.g. input(2) or input(1x8x8)");
      spec.input_shape.clear();
      for (const std::string& d : split(args[0], 'x')) spec.input_shape.push_back(parse_int(trim(d), token));
      have_input = true;
    } else if (name == "dense") {
      if (args.size() < 2 || args.size() > 3) throw std::invalid_argument("parse_arch: dense wants (in,out[,nobias])");
      LayerSpec l;
      l.kind = LayerKind::kDense;
      l.in = parse_int(args[0], token);
      l.out = parse_int(args[1], token);
      if (args.size() == 3) {
        if (args[2] != "nobias") throw std::invalid_argument("parse_arch: dense third arg must be 'nobias'");
        l.bias = false;
      }
      spec.layers.push_back(l);
    } else if (name == "conv") {
      if (args.size() < 3 || args.size() > 5) throw std::invalid_argument("parse_arch: conv wants (cin,cout,k[,stride[,pad]])");
      LayerSpec l;
      l.kind = LayerKind::kConv;
      l.in = parse_int(args[0], token);
      l.out = parse_int(args[1], token);
      l.kernel = parse_int(args[2], token);
      l.stride = args.size() > 3 ? parse_int(args[3], token) : 1;
      l.pad = args.size() > 4 ? parse_int(args[4], token) : 0;
      spec.layers.push_back(l);
    } else if (name == "resblock") {
      if (args.size() != 2) throw std::invalid_argument("parse_arch: resblock wants (width,hidden)");
      LayerSpec l;
      l.kind = LayerKind::kResidualBlock;
      l.in = parse_int(args[0], token);
      l.out = parse_int(args[1], token);
      spec.layers.push_back(l);
    } else if (name == "relu") {
      spec.layers.push_back({LayerKind::kRelu});
    } else if (name == "gap") {
      spec.layers.push_back({LayerKind::kGlobalAvgPool});
    } else if (name == "flatten") {
      spec.layers.push_back({LayerKind::kFlatten});
    } else if (name == "ce" || name == "mse") {
      spec.loss = name == "ce" ? LossKind::kSoftmaxCrossEntropy : LossKind::kMse;
      if (args.size() > 1) throw std::invalid_argument("parse_arch: " + name + " wants at most one scale arg");
      if (args.size() == 1) {
        try {
          size_t pos = 0;
          spec.loss_scale = std::stod(args[0], &pos);
          if (pos != args[0].size()) throw std::invalid_argument("trailing");
        } catch (const std::exception&) {
          throw std::invalid_argument("parse_arch: bad loss scale '" + args[0] + "'");
        }
        if (!(spec.loss_scale > 0) || !std::isfinite(spec.loss_scale)) {
          throw std::invalid_argument("parse_arch: loss scale must be finite and > 0");
        }
      }
    } else {
      throw std::invalid_argument("parse_arch: unknown token '" + token + "'");
    }
  }
  if (!have_input) throw std::invalid_argument("parse_arch: missing input(...) declaration");
  if (spec.layers.empty()) throw std::invalid_argument("parse_arch: no layers");
  return spec;
}

std::string layer_str(const LayerSpec& l) {
  std::ostringstream os;
  switch (l.kind) {
    case LayerKind::kDense:
      os << "dense(" << l.in << "," << l.out;
      if (!l.bias) os << ",nobias";
      os << ")";
      break;
    case LayerKind::kConv:
      os << "conv(" << l.in << "," << l.out << "," << l.kernel << "," << l.stride << "," << l.pad << ")";
      break;
    case LayerKind::kResidualBlock: os << "resblock(" << l.in << "," << l.out << ")"; break;
    case LayerKind::kRelu: os << "relu"; break;
    case LayerKind::kGlobalAvgPool: os << "gap"; break;
    case LayerKind::kFlatten: os << "flatten"; break;
  }
  return os.str();
}

std::string arch_str(const NetworkSpec& spec) {
  std::ostringstream os;
  os << "input(";
  for (size_t i = 0; i < spec.input_shape.size(); ++i) {
    if (i) os << "x";
    os << spec.input_shape[i];
  }
  os << ")";
  for (const LayerSpec& l : spec.layers) os << "; " << layer_str(l);
  os << "; " << (spec.loss == LossKind::kSoftmaxCrossEntropy ? "ce" : "mse");
  if (spec.loss_scale != 1.0) {
    os << "(" << std::setprecision(17) << spec.loss_scale << ")";
  }
  return os.str();
}

namespace {

// Per-sample output shape of one layer, throwing when shapes do not compose.
Shape apply_layer(const LayerSpec& l, const Shape& in, int index) {
  auto fail = [&](const std::string& why) {
    throw std::invalid_argument("layer " + std::to_string(index) + " (" + layer_str(l) +
                                ") cannot consume shape " + shape_str(in) + ": " + why);
  };
  switch (l.kind) {
    case LayerKind::kDense:
      if (in.size() != 1 || in[0] != l.in) fail("expects [" + std::to_string(l.in) + "]");
      return {l.out};
    case LayerKind::kConv: {
      if (in.size() != 3 || in[0] != l.in) fail("expects [" + std::to_string(l.in) + ",h,w]");
      int ho = kernels::conv_out_dim(in[1], l.kernel, l.stride, l.pad);
      int wo = kernels::conv_out_dim(in[2], l.kernel, l.stride, l.pad);
      if (ho < 1 || wo < 1) fail("kernel/stride/pad leave no output pixels");
      return {l.out, ho, wo};
    }
    case LayerKind::kResidualBlock:
      if (in.size() != 1 || in[0] != l.in) fail("expects [" + std::to_string(l.in) + "]");
      return in;
    case LayerKind::kRelu: return in;
    case LayerKind::kGlobalAvgPool:
      if (in.size() != 3) fail("expects [c,h,w]");
      return {in[0]};
    case LayerKind::kFlatten: {
      int64_t n = shape_numel(in);
      return {static_cast<int>(n)};
    }
  }
  fail("unknown layer kind");
  return {};
}

void check_spec(const NetworkSpec& spec) {
  if (spec.layers.empty()) throw std::invalid_argument("network spec has no layers");
  shape_numel(spec.input_shape);
  Shape cur = spec.input_shape;
  for (size_t i = 0; i < spec.layers.size(); ++i) {
    cur = apply_layer(spec.layers[i], cur, static_cast<int>(i));
  }
  if (spec.loss == LossKind::kSoftmaxCrossEntropy) {
    if (cur.size() != 1 || cur[0] < 2) {
      throw std::invalid_argument("cross-entropy loss needs final shape [classes>=2], got " + shape_str(cur));
    }
  } else {
    if (cur.size() != 1) throw std::invalid_argument("mse loss needs a rank-1 final shape, got " + shape_str(cur));
  }
}

std::vector<Shape> param_shapes(const LayerSpec& l) {
  switch (l.kind) {
    case LayerKind::kDense:
      if (l.bias) return {{l.in, l.out}, {l.out}};
      return {{l.in, l.out}};
    case LayerKind::kConv: return {{l.out, l.in, l.kernel, l.kernel}, {l.out}};
    case LayerKind::kResidualBlock: return {{l.in, l.out}, {l.out}, {l.out, l.in}, {l.in}};
    default: return {};
  }
}

// fan-in per parameter tensor; 0 marks a bias (initialized to zero)
std::vector<int> param_fan_in(const LayerSpec& l) {
  switch (l.kind) {
    case LayerKind::kDense:
      if (l.bias) return {l.in, 0};
      return {l.in};
    case LayerKind::kConv: return {l.in * l.kernel * l.kernel, 0};
    case LayerKind::kResidualBlock: return {l.in, 0, l.out, 0};
    default: return {};
  }
}

}  // namespace

Shape boundary_sample_shape(const NetworkSpec& spec, int site) {
  if (site < 0 || site > static_cast<int>(spec.layers.size())) {
    throw std::invalid_argument("boundary_sample_shape: site " + std::to_string(site) + " out of range");
  }
  Shape cur = spec.input_shape;
  for (int i = 0; i < site; ++i) cur = apply_layer(spec.layers[static_cast<size_t>(i)], cur, i);
  return cur;
}

int64_t Network::layer_param_count(int i) const {
  int64_t n = 0;
  for (const Tensor& t : params[static_cast<size_t>(i)]) n += t.numel();
  return n;
}

int64_t Network::param_count() const {
  int64_t n = 0;
  for (int i = 0; i < layer_count(); ++i) n += layer_param_count(i);
  return n;
}

std::vector<double> Network::flat_params() const {
  std::vector<double> out;
  out.reserve(static_cast<size_t>(param_count()));
  for (const auto& layer : params) {
    for (const Tensor& t : layer) out.insert(out.end(), t.data.begin(), t.data.end());
  }
  return out;
}

void Network::set_flat_params(const std::vector<double>& v) {
  if (static_cast<int64_t>(v.size()) != param_count()) {
    throw std::invalid_argument("set_flat_params: got " + std::to_string(v.size()) + " values, expected " +
                                std::to_string(param_count()));
  }
  size_t pos = 0;
  for (auto& layer : params) {
    for (Tensor& t : layer) {
      std::copy(v.begin() + static_cast<int64_t>(pos), v.begin() + static_cast<int64_t>(pos) + t.numel(),
                t.data.begin());
      pos += static_cast<size_t>(t.numel());
    }
  }
}

Network build_network(const NetworkSpec& spec, uint64_t init_seed) {
  check_spec(spec);
  Network net;
  net.spec = spec;
  net.params.resize(spec.layers.size());
  for (size_t i = 0; i < spec.layers.size(); ++i) {
    const LayerSpec& l = spec.layers[i];
    std::vector<Shape> shapes = param_shapes(l);
    std::vector<int> fans = param_fan_in(l);
    for (size_t ti = 0; ti < shapes.size(); ++ti) {
      Tensor t(shapes[ti]);
      if (fans[ti] > 0) {
        RngStream s(init_seed, "init", static_cast<uint64_t>(i), static_cast<uint64_t>(ti));
        double bound = std::sqrt(6.0 / fans[ti]);
        for (double& v : t.data) v = s.next_uniform(-bound, bound);
      }
      net.params[i].push_back(std::move(t));
    }
  }
  return net;
}

BatchGraph build_graph(const Network& net, int batch, Reduction reduction) {
  if (batch < 1) throw std::invalid_argument("build_graph: batch must be >= 1");
  check_spec(net.spec);
  BatchGraph bg;
  bg.batch = batch;
  bg.reduction = reduction;
  TapeGraph& g = bg.graph;

  Shape in_shape;
  in_shape.push_back(batch);
  in_shape.insert(in_shape.end(), net.spec.input_shape.begin(), net.spec.input_shape.end());
  bg.input_node = g.add_leaf("input", in_shape);
  bg.layer_param_nodes.resize(net.spec.layers.size());

  int cur = bg.input_node;
  for (int i = 0; i < net.layer_count(); ++i) {
    const LayerSpec& l = net.spec.layers[static_cast<size_t>(i)];
    std::string prefix = "L" + std::to_string(i) + ".";
    int x = g.add_boundary(cur, i);
    switch (l.kind) {
      case LayerKind::kDense: {
        int w = g.add_leaf(prefix + "w", {l.in, l.out});
        bg.layer_param_nodes[static_cast<size_t>(i)].push_back(w);
        cur = g.add_matmul(x, w);
        if (l.bias) {
          int b = g.add_leaf(prefix + "b", {l.out});
          bg.layer_param_nodes[static_cast<size_t>(i)].push_back(b);
          cur = g.add_bias_rows(cur, b);
        }
        break;
      }
      case LayerKind::kConv: {
        int w = g.add_leaf(prefix + "w", {l.out, l.in, l.kernel, l.kernel});
        int b = g.add_leaf(prefix + "b", {l.out});
        bg.layer_param_nodes[static_cast<size_t>(i)] = {w, b};
        cur = g.add_bias_channels(g.add_conv2d(x, w, {l.stride, l.pad}), b);
        break;
      }
      case LayerKind::kResidualBlock: {
        int w1 = g.add_leaf(prefix + "w1", {l.in, l.out});
        int b1 = g.add_leaf(prefix + "b1", {l.out});
        int w2 = g.add_leaf(prefix + "w2", {l.out, l.in});
        int b2 = g.add_leaf(prefix + "b2", {l.in});
        bg.layer_param_nodes[static_cast<size_t>(i)] = {w1, b1, w2, b2};
        int t = g.add_relu(g.add_bias_rows(g.add_matmul(x, w1), b1));
        int t2 = g.add_bias_rows(g.add_matmul(t, w2), b2);
        cur = g.add_add(x, t2);
        break;
      }
      case LayerKind::kRelu: cur = g.add_relu(x); break;
      case LayerKind::kGlobalAvgPool: cur = g.add_global_avg_pool(x); break;
      case LayerKind::kFlatten: cur = g.add_flatten(x); break;
    }
  }

  int loss_in = g.add_boundary(cur, net.layer_count());
  if (net.spec.loss == LossKind::kSoftmaxCrossEntropy) {
    bg.label_node = g.add_leaf("labels", {batch});
    bg.per_sample_loss_node = g.add_softmax_cross_entropy(loss_in, bg.label_node);
  } else {
    const Shape& pred = g.node(loss_in).shape;
    bg.label_node = g.add_leaf("labels", pred);
    bg.per_sample_loss_node = g.add_mse_loss(loss_in, bg.label_node);
  }
  if (net.spec.loss_scale != 1.0) {
    bg.per_sample_loss_node = g.add_scale(bg.per_sample_loss_node, net.spec.loss_scale);
  }
  int total = g.add_reduce_sum(bg.per_sample_loss_node);
  if (reduction == Reduction::kMean) total = g.add_scale(total, 1.0 / batch);
  g.set_loss(total);
  return bg;
}

std::map<std::string, Tensor> graph_bindings(const Network& net, const Batch& batch) {
  std::map<std::string, Tensor> binds;
  binds.emplace("input", batch.inputs);
  binds.emplace("labels", batch.labels);
  static const char* const kResNames[] = {"w1", "b1", "w2", "b2"};
  for (int i = 0; i < net.layer_count(); ++i) {
    const LayerSpec& l = net.spec.layers[static_cast<size_t>(i)];
    const auto& tensors = net.params[static_cast<size_t>(i)];
    std::string prefix = "L" + std::to_string(i) + ".";
    if (l.kind == LayerKind::kDense) {
      binds.emplace(prefix + "w", tensors[0]);
      if (l.bias) binds.emplace(prefix + "b", tensors[1]);
    } else if (l.kind == LayerKind::kConv) {
      binds.emplace(prefix + "w", tensors[0]);
      binds.emplace(prefix + "b", tensors[1]);
    } else if (l.kind == LayerKind::kResidualBlock) {
      for (size_t t = 0; t < 4; ++t) binds.emplace(prefix + kResNames[t], tensors[t]);
    }
  }
  return binds;
}

namespace {

// Sum in ascending value order: invariant to any reordering of the values.
double canonical_mean(std::vector<double> values) {
  std::sort(values.begin(), values.end());
  double s = 0.0;
  for (double v : values) s += v;
  return s / static_cast<double>(values.size());
}

}  // namespace

Dataset adapt_labels(const Network& net, const Dataset& ds) {
  if (net.spec.loss != LossKind::kMse || ds.label_dim != 0) return ds;
  Shape out = boundary_sample_shape(net.spec, net.layer_count());
  return onehot_targets(ds, out[0]);
}

ForwardCapture forward_capture(const Network& net, const Dataset& raw_batch) {
  Dataset batch = adapt_labels(net, raw_batch);
  batch.validate();
  int m = batch.size();
  BatchGraph bg = build_graph(net, m, Reduction::kMean);
  Batch packed = pack_batch(batch, 0, m, net.spec.input_shape);
  auto ev = bg.graph.evaluate(graph_bindings(net, packed));
  ForwardCapture out;
  out.loss = canonical_mean(ev.values[static_cast<size_t>(bg.per_sample_loss_node)].data);
  for (int node : bg.graph.boundary_nodes()) out.inputs.push_back(ev.values[static_cast<size_t>(node)]);
  return out;
}

double mean_loss(const Network& net, const Dataset& raw) {
  Dataset data = adapt_labels(net, raw);
  data.validate();
  std::vector<double> losses;
  losses.reserve(static_cast<size_t>(data.size()));
  for (int begin = 0; begin < data.size(); begin += kEvalChunk) {
    int end = std::min(data.size(), begin + kEvalChunk);
    BatchGraph bg = build_graph(net, end - begin, Reduction::kMean);
    Batch packed = pack_batch(data, begin, end, net.spec.input_shape);
    auto ev = bg.graph.evaluate(graph_bindings(net, packed));
    const auto& per_sample = ev.values[static_cast<size_t>(bg.per_sample_loss_node)].data;
    losses.insert(losses.end(), per_sample.begin(), per_sample.end());
  }
  return canonical_mean(std::move(losses));
}

double accuracy(const Network& net, const Dataset& data) {
  data.validate();
  if (data.label_dim != 0) throw std::invalid_argument("accuracy: needs class labels");
  int hits = 0;
  for (int begin = 0; begin < data.size(); begin += kEvalChunk) {
    int end = std::min(data.size(), begin + kEvalChunk);
    Dataset chunk = dataset_slice(data, begin, end);
    ForwardCapture cap = forward_capture(net, chunk);
    const Tensor& logits = cap.inputs.back();
    int classes = logits.shape[1];
    for (int r = 0; r < chunk.size(); ++r) {
      const double* row = logits.data.data() + static_cast<int64_t>(r) * classes;
      int best = 0;
      for (int c = 1; c < classes; ++c) {
        if (row[c] > row[best]) best = c;
      }
      if (best == static_cast<int>(chunk.labels[static_cast<size_t>(r)].data[0])) ++hits;
    }
  }
  return static_cast<double>(hits) / data.size();
}

std::vector<std::vector<double>> summed_param_gradients(const Network& net, const Dataset& raw) {
  Dataset data = adapt_labels(net, raw);
  data.validate();
  std::vector<std::vector<double>> sums(static_cast<size_t>(net.layer_count()));
  for (int i = 0; i < net.layer_count(); ++i) {
    sums[static_cast<size_t>(i)].assign(static_cast<size_t>(net.layer_param_count(i)), 0.0);
  }
  for (int begin = 0; begin < data.size(); begin += kEvalChunk) {
    int end = std::min(data.size(), begin + kEvalChunk);
    BatchGraph bg = build_graph(net, end - begin, Reduction::kSum);
    Batch packed = pack_batch(data, begin, end, net.spec.input_shape);
    auto ev = bg.graph.evaluate(graph_bindings(net, packed));
    auto grads = bg.graph.backward(ev);
    for (int i = 0; i < net.layer_count(); ++i) {
      size_t pos = 0;
      for (int node : bg.layer_param_nodes[static_cast<size_t>(i)]) {
        for (double v : grads[static_cast<size_t>(node)].data) sums[static_cast<size_t>(i)][pos++] += v;
      }
    }
  }
  return sums;
}

TrainResult train(Network& net, const Dataset& raw, const TrainOptions& opt) {
  Dataset data = adapt_labels(net, raw);
  data.validate();
  if (!(opt.lr >= 0)) throw std::invalid_argument("train: lr must be >= 0");
  if (opt.epochs < 1) throw std::invalid_argument("train: epochs must be >= 1");
  if (opt.batch_size < 1) throw std::invalid_argument("train: batch_size must be >= 1");

  int m = data.size();
  int64_t pcount = net.param_count();
  std::vector<std::vector<Tensor>> velocity;
  if (opt.opt == Optimizer::kMomentum) {
    velocity.resize(net.params.size());
    for (size_t i = 0; i < net.params.size(); ++i) {
      for (const Tensor& t : net.params[i]) velocity[i].push_back(Tensor(t.shape));
    }
  }

  std::map<int, BatchGraph> graphs;  // keyed by batch size
  auto graph_for = [&](int size) -> BatchGraph& {
    auto it = graphs.find(size);
    if (it == graphs.end()) it = graphs.emplace(size, build_graph(net, size, Reduction::kMean)).first;
    return it->second;
  };

  auto grad_norm_per_param = [&]() {
    auto sums = summed_param_gradients(net, data);
    double sq = 0.0;
    for (const auto& layer : sums) {
      for (double v : layer) sq += v * v;
    }
    return std::sqrt(sq) / static_cast<double>(pcount);
  };

  TrainResult result;
  result.seed = opt.seed;
  result.dataset_id = data.id;

  std::vector<int> order(static_cast<size_t>(m));
  std::iota(order.begin(), order.end(), 0);
  Dataset shuffled = data;

  double norm = grad_norm_per_param();
  int epoch = 0;
  for (; epoch < opt.epochs && norm > opt.grad_norm_target; ++epoch) {
    RngStream shuffle_rng(opt.seed, "shuffle", static_cast<uint64_t>(epoch));
    for (int i = m - 1; i > 0; --i) {
      int j = static_cast<int>(shuffle_rng.next_below(static_cast<uint64_t>(i) + 1));
      std::swap(order[static_cast<size_t>(i)], order[static_cast<size_t>(j)]);
    }
    for (int i = 0; i < m; ++i) {
      shuffled.inputs[static_cast<size_t>(i)] = data.inputs[static_cast<size_t>(order[static_cast<size_t>(i)])];
      shuffled.labels[static_cast<size_t>(i)] = data.labels[static_cast<size_t>(order[static_cast<size_t>(i)])];
    }

    for (int begin = 0; begin < m; begin += opt.batch_size) {
      int end = std::min(m, begin + opt.batch_size);
      BatchGraph& bg = graph_for(end - begin);
      Batch packed = pack_batch(shuffled, begin, end, net.spec.input_shape);
      TapeGraph::Eval ev;
      try {
        ev = bg.graph.evaluate(graph_bindings(net, packed));
      } catch (const std::runtime_error&) {
        throw std::runtime_error("train: loss diverged (non-finite) at epoch " + std::to_string(epoch));
      }
      auto grads = bg.graph.backward(ev);
      for (int li = 0; li < net.layer_count(); ++li) {
        const auto& nodes = bg.layer_param_nodes[static_cast<size_t>(li)];
        for (size_t ti = 0; ti < nodes.size(); ++ti) {
          Tensor& p = net.params[static_cast<size_t>(li)][ti];
          const Tensor& gt = grads[static_cast<size_t>(nodes[ti])];
          if (opt.opt == Optimizer::kSgd) {
            for (size_t j = 0; j < p.data.size(); ++j) p.data[j] -= opt.lr * gt.data[j];
          } else {
            Tensor& v = velocity[static_cast<size_t>(li)][ti];
            for (size_t j = 0; j < p.data.size(); ++j) {
              v.data[j] = opt.momentum * v.data[j] + gt.data[j];
              p.data[j] -= opt.lr * v.data[j];
            }
          }
        }
      }
    }
    norm = grad_norm_per_param();
    if (!std::isfinite(norm)) {
      throw std::runtime_error("train: loss diverged (non-finite) at epoch " + std::to_string(epoch));
    }
  }

  result.epochs_run = epoch;
  result.final_grad_norm = norm;
  result.final_loss = mean_loss(net, data);
  return result;
}

}  // namespace prcl
