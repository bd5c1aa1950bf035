#include "prcl/tape.hpp"

#include <cmath>
#include <stdexcept>

#include "prcl/kernels.hpp"

namespace prcl {

namespace ker = prcl::kernels;

const char* op_name(OpKind k) {
  switch (k) {
    case OpKind::kLeaf: return "leaf";
    case OpKind::kBoundary: return "boundary";
    case OpKind::kMatMul: return "matmul";
    case OpKind::kConv2d: return "conv2d";
    case OpKind::kRelu: return "relu";
    case OpKind::kAdd: return "add";
    case OpKind::kSub: return "sub";
    case OpKind::kMul: return "mul";
    case OpKind::kScale: return "scale";
    case OpKind::kBiasRows: return "bias_rows";
    case OpKind::kBiasChannels: return "bias_channels";
    case OpKind::kGlobalAvgPool: return "global_avg_pool";
    case OpKind::kFlatten: return "flatten";
    case OpKind::kSoftmaxCrossEntropy: return "softmax_cross_entropy";
    case OpKind::kMseLoss: return "mse_loss";
    case OpKind::kReduceSum: return "reduce_sum";
  }
  return "?";
}

namespace {

[[noreturn]] void node_error(int id, OpKind kind, const std::string& msg) {
  throw std::invalid_argument("node " + std::to_string(id) + " (" + op_name(kind) + "): " + msg);
}

}  // namespace

int TapeGraph::push(TapeNode n) {
  nodes_.push_back(std::move(n));
  return static_cast<int>(nodes_.size()) - 1;
}

const Shape& TapeGraph::shape_of(int id, const char* ctx) const {
  if (id < 0 || id >= node_count()) {
    throw std::invalid_argument(std::string(ctx) + ": input node id " + std::to_string(id) + " out of range");
  }
  return nodes_[static_cast<size_t>(id)].shape;
}

int TapeGraph::add_leaf(const std::string& name, Shape shape) {
  shape_numel(shape);  // validates extents
  TapeNode n;
  n.kind = OpKind::kLeaf;
  n.name = name;
  n.shape = std::move(shape);
  return push(std::move(n));
}

int TapeGraph::add_boundary(int input, int site) {
  TapeNode n;
  n.kind = OpKind::kBoundary;
  n.inputs = {input};
  n.shape = shape_of(input, "boundary");
  n.site = site;
  int id = push(std::move(n));
  if (site != static_cast<int>(boundaries_.size())) {
    node_error(id, OpKind::kBoundary, "site indices must be added in order, got " + std::to_string(site));
  }
  boundaries_.push_back(id);
  return id;
}

int TapeGraph::add_matmul(int a, int b) {
  const Shape& sa = shape_of(a, "matmul");
  const Shape& sb = shape_of(b, "matmul");
  int id = node_count();
  if (sa.size() != 2 || sb.size() != 2) node_error(id, OpKind::kMatMul, "expects rank-2 inputs, got " + shape_str(sa) + " and " + shape_str(sb));
  if (sa[1] != sb[0]) node_error(id, OpKind::kMatMul, "inner dims differ: " + shape_str(sa) + " x " + shape_str(sb));
  TapeNode n;
  n.kind = OpKind::kMatMul;
  n.inputs = {a, b};
  n.shape = {sa[0], sb[1]};
  return push(std::move(n));
}

int TapeGraph::add_conv2d(int x, int w, Conv2dAttrs attrs) {
  const Shape& sx = shape_of(x, "conv2d");
  const Shape& sw = shape_of(w, "conv2d");
  int id = node_count();
  if (sx.size() != 4) node_error(id, OpKind::kConv2d, "input must be [batch,c,h,w], got " + shape_str(sx));
  if (sw.size() != 4) node_error(id, OpKind::kConv2d, "weight must be [cout,cin,k,k], got " + shape_str(sw));
  if (sw[2] != sw[3]) node_error(id, OpKind::kConv2d, "kernel must be square, got " + shape_str(sw));
  if (sx[1] != sw[1]) node_error(id, OpKind::kConv2d, "channel mismatch: input " + shape_str(sx) + ", weight " + shape_str(sw));
  int ho = ker::conv_out_dim(sx[2], sw[2], attrs.stride, attrs.pad);
  int wo = ker::conv_out_dim(sx[3], sw[2], attrs.stride, attrs.pad);
  TapeNode n;
  n.kind = OpKind::kConv2d;
  n.inputs = {x, w};
  n.shape = {sx[0], sw[0], ho, wo};
  n.conv = attrs;
  return push(std::move(n));
}

int TapeGraph::add_relu(int x) {
  TapeNode n;
  n.kind = OpKind::kRelu;
  n.inputs = {x};
  n.shape = shape_of(x, "relu");
  return push(std::move(n));
}

namespace {
void check_same(int id, OpKind kind, const Shape& sa, const Shape& sb) {
  if (!same_shape(sa, sb)) node_error(id, kind, "shape mismatch: " + shape_str(sa) + " vs " + shape_str(sb));
}
}  // namespace

int TapeGraph::add_add(int a, int b) {
  const Shape& sa = shape_of(a, "add");
  const Shape& sb = shape_of(b, "add");
  check_same(node_count(), OpKind::kAdd, sa, sb);
  TapeNode n;
  n.kind = OpKind::kAdd;
  n.inputs = {a, b};
  n.shape = sa;
  return push(std::move(n));
}

int TapeGraph::add_sub(int a, int b) {
  const Shape& sa = shape_of(a, "sub");
  const Shape& sb = shape_of(b, "sub");
  check_same(node_count(), OpKind::kSub, sa, sb);
  TapeNode n;
  n.kind = OpKind::kSub;
  n.inputs = {a, b};
  n.shape = sa;
  return push(std::move(n));
}

int TapeGraph::add_mul(int a, int b) {
  const Shape& sa = shape_of(a, "mul");
  const Shape& sb = shape_of(b, "mul");
  check_same(node_count(), OpKind::kMul, sa, sb);
  TapeNode n;
  n.kind = OpKind::kMul;
  n.inputs = {a, b};
  n.shape = sa;
  return push(std::move(n));
}

int TapeGraph::add_scale(int x, double factor) {
  TapeNode n;
  n.kind = OpKind::kScale;
  n.inputs = {x};
  n.shape = shape_of(x, "scale");
  n.factor = factor;
  return push(std::move(n));
}

int TapeGraph::add_bias_rows(int x, int b) {
  const Shape& sx = shape_of(x, "bias_rows");
  const Shape& sb = shape_of(b, "bias_rows");
  int id = node_count();
  if (sx.size() != 2 || sb.size() != 1 || sb[0] != sx[1]) {
    node_error(id, OpKind::kBiasRows, "expects [m,n] + [n], got " + shape_str(sx) + " + " + shape_str(sb));
  }
  TapeNode n;
  n.kind = OpKind::kBiasRows;
  n.inputs = {x, b};
  n.shape = sx;
  return push(std::move(n));
}

int TapeGraph::add_bias_channels(int x, int b) {
  const Shape& sx = shape_of(x, "bias_channels");
  const Shape& sb = shape_of(b, "bias_channels");
  int id = node_count();
  if (sx.size() != 4 || sb.size() != 1 || sb[0] != sx[1]) {
    node_error(id, OpKind::kBiasChannels, "expects [b,c,h,w] + [c], got " + shape_str(sx) + " + " + shape_str(sb));
  }
  TapeNode n;
  n.kind = OpKind::kBiasChannels;
  n.inputs = {x, b};
  n.shape = sx;
  return push(std::move(n));
}

int TapeGraph::add_global_avg_pool(int x) {
  const Shape& sx = shape_of(x, "global_avg_pool");
  int id = node_count();
  if (sx.size() != 4) node_error(id, OpKind::kGlobalAvgPool, "expects [b,c,h,w], got " + shape_str(sx));
  TapeNode n;
  n.kind = OpKind::kGlobalAvgPool;
  n.inputs = {x};
  n.shape = {sx[0], sx[1]};
  return push(std::move(n));
}

int TapeGraph::add_flatten(int x) {
  const Shape& sx = shape_of(x, "flatten");
  int id = node_count();
  if (sx.size() < 2) node_error(id, OpKind::kFlatten, "expects batch dim plus payload, got " + shape_str(sx));
  int rest = 1;
  for (size_t i = 1; i < sx.size(); ++i) rest *= sx[i];
  TapeNode n;
  n.kind = OpKind::kFlatten;
  n.inputs = {x};
  n.shape = {sx[0], rest};
  return push(std::move(n));
}

int TapeGraph::add_softmax_cross_entropy(int logits, int labels) {
  const Shape& sl = shape_of(logits, "softmax_cross_entropy");
  const Shape& sy = shape_of(labels, "softmax_cross_entropy");
  int id = node_count();
  if (sl.size() != 2 || sl[1] < 2) node_error(id, OpKind::kSoftmaxCrossEntropy, "logits must be [m,classes>=2], got " + shape_str(sl));
  if (sy.size() != 1 || sy[0] != sl[0]) node_error(id, OpKind::kSoftmaxCrossEntropy, "labels must be [m], got " + shape_str(sy));
  TapeNode n;
  n.kind = OpKind::kSoftmaxCrossEntropy;
  n.inputs = {logits, labels};
  n.shape = {sl[0]};
  return push(std::move(n));
}

int TapeGraph::add_mse_loss(int pred, int target) {
  const Shape& sp = shape_of(pred, "mse_loss");
  const Shape& st = shape_of(target, "mse_loss");
  int id = node_count();
  if (sp.size() != 2) node_error(id, OpKind::kMseLoss, "pred must be [m,d], got " + shape_str(sp));
  check_same(id, OpKind::kMseLoss, sp, st);
  TapeNode n;
  n.kind = OpKind::kMseLoss;
  n.inputs = {pred, target};
  n.shape = {sp[0]};
  return push(std::move(n));
}

int TapeGraph::add_reduce_sum(int x) {
  shape_of(x, "reduce_sum");
  TapeNode n;
  n.kind = OpKind::kReduceSum;
  n.inputs = {x};
  n.shape = {1};
  return push(std::move(n));
}

void TapeGraph::set_loss(int node) {
  const Shape& s = shape_of(node, "set_loss");
  if (shape_numel(s) != 1) {
    throw std::invalid_argument("loss sink must be scalar, node " + std::to_string(node) + " has shape " + shape_str(s));
  }
  loss_ = node;
}

TapeGraph::Eval TapeGraph::evaluate(const std::map<std::string, Tensor>& bindings,
                                    const NoiseHook& hook) const {
  if (loss_ < 0) throw std::logic_error("evaluate: no loss sink designated");
  Eval ev;
  ev.graph = this;
  ev.values.resize(nodes_.size());
  for (int i = 0; i < node_count(); ++i) {
    const TapeNode& nd = nodes_[static_cast<size_t>(i)];
    Tensor& out = ev.values[static_cast<size_t>(i)];
    auto in = [&](int j) -> const Tensor& { return ev.values[static_cast<size_t>(nd.inputs[static_cast<size_t>(j)])]; };
    switch (nd.kind) {
      case OpKind::kLeaf: {
        auto it = bindings.find(nd.name);
        if (it == bindings.end()) node_error(i, nd.kind, "no binding for '" + nd.name + "'");
        if (!same_shape(it->second.shape, nd.shape)) {
          node_error(i, nd.kind, "binding '" + nd.name + "' has shape " + shape_str(it->second.shape) +
                                     ", expected " + shape_str(nd.shape));
        }
        out = it->second;
        break;
      }
      case OpKind::kBoundary:
        out = in(0);
        if (hook) hook(nd.site, out);
        break;
      case OpKind::kMatMul: {
        const Tensor& a = in(0);
        const Tensor& b = in(1);
        out = Tensor(nd.shape);
        ker::matmul(a.data.data(), b.data.data(), out.data.data(), a.shape[0], a.shape[1], b.shape[1]);
        break;
      }
      case OpKind::kConv2d: {
        const Tensor& x = in(0);
        const Tensor& w = in(1);
        out = Tensor(nd.shape);
        ker::conv2d(x.data.data(), w.data.data(), out.data.data(), x.shape[0], x.shape[1], x.shape[2],
                    x.shape[3], w.shape[0], w.shape[2], nd.conv.stride, nd.conv.pad);
        break;
      }
      case OpKind::kRelu:
        out = Tensor(nd.shape);
        ker::relu(in(0).data.data(), out.data.data(), out.numel());
        break;
      case OpKind::kAdd:
        out = Tensor(nd.shape);
        ker::add(in(0).data.data(), in(1).data.data(), out.data.data(), out.numel());
        break;
      case OpKind::kSub:
        out = Tensor(nd.shape);
        ker::sub(in(0).data.data(), in(1).data.data(), out.data.data(), out.numel());
        break;
      case OpKind::kMul:
        out = Tensor(nd.shape);
        ker::mul(in(0).data.data(), in(1).data.data(), out.data.data(), out.numel());
        break;
      case OpKind::kScale:
        out = Tensor(nd.shape);
        ker::scale(in(0).data.data(), nd.factor, out.data.data(), out.numel());
        break;
      case OpKind::kBiasRows:
        out = Tensor(nd.shape);
        ker::bias_rows(in(0).data.data(), in(1).data.data(), out.data.data(), nd.shape[0], nd.shape[1]);
        break;
      case OpKind::kBiasChannels:
        out = Tensor(nd.shape);
        ker::bias_chw(in(0).data.data(), in(1).data.data(), out.data.data(), nd.shape[0], nd.shape[1],
                      nd.shape[2] * nd.shape[3]);
        break;
      case OpKind::kGlobalAvgPool: {
        const Tensor& x = in(0);
        out = Tensor(nd.shape);
        ker::global_avg_pool(x.data.data(), out.data.data(), x.shape[0], x.shape[1], x.shape[2] * x.shape[3]);
        break;
      }
      case OpKind::kFlatten:
        out = Tensor(nd.shape, in(0).data);
        break;
      case OpKind::kSoftmaxCrossEntropy: {
        const Tensor& z = in(0);
        const Tensor& y = in(1);
        for (int r = 0; r < y.shape[0]; ++r) {
          double lv = y.data[static_cast<size_t>(r)];
          if (!(lv >= 0 && lv < z.shape[1]) || lv != std::floor(lv)) {
            node_error(i, nd.kind, "label row " + std::to_string(r) + " is not a class index in [0," +
                                       std::to_string(z.shape[1]) + "): " + std::to_string(lv));
          }
        }
        out = Tensor(nd.shape);
        ker::softmax_ce(z.data.data(), y.data.data(), out.data.data(), z.shape[0], z.shape[1]);
        break;
      }
      case OpKind::kMseLoss: {
        const Tensor& p = in(0);
        out = Tensor(nd.shape);
        ker::mse(p.data.data(), in(1).data.data(), out.data.data(), p.shape[0], p.shape[1]);
        break;
      }
      case OpKind::kReduceSum: {
        const Tensor& x = in(0);
        double s = 0.0;
        for (double v : x.data) s += v;  // fixed ascending order
        out = Tensor::scalar(s);
        break;
      }
    }
  }
  ev.loss = ev.values[static_cast<size_t>(loss_)].scalar_value();
  if (!std::isfinite(ev.loss)) throw std::runtime_error("evaluate: loss is not finite");
  return ev;
}

std::vector<Tensor> TapeGraph::backward(const Eval& ev) const {
  if (ev.graph != this || ev.values.size() != nodes_.size()) {
    throw std::logic_error("backward: eval does not belong to this graph (run evaluate first)");
  }
  std::vector<Tensor> grads(nodes_.size());
  for (int i = 0; i < node_count(); ++i) grads[static_cast<size_t>(i)] = Tensor(nodes_[static_cast<size_t>(i)].shape);
  grads[static_cast<size_t>(loss_)].data[0] = 1.0;

  for (int i = node_count() - 1; i >= 0; --i) {
    const TapeNode& nd = nodes_[static_cast<size_t>(i)];
    const Tensor& g = grads[static_cast<size_t>(i)];
    auto val = [&](int j) -> const Tensor& { return ev.values[static_cast<size_t>(nd.inputs[static_cast<size_t>(j)])]; };
    auto grad = [&](int j) -> Tensor& { return grads[static_cast<size_t>(nd.inputs[static_cast<size_t>(j)])]; };
    switch (nd.kind) {
      case OpKind::kLeaf:
        break;
      case OpKind::kBoundary:
      case OpKind::kFlatten:
        ker::accum(g.data.data(), grad(0).data.data(), g.numel());
        break;
      case OpKind::kMatMul: {
        const Tensor& a = val(0);
        const Tensor& b = val(1);
        int m = a.shape[0], k = a.shape[1], n = b.shape[1];
        Tensor da(a.shape), db(b.shape);
        ker::matmul_nt(g.data.data(), b.data.data(), da.data.data(), m, n, k);
        ker::matmul_tn(a.data.data(), g.data.data(), db.data.data(), m, k, n);
        ker::accum(da.data.data(), grad(0).data.data(), da.numel());
        ker::accum(db.data.data(), grad(1).data.data(), db.numel());
        break;
      }
      case OpKind::kConv2d: {
        const Tensor& x = val(0);
        const Tensor& w = val(1);
        ker::conv2d_grad_input_accum(w.data.data(), g.data.data(), grad(0).data.data(), x.shape[0],
                                     x.shape[1], x.shape[2], x.shape[3], w.shape[0], w.shape[2],
                                     nd.conv.stride, nd.conv.pad);
        ker::conv2d_grad_weight_accum(x.data.data(), g.data.data(), grad(1).data.data(), x.shape[0],
                                      x.shape[1], x.shape[2], x.shape[3], w.shape[0], w.shape[2],
                                      nd.conv.stride, nd.conv.pad);
        break;
      }
      case OpKind::kRelu:
        ker::relu_grad_accum(val(0).data.data(), g.data.data(), grad(0).data.data(), g.numel());
        break;
      case OpKind::kAdd:
        ker::accum(g.data.data(), grad(0).data.data(), g.numel());
        ker::accum(g.data.data(), grad(1).data.data(), g.numel());
        break;
      case OpKind::kSub:
        ker::accum(g.data.data(), grad(0).data.data(), g.numel());
        ker::scale_accum(g.data.data(), -1.0, grad(1).data.data(), g.numel());
        break;
      case OpKind::kMul:
        ker::mul_accum(g.data.data(), val(1).data.data(), grad(0).data.data(), g.numel());
        ker::mul_accum(g.data.data(), val(0).data.data(), grad(1).data.data(), g.numel());
        break;
      case OpKind::kScale:
        ker::scale_accum(g.data.data(), nd.factor, grad(0).data.data(), g.numel());
        break;
      case OpKind::kBiasRows:
        ker::accum(g.data.data(), grad(0).data.data(), g.numel());
        ker::colsum_accum(g.data.data(), grad(1).data.data(), nd.shape[0], nd.shape[1]);
        break;
      case OpKind::kBiasChannels:
        ker::accum(g.data.data(), grad(0).data.data(), g.numel());
        ker::chwsum_accum(g.data.data(), grad(1).data.data(), nd.shape[0], nd.shape[1], nd.shape[2] * nd.shape[3]);
        break;
      case OpKind::kGlobalAvgPool: {
        const Tensor& x = val(0);
        ker::global_avg_pool_grad_accum(g.data.data(), grad(0).data.data(), x.shape[0], x.shape[1],
                                        x.shape[2] * x.shape[3]);
        break;
      }
      case OpKind::kSoftmaxCrossEntropy: {
        const Tensor& z = val(0);
        ker::softmax_ce_grad_accum(z.data.data(), val(1).data.data(), g.data.data(), grad(0).data.data(),
                                   z.shape[0], z.shape[1]);
        break;
      }
      case OpKind::kMseLoss: {
        const Tensor& p = val(0);
        ker::mse_grad_accum(p.data.data(), val(1).data.data(), g.data.data(), grad(0).data.data(),
                            grad(1).data.data(), p.shape[0], p.shape[1]);
        break;
      }
      case OpKind::kReduceSum: {
        Tensor& gx = grad(0);
        double gv = g.data[0];
        for (double& v : gx.data) v += gv;
        break;
      }
    }
  }
  return grads;
}

}  // namespace prcl
