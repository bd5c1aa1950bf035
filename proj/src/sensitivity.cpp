#include "prcl/sensitivity.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <type_traits>

#include "json.hpp"
#include "prcl/rng.hpp"

namespace prcl {

namespace {

constexpr int kChunk = 256;

void check_calib(const Dataset& calib, const char* op) {
  if (calib.size() < 1) throw std::invalid_argument(std::string(op) + ": calibration set is empty");
  calib.validate();
}

// Sum in ascending value order: invariant to any reordering of the inputs.
double canonical_sum(std::vector<double> values) {
  std::sort(values.begin(), values.end());
  double s = 0.0;
  for (double v : values) s += v;
  return s;
}

// Per-site per-sample loss gradients, flattened: rows[site] holds
// calib.size() rows of boundary_sample_shape(site) values each.
std::vector<std::vector<double>> gather_input_rows(const Network& net, const Dataset& calib) {
  int sites = net.site_count();
  int m = calib.size();
  std::vector<std::vector<double>> rows(static_cast<size_t>(sites));
  for (int s = 0; s < sites; ++s) {
    size_t rowlen = static_cast<size_t>(shape_numel(boundary_sample_shape(net.spec, s)));
    rows[static_cast<size_t>(s)].reserve(static_cast<size_t>(m) * rowlen);
  }
  for (int begin = 0; begin < m; begin += kChunk) {
    int end = std::min(m, begin + kChunk);
    BatchGraph bg = build_graph(net, end - begin, Reduction::kSum);
    Batch packed = pack_batch(calib, begin, end, net.spec.input_shape);
    auto ev = bg.graph.evaluate(graph_bindings(net, packed));
    auto grads = bg.graph.backward(ev);
    const auto& bnodes = bg.graph.boundary_nodes();
    for (int s = 0; s < sites; ++s) {
      const Tensor& g = grads[static_cast<size_t>(bnodes[static_cast<size_t>(s)])];
      rows[static_cast<size_t>(s)].insert(rows[static_cast<size_t>(s)].end(), g.data.begin(), g.data.end());
    }
  }
  return rows;
}

std::vector<LayerSensitivity> blank_records(const Network& net) {
  std::vector<LayerSensitivity> recs(static_cast<size_t>(net.site_count()));
  for (int s = 0; s < net.site_count(); ++s) recs[static_cast<size_t>(s)].layer_index = s;
  return recs;
}

SensitivityProfile blank_profile(const Network& net, const Dataset& calib) {
  SensitivityProfile p;
  p.layers = blank_records(net);
  p.sample_count = calib.size();
  p.dataset_id = calib.id;
  return p;
}

// Offset of each layer's parameter block in the flat parameter vector.
std::vector<int64_t> layer_offsets(const Network& net) {
  std::vector<int64_t> off(static_cast<size_t>(net.layer_count()) + 1, 0);
  for (int i = 0; i < net.layer_count(); ++i) {
    off[static_cast<size_t>(i) + 1] = off[static_cast<size_t>(i)] + net.layer_param_count(i);
  }
  return off;
}

}  // namespace

std::string aggregate_name(Aggregate a) {
  return a == Aggregate::kNormOfSum ? "norm_of_sum" : "sum_of_norms";
}

Aggregate aggregate_from_name(const std::string& name) {
  if (name == "norm_of_sum") return Aggregate::kNormOfSum;
  if (name == "sum_of_norms") return Aggregate::kSumOfNorms;
  throw std::invalid_argument("unknown aggregate '" + name + "'");
}

std::vector<Tensor> input_gradient_sums(const Network& net, const Dataset& raw) {
  check_calib(raw, "input_gradient_sums");
  Dataset calib = adapt_labels(net, raw);
  auto rows = gather_input_rows(net, calib);
  int m = calib.size();
  std::vector<Tensor> sums;
  sums.reserve(rows.size());
  std::vector<double> column(static_cast<size_t>(m));
  for (int s = 0; s < net.site_count(); ++s) {
    Tensor t = Tensor::zeros(boundary_sample_shape(net.spec, s));
    size_t rowlen = static_cast<size_t>(t.numel());
    const auto& r = rows[static_cast<size_t>(s)];
    for (size_t c = 0; c < rowlen; ++c) {
      for (int j = 0; j < m; ++j) column[static_cast<size_t>(j)] = r[static_cast<size_t>(j) * rowlen + c];
      t.data[c] = canonical_sum(column);
    }
    sums.push_back(std::move(t));
  }
  return sums;
}

SensitivityProfile input_gradient_profile(const Network& net, const Dataset& raw, Aggregate aggregate) {
  check_calib(raw, "input_gradient_profile");
  Dataset calib = adapt_labels(net, raw);
  SensitivityProfile p = blank_profile(net, raw);
  p.aggregate = aggregate;
  if (aggregate == Aggregate::kNormOfSum) {
    auto sums = input_gradient_sums(net, calib);
    for (int s = 0; s < net.site_count(); ++s) {
      p.layers[static_cast<size_t>(s)].input_grad_norm = l2_norm(sums[static_cast<size_t>(s)].data);
    }
  } else {
    auto rows = gather_input_rows(net, calib);
    int m = calib.size();
    for (int s = 0; s < net.site_count(); ++s) {
      size_t rowlen = static_cast<size_t>(shape_numel(boundary_sample_shape(net.spec, s)));
      const auto& r = rows[static_cast<size_t>(s)];
      std::vector<double> norms(static_cast<size_t>(m));
      for (int j = 0; j < m; ++j) {
        double sq = 0.0;
        for (size_t c = 0; c < rowlen; ++c) {
          double v = r[static_cast<size_t>(j) * rowlen + c];
          sq += v * v;
        }
        norms[static_cast<size_t>(j)] = std::sqrt(sq);
      }
      p.layers[static_cast<size_t>(s)].input_grad_norm = canonical_sum(std::move(norms));
    }
  }
  return p;
}

SensitivityProfile param_gradient_profile(const Network& net, const Dataset& raw, Aggregate aggregate) {
  check_calib(raw, "param_gradient_profile");
  Dataset calib = adapt_labels(net, raw);
  SensitivityProfile p = blank_profile(net, raw);
  p.aggregate = aggregate;
  if (aggregate == Aggregate::kNormOfSum) {
    auto sums = summed_param_gradients(net, calib);
    for (int i = 0; i < net.layer_count(); ++i) {
      if (!net.layer_has_params(i)) continue;
      p.layers[static_cast<size_t>(i)].param_grad_norm = l2_norm(sums[static_cast<size_t>(i)]);
    }
  } else {
    int m = calib.size();
    std::vector<std::vector<double>> norms(static_cast<size_t>(net.layer_count()),
                                           std::vector<double>(static_cast<size_t>(m)));
    for (int j = 0; j < m; ++j) {
      auto sums = summed_param_gradients(net, dataset_slice(calib, j, j + 1));
      for (int i = 0; i < net.layer_count(); ++i) {
        norms[static_cast<size_t>(i)][static_cast<size_t>(j)] = l2_norm(sums[static_cast<size_t>(i)]);
      }
    }
    for (int i = 0; i < net.layer_count(); ++i) {
      if (!net.layer_has_params(i)) continue;
      p.layers[static_cast<size_t>(i)].param_grad_norm = canonical_sum(std::move(norms[static_cast<size_t>(i)]));
    }
  }
  return p;
}

TraceEstimate hutchinson_trace(int dim,
                               const std::function<std::vector<double>(const std::vector<double>&)>& hvp,
                               int probes, uint64_t seed, uint64_t stream_key) {
  if (dim < 1) throw std::invalid_argument("hutchinson_trace: dim must be >= 1");
  if (probes < 1) throw std::invalid_argument("hutchinson_trace: probes must be >= 1");
  std::vector<double> estimates(static_cast<size_t>(probes));
  for (int pidx = 0; pidx < probes; ++pidx) {
    RngStream rng(seed, "hutchinson", stream_key, pidx);
    std::vector<double> v(static_cast<size_t>(dim));
    for (double& x : v) x = rng.next_sign();
    std::vector<double> hv = hvp(v);
    if (hv.size() != v.size()) throw std::runtime_error("hutchinson_trace: hvp returned wrong dimension");
    estimates[static_cast<size_t>(pidx)] = dot(v, hv);
  }
  TraceEstimate out;
  double sum = 0.0;
  for (double e : estimates) sum += e;
  out.mean = sum / probes;
  if (probes > 1) {
    double sq = 0.0;
    for (double e : estimates) sq += (e - out.mean) * (e - out.mean);
    out.std_error = std::sqrt(sq / (static_cast<double>(probes) - 1.0) / static_cast<double>(probes));
  }
  return out;
}

SensitivityProfile hessian_trace_profile(const Network& net, const Dataset& raw, int probes,
                                         uint64_t seed) {
  check_calib(raw, "hessian_trace_profile");
  if (probes < 1) throw std::invalid_argument("hessian_trace_profile: probes must be >= 1");
  Dataset calib = adapt_labels(net, raw);
  SensitivityProfile p = blank_profile(net, raw);
  p.seed = seed;

  const double step = 1e-4;
  double m = static_cast<double>(calib.size());
  std::vector<double> base = net.flat_params();
  std::vector<int64_t> off = layer_offsets(net);
  Network scratch = net;

  // Mean-loss gradient slice for one layer at the given flat parameters.
  auto layer_grad = [&](const std::vector<double>& w, int layer) {
    scratch.set_flat_params(w);
    std::vector<double> g = summed_param_gradients(scratch, calib)[static_cast<size_t>(layer)];
    for (double& x : g) x /= m;
    return g;
  };

  for (int i = 0; i < net.layer_count(); ++i) {
    if (!net.layer_has_params(i)) continue;
    int dim = static_cast<int>(net.layer_param_count(i));
    size_t o = static_cast<size_t>(off[static_cast<size_t>(i)]);
    auto hvp = [&](const std::vector<double>& v) {
      std::vector<double> wp = base;
      std::vector<double> wm = base;
      for (size_t c = 0; c < v.size(); ++c) {
        wp[o + c] += step * v[c];
        wm[o + c] -= step * v[c];
      }
      std::vector<double> gp = layer_grad(wp, i);
      std::vector<double> gm = layer_grad(wm, i);
      for (size_t c = 0; c < gp.size(); ++c) gp[c] = (gp[c] - gm[c]) / (2.0 * step);
      return gp;
    };
    p.layers[static_cast<size_t>(i)].hessian_trace =
        hutchinson_trace(dim, hvp, probes, seed, static_cast<uint64_t>(i));
  }
  scratch.set_flat_params(base);
  return p;
}

SensitivityProfile merge_profiles(const SensitivityProfile& a, const SensitivityProfile& b) {
  if (a.layers.size() != b.layers.size()) throw std::invalid_argument("merge_profiles: layer counts differ");
  if (a.dataset_id != b.dataset_id) throw std::invalid_argument("merge_profiles: dataset ids differ");
  if (a.sample_count != b.sample_count) throw std::invalid_argument("merge_profiles: sample counts differ");
  if (a.aggregate != b.aggregate) throw std::invalid_argument("merge_profiles: aggregates differ");
  if (a.seed != 0 && b.seed != 0 && a.seed != b.seed) {
    throw std::invalid_argument("merge_profiles: seeds differ");
  }
  SensitivityProfile out = a;
  out.seed = a.seed != 0 ? a.seed : b.seed;
  for (size_t i = 0; i < out.layers.size(); ++i) {
    const LayerSensitivity& rb = b.layers[i];
    LayerSensitivity& ra = out.layers[i];
    if (ra.layer_index != rb.layer_index) throw std::invalid_argument("merge_profiles: layer indices differ");
    auto take = [](auto& dst, const auto& src, const char* field) {
      if (!src.has_value()) return;
      if (!dst.has_value()) {
        dst = src;
        return;
      }
      bool same;
      if constexpr (std::is_same_v<std::decay_t<decltype(*src)>, TraceEstimate>) {
        same = dst->mean == src->mean && dst->std_error == src->std_error;
      } else {
        same = *dst == *src;
      }
      if (!same) throw std::invalid_argument(std::string("merge_profiles: conflicting ") + field);
    };
    take(ra.input_grad_norm, rb.input_grad_norm, "input_grad_norm");
    take(ra.param_grad_norm, rb.param_grad_norm, "param_grad_norm");
    take(ra.hessian_trace, rb.hessian_trace, "hessian_trace");
  }
  return out;
}

std::string profile_to_json(const SensitivityProfile& p) {
  nlohmann::json doc;
  doc["schema_version"] = 1;
  doc["kind"] = "sensitivity_profile";
  doc["sample_count"] = p.sample_count;
  doc["dataset_id"] = p.dataset_id;
  doc["seed"] = p.seed;
  doc["aggregate"] = aggregate_name(p.aggregate);
  auto& layers = doc["layers"] = nlohmann::json::array();
  for (const LayerSensitivity& r : p.layers) {
    nlohmann::json rec;
    rec["layer_index"] = r.layer_index;
    if (r.input_grad_norm) rec["input_grad_norm"] = *r.input_grad_norm;
    if (r.param_grad_norm) rec["param_grad_norm"] = *r.param_grad_norm;
    if (r.hessian_trace) {
      rec["hessian_trace"] = {{"mean", r.hessian_trace->mean}, {"std_error", r.hessian_trace->std_error}};
    }
    layers.push_back(std::move(rec));
  }
  return doc.dump(2);
}

SensitivityProfile profile_from_json(const std::string& text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument(std::string("profile_from_json: ") + e.what());
  }
  try {
    if (doc.at("schema_version").get<int>() != 1) {
      throw std::invalid_argument("profile_from_json: unsupported schema_version");
    }
    if (doc.at("kind").get<std::string>() != "sensitivity_profile") {
      throw std::invalid_argument("profile_from_json: not a sensitivity profile");
    }
    SensitivityProfile p;
    p.sample_count = doc.at("sample_count").get<int>();
    p.dataset_id = doc.at("dataset_id").get<std::string>();
    p.seed = doc.at("seed").get<uint64_t>();
    p.aggregate = aggregate_from_name(doc.at("aggregate").get<std::string>());
    for (const auto& rec : doc.at("layers")) {
      LayerSensitivity r;
      r.layer_index = rec.at("layer_index").get<int>();
      if (rec.contains("input_grad_norm")) r.input_grad_norm = rec["input_grad_norm"].get<double>();
      if (rec.contains("param_grad_norm")) r.param_grad_norm = rec["param_grad_norm"].get<double>();
      if (rec.contains("hessian_trace")) {
        TraceEstimate t;
        t.mean = rec["hessian_trace"].at("mean").get<double>();
        t.std_error = rec["hessian_trace"].at("std_error").get<double>();
        r.hessian_trace = t;
      }
      p.layers.push_back(std::move(r));
    }
    return p;
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument(std::string("profile_from_json: ") + e.what());
  }
}

}  // namespace prcl
