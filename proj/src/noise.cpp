#include "prcl/noise.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <sstream>
#include <stdexcept>
#include <utility>

#include "json.hpp"
#include "prcl/fd.hpp"
#include "prcl/rng.hpp"
#include "prcl/sensitivity.hpp"

namespace prcl {

namespace {

constexpr int kEvalChunk = 256;

const char* kActivationNames[] = {"uniform", "scale_quant", "directional_lossless", "none"};
const char* kParamNames[] = {"per_trial_frozen", "none"};

double canonical_mean(std::vector<double> values) {
  std::sort(values.begin(), values.end());
  double s = 0.0;
  for (double v : values) s += v;
  return s / static_cast<double>(values.size());
}

// Chunked canonical mean loss; make_hook(chunk_begin) builds the per-chunk
// noise hook so draws can be keyed by global sample index.
double hooked_mean_loss(const Network& net, const Dataset& data,
                        const std::function<TapeGraph::NoiseHook(int)>& make_hook) {
  std::vector<double> losses;
  losses.reserve(static_cast<size_t>(data.size()));
  for (int begin = 0; begin < data.size(); begin += kEvalChunk) {
    int end = std::min(data.size(), begin + kEvalChunk);
    BatchGraph bg = build_graph(net, end - begin, Reduction::kMean);
    Batch packed = pack_batch(data, begin, end, net.spec.input_shape);
    auto ev = bg.graph.evaluate(graph_bindings(net, packed), make_hook(begin));
    const auto& per_sample = ev.values[static_cast<size_t>(bg.per_sample_loss_node)].data;
    losses.insert(losses.end(), per_sample.begin(), per_sample.end());
  }
  return canonical_mean(std::move(losses));
}

std::vector<int64_t> layer_offsets(const Network& net) {
  std::vector<int64_t> offs(static_cast<size_t>(net.layer_count()) + 1, 0);
  for (int i = 0; i < net.layer_count(); ++i) {
    offs[static_cast<size_t>(i) + 1] = offs[static_cast<size_t>(i)] + net.layer_param_count(i);
  }
  return offs;
}

// Network copy with per-layer flat deltas added to its parameters.
Network shifted_network(const Network& net, const std::vector<std::vector<double>>& delta) {
  Network out = net;
  std::vector<double> flat = out.flat_params();
  std::vector<int64_t> offs = layer_offsets(net);
  for (int i = 0; i < net.layer_count(); ++i) {
    const auto& d = delta[static_cast<size_t>(i)];
    if (d.empty()) continue;
    for (size_t j = 0; j < d.size(); ++j) {
      flat[static_cast<size_t>(offs[static_cast<size_t>(i)]) + j] += d[j];
    }
  }
  out.set_flat_params(flat);
  return out;
}

void check_eval_set(const Dataset& data, const char* op) {
  if (data.size() == 0) throw std::invalid_argument(std::string(op) + ": evaluation set is empty");
}

// Per-trial frozen parameter deltas for the plan; empty vector per clean layer.
std::vector<std::vector<double>> draw_param_deltas(const Network& net, const LayoutPlan& plan,
                                                   const NoiseModel& model, uint64_t seed, int trial,
                                                   int only_layer) {
  std::vector<std::vector<double>> delta(static_cast<size_t>(net.layer_count()));
  if (model.param == ParamNoise::kNone) return delta;
  for (int i = 0; i < net.layer_count(); ++i) {
    if (only_layer >= 0 && i != only_layer) continue;
    if (!net.layer_has_params(i)) continue;
    const auto& level = plan.param_levels[static_cast<size_t>(i)];
    if (!level.has_value() || level->max_error <= 0.0) continue;
    RngStream rng(seed, "param", trial, i);
    std::vector<double> d(static_cast<size_t>(net.layer_param_count(i)));
    for (double& v : d) v = rng.next_symmetric(level->max_error);
    delta[static_cast<size_t>(i)] = std::move(d);
  }
  return delta;
}

// Sites the directional model leaves clean: site 0 (data is ingested at the
// first layer's level) and every site at least as fine as its predecessor.
std::vector<bool> lossless_sites(const LayoutPlan& plan) {
  int n = plan.layer_count();
  std::vector<bool> clean(static_cast<size_t>(n), false);
  clean[0] = true;
  for (int i = 1; i < n; ++i) {
    clean[static_cast<size_t>(i)] = plan.activation_levels[static_cast<size_t>(i)].max_error <=
                                    plan.activation_levels[static_cast<size_t>(i) - 1].max_error;
  }
  return clean;
}

double sample_std(const std::vector<double>& v, double mean) {
  if (v.size() < 2) return 0.0;
  double acc = 0.0;
  for (double x : v) acc += (x - mean) * (x - mean);
  return std::sqrt(acc / static_cast<double>(v.size() - 1));
}

}  // namespace

const char* activation_noise_name(ActivationNoise k) {
  return kActivationNames[static_cast<int>(k)];
}

ActivationNoise activation_noise_from_name(const std::string& name) {
  for (int i = 0; i < 4; ++i) {
    if (name == kActivationNames[i]) return static_cast<ActivationNoise>(i);
  }
  throw std::invalid_argument("unknown activation noise model '" + name +
                              "' (expected uniform, scale_quant, directional_lossless, or none)");
}

const char* param_noise_name(ParamNoise k) { return kParamNames[static_cast<int>(k)]; }

ParamNoise param_noise_from_name(const std::string& name) {
  for (int i = 0; i < 2; ++i) {
    if (name == kParamNames[i]) return static_cast<ParamNoise>(i);
  }
  throw std::invalid_argument("unknown parameter noise model '" + name +
                              "' (expected per_trial_frozen or none)");
}

NoiseReport simulate(const Network& net, const Dataset& eval_raw, const LayoutPlan& plan,
                     const NoiseModel& model, int trials, uint64_t seed, bool attribute_layers) {
  if (plan.layer_count() != net.layer_count()) {
    throw std::invalid_argument("simulate: plan covers " + std::to_string(plan.layer_count()) +
                                " layers but the network has " + std::to_string(net.layer_count()));
  }
  if (trials < 1) throw std::invalid_argument("simulate: trials must be >= 1");
  Dataset data = adapt_labels(net, eval_raw);
  check_eval_set(data, "simulate");

  int n = net.layer_count();
  std::vector<bool> clean(static_cast<size_t>(n), false);
  if (model.activation == ActivationNoise::kDirectionalLossless) clean = lossless_sites(plan);

  // One trial's noisy mean loss; only_layer >= 0 restricts every perturbation
  // to that layer (same draws as the unrestricted run).
  auto trial_loss = [&](int trial, int only_layer) {
    Network shifted = shifted_network(net, draw_param_deltas(net, plan, model, seed, trial, only_layer));
    auto make_hook = [&, trial, only_layer](int chunk_begin) -> TapeGraph::NoiseHook {
      if (model.activation == ActivationNoise::kNone) return {};
      return [&, trial, only_layer, chunk_begin](int site, Tensor& value) {
        if (site >= n) return;  // the loss input carries no level
        if (only_layer >= 0 && site != only_layer) return;
        double q = plan.activation_levels[static_cast<size_t>(site)].max_error;
        if (q <= 0.0) return;
        int rows = value.shape[0];
        int64_t row_len = value.numel() / rows;
        if (model.activation == ActivationNoise::kScaleQuant) {
          double step = 2.0 * q;
          for (double& x : value.data) x = step * std::nearbyint(x / step);
          return;
        }
        if (model.activation == ActivationNoise::kDirectionalLossless && clean[static_cast<size_t>(site)]) {
          return;
        }
        for (int r = 0; r < rows; ++r) {
          RngStream rng(seed, "act", trial, site, chunk_begin + r);
          double* row = value.data.data() + static_cast<int64_t>(r) * row_len;
          for (int64_t j = 0; j < row_len; ++j) row[j] += rng.next_symmetric(q);
        }
      };
    };
    return hooked_mean_loss(shifted, data, make_hook);
  };

  NoiseReport report;
  report.baseline_loss = mean_loss(net, data);
  report.seed = seed;
  report.plan_provenance = plan.provenance;
  report.model = model;
  report.trial_losses.reserve(static_cast<size_t>(trials));
  for (int t = 0; t < trials; ++t) report.trial_losses.push_back(trial_loss(t, -1));

  std::vector<double> deltas;
  deltas.reserve(report.trial_losses.size());
  for (double v : report.trial_losses) deltas.push_back(v - report.baseline_loss);
  report.mean_delta = canonical_mean(deltas);
  report.std_delta = sample_std(deltas, report.mean_delta);

  if (attribute_layers) {
    report.per_layer_mean_delta.resize(static_cast<size_t>(n), 0.0);
    for (int i = 0; i < n; ++i) {
      std::vector<double> layer_deltas;
      layer_deltas.reserve(static_cast<size_t>(trials));
      for (int t = 0; t < trials; ++t) layer_deltas.push_back(trial_loss(t, i) - report.baseline_loss);
      report.per_layer_mean_delta[static_cast<size_t>(i)] = canonical_mean(layer_deltas);
    }
  }
  return report;
}

double perturbed_mean_loss(const Network& net, const Dataset& eval_raw, const FixedNoise& noise) {
  Dataset data = adapt_labels(net, eval_raw);
  check_eval_set(data, "perturbed_mean_loss");
  if (static_cast<int>(noise.activation.size()) != net.site_count()) {
    throw std::invalid_argument("perturbed_mean_loss: expected one activation tensor per site (" +
                                std::to_string(net.site_count()) + "), got " +
                                std::to_string(noise.activation.size()));
  }
  if (static_cast<int>(noise.param_delta.size()) != net.layer_count()) {
    throw std::invalid_argument("perturbed_mean_loss: expected one parameter delta per layer (" +
                                std::to_string(net.layer_count()) + "), got " +
                                std::to_string(noise.param_delta.size()));
  }
  for (int s = 0; s < net.site_count(); ++s) {
    const Tensor& eps = noise.activation[static_cast<size_t>(s)];
    if (eps.numel() == 0) continue;
    Shape want = boundary_sample_shape(net.spec, s);
    if (!same_shape(eps.shape, want)) {
      throw std::invalid_argument("perturbed_mean_loss: noise at site " + std::to_string(s) +
                                  " has shape " + shape_str(eps.shape) + ", expected " + shape_str(want));
    }
  }
  for (int i = 0; i < net.layer_count(); ++i) {
    const auto& d = noise.param_delta[static_cast<size_t>(i)];
    if (!d.empty() && static_cast<int64_t>(d.size()) != net.layer_param_count(i)) {
      throw std::invalid_argument("perturbed_mean_loss: delta for layer " + std::to_string(i) +
                                  " has " + std::to_string(d.size()) + " entries, expected " +
                                  std::to_string(net.layer_param_count(i)));
    }
  }

  Network shifted = shifted_network(net, noise.param_delta);
  auto make_hook = [&](int) -> TapeGraph::NoiseHook {
    return [&](int site, Tensor& value) {
      const Tensor& eps = noise.activation[static_cast<size_t>(site)];
      if (eps.numel() == 0) return;
      int rows = value.shape[0];
      int64_t row_len = value.numel() / rows;
      for (int r = 0; r < rows; ++r) {
        double* row = value.data.data() + static_cast<int64_t>(r) * row_len;
        for (int64_t j = 0; j < row_len; ++j) row[j] += eps.data[static_cast<size_t>(j)];
      }
    };
  };
  return hooked_mean_loss(shifted, data, make_hook);
}

double predict_first_order(const Network& net, const Dataset& eval_raw, const FixedNoise& noise) {
  Dataset data = adapt_labels(net, eval_raw);
  check_eval_set(data, "predict_first_order");
  if (static_cast<int>(noise.activation.size()) != net.site_count() ||
      static_cast<int>(noise.param_delta.size()) != net.layer_count()) {
    throw std::invalid_argument("predict_first_order: noise must cover every site and layer");
  }
  std::vector<Tensor> grads = input_gradient_sums(net, data);
  std::vector<std::vector<double>> pgrads = summed_param_gradients(net, data);
  double acc = 0.0;
  for (int s = 0; s < net.site_count(); ++s) {
    const Tensor& eps = noise.activation[static_cast<size_t>(s)];
    if (eps.numel() == 0) continue;
    const Tensor& g = grads[static_cast<size_t>(s)];
    if (!same_shape(eps.shape, g.shape)) {
      throw std::invalid_argument("predict_first_order: noise at site " + std::to_string(s) +
                                  " has shape " + shape_str(eps.shape) + ", expected " +
                                  shape_str(g.shape));
    }
    acc += dot(g.data, eps.data);
  }
  for (int i = 0; i < net.layer_count(); ++i) {
    const auto& d = noise.param_delta[static_cast<size_t>(i)];
    if (d.empty()) continue;
    if (d.size() != pgrads[static_cast<size_t>(i)].size()) {
      throw std::invalid_argument("predict_first_order: delta for layer " + std::to_string(i) +
                                  " has " + std::to_string(d.size()) + " entries, expected " +
                                  std::to_string(pgrads[static_cast<size_t>(i)].size()));
    }
    acc += dot(pgrads[static_cast<size_t>(i)], d);
  }
  return acc / static_cast<double>(data.size());
}

ScaleQuant quantize_scale(const Tensor& x, double scale) {
  if (!(scale > 0.0) || !std::isfinite(scale)) {
    throw std::invalid_argument("quantize_scale: scale must be a positive finite value");
  }
  ScaleQuant out;
  out.q = Tensor(x.shape);
  out.dequant = Tensor(x.shape);
  constexpr double kLimit = 2147483647.0;
  for (size_t i = 0; i < x.data.size(); ++i) {
    double r = x.data[i] / scale;
    if (std::abs(r) > kLimit) {
      throw std::runtime_error("quantize_scale: " + std::to_string(x.data[i]) +
                               " / " + std::to_string(scale) + " saturates a 32-bit integer");
    }
    double q = std::nearbyint(r);
    out.q.data[i] = q;
    out.dequant.data[i] = q * scale;
  }
  return out;
}

StorageEval storage_eval(const Network& net, const Dataset& eval_raw,
                         const std::vector<std::vector<double>>& delta, double warn_grad_norm) {
  Dataset data = adapt_labels(net, eval_raw);
  check_eval_set(data, "storage_eval");
  if (static_cast<int>(delta.size()) != net.layer_count()) {
    throw std::invalid_argument("storage_eval: expected one delta per layer (" +
                                std::to_string(net.layer_count()) + "), got " +
                                std::to_string(delta.size()));
  }
  for (int i = 0; i < net.layer_count(); ++i) {
    const auto& d = delta[static_cast<size_t>(i)];
    if (!d.empty() && static_cast<int64_t>(d.size()) != net.layer_param_count(i)) {
      throw std::invalid_argument("storage_eval: delta for layer " + std::to_string(i) + " has " +
                                  std::to_string(d.size()) + " entries, expected " +
                                  std::to_string(net.layer_param_count(i)));
    }
  }

  std::vector<double> w = net.flat_params();
  std::vector<int64_t> offs = layer_offsets(net);
  std::vector<double> flat_delta(w.size(), 0.0);
  for (int i = 0; i < net.layer_count(); ++i) {
    const auto& d = delta[static_cast<size_t>(i)];
    for (size_t j = 0; j < d.size(); ++j) {
      flat_delta[static_cast<size_t>(offs[static_cast<size_t>(i)]) + j] = d[j];
    }
  }

  double m = static_cast<double>(data.size());
  Network scratch = net;
  auto mean_grad = [&](const std::vector<double>& params) {
    scratch.set_flat_params(params);
    std::vector<std::vector<double>> per_layer = summed_param_gradients(scratch, data);
    std::vector<double> flat;
    flat.reserve(params.size());
    for (const auto& layer : per_layer) {
      for (double g : layer) flat.push_back(g / m);
    }
    return flat;
  };

  double grad_norm = l2_norm(mean_grad(w)) * m / static_cast<double>(net.param_count());
  if (grad_norm > warn_grad_norm) {
    std::fprintf(stderr,
                 "storage_eval: summed-gradient norm per parameter %.3e exceeds %.3e; "
                 "the quadratic model assumes an extreme point\n",
                 grad_norm, warn_grad_norm);
  }

  StorageEval out;
  Network shifted = shifted_network(net, delta);
  out.measured = mean_loss(shifted, data) - mean_loss(net, data);

  double norm = l2_norm(flat_delta);
  if (norm > 0.0) {
    std::vector<double> unit = flat_delta;
    for (double& v : unit) v /= norm;
    std::vector<double> hv = fd::hvp(mean_grad, w, unit);
    out.quadratic = 0.5 * norm * norm * dot(unit, hv);
  }
  return out;
}

std::string noise_report_to_json(const NoiseReport& r) {
  nlohmann::json doc;
  doc["schema_version"] = 1;
  doc["kind"] = "noise_report";
  doc["baseline_loss"] = r.baseline_loss;
  doc["trial_losses"] = r.trial_losses;
  doc["mean_delta"] = r.mean_delta;
  doc["std_delta"] = r.std_delta;
  if (!r.per_layer_mean_delta.empty()) doc["per_layer_mean_delta"] = r.per_layer_mean_delta;
  doc["seed"] = r.seed;
  doc["plan_provenance"] = r.plan_provenance;
  doc["model"] = {{"activation", activation_noise_name(r.model.activation)},
                  {"param", param_noise_name(r.model.param)}};
  return doc.dump(2);
}

NoiseReport noise_report_from_json(const std::string& text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument(std::string("noise report is not valid json: ") + e.what());
  }
  try {
    if (doc.at("schema_version").get<int>() != 1) {
      throw std::invalid_argument("noise report has unsupported schema_version " +
                                  doc.at("schema_version").dump());
    }
    if (doc.at("kind").get<std::string>() != "noise_report") {
      throw std::invalid_argument("expected kind 'noise_report', got " + doc.at("kind").dump());
    }
    NoiseReport r;
    r.baseline_loss = doc.at("baseline_loss").get<double>();
    r.trial_losses = doc.at("trial_losses").get<std::vector<double>>();
    r.mean_delta = doc.at("mean_delta").get<double>();
    r.std_delta = doc.at("std_delta").get<double>();
    if (doc.contains("per_layer_mean_delta")) {
      r.per_layer_mean_delta = doc.at("per_layer_mean_delta").get<std::vector<double>>();
    }
    r.seed = doc.at("seed").get<uint64_t>();
    r.plan_provenance = doc.at("plan_provenance").get<std::string>();
    r.model.activation = activation_noise_from_name(doc.at("model").at("activation").get<std::string>());
    r.model.param = param_noise_from_name(doc.at("model").at("param").get<std::string>());
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument(std::string("malformed noise report: ") + e.what());
  }
}

std::string noise_report_to_csv(const NoiseReport& r) {
  std::ostringstream out;
  out << "trial,noisy_loss,delta_loss\n";
  char buf[64];
  for (size_t i = 0; i < r.trial_losses.size(); ++i) {
    double loss = r.trial_losses[i];
    out << i << ',';
    std::snprintf(buf, sizeof buf, "%.17g", loss);
    out << buf << ',';
    std::snprintf(buf, sizeof buf, "%.17g", loss - r.baseline_loss);
    out << buf << '\n';
  }
  return out.str();
}

}  // namespace prcl
