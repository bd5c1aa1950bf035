#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "prcl/dataset.hpp"
#include "prcl/network.hpp"

namespace prcl {

// How per-sample gradients are reduced to one statistic per record.
// kSumOfNorms is the planner's statistic: the sum over calibration samples
// of per-sample gradient norms, an estimate of the expected norm. kNormOfSum
// takes the norm of the summed gradient instead; at a trained optimum the
// summed gradient cancels toward zero, so it is kept only as a labeled
// ablation and never feeds the shipped planning algorithms.
enum class Aggregate { kNormOfSum, kSumOfNorms };

std::string aggregate_name(Aggregate a);
Aggregate aggregate_from_name(const std::string& name);

struct TraceEstimate {
  double mean = 0.0;
  double std_error = 0.0;
};

// One record per capture site. Record i < layer_count() describes layer i:
// input_grad_norm for the tensor entering it, parameter statistics when the
// layer has parameters. The final record describes the loss input and
// carries input_grad_norm only.
struct LayerSensitivity {
  int layer_index = 0;
  std::optional<double> input_grad_norm;
  std::optional<double> param_grad_norm;
  std::optional<TraceEstimate> hessian_trace;
};

struct SensitivityProfile {
  std::vector<LayerSensitivity> layers;
  int sample_count = 0;
  std::string dataset_id;
  uint64_t seed = 0;
  Aggregate aggregate = Aggregate::kSumOfNorms;
};

// Per-site sum over the calibration set of the loss gradient w.r.t. the
// site tensor, in per-sample shape. Each component accumulates its
// per-sample contributions in ascending value order, so permuting the
// calibration set yields bit-identical sums.
std::vector<Tensor> input_gradient_sums(const Network& net, const Dataset& calib);

SensitivityProfile input_gradient_profile(const Network& net, const Dataset& calib,
                                          Aggregate aggregate = Aggregate::kSumOfNorms);

SensitivityProfile param_gradient_profile(const Network& net, const Dataset& calib,
                                          Aggregate aggregate = Aggregate::kSumOfNorms);

// Hutchinson trace estimate of a dim x dim linear operator: the mean over
// Rademacher probes of v.(Hv), with the standard error across probes.
// Probe p draws from a stream keyed (seed, stream_key, p), so evaluation
// order and parallelism cannot change the estimate.
TraceEstimate hutchinson_trace(
    int dim, const std::function<std::vector<double>(const std::vector<double>&)>& hvp,
    int probes, uint64_t seed, uint64_t stream_key = 0);

// Layer-restricted Hessian traces of the mean calibration loss: for each
// param-bearing layer, tr(d2f/dw_i2) estimated with `probes` Hutchinson
// probes. Records for other sites carry no trace.
SensitivityProfile hessian_trace_profile(const Network& net, const Dataset& calib, int probes,
                                         uint64_t seed);

// Field-wise union of two profiles of the same network and calibration
// run. Disagreement on shared fields or metadata is an error.
SensitivityProfile merge_profiles(const SensitivityProfile& a, const SensitivityProfile& b);

std::string profile_to_json(const SensitivityProfile& p);
SensitivityProfile profile_from_json(const std::string& text);

}  // namespace prcl
