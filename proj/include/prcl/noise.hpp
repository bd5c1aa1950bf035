#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "prcl/dataset.hpp"
#include "prcl/layout.hpp"
#include "prcl/network.hpp"
#include "prcl/tensor.hpp"

namespace prcl {

// How a plan's activation levels turn into inference-time perturbations.
//   kUniform: fresh eps uniform in [-q, +q] per element, per sample, per trial.
//   kScaleQuant: deterministic snap onto a grid of step 2q (round to nearest,
//     ties-to-even), so the introduced error stays within q.
//   kDirectionalLossless: uniform, except eps is forced to zero at sites whose
//     level is at least as fine as the preceding site's, where the conversion
//     is a lossless up-conversion; site 0 is always clean because the source
//     data is ingested directly at the first layer's level.
//   kNone: activations flow untouched.
enum class ActivationNoise { kUniform, kScaleQuant, kDirectionalLossless, kNone };

// Parameter perturbation: kPerTrialFrozen draws one uniform [-q, +q] delta per
// element per trial (a stored quantized weight does not vary across samples);
// a level with max_error 0 keeps parameters exact. kNone leaves them alone.
enum class ParamNoise { kPerTrialFrozen, kNone };

const char* activation_noise_name(ActivationNoise k);
ActivationNoise activation_noise_from_name(const std::string& name);
const char* param_noise_name(ParamNoise k);
ParamNoise param_noise_from_name(const std::string& name);

struct NoiseModel {
  ActivationNoise activation = ActivationNoise::kUniform;
  ParamNoise param = ParamNoise::kPerTrialFrozen;
};

struct NoiseReport {
  double baseline_loss = 0.0;
  std::vector<double> trial_losses;  // noisy mean loss per trial
  double mean_delta = 0.0;           // mean of (trial loss - baseline)
  double std_delta = 0.0;            // sample std over trials; 0 when trials == 1
  // Mean loss change with only layer i perturbed (same draws as the full
  // run); empty unless attribution was requested.
  std::vector<double> per_layer_mean_delta;
  uint64_t seed = 0;
  std::string plan_provenance;
  NoiseModel model;

  int trials() const { return static_cast<int>(trial_losses.size()); }
};

// Runs `trials` perturbed evaluations of the plan over eval_set. Each trial
// freezes one parameter delta, then evaluates the canonical mean loss with
// activation noise injected at every layer's input per the model. Every draw
// is keyed by (seed, trial, site, sample), so the result is independent of
// evaluation order, chunking, and worker count.
NoiseReport simulate(const Network& net, const Dataset& eval_set, const LayoutPlan& plan,
                     const NoiseModel& model, int trials, uint64_t seed,
                     bool attribute_layers = false);

std::string noise_report_to_json(const NoiseReport& r);
NoiseReport noise_report_from_json(const std::string& text);
// Flat table, one row per trial: index, noisy loss, loss delta.
std::string noise_report_to_csv(const NoiseReport& r);

// Deterministic perturbation: one tensor per site (sample shape, added to
// every sample row; an empty tensor leaves the site clean) plus one flat
// delta per layer (empty = clean). The first-order checks need the exact
// same noise on the measured and the predicted path.
struct FixedNoise {
  std::vector<Tensor> activation;                // size site_count()
  std::vector<std::vector<double>> param_delta;  // size layer_count()
};

// Canonical mean loss with the fixed noise applied: parameters shifted once,
// each site's eps added to every sample row as it enters the layer.
double perturbed_mean_loss(const Network& net, const Dataset& eval_set, const FixedNoise& noise);

// First-order estimate of perturbed_mean_loss - mean_loss from gradients at
// the clean point: (1/m) (sum_s <G_s, eps_s> + sum_l <P_l, delta_l>) where
// G_s is the sample-summed gradient at site s and P_l the summed parameter
// gradient of layer l. Linear in (eps, delta).
double predict_first_order(const Network& net, const Dataset& eval_set, const FixedNoise& noise);

// Scale-grid quantizer: q = round_to_nearest(x / scale) with ties-to-even,
// dequant = q * scale, so |x - dequant| <= scale / 2 elementwise.
struct ScaleQuant {
  Tensor q;  // integer-valued
  Tensor dequant;
};
ScaleQuant quantize_scale(const Tensor& x, double scale);

// Parameter-only (storage) perturbation: the directly measured loss change
// next to the quadratic model half delta'H delta, with H applied through a
// central difference of analytic gradients. Warns on stderr when the
// summed-gradient norm per parameter exceeds warn_grad_norm, since the
// quadratic model assumes an extreme point.
struct StorageEval {
  double measured = 0.0;
  double quadratic = 0.0;
};
StorageEval storage_eval(const Network& net, const Dataset& eval_set,
                         const std::vector<std::vector<double>>& delta,
                         double warn_grad_norm = 1e-3);

}  // namespace prcl
