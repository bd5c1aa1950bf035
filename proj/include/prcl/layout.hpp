#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "prcl/sensitivity.hpp"

namespace prcl {

// A precision level: max_error is the largest elementwise perturbation the
// level may introduce. max_error 0 marks the exact level; all zero-error
// entries in a set must share one id. lossless_upconvert says converting
// from any coarser level into this one loses nothing.
struct QuantLevel {
  std::string id;
  double max_error = 0.0;
  bool lossless_upconvert = false;
};

bool operator==(const QuantLevel& a, const QuantLevel& b);
bool operator!=(const QuantLevel& a, const QuantLevel& b);

// Multiset of levels, one entry per multiplicity. Total count must equal
// the number of assignable layers of the network it plans.
struct QuantLevelSet {
  std::vector<QuantLevel> levels;
  int size() const { return static_cast<int>(levels.size()); }
  void validate() const;
};

enum class PlanMode { kShared, kSplit };

// Per-layer precision assignment. activation_levels[i] quantizes the tensor
// entering layer i; param_levels[i], when set, quantizes layer i's
// parameters (shared mode copies the activation level there).
struct LayoutPlan {
  PlanMode mode = PlanMode::kShared;
  std::string provenance;
  std::vector<QuantLevel> activation_levels;
  std::vector<std::optional<QuantLevel>> param_levels;
  int layer_count() const { return static_cast<int>(activation_levels.size()); }
};

// Assigns coarse levels to low-sensitivity layers: levels sorted descending
// by max_error meet layers sorted ascending by input_grad_norm; ties break
// by ascending layer index. The profile may carry one trailing loss-input
// record beyond the assignable layers; it is ignored.
LayoutPlan plan_gradient(const SensitivityProfile& profile, const QuantLevelSet& levels);

// First-order degradation bound of a plan:
// (1/sample_count) * sum_i input_grad_norm_i * max_error(activation level i).
double bound_value(const SensitivityProfile& profile, const LayoutPlan& plan);

// Monotone layout: coarsest level nearest the input, precision never
// decreasing toward the output. Requires every finer level to up-convert
// losslessly, so conversion errors vanish along the depth.
LayoutPlan plan_trivial(const QuantLevelSet& levels, int n_layers);

// Storage-aware layout. Shared mode ranks layers by the sum of input and
// parameter gradient norms and assigns one level per layer to both aspects.
// Split mode ranks the two aspects independently, consuming one copy of the
// multiset per aspect; layers without parameters take no parameter level,
// and the parameter pass consumes only the coarsest levels it needs.
LayoutPlan plan_storage_aware(const SensitivityProfile& input_profile,
                              const SensitivityProfile& param_profile, const QuantLevelSet& levels,
                              PlanMode mode);

// Curvature baseline: layers ranked ascending by Hessian trace, paired like
// plan_gradient. Layers without a trace inherit the level assigned to the
// nearest preceding trace-bearing layer (the first following one when none
// precedes); only the trace-bearing layers consume the multiset.
LayoutPlan plan_hessian_baseline(const SensitivityProfile& profile, const QuantLevelSet& levels);

// Uniformly random multiset permutation, deterministic per seed.
LayoutPlan plan_random(const QuantLevelSet& levels, int n_layers, uint64_t seed);

enum class BruteforceObjective { kBound, kSimulatedLoss };

struct BruteforceResult {
  LayoutPlan plan;
  double value = 0.0;
};

// Number of distinct layer assignments of the multiset (n! over the product
// of multiplicity factorials).
int64_t distinct_assignment_count(const QuantLevelSet& levels);

// Exhaustive argmin over every distinct assignment, refusing above the
// 1e6-assignment guard. Ties resolve to the lexicographically first
// assignment. kSimulatedLoss scores plans through `simulated_value`.
BruteforceResult plan_bruteforce(const SensitivityProfile& profile, const QuantLevelSet& levels,
                                 BruteforceObjective objective,
                                 const std::function<double(const LayoutPlan&)>& simulated_value = {});

std::string plan_to_json(const LayoutPlan& plan);
LayoutPlan plan_from_json(const std::string& text);

}  // namespace prcl
