#include "prcl/layout.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>

#include "json.hpp"
#include "prcl/rng.hpp"

namespace prcl {

bool operator==(const QuantLevel& a, const QuantLevel& b) {
  return a.id == b.id && a.max_error == b.max_error && a.lossless_upconvert == b.lossless_upconvert;
}

bool operator!=(const QuantLevel& a, const QuantLevel& b) { return !(a == b); }

void QuantLevelSet::validate() const {
  if (levels.empty()) throw std::invalid_argument("level set is empty");
  std::string exact_id;
  std::map<std::string, const QuantLevel*> by_id;
  for (const QuantLevel& l : levels) {
    if (l.id.empty()) throw std::invalid_argument("level with empty id");
    if (!(l.max_error >= 0) || !std::isfinite(l.max_error)) {
      throw std::invalid_argument("level '" + l.id + "' has invalid max_error");
    }
    if (l.max_error == 0.0) {
      if (exact_id.empty()) {
        exact_id = l.id;
      } else if (exact_id != l.id) {
        throw std::invalid_argument("levels '" + exact_id + "' and '" + l.id +
                                    "' both claim max_error 0; only one exact level is allowed");
      }
    }
    auto [it, fresh] = by_id.emplace(l.id, &l);
    if (!fresh && *it->second != l) {
      throw std::invalid_argument("level id '" + l.id + "' reused with different fields");
    }
  }
}

namespace {

// Canonical descending-coarseness order; ids break exact max_error ties.
std::vector<QuantLevel> sorted_desc(const QuantLevelSet& set) {
  std::vector<QuantLevel> out = set.levels;
  std::sort(out.begin(), out.end(), [](const QuantLevel& a, const QuantLevel& b) {
    if (a.max_error != b.max_error) return a.max_error > b.max_error;
    if (a.id != b.id) return a.id < b.id;
    return a.lossless_upconvert < b.lossless_upconvert;
  });
  return out;
}

// First n profile records; one extra trailing record (the loss input) is
// tolerated and dropped.
std::vector<const LayerSensitivity*> assignable_records(const SensitivityProfile& profile, int n,
                                                        const char* op) {
  int have = static_cast<int>(profile.layers.size());
  if (have != n && have != n + 1) {
    throw std::invalid_argument(std::string(op) + ": profile has " + std::to_string(have) +
                                " records but the level set plans " + std::to_string(n) + " layers");
  }
  std::vector<const LayerSensitivity*> recs;
  recs.reserve(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) recs.push_back(&profile.layers[static_cast<size_t>(i)]);
  return recs;
}

// Layer order of ascending sensitivity, ties by ascending layer index.
std::vector<int> ascending_order(const std::vector<double>& sensitivity) {
  std::vector<int> order(sensitivity.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    double sa = sensitivity[static_cast<size_t>(a)];
    double sb = sensitivity[static_cast<size_t>(b)];
    if (sa != sb) return sa < sb;
    return a < b;
  });
  return order;
}

LayoutPlan paired_plan(const std::vector<double>& sensitivity, const QuantLevelSet& levels,
                       std::string provenance) {
  std::vector<QuantLevel> desc = sorted_desc(levels);
  std::vector<int> order = ascending_order(sensitivity);
  LayoutPlan plan;
  plan.mode = PlanMode::kShared;
  plan.provenance = std::move(provenance);
  plan.activation_levels.resize(sensitivity.size());
  plan.param_levels.resize(sensitivity.size());
  for (size_t k = 0; k < order.size(); ++k) {
    size_t layer = static_cast<size_t>(order[k]);
    plan.activation_levels[layer] = desc[k];
    plan.param_levels[layer] = desc[k];
  }
  return plan;
}

double require_field(const std::optional<double>& field, int layer, const char* op,
                     const char* name) {
  if (!field.has_value()) {
    throw std::invalid_argument(std::string(op) + ": layer " + std::to_string(layer) + " has no " +
                                name);
  }
  return *field;
}

}  // namespace

LayoutPlan plan_gradient(const SensitivityProfile& profile, const QuantLevelSet& levels) {
  levels.validate();
  auto recs = assignable_records(profile, levels.size(), "plan_gradient");
  std::vector<double> sens;
  sens.reserve(recs.size());
  for (size_t i = 0; i < recs.size(); ++i) {
    sens.push_back(require_field(recs[i]->input_grad_norm, static_cast<int>(i), "plan_gradient",
                                 "input_grad_norm"));
  }
  return paired_plan(sens, levels, "gradient");
}

double bound_value(const SensitivityProfile& profile, const LayoutPlan& plan) {
  if (profile.sample_count < 1) throw std::invalid_argument("bound_value: profile sample_count must be >= 1");
  auto recs = assignable_records(profile, plan.layer_count(), "bound_value");
  double sum = 0.0;
  for (size_t i = 0; i < recs.size(); ++i) {
    double norm =
        require_field(recs[i]->input_grad_norm, static_cast<int>(i), "bound_value", "input_grad_norm");
    sum += norm * plan.activation_levels[i].max_error;
  }
  return sum / static_cast<double>(profile.sample_count);
}

LayoutPlan plan_trivial(const QuantLevelSet& levels, int n_layers) {
  levels.validate();
  if (levels.size() != n_layers) {
    throw std::invalid_argument("plan_trivial: " + std::to_string(levels.size()) + " levels for " +
                                std::to_string(n_layers) + " layers");
  }
  std::vector<QuantLevel> desc = sorted_desc(levels);
  for (size_t i = 1; i < desc.size(); ++i) {
    if (desc[i].max_error < desc[i - 1].max_error && !desc[i].lossless_upconvert) {
      throw std::invalid_argument("plan_trivial: conversion from '" + desc[i - 1].id + "' into '" +
                                  desc[i].id + "' is lossy; the monotone layout needs lossless up-conversion");
    }
  }
  LayoutPlan plan;
  plan.mode = PlanMode::kShared;
  plan.provenance = "trivial";
  plan.activation_levels = desc;
  plan.param_levels.assign(desc.begin(), desc.end());
  return plan;
}

LayoutPlan plan_storage_aware(const SensitivityProfile& input_profile,
                              const SensitivityProfile& param_profile, const QuantLevelSet& levels,
                              PlanMode mode) {
  levels.validate();
  int n = levels.size();
  auto in_recs = assignable_records(input_profile, n, "plan_storage_aware");
  auto pw_recs = assignable_records(param_profile, n, "plan_storage_aware");

  if (mode == PlanMode::kShared) {
    std::vector<double> sens(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
      double in = require_field(in_recs[static_cast<size_t>(i)]->input_grad_norm, i,
                                "plan_storage_aware", "input_grad_norm");
      double pw = pw_recs[static_cast<size_t>(i)]->param_grad_norm.value_or(0.0);
      sens[static_cast<size_t>(i)] = in + pw;
    }
    LayoutPlan plan = paired_plan(sens, levels, "storage_aware_shared");
    return plan;
  }

  std::vector<double> in_sens(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    in_sens[static_cast<size_t>(i)] = require_field(in_recs[static_cast<size_t>(i)]->input_grad_norm,
                                                    i, "plan_storage_aware", "input_grad_norm");
  }
  LayoutPlan plan = paired_plan(in_sens, levels, "storage_aware_split");
  plan.mode = PlanMode::kSplit;
  plan.param_levels.assign(static_cast<size_t>(n), std::nullopt);

  std::vector<int> with_params;
  std::vector<double> pw_sens;
  for (int i = 0; i < n; ++i) {
    if (pw_recs[static_cast<size_t>(i)]->param_grad_norm.has_value()) {
      with_params.push_back(i);
      pw_sens.push_back(*pw_recs[static_cast<size_t>(i)]->param_grad_norm);
    }
  }
  if (static_cast<int>(with_params.size()) > n) {
    throw std::invalid_argument("plan_storage_aware: more param-bearing layers than levels");
  }
  std::vector<QuantLevel> desc = sorted_desc(levels);
  std::vector<int> order = ascending_order(pw_sens);
  for (size_t k = 0; k < order.size(); ++k) {
    plan.param_levels[static_cast<size_t>(with_params[static_cast<size_t>(order[k])])] = desc[k];
  }
  return plan;
}

LayoutPlan plan_hessian_baseline(const SensitivityProfile& profile, const QuantLevelSet& levels) {
  levels.validate();
  int n = levels.size();
  auto recs = assignable_records(profile, n, "plan_hessian_baseline");

  std::vector<int> traced;
  std::vector<double> traces;
  for (int i = 0; i < n; ++i) {
    if (recs[static_cast<size_t>(i)]->hessian_trace.has_value()) {
      traced.push_back(i);
      traces.push_back(recs[static_cast<size_t>(i)]->hessian_trace->mean);
    }
  }
  if (traced.empty()) throw std::invalid_argument("plan_hessian_baseline: profile has no hessian traces");

  LayoutPlan plan;
  plan.mode = PlanMode::kShared;
  plan.provenance = "hessian_baseline";
  plan.activation_levels.resize(static_cast<size_t>(n));
  plan.param_levels.resize(static_cast<size_t>(n));
  std::vector<QuantLevel> desc = sorted_desc(levels);
  std::vector<int> order = ascending_order(traces);
  std::vector<bool> assigned(static_cast<size_t>(n), false);
  for (size_t k = 0; k < order.size(); ++k) {
    int layer = traced[static_cast<size_t>(order[k])];
    plan.activation_levels[static_cast<size_t>(layer)] = desc[k];
    assigned[static_cast<size_t>(layer)] = true;
  }
  // Trace-less layers copy the nearest preceding traced layer's level, the
  // first following one when none precedes; the copies consume nothing.
  for (int i = 0; i < n; ++i) {
    if (assigned[static_cast<size_t>(i)]) continue;
    int src = -1;
    for (int j = i - 1; j >= 0; --j) {
      if (assigned[static_cast<size_t>(j)]) {
        src = j;
        break;
      }
    }
    if (src < 0) {
      for (int j = i + 1; j < n; ++j) {
        if (assigned[static_cast<size_t>(j)]) {
          src = j;
          break;
        }
      }
    }
    plan.activation_levels[static_cast<size_t>(i)] = plan.activation_levels[static_cast<size_t>(src)];
  }
  for (int i = 0; i < n; ++i) {
    plan.param_levels[static_cast<size_t>(i)] = plan.activation_levels[static_cast<size_t>(i)];
  }
  return plan;
}

LayoutPlan plan_random(const QuantLevelSet& levels, int n_layers, uint64_t seed) {
  levels.validate();
  if (levels.size() != n_layers) {
    throw std::invalid_argument("plan_random: " + std::to_string(levels.size()) + " levels for " +
                                std::to_string(n_layers) + " layers");
  }
  std::vector<QuantLevel> order = sorted_desc(levels);
  RngStream rng(seed, "plan_random");
  for (size_t i = order.size() - 1; i > 0; --i) {
    size_t j = static_cast<size_t>(rng.next_below(static_cast<uint64_t>(i + 1)));
    std::swap(order[i], order[j]);
  }
  LayoutPlan plan;
  plan.mode = PlanMode::kShared;
  plan.provenance = "random";
  plan.activation_levels = order;
  plan.param_levels.assign(order.begin(), order.end());
  return plan;
}

int64_t distinct_assignment_count(const QuantLevelSet& levels) {
  levels.validate();
  constexpr int64_t kCap = 1000000;
  std::map<std::string, int> mult;
  for (const QuantLevel& l : levels.levels) ++mult[l.id];
  // Product of binomials C(remaining, count); each stepwise division is
  // exact and the running value never decreases, so the cap check is safe.
  int64_t total = 1;
  int remaining = levels.size();
  for (const auto& [id, count] : mult) {
    for (int i = 1; i <= count; ++i) {
      total = total * (remaining - count + i) / i;
      if (total > kCap) return kCap + 1;
    }
    remaining -= count;
  }
  return total;
}

BruteforceResult plan_bruteforce(const SensitivityProfile& profile, const QuantLevelSet& levels,
                                 BruteforceObjective objective,
                                 const std::function<double(const LayoutPlan&)>& simulated_value) {
  levels.validate();
  int n = levels.size();
  auto recs = assignable_records(profile, n, "plan_bruteforce");
  if (objective == BruteforceObjective::kSimulatedLoss && !simulated_value) {
    throw std::invalid_argument("plan_bruteforce: simulated objective needs a value function");
  }
  constexpr int64_t kGuard = 1000000;
  if (distinct_assignment_count(levels) > kGuard) {
    throw std::invalid_argument(
        "plan_bruteforce: more than 1e6 distinct assignments; use plan_gradient instead");
  }

  std::vector<double> norms;
  if (objective == BruteforceObjective::kBound) {
    for (int i = 0; i < n; ++i) {
      norms.push_back(require_field(recs[static_cast<size_t>(i)]->input_grad_norm, i,
                                    "plan_bruteforce", "input_grad_norm"));
    }
    if (profile.sample_count < 1) {
      throw std::invalid_argument("plan_bruteforce: profile sample_count must be >= 1");
    }
  }

  auto level_less = [](const QuantLevel& a, const QuantLevel& b) {
    if (a.id != b.id) return a.id < b.id;
    if (a.max_error != b.max_error) return a.max_error < b.max_error;
    return a.lossless_upconvert < b.lossless_upconvert;
  };
  std::vector<QuantLevel> arrangement = levels.levels;
  std::sort(arrangement.begin(), arrangement.end(), level_less);

  LayoutPlan plan;
  plan.mode = PlanMode::kShared;
  plan.provenance =
      objective == BruteforceObjective::kBound ? "bruteforce_bound" : "bruteforce_simulated";
  plan.activation_levels.resize(static_cast<size_t>(n));
  plan.param_levels.resize(static_cast<size_t>(n));

  bool have_best = false;
  double best = 0.0;
  std::vector<QuantLevel> best_arrangement;
  do {
    double value;
    if (objective == BruteforceObjective::kBound) {
      double sum = 0.0;
      for (int i = 0; i < n; ++i) sum += norms[static_cast<size_t>(i)] * arrangement[static_cast<size_t>(i)].max_error;
      value = sum / static_cast<double>(profile.sample_count);
    } else {
      for (int i = 0; i < n; ++i) {
        plan.activation_levels[static_cast<size_t>(i)] = arrangement[static_cast<size_t>(i)];
        plan.param_levels[static_cast<size_t>(i)] = arrangement[static_cast<size_t>(i)];
      }
      value = simulated_value(plan);
    }
    // next_permutation over level_less emits ascending lexicographic order,
    // so a strict < keeps the first arrangement among ties.
    if (!have_best || value < best) {
      have_best = true;
      best = value;
      best_arrangement = arrangement;
    }
  } while (std::next_permutation(arrangement.begin(), arrangement.end(), level_less));

  for (int i = 0; i < n; ++i) {
    plan.activation_levels[static_cast<size_t>(i)] = best_arrangement[static_cast<size_t>(i)];
    plan.param_levels[static_cast<size_t>(i)] = best_arrangement[static_cast<size_t>(i)];
  }
  return {plan, best};
}

namespace {

const char* mode_name(PlanMode m) { return m == PlanMode::kShared ? "shared" : "split"; }

PlanMode mode_from_name(const std::string& s) {
  if (s == "shared") return PlanMode::kShared;
  if (s == "split") return PlanMode::kSplit;
  throw std::invalid_argument("unknown plan mode '" + s + "'");
}

}  // namespace

std::string plan_to_json(const LayoutPlan& plan) {
  nlohmann::json doc;
  doc["schema_version"] = 1;
  doc["kind"] = "layout_plan";
  doc["mode"] = mode_name(plan.mode);
  doc["provenance"] = plan.provenance;
  doc["layer_count"] = plan.layer_count();
  auto& table = doc["levels"] = nlohmann::json::object();
  auto put_level = [&](const QuantLevel& l) {
    table[l.id] = {{"max_error", l.max_error}, {"lossless_upconvert", l.lossless_upconvert}};
  };
  auto& assignment = doc["assignment"] = nlohmann::json::array();
  for (int i = 0; i < plan.layer_count(); ++i) {
    const QuantLevel& act = plan.activation_levels[static_cast<size_t>(i)];
    const auto& par = plan.param_levels[static_cast<size_t>(i)];
    put_level(act);
    if (par.has_value() && *par == act) {
      assignment.push_back({{"layer_index", i}, {"level_id", act.id}, {"applies_to", "both"}});
    } else {
      assignment.push_back({{"layer_index", i}, {"level_id", act.id}, {"applies_to", "activation"}});
      if (par.has_value()) {
        put_level(*par);
        assignment.push_back({{"layer_index", i}, {"level_id", par->id}, {"applies_to", "params"}});
      }
    }
  }
  return doc.dump(2);
}

LayoutPlan plan_from_json(const std::string& text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument(std::string("plan_from_json: ") + e.what());
  }
  try {
    if (doc.at("schema_version").get<int>() != 1) {
      throw std::invalid_argument("plan_from_json: unsupported schema_version");
    }
    if (doc.at("kind").get<std::string>() != "layout_plan") {
      throw std::invalid_argument("plan_from_json: not a layout plan");
    }
    LayoutPlan plan;
    plan.mode = mode_from_name(doc.at("mode").get<std::string>());
    plan.provenance = doc.at("provenance").get<std::string>();
    int n = doc.at("layer_count").get<int>();
    if (n < 1) throw std::invalid_argument("plan_from_json: layer_count must be >= 1");
    plan.activation_levels.resize(static_cast<size_t>(n));
    plan.param_levels.resize(static_cast<size_t>(n));

    std::map<std::string, QuantLevel> table;
    for (const auto& [id, body] : doc.at("levels").items()) {
      QuantLevel l;
      l.id = id;
      l.max_error = body.at("max_error").get<double>();
      l.lossless_upconvert = body.at("lossless_upconvert").get<bool>();
      table[id] = l;
    }

    std::vector<bool> have_act(static_cast<size_t>(n), false);
    for (const auto& rec : doc.at("assignment")) {
      int layer = rec.at("layer_index").get<int>();
      if (layer < 0 || layer >= n) throw std::invalid_argument("plan_from_json: layer_index out of range");
      std::string id = rec.at("level_id").get<std::string>();
      auto it = table.find(id);
      if (it == table.end()) throw std::invalid_argument("plan_from_json: level '" + id + "' not in table");
      std::string applies = rec.at("applies_to").get<std::string>();
      if (applies == "both") {
        plan.activation_levels[static_cast<size_t>(layer)] = it->second;
        plan.param_levels[static_cast<size_t>(layer)] = it->second;
        have_act[static_cast<size_t>(layer)] = true;
      } else if (applies == "activation") {
        plan.activation_levels[static_cast<size_t>(layer)] = it->second;
        have_act[static_cast<size_t>(layer)] = true;
      } else if (applies == "params") {
        plan.param_levels[static_cast<size_t>(layer)] = it->second;
      } else {
        throw std::invalid_argument("plan_from_json: bad applies_to '" + applies + "'");
      }
    }
    for (int i = 0; i < n; ++i) {
      if (!have_act[static_cast<size_t>(i)]) {
        throw std::invalid_argument("plan_from_json: layer " + std::to_string(i) + " has no activation level");
      }
    }
    return plan;
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument(std::string("plan_from_json: ") + e.what());
  }
}

}  // namespace prcl
