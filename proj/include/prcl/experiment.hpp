#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "prcl/dataset.hpp"
#include "prcl/layout.hpp"
#include "prcl/network.hpp"
#include "prcl/noise.hpp"
#include "prcl/sensitivity.hpp"

namespace prcl {

inline constexpr const char* kToolVersion = "1.0.0";

// One precision tier of a level-set description; multiplicity is how many
// layers the tier covers once expanded.
struct LevelEntry {
  std::string id;
  double max_error = 0.0;
  bool lossless_upconvert = false;
  int multiplicity = 1;
};

// The four built-in sigma tiers, available as level set "sigma".
std::vector<LevelEntry> named_level_set(const std::string& name);

// Expands tier entries to exactly n_layers levels. Multiplicities summing to
// n_layers are honored as given; all-ones entries are spread as equally as
// possible, earlier (coarser) entries taking the extras. Anything else is an
// error.
QuantLevelSet expand_levels(const std::vector<LevelEntry>& entries, int n_layers);

// Parses "id:max_error[:lossless|lossy][xN]" entries separated by commas,
// e.g. "sigma1:1e-3x2,sigma2:1e-5:lossless".
std::vector<LevelEntry> parse_level_spec(const std::string& text);

struct ExperimentConfig {
  // network: load this checkpoint, or train `arch` from scratch
  std::string checkpoint;
  std::string arch;
  uint64_t net_seed = 1;

  // dataset: generator kind or a CSV path
  std::string dataset = "two_moons";
  int dataset_n = 512;
  uint64_t dataset_seed = 1;

  // the first `calibration` samples profile the network; the rest are the
  // evaluation split unless eval_on_calibration reuses the same samples
  int calibration = 256;
  bool eval_on_calibration = false;

  std::string level_set = "sigma";  // named set; ignored when levels is set
  std::vector<LevelEntry> levels;

  std::vector<std::string> algorithms = {"gradient", "hessian_baseline", "random_k"};
  int trials = 20;
  int random_k = 10;
  int hessian_probes = 32;
  std::string noise_model = "uniform";
  std::string param_noise = "per_trial_frozen";
  uint64_t seed = 1;
  // artifact directory; an execution detail, excluded from the canonical
  // serialization and the config hash so relocated reruns stay comparable
  std::string out_dir;

  // training settings, used only when checkpoint is empty
  std::string optimizer = "momentum";
  double lr = 0.3;
  int epochs = 500;
  double grad_norm_target = 1e-3;
  int batch_size = 256;
  double momentum = 0.9;

  void validate() const;
};

std::string config_to_json(const ExperimentConfig& c);
ExperimentConfig config_from_json(const std::string& text);
// FNV-1a hash of the canonical config serialization, as fixed-width hex.
std::string config_hash(const ExperimentConfig& c);

// One comparison-table row, recomputable from the bundled raw reports.
struct TableRow {
  std::string algorithm;
  double mean_delta = 0.0;
  double std_delta = 0.0;
  double bound = 0.0;
  int trials = 0;
};

struct ReportBundle {
  ExperimentConfig config;
  std::string dataset_id;
  double baseline_loss = 0.0;
  SensitivityProfile profile;
  std::map<std::string, LayoutPlan> plans;     // keyed by table row name
  std::map<std::string, NoiseReport> reports;  // same keys
  std::vector<TableRow> table;
};

std::string bundle_to_json(const ReportBundle& b);
ReportBundle bundle_from_json(const std::string& text);
// Plain-text table of the bundle for terminal output.
std::string bundle_summary(const ReportBundle& b);

// Runs the full pipeline: acquire data, train or load the network, profile,
// plan each selected algorithm, simulate every plan, and write the bundle
// plus per-stage artifacts into config.out_dir (when set). A MANIFEST in the
// output directory records tool version, config hash, seeds, and the last
// completed stage; on a mid-stage failure the partial outputs stay behind
// and the error propagates.
ReportBundle run_experiment(const ExperimentConfig& config);

// Rank correlation of the planner bound against the measured mean loss
// change, with average ranks on ties.
double spearman(const std::vector<double>& a, const std::vector<double>& b);

struct ComparisonDoc {
  std::vector<std::string> sources;  // bundle labels, in input order
  std::vector<TableRow> rows;        // union of all bundle tables
  std::map<std::string, int> wins;   // pairwise mean-delta wins per algorithm
  double spearman_bound_vs_measured = 0.0;
  std::string dataset_id;
};

// Merges bundle reports into one document; all bundles must describe the
// same network and dataset.
ComparisonDoc compare_plans(const std::vector<ReportBundle>& bundles);

std::string comparison_to_json(const ComparisonDoc& doc);
std::string comparison_summary(const ComparisonDoc& doc);

// Generator-or-CSV dataset acquisition shared by the CLI subcommands.
Dataset acquire_dataset(const std::string& source, int n, uint64_t seed);

}  // namespace prcl
