// Command-line front end: dataset generation, training, sensitivity
// analysis, precision planning, noise simulation, and full experiments.
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "prcl/checkpoint.hpp"
#include "prcl/experiment.hpp"
#include "prcl/parallel.hpp"
#include "prcl/rng.hpp"

namespace {

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void write_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
  out << text;
  if (!out) throw std::runtime_error("write to '" + path + "' failed");
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"mixed-precision layout planner and noise-injection simulator"};
  app.require_subcommand(1);
  app.fallthrough();
  app.set_version_flag("--version", prcl::kToolVersion);
  int workers = 0;
  app.add_option("--workers", workers, "worker thread count (0 = library default); never affects results");

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "generate a labeled dataset and write it as CSV");
  std::string gen_kind = "two_moons";
  int gen_n = 512;
  uint64_t gen_seed = 1;
  std::string gen_out = "data.csv";
  gen->add_option("--kind", gen_kind, "two_moons, gaussian_blobs, or digits8x8");
  gen->add_option("--n", gen_n, "sample count");
  gen->add_option("--seed", gen_seed, "generator seed");
  gen->add_option("--out", gen_out, "output CSV path");

  // train
  auto* train_cmd = app.add_subcommand("train", "train a network and save a checkpoint");
  std::string tr_arch;
  std::string tr_dataset = "two_moons";
  int tr_n = 512;
  uint64_t tr_data_seed = 1;
  uint64_t tr_net_seed = 1;
  std::string tr_optimizer = "momentum";
  double tr_lr = 0.3;
  int tr_epochs = 500;
  double tr_grad_target = 1e-3;
  int tr_batch = 256;
  double tr_momentum = 0.9;
  uint64_t tr_seed = 1;
  std::string tr_out = "trained.prcl";
  train_cmd->add_option("--arch", tr_arch, "architecture string")->required();
  train_cmd->add_option("--dataset", tr_dataset, "generator kind or CSV path");
  train_cmd->add_option("--n", tr_n, "generated sample count");
  train_cmd->add_option("--data-seed", tr_data_seed, "dataset seed");
  train_cmd->add_option("--net-seed", tr_net_seed, "parameter init seed");
  train_cmd->add_option("--optimizer", tr_optimizer, "sgd or momentum");
  train_cmd->add_option("--lr", tr_lr, "learning rate");
  train_cmd->add_option("--epochs", tr_epochs, "epoch cap");
  train_cmd->add_option("--grad-target", tr_grad_target, "stop once grad norm / param count falls below");
  train_cmd->add_option("--batch-size", tr_batch, "mini-batch size");
  train_cmd->add_option("--momentum", tr_momentum, "momentum coefficient");
  train_cmd->add_option("--seed", tr_seed, "mini-batch shuffle seed");
  train_cmd->add_option("--out", tr_out, "checkpoint path");

  // analyze
  auto* analyze = app.add_subcommand("analyze", "profile per-site and per-layer sensitivities");
  std::string an_checkpoint;
  std::string an_dataset = "two_moons";
  int an_n = 512;
  uint64_t an_data_seed = 1;
  int an_calibration = 0;
  bool an_hessian = false;
  int an_probes = 32;
  uint64_t an_seed = 1;
  std::string an_aggregate = "sum_of_norms";
  std::string an_out = "profile.json";
  analyze->add_option("--checkpoint", an_checkpoint, "trained network")->required();
  analyze->add_option("--dataset", an_dataset, "generator kind or CSV path");
  analyze->add_option("--n", an_n, "generated sample count");
  analyze->add_option("--data-seed", an_data_seed, "dataset seed");
  analyze->add_option("--calibration", an_calibration, "use only the first N samples (0 = all)");
  analyze->add_flag("--hessian", an_hessian, "add layer-restricted Hessian traces");
  analyze->add_option("--probes", an_probes, "Hutchinson probe count");
  analyze->add_option("--seed", an_seed, "probe seed");
  analyze->add_option("--aggregate", an_aggregate, "norm_of_sum or sum_of_norms");
  analyze->add_option("--out", an_out, "profile JSON path");

  // plan
  auto* plan_cmd = app.add_subcommand("plan", "assign precision levels to layers");
  std::string pl_profile;
  std::string pl_level_set = "sigma";
  std::string pl_levels;
  std::string pl_algorithm = "gradient";
  uint64_t pl_seed = 1;
  std::string pl_out = "plan.json";
  plan_cmd->add_option("--profile", pl_profile, "sensitivity profile JSON")->required();
  plan_cmd->add_option("--level-set", pl_level_set, "named level set");
  plan_cmd->add_option("--levels", pl_levels, "inline levels id:max_error[:lossless|lossy][xN],...");
  plan_cmd->add_option("--algorithm", pl_algorithm,
                       "gradient, trivial, storage_aware, storage_aware_split, hessian_baseline, "
                       "bruteforce, or random");
  plan_cmd->add_option("--seed", pl_seed, "seed for random plans");
  plan_cmd->add_option("--out", pl_out, "plan JSON path");

  // simulate
  auto* sim = app.add_subcommand("simulate", "measure loss degradation under a plan");
  std::string sm_checkpoint;
  std::string sm_plan;
  std::string sm_dataset = "two_moons";
  int sm_n = 512;
  uint64_t sm_data_seed = 1;
  int sm_skip = 0;
  std::string sm_model = "uniform";
  std::string sm_param_noise = "per_trial_frozen";
  int sm_trials = 20;
  uint64_t sm_seed = 1;
  std::string sm_out = "report";
  sim->add_option("--checkpoint", sm_checkpoint, "trained network")->required();
  sim->add_option("--plan", sm_plan, "plan JSON")->required();
  sim->add_option("--dataset", sm_dataset, "generator kind or CSV path");
  sim->add_option("--n", sm_n, "generated sample count");
  sim->add_option("--data-seed", sm_data_seed, "dataset seed");
  sim->add_option("--skip", sm_skip, "drop the first N samples (a calibration prefix)");
  sim->add_option("--model", sm_model, "uniform, scale_quant, directional_lossless, or none");
  sim->add_option("--param-noise", sm_param_noise, "per_trial_frozen or none");
  sim->add_option("--trials", sm_trials, "independent noise trials");
  sim->add_option("--seed", sm_seed, "noise seed");
  sim->add_option("--out", sm_out, "output stem; writes <stem>.json and <stem>.csv");

  // experiment
  auto* exp = app.add_subcommand("experiment", "run the full profile-plan-simulate pipeline");
  std::string ex_config;
  std::string ex_checkpoint;
  std::string ex_arch;
  std::string ex_dataset;
  int ex_n = 0;
  uint64_t ex_data_seed = 0;
  uint64_t ex_net_seed = 0;
  int ex_calibration = 0;
  bool ex_eval_on_calib = false;
  std::string ex_level_set;
  std::string ex_levels;
  std::string ex_algorithms;
  int ex_trials = 0;
  int ex_random_k = 0;
  int ex_probes = 0;
  std::string ex_model;
  uint64_t ex_seed = 0;
  std::string ex_out;
  exp->add_option("--config", ex_config, "experiment config JSON");
  exp->add_option("--checkpoint", ex_checkpoint, "trained network (overrides config)");
  exp->add_option("--arch", ex_arch, "architecture to train (overrides config)");
  exp->add_option("--dataset", ex_dataset, "generator kind or CSV path (overrides config)");
  exp->add_option("--n", ex_n, "generated sample count (overrides config)");
  exp->add_option("--data-seed", ex_data_seed, "dataset seed (overrides config)");
  exp->add_option("--net-seed", ex_net_seed, "parameter init seed (overrides config)");
  exp->add_option("--calibration", ex_calibration, "calibration prefix size (overrides config)");
  exp->add_flag("--eval-on-calibration", ex_eval_on_calib, "evaluate on the calibration samples");
  exp->add_option("--level-set", ex_level_set, "named level set (overrides config)");
  exp->add_option("--levels", ex_levels, "inline levels (overrides config)");
  exp->add_option("--algorithms", ex_algorithms, "comma-separated planner list (overrides config)");
  exp->add_option("--trials", ex_trials, "noise trials (overrides config)");
  exp->add_option("--random-k", ex_random_k, "random control plan count (overrides config)");
  exp->add_option("--probes", ex_probes, "Hutchinson probes (overrides config)");
  exp->add_option("--noise-model", ex_model, "activation noise model (overrides config)");
  exp->add_option("--seed", ex_seed, "master seed (overrides config)");
  exp->add_option("--out", ex_out, "output directory (overrides config)");

  // compare
  auto* cmp = app.add_subcommand("compare", "merge experiment bundles into one comparison");
  std::vector<std::string> cp_bundles;
  std::string cp_out;
  cmp->add_option("bundles", cp_bundles, "bundle JSON paths")->required()->expected(-1);
  cmp->add_option("--out", cp_out, "comparison JSON path");

  CLI11_PARSE(app, argc, argv);

  try {
    prcl::set_workers(workers);

    if (*gen) {
      prcl::Dataset ds = prcl::generate_dataset(prcl::dataset_kind_from_name(gen_kind), gen_n, gen_seed);
      prcl::save_csv(ds, gen_out);
      std::printf("wrote %d samples (%s) to %s\n", ds.size(), ds.id.c_str(), gen_out.c_str());
    } else if (*train_cmd) {
      prcl::Dataset ds = prcl::acquire_dataset(tr_dataset, tr_n, tr_data_seed);
      prcl::Network net = prcl::build_network(prcl::parse_arch(tr_arch), tr_net_seed);
      prcl::TrainOptions opt;
      opt.opt = tr_optimizer == "sgd" ? prcl::Optimizer::kSgd : prcl::Optimizer::kMomentum;
      if (tr_optimizer != "sgd" && tr_optimizer != "momentum") {
        throw std::invalid_argument("unknown optimizer '" + tr_optimizer + "'");
      }
      opt.lr = tr_lr;
      opt.epochs = tr_epochs;
      opt.grad_norm_target = tr_grad_target;
      opt.batch_size = tr_batch;
      opt.momentum = tr_momentum;
      opt.seed = tr_seed;
      prcl::TrainResult res = prcl::train(net, ds, opt);
      prcl::CheckpointMeta meta;
      meta.final_loss = res.final_loss;
      meta.final_grad_norm = res.final_grad_norm;
      meta.seed = tr_net_seed;
      meta.dataset_id = ds.id;
      prcl::save_checkpoint(tr_out, net, meta);
      std::printf("trained %d epochs: loss %.6g, grad norm %.6g; saved %s\n", res.epochs_run,
                  res.final_loss, res.final_grad_norm, tr_out.c_str());
    } else if (*analyze) {
      prcl::Network net = prcl::load_checkpoint(an_checkpoint).net;
      prcl::Dataset ds = prcl::acquire_dataset(an_dataset, an_n, an_data_seed);
      if (an_calibration > 0) ds = prcl::dataset_slice(ds, 0, an_calibration);
      prcl::Aggregate agg = prcl::aggregate_from_name(an_aggregate);
      prcl::SensitivityProfile prof =
          prcl::merge_profiles(prcl::input_gradient_profile(net, ds, agg),
                               prcl::param_gradient_profile(net, ds, agg));
      if (an_hessian) {
        prcl::SensitivityProfile traces =
            prcl::hessian_trace_profile(net, ds, an_probes, an_seed);
        traces.aggregate = prof.aggregate;  // trace records carry no norm data
        prof = prcl::merge_profiles(prof, traces);
      }
      write_file(an_out, prcl::profile_to_json(prof) + "\n");
      std::printf("profiled %d samples at %d sites; wrote %s\n", prof.sample_count,
                  static_cast<int>(prof.layers.size()), an_out.c_str());
    } else if (*plan_cmd) {
      prcl::SensitivityProfile prof = prcl::profile_from_json(read_file(pl_profile));
      int n_layers = static_cast<int>(prof.layers.size()) - 1;
      std::vector<prcl::LevelEntry> entries = pl_levels.empty()
                                                  ? prcl::named_level_set(pl_level_set)
                                                  : prcl::parse_level_spec(pl_levels);
      prcl::QuantLevelSet levels = prcl::expand_levels(entries, n_layers);
      prcl::LayoutPlan plan;
      if (pl_algorithm == "gradient") {
        plan = prcl::plan_gradient(prof, levels);
      } else if (pl_algorithm == "trivial") {
        plan = prcl::plan_trivial(levels, n_layers);
      } else if (pl_algorithm == "storage_aware") {
        plan = prcl::plan_storage_aware(prof, prof, levels, prcl::PlanMode::kShared);
      } else if (pl_algorithm == "storage_aware_split") {
        plan = prcl::plan_storage_aware(prof, prof, levels, prcl::PlanMode::kSplit);
      } else if (pl_algorithm == "hessian_baseline") {
        plan = prcl::plan_hessian_baseline(prof, levels);
      } else if (pl_algorithm == "bruteforce") {
        plan = prcl::plan_bruteforce(prof, levels, prcl::BruteforceObjective::kBound).plan;
      } else if (pl_algorithm == "random") {
        plan = prcl::plan_random(levels, n_layers, pl_seed);
      } else {
        throw std::invalid_argument("unknown planning algorithm '" + pl_algorithm + "'");
      }
      write_file(pl_out, prcl::plan_to_json(plan) + "\n");
      std::printf("planned %d layers (%s): bound %.6e; wrote %s\n", n_layers, pl_algorithm.c_str(),
                  prcl::bound_value(prof, plan), pl_out.c_str());
    } else if (*sim) {
      prcl::Network net = prcl::load_checkpoint(sm_checkpoint).net;
      prcl::LayoutPlan plan = prcl::plan_from_json(read_file(sm_plan));
      prcl::Dataset ds = prcl::acquire_dataset(sm_dataset, sm_n, sm_data_seed);
      if (sm_skip > 0) ds = prcl::dataset_slice(ds, sm_skip, ds.size());
      prcl::NoiseModel model{prcl::activation_noise_from_name(sm_model),
                             prcl::param_noise_from_name(sm_param_noise)};
      prcl::NoiseReport rep = prcl::simulate(net, ds, plan, model, sm_trials, sm_seed);
      write_file(sm_out + ".json", prcl::noise_report_to_json(rep) + "\n");
      write_file(sm_out + ".csv", prcl::noise_report_to_csv(rep));
      std::printf("%d trials on %d samples: baseline %.6g, mean delta %.6e (std %.6e); wrote %s.{json,csv}\n",
                  rep.trials(), ds.size(), rep.baseline_loss, rep.mean_delta, rep.std_delta,
                  sm_out.c_str());
    } else if (*exp) {
      prcl::ExperimentConfig config;
      if (!ex_config.empty()) config = prcl::config_from_json(read_file(ex_config));
      if (exp->count("--checkpoint")) config.checkpoint = ex_checkpoint;
      if (exp->count("--arch")) config.arch = ex_arch;
      if (exp->count("--dataset")) config.dataset = ex_dataset;
      if (exp->count("--n")) config.dataset_n = ex_n;
      if (exp->count("--data-seed")) config.dataset_seed = ex_data_seed;
      if (exp->count("--net-seed")) config.net_seed = ex_net_seed;
      if (exp->count("--calibration")) config.calibration = ex_calibration;
      if (exp->count("--eval-on-calibration")) config.eval_on_calibration = true;
      if (exp->count("--level-set")) config.level_set = ex_level_set;
      if (exp->count("--levels")) config.levels = prcl::parse_level_spec(ex_levels);
      if (exp->count("--algorithms")) config.algorithms = split_list(ex_algorithms);
      if (exp->count("--trials")) config.trials = ex_trials;
      if (exp->count("--random-k")) config.random_k = ex_random_k;
      if (exp->count("--probes")) config.hessian_probes = ex_probes;
      if (exp->count("--noise-model")) config.noise_model = ex_model;
      if (exp->count("--seed")) config.seed = ex_seed;
      if (exp->count("--out")) config.out_dir = ex_out;
      prcl::ReportBundle bundle = prcl::run_experiment(config);
      std::fputs(prcl::bundle_summary(bundle).c_str(), stdout);
      if (!config.out_dir.empty()) std::printf("artifacts in %s\n", config.out_dir.c_str());
    } else if (*cmp) {
      std::vector<prcl::ReportBundle> bundles;
      for (const std::string& path : cp_bundles) {
        bundles.push_back(prcl::bundle_from_json(read_file(path)));
      }
      prcl::ComparisonDoc doc = prcl::compare_plans(bundles);
      std::fputs(prcl::comparison_summary(doc).c_str(), stdout);
      if (!cp_out.empty()) {
        write_file(cp_out, prcl::comparison_to_json(doc) + "\n");
        std::printf("wrote %s\n", cp_out.c_str());
      }
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
