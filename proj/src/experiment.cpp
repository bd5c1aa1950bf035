#include "prcl/experiment.hpp"

#include <algorithm>
#include <cctype>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>
#include <stdexcept>
#include <utility>

#include "json.hpp"
#include "prcl/checkpoint.hpp"
#include "prcl/rng.hpp"

namespace fs = std::filesystem;

namespace prcl {

namespace {

const std::set<std::string> kAlgorithms = {"gradient",         "trivial",   "storage_aware",
                                           "storage_aware_split", "hessian_baseline", "bruteforce",
                                           "random_k"};

std::string algorithms_list() {
  std::string out;
  for (const auto& a : kAlgorithms) out += (out.empty() ? "" : ", ") + a;
  return out;
}

void write_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
  out << text;
  if (!out) throw std::runtime_error("write to '" + path + "' failed");
}

std::string trim(const std::string& s) {
  size_t b = 0;
  size_t e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

double parse_double(const std::string& s, const std::string& what) {
  size_t pos = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &pos);
  } catch (const std::exception&) {
    throw std::invalid_argument(what + ": '" + s + "' is not a number");
  }
  if (pos != s.size() || !std::isfinite(v)) {
    throw std::invalid_argument(what + ": '" + s + "' is not a finite number");
  }
  return v;
}

nlohmann::json levels_to_json(const std::vector<LevelEntry>& levels) {
  auto arr = nlohmann::json::array();
  for (const LevelEntry& e : levels) {
    arr.push_back({{"id", e.id},
                   {"max_error", e.max_error},
                   {"lossless_upconvert", e.lossless_upconvert},
                   {"multiplicity", e.multiplicity}});
  }
  return arr;
}

std::vector<LevelEntry> levels_from_json(const nlohmann::json& arr) {
  std::vector<LevelEntry> out;
  for (const auto& rec : arr) {
    LevelEntry e;
    e.id = rec.at("id").get<std::string>();
    e.max_error = rec.at("max_error").get<double>();
    e.lossless_upconvert = rec.value("lossless_upconvert", false);
    e.multiplicity = rec.value("multiplicity", 1);
    out.push_back(e);
  }
  return out;
}

nlohmann::json table_to_json(const std::vector<TableRow>& table) {
  auto arr = nlohmann::json::array();
  for (const TableRow& row : table) {
    arr.push_back({{"algorithm", row.algorithm},
                   {"mean_delta", row.mean_delta},
                   {"std_delta", row.std_delta},
                   {"bound", row.bound},
                   {"trials", row.trials}});
  }
  return arr;
}

std::vector<TableRow> table_from_json(const nlohmann::json& arr) {
  std::vector<TableRow> out;
  for (const auto& rec : arr) {
    TableRow row;
    row.algorithm = rec.at("algorithm").get<std::string>();
    row.mean_delta = rec.at("mean_delta").get<double>();
    row.std_delta = rec.at("std_delta").get<double>();
    row.bound = rec.at("bound").get<double>();
    row.trials = rec.at("trials").get<int>();
    out.push_back(row);
  }
  return out;
}

void write_manifest(const std::string& dir, const ExperimentConfig& c, const std::string& stage,
                    const std::string& status) {
  nlohmann::json doc;
  doc["schema_version"] = 1;
  doc["kind"] = "manifest";
  doc["tool_version"] = kToolVersion;
  doc["config_hash"] = config_hash(c);
  doc["seeds"] = {{"master", c.seed}, {"dataset", c.dataset_seed}, {"network", c.net_seed}};
  doc["stage"] = stage;
  doc["status"] = status;
  write_file((fs::path(dir) / "MANIFEST").string(), doc.dump(2) + "\n");
}

// Average ranks, ties sharing the mean of their positions.
std::vector<double> average_ranks(const std::vector<double>& v) {
  size_t n = v.size();
  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), size_t{0});
  std::sort(order.begin(), order.end(), [&](size_t a, size_t b) { return v[a] < v[b]; });
  std::vector<double> ranks(n, 0.0);
  size_t i = 0;
  while (i < n) {
    size_t j = i;
    while (j < n && v[order[j]] == v[order[i]]) ++j;
    double avg = 0.5 * static_cast<double>(i + j - 1) + 1.0;
    for (size_t k = i; k < j; ++k) ranks[order[k]] = avg;
    i = j;
  }
  return ranks;
}

}  // namespace

std::vector<LevelEntry> named_level_set(const std::string& name) {
  if (name == "sigma") {
    return {{"sigma1", 1e-3, true, 1},
            {"sigma2", 1e-5, true, 1},
            {"sigma3", 1e-7, true, 1},
            {"sigma4", 1e-10, true, 1}};
  }
  throw std::invalid_argument("unknown level set '" + name + "' (known: sigma)");
}

QuantLevelSet expand_levels(const std::vector<LevelEntry>& entries, int n_layers) {
  if (entries.empty()) throw std::invalid_argument("expand_levels: no level entries");
  if (n_layers < 1) throw std::invalid_argument("expand_levels: layer count must be >= 1");
  int64_t sum = 0;
  bool all_ones = true;
  for (const LevelEntry& e : entries) {
    if (e.multiplicity < 1) {
      throw std::invalid_argument("expand_levels: multiplicity of '" + e.id + "' must be >= 1");
    }
    sum += e.multiplicity;
    all_ones = all_ones && e.multiplicity == 1;
  }
  std::vector<int> counts;
  counts.reserve(entries.size());
  if (sum == n_layers) {
    for (const LevelEntry& e : entries) counts.push_back(e.multiplicity);
  } else if (all_ones) {
    // as-equal-as-possible subsets; earlier entries take the extras
    int tiers = static_cast<int>(entries.size());
    for (int i = 0; i < tiers; ++i) counts.push_back(n_layers / tiers + (i < n_layers % tiers ? 1 : 0));
  } else {
    throw std::invalid_argument("level multiplicities sum to " + std::to_string(sum) +
                                " but the network has " + std::to_string(n_layers) + " layers");
  }
  QuantLevelSet set;
  for (size_t i = 0; i < entries.size(); ++i) {
    for (int r = 0; r < counts[i]; ++r) {
      set.levels.push_back(QuantLevel{entries[i].id, entries[i].max_error, entries[i].lossless_upconvert});
    }
  }
  set.validate();
  return set;
}

std::vector<LevelEntry> parse_level_spec(const std::string& text) {
  std::vector<LevelEntry> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (item.empty()) continue;
    LevelEntry e;
    // optional trailing xN multiplier
    size_t xpos = item.find_last_of('x');
    if (xpos != std::string::npos && xpos + 1 < item.size() &&
        std::all_of(item.begin() + static_cast<long>(xpos) + 1, item.end(),
                    [](char c) { return std::isdigit(static_cast<unsigned char>(c)); })) {
      e.multiplicity = std::stoi(item.substr(xpos + 1));
      item = item.substr(0, xpos);
    }
    std::vector<std::string> parts;
    std::stringstream ps(item);
    std::string part;
    while (std::getline(ps, part, ':')) parts.push_back(trim(part));
    if (parts.size() < 2 || parts.size() > 3 || parts[0].empty()) {
      throw std::invalid_argument("level entry '" + item +
                                  "' does not match id:max_error[:lossless|lossy][xN]");
    }
    e.id = parts[0];
    e.max_error = parse_double(parts[1], "level '" + e.id + "'");
    if (e.max_error < 0.0) {
      throw std::invalid_argument("level '" + e.id + "' has negative max_error");
    }
    if (parts.size() == 3) {
      if (parts[2] == "lossless") {
        e.lossless_upconvert = true;
      } else if (parts[2] == "lossy") {
        e.lossless_upconvert = false;
      } else {
        throw std::invalid_argument("level '" + e.id + "': expected lossless or lossy, got '" +
                                    parts[2] + "'");
      }
    }
    out.push_back(e);
  }
  if (out.empty()) throw std::invalid_argument("level spec '" + text + "' holds no entries");
  return out;
}

void ExperimentConfig::validate() const {
  if (checkpoint.empty() && arch.empty()) {
    throw std::invalid_argument("config needs a checkpoint path or an arch string");
  }
  if (!checkpoint.empty() && !fs::exists(checkpoint)) {
    throw std::invalid_argument("checkpoint '" + checkpoint + "' does not exist");
  }
  if (dataset.empty()) throw std::invalid_argument("config needs a dataset source");
  if (dataset.find(".csv") != std::string::npos && !fs::exists(dataset)) {
    throw std::invalid_argument("dataset file '" + dataset + "' does not exist");
  }
  if (trials < 1) throw std::invalid_argument("trials must be >= 1");
  if (calibration < 1) throw std::invalid_argument("calibration must be >= 1");
  if (random_k < 1) throw std::invalid_argument("random_k must be >= 1");
  if (hessian_probes < 1) throw std::invalid_argument("hessian_probes must be >= 1");
  if (algorithms.empty()) throw std::invalid_argument("config selects no algorithms");
  for (const std::string& a : algorithms) {
    if (kAlgorithms.count(a) == 0) {
      throw std::invalid_argument("unknown algorithm '" + a + "' (known: " + algorithms_list() + ")");
    }
  }
  if (levels.empty()) named_level_set(level_set);
  for (const LevelEntry& e : levels) {
    if (e.id.empty()) throw std::invalid_argument("level entry with empty id");
    if (!std::isfinite(e.max_error) || e.max_error < 0.0) {
      throw std::invalid_argument("level '" + e.id + "' needs a finite max_error >= 0");
    }
    if (e.multiplicity < 1) throw std::invalid_argument("level '" + e.id + "' needs multiplicity >= 1");
  }
  activation_noise_from_name(noise_model);
  param_noise_from_name(param_noise);
  if (optimizer != "sgd" && optimizer != "momentum") {
    throw std::invalid_argument("unknown optimizer '" + optimizer + "' (known: sgd, momentum)");
  }
  if (checkpoint.empty()) {
    if (epochs < 1) throw std::invalid_argument("epochs must be >= 1");
    if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
    if (!(lr > 0.0)) throw std::invalid_argument("lr must be > 0");
  }
}

std::string config_to_json(const ExperimentConfig& c) {
  nlohmann::json doc;
  doc["schema_version"] = 1;
  doc["kind"] = "experiment_config";
  doc["checkpoint"] = c.checkpoint;
  doc["arch"] = c.arch;
  doc["net_seed"] = c.net_seed;
  doc["dataset"] = c.dataset;
  doc["dataset_n"] = c.dataset_n;
  doc["dataset_seed"] = c.dataset_seed;
  doc["calibration"] = c.calibration;
  doc["eval_on_calibration"] = c.eval_on_calibration;
  doc["level_set"] = c.level_set;
  doc["levels"] = levels_to_json(c.levels);
  doc["algorithms"] = c.algorithms;
  doc["trials"] = c.trials;
  doc["random_k"] = c.random_k;
  doc["hessian_probes"] = c.hessian_probes;
  doc["noise_model"] = c.noise_model;
  doc["param_noise"] = c.param_noise;
  doc["seed"] = c.seed;
  doc["optimizer"] = c.optimizer;
  doc["lr"] = c.lr;
  doc["epochs"] = c.epochs;
  doc["grad_norm_target"] = c.grad_norm_target;
  doc["batch_size"] = c.batch_size;
  doc["momentum"] = c.momentum;
  return doc.dump(2);
}

ExperimentConfig config_from_json(const std::string& text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument(std::string("config is not valid json: ") + e.what());
  }
  try {
    if (doc.at("schema_version").get<int>() != 1) {
      throw std::invalid_argument("config has unsupported schema_version " +
                                  doc.at("schema_version").dump());
    }
    if (doc.at("kind").get<std::string>() != "experiment_config") {
      throw std::invalid_argument("expected kind 'experiment_config', got " + doc.at("kind").dump());
    }
    ExperimentConfig c;
    c.checkpoint = doc.value("checkpoint", c.checkpoint);
    c.arch = doc.value("arch", c.arch);
    c.net_seed = doc.value("net_seed", c.net_seed);
    c.dataset = doc.value("dataset", c.dataset);
    c.dataset_n = doc.value("dataset_n", c.dataset_n);
    c.dataset_seed = doc.value("dataset_seed", c.dataset_seed);
    c.calibration = doc.value("calibration", c.calibration);
    c.eval_on_calibration = doc.value("eval_on_calibration", c.eval_on_calibration);
    c.level_set = doc.value("level_set", c.level_set);
    if (doc.contains("levels")) c.levels = levels_from_json(doc.at("levels"));
    if (doc.contains("algorithms")) c.algorithms = doc.at("algorithms").get<std::vector<std::string>>();
    c.trials = doc.value("trials", c.trials);
    c.random_k = doc.value("random_k", c.random_k);
    c.hessian_probes = doc.value("hessian_probes", c.hessian_probes);
    c.noise_model = doc.value("noise_model", c.noise_model);
    c.param_noise = doc.value("param_noise", c.param_noise);
    c.seed = doc.value("seed", c.seed);
    c.optimizer = doc.value("optimizer", c.optimizer);
    c.lr = doc.value("lr", c.lr);
    c.epochs = doc.value("epochs", c.epochs);
    c.grad_norm_target = doc.value("grad_norm_target", c.grad_norm_target);
    c.batch_size = doc.value("batch_size", c.batch_size);
    c.momentum = doc.value("momentum", c.momentum);
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument(std::string("malformed config: ") + e.what());
  }
}

std::string config_hash(const ExperimentConfig& c) {
  uint64_t h = key_hash(config_to_json(c));
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

Dataset acquire_dataset(const std::string& source, int n, uint64_t seed) {
  if (source.find(".csv") != std::string::npos || source.find('/') != std::string::npos) {
    return load_csv(source);
  }
  return generate_dataset(dataset_kind_from_name(source), n, seed);
}

std::string bundle_to_json(const ReportBundle& b) {
  nlohmann::json doc;
  doc["schema_version"] = 1;
  doc["kind"] = "report_bundle";
  doc["tool_version"] = kToolVersion;
  doc["config"] = nlohmann::json::parse(config_to_json(b.config));
  doc["dataset_id"] = b.dataset_id;
  doc["baseline_loss"] = b.baseline_loss;
  doc["profile"] = nlohmann::json::parse(profile_to_json(b.profile));
  auto& plans = doc["plans"] = nlohmann::json::object();
  for (const auto& [key, plan] : b.plans) plans[key] = nlohmann::json::parse(plan_to_json(plan));
  auto& reports = doc["reports"] = nlohmann::json::object();
  for (const auto& [key, rep] : b.reports) reports[key] = nlohmann::json::parse(noise_report_to_json(rep));
  doc["table"] = table_to_json(b.table);
  return doc.dump(2);
}

ReportBundle bundle_from_json(const std::string& text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument(std::string("bundle is not valid json: ") + e.what());
  }
  try {
    if (doc.at("schema_version").get<int>() != 1) {
      throw std::invalid_argument("bundle has unsupported schema_version " +
                                  doc.at("schema_version").dump());
    }
    if (doc.at("kind").get<std::string>() != "report_bundle") {
      throw std::invalid_argument("expected kind 'report_bundle', got " + doc.at("kind").dump());
    }
    ReportBundle b;
    b.config = config_from_json(doc.at("config").dump());
    b.dataset_id = doc.at("dataset_id").get<std::string>();
    b.baseline_loss = doc.at("baseline_loss").get<double>();
    b.profile = profile_from_json(doc.at("profile").dump());
    for (const auto& [key, val] : doc.at("plans").items()) {
      b.plans[key] = plan_from_json(val.dump());
    }
    for (const auto& [key, val] : doc.at("reports").items()) {
      b.reports[key] = noise_report_from_json(val.dump());
    }
    b.table = table_from_json(doc.at("table"));
    return b;
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument(std::string("malformed bundle: ") + e.what());
  }
}

std::string bundle_summary(const ReportBundle& b) {
  std::ostringstream out;
  char line[160];
  out << "dataset: " << b.dataset_id << "\n";
  std::snprintf(line, sizeof line, "baseline loss: %.6f\n", b.baseline_loss);
  out << line;
  std::snprintf(line, sizeof line, "%-22s %12s %12s %12s %7s\n", "algorithm", "mean_delta", "std_delta",
                "bound", "trials");
  out << line;
  for (const TableRow& row : b.table) {
    std::snprintf(line, sizeof line, "%-22s %12.4e %12.4e %12.4e %7d\n", row.algorithm.c_str(),
                  row.mean_delta, row.std_delta, row.bound, row.trials);
    out << line;
  }
  return out.str();
}

ReportBundle run_experiment(const ExperimentConfig& config) {
  config.validate();
  const bool write = !config.out_dir.empty();
  if (write) fs::create_directories(config.out_dir);
  auto artifact = [&](const std::string& name) {
    return (fs::path(config.out_dir) / name).string();
  };
  std::string stage = "start";
  auto mark = [&](const std::string& done) {
    stage = done;
    if (write) write_manifest(config.out_dir, config, stage, "running");
  };
  if (write) write_manifest(config.out_dir, config, stage, "running");

  try {
    // data: calibration prefix, disjoint evaluation tail unless configured
    Dataset full = acquire_dataset(config.dataset, config.dataset_n, config.dataset_seed);
    full.validate();
    if (config.calibration > full.size()) {
      throw std::invalid_argument("calibration " + std::to_string(config.calibration) +
                                  " exceeds dataset size " + std::to_string(full.size()));
    }
    Dataset calib = dataset_slice(full, 0, config.calibration);
    if (!config.eval_on_calibration && config.calibration == full.size()) {
      throw std::invalid_argument(
          "no evaluation samples left after the calibration split; "
          "grow the dataset or set eval_on_calibration");
    }
    Dataset eval = config.eval_on_calibration
                       ? calib
                       : dataset_slice(full, config.calibration, full.size());
    mark("data");

    // network: load or train
    Network net;
    if (!config.checkpoint.empty()) {
      net = load_checkpoint(config.checkpoint).net;
    } else {
      net = build_network(parse_arch(config.arch), config.net_seed);
      TrainOptions opt;
      opt.opt = config.optimizer == "sgd" ? Optimizer::kSgd : Optimizer::kMomentum;
      opt.lr = config.lr;
      opt.epochs = config.epochs;
      opt.grad_norm_target = config.grad_norm_target;
      opt.batch_size = config.batch_size;
      opt.momentum = config.momentum;
      opt.seed = config.seed;
      TrainResult tr = train(net, calib, opt);
      if (write) {
        CheckpointMeta meta;
        meta.final_loss = tr.final_loss;
        meta.final_grad_norm = tr.final_grad_norm;
        meta.seed = config.net_seed;
        meta.dataset_id = calib.id;
        save_checkpoint(artifact("trained.prcl"), net, meta);
      }
    }
    mark("network");

    // profile on the calibration split
    SensitivityProfile input_prof = input_gradient_profile(net, calib, Aggregate::kSumOfNorms);
    SensitivityProfile param_prof = param_gradient_profile(net, calib, Aggregate::kSumOfNorms);
    SensitivityProfile prof = merge_profiles(input_prof, param_prof);
    bool need_traces = std::count(config.algorithms.begin(), config.algorithms.end(),
                                  "hessian_baseline") > 0;
    if (need_traces) {
      SensitivityProfile traces =
          hessian_trace_profile(net, calib, config.hessian_probes, config.seed);
      traces.aggregate = prof.aggregate;  // trace records carry no norm data
      prof = merge_profiles(prof, traces);
    }
    if (write) write_file(artifact("profile.json"), profile_to_json(prof) + "\n");
    mark("profile");

    // plans
    std::vector<LevelEntry> entries = config.levels.empty() ? named_level_set(config.level_set)
                                                            : config.levels;
    QuantLevelSet levels = expand_levels(entries, net.layer_count());
    std::map<std::string, LayoutPlan> plans;
    for (const std::string& algo : config.algorithms) {
      if (algo == "gradient") {
        plans[algo] = plan_gradient(prof, levels);
      } else if (algo == "trivial") {
        plans[algo] = plan_trivial(levels, net.layer_count());
      } else if (algo == "storage_aware") {
        plans[algo] = plan_storage_aware(input_prof, param_prof, levels, PlanMode::kShared);
      } else if (algo == "storage_aware_split") {
        plans[algo] = plan_storage_aware(input_prof, param_prof, levels, PlanMode::kSplit);
      } else if (algo == "hessian_baseline") {
        plans[algo] = plan_hessian_baseline(prof, levels);
      } else if (algo == "bruteforce") {
        plans[algo] = plan_bruteforce(prof, levels, BruteforceObjective::kBound).plan;
      } else {  // random_k null control
        for (int j = 0; j < config.random_k; ++j) {
          uint64_t plan_seed = RngStream(config.seed, "random_k", j).next_u64();
          plans["random_" + std::to_string(j)] = plan_random(levels, net.layer_count(), plan_seed);
        }
      }
    }
    if (write) {
      for (const auto& [key, plan] : plans) {
        write_file(artifact("plan_" + key + ".json"), plan_to_json(plan) + "\n");
      }
    }
    mark("plan");

    // simulate every plan against the same draws
    NoiseModel model{activation_noise_from_name(config.noise_model),
                     param_noise_from_name(config.param_noise)};
    std::map<std::string, NoiseReport> reports;
    std::map<std::string, double> timings;
    for (const auto& [key, plan] : plans) {
      auto t0 = std::chrono::steady_clock::now();
      reports[key] = simulate(net, eval, plan, model, config.trials, config.seed);
      timings[key] = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      if (write) {
        write_file(artifact("report_" + key + ".json"), noise_report_to_json(reports.at(key)) + "\n");
        write_file(artifact("report_" + key + ".csv"), noise_report_to_csv(reports.at(key)));
      }
    }
    mark("simulate");

    // bundle
    ReportBundle bundle;
    bundle.config = config;
    bundle.dataset_id = full.id;
    bundle.baseline_loss = mean_loss(net, eval);
    bundle.profile = prof;
    bundle.plans = plans;
    bundle.reports = reports;
    for (const auto& [key, rep] : reports) {
      TableRow row;
      row.algorithm = key;
      row.mean_delta = rep.mean_delta;
      row.std_delta = rep.std_delta;
      row.bound = bound_value(prof, plans.at(key));
      row.trials = rep.trials();
      bundle.table.push_back(row);
    }
    if (write) {
      write_file(artifact("bundle.json"), bundle_to_json(bundle) + "\n");
      std::ostringstream summary;
      summary << bundle_summary(bundle);
      summary << "wall time (s):\n";
      char line[96];
      for (const auto& [key, secs] : timings) {
        std::snprintf(line, sizeof line, "  %-22s %.3f\n", key.c_str(), secs);
        summary << line;
      }
      write_file(artifact("summary.txt"), summary.str());
      write_manifest(config.out_dir, config, "complete", "complete");
    }
    return bundle;
  } catch (...) {
    if (write) write_manifest(config.out_dir, config, stage, "failed after stage '" + stage + "'");
    throw;
  }
}

double spearman(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw std::invalid_argument("spearman: size mismatch");
  size_t n = a.size();
  if (n < 2) return 0.0;
  std::vector<double> ra = average_ranks(a);
  std::vector<double> rb = average_ranks(b);
  double ma = 0.0;
  double mb = 0.0;
  for (size_t i = 0; i < n; ++i) {
    ma += ra[i];
    mb += rb[i];
  }
  ma /= static_cast<double>(n);
  mb /= static_cast<double>(n);
  double cov = 0.0;
  double va = 0.0;
  double vb = 0.0;
  for (size_t i = 0; i < n; ++i) {
    cov += (ra[i] - ma) * (rb[i] - mb);
    va += (ra[i] - ma) * (ra[i] - ma);
    vb += (rb[i] - mb) * (rb[i] - mb);
  }
  if (va == 0.0 || vb == 0.0) return 0.0;
  return cov / std::sqrt(va * vb);
}

ComparisonDoc compare_plans(const std::vector<ReportBundle>& bundles) {
  if (bundles.empty()) throw std::invalid_argument("compare_plans: no bundles given");
  auto net_id = [](const ReportBundle& b) {
    return b.config.arch.empty() ? b.config.checkpoint : b.config.arch;
  };
  for (const ReportBundle& b : bundles) {
    if (b.dataset_id != bundles[0].dataset_id) {
      throw std::invalid_argument("compare_plans: dataset ids differ ('" + bundles[0].dataset_id +
                                  "' vs '" + b.dataset_id + "')");
    }
    if (net_id(b) != net_id(bundles[0])) {
      throw std::invalid_argument("compare_plans: network ids differ ('" + net_id(bundles[0]) +
                                  "' vs '" + net_id(b) + "')");
    }
  }

  ComparisonDoc doc;
  doc.dataset_id = bundles[0].dataset_id;
  std::map<std::string, int> occurrences;
  for (const ReportBundle& b : bundles) {
    for (const TableRow& row : b.table) occurrences[row.algorithm] += 1;
  }
  for (size_t i = 0; i < bundles.size(); ++i) {
    doc.sources.push_back("bundle" + std::to_string(i));
    for (TableRow row : bundles[i].table) {
      if (bundles.size() > 1 && occurrences.at(row.algorithm) > 1) {
        row.algorithm += "#" + std::to_string(i);
      }
      doc.rows.push_back(row);
    }
  }

  // pairwise mean-delta wins within each bundle, counted per base algorithm
  for (const ReportBundle& b : bundles) {
    for (const TableRow& x : b.table) {
      for (const TableRow& y : b.table) {
        if (&x == &y) continue;
        if (x.mean_delta < y.mean_delta) doc.wins[x.algorithm] += 1;
      }
    }
  }

  std::vector<double> bounds;
  std::vector<double> measured;
  for (const TableRow& row : doc.rows) {
    bounds.push_back(row.bound);
    measured.push_back(row.mean_delta);
  }
  doc.spearman_bound_vs_measured = spearman(bounds, measured);
  return doc;
}

std::string comparison_to_json(const ComparisonDoc& doc) {
  nlohmann::json j;
  j["schema_version"] = 1;
  j["kind"] = "comparison";
  j["dataset_id"] = doc.dataset_id;
  j["sources"] = doc.sources;
  j["rows"] = table_to_json(doc.rows);
  j["wins"] = doc.wins;
  auto& scatter = j["bound_vs_measured"] = nlohmann::json::array();
  for (const TableRow& row : doc.rows) {
    scatter.push_back({{"algorithm", row.algorithm}, {"bound", row.bound}, {"mean_delta", row.mean_delta}});
  }
  j["spearman_bound_vs_measured"] = doc.spearman_bound_vs_measured;
  return j.dump(2);
}

std::string comparison_summary(const ComparisonDoc& doc) {
  std::ostringstream out;
  out << "dataset: " << doc.dataset_id << "\n";
  char line[160];
  std::snprintf(line, sizeof line, "%-24s %12s %12s %7s %5s\n", "algorithm", "mean_delta", "bound",
                "trials", "wins");
  out << line;
  for (const TableRow& row : doc.rows) {
    int wins = 0;
    auto it = doc.wins.find(row.algorithm);
    if (it != doc.wins.end()) wins = it->second;
    std::snprintf(line, sizeof line, "%-24s %12.4e %12.4e %7d %5d\n", row.algorithm.c_str(),
                  row.mean_delta, row.bound, row.trials, wins);
    out << line;
  }
  std::snprintf(line, sizeof line, "rank correlation (bound vs measured): %.4f\n",
                doc.spearman_bound_vs_measured);
  out << line;
  return out.str();
}

}  // namespace prcl
