// Copyright (c) 2026 WeightAlign contributors
// Licensed under the Apache License, Version 2.0.

/**
 * @file cli.hpp
 * @brief Command-line entry point: experiment configs in, CSV/JSON out.
 *
 * Subcommands: train, analyze, verify, sweep, ablate. Flags override config
 * fields; the resolved config is echoed into every artifact. Exit codes:
 * 0 success, 1 config/usage error, 2 divergence. Artifacts are byte-stable
 * across re-runs with the same config and seed; wall time and timestamps
 * live in a separate meta.json.
 */

#pragma once

#include <filesystem>
#include <fstream>
#include <future>
#include <iostream>

#include "wa/statlab.hpp"
#include "wa/train.hpp"

namespace wa {

namespace fs = std::filesystem;

struct ExperimentConfig {
  nlohmann::json raw;  // resolved document, echoed into artifacts

  NetworkSpec netspec;
  std::string dataset = "synthetic-digits";
  Index subset = 0;       // 0 = full split
  Index test_subset = 0;
  TrainConfig train_cfg;
  std::string out_dir = ".";
  uint64_t seed = 1;
  int jobs = 1;
  std::string dataset_root = "data";

  std::vector<std::string> variants;  // analyze
  std::vector<std::string> arms;      // sweep
  std::vector<int> batch_sizes;       // sweep
  std::vector<double> multipliers;    // ablate
  long samples = 1000000;             // verify

  Index drift_channels = 16, drift_depth = 7, drift_batch = 128;
  Shape drift_input = {3, 16, 16};
};

namespace cli_detail {

inline void write_text(const std::string& path, const std::string& text) {
  fs::create_directories(fs::path(path).parent_path().empty()
                             ? "."
                             : fs::path(path).parent_path().string());
  std::ofstream out(path, std::ios::binary);
  if (!out) fail("cannot write '" + path + "'");
  out << text;
}

inline std::string g17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline NetworkSpec resolve_netspec(const nlohmann::json& cfg, uint64_t seed) {
  nlohmann::json ns;
  if (cfg.contains("netspec_path")) {
    std::ifstream in(cfg.at("netspec_path").get<std::string>());
    if (!in) fail("cannot open netspec file " + cfg.at("netspec_path").dump());
    in >> ns;
  } else if (cfg.contains("netspec")) {
    ns = cfg.at("netspec");
  } else {
    ns = {{"preset", "cnn4"}, {"variant", "wa"}};
  }

  NetworkSpec spec;
  if (ns.contains("preset")) {
    const std::string preset = ns.at("preset");
    const Variant v = parse_variant(ns.value("variant", std::string("baseline")));
    if (preset == "cnn4") {
      spec = cnn4_spec(v, ns.value("input", Shape{1, 28, 28}),
                       ns.value("classes", Index(10)), seed);
    } else if (preset == "drift8") {
      spec = drift_net_spec(v, ns.value("channels", Index(16)),
                            ns.value("depth", Index(7)),
                            ns.value("input", Shape{3, 16, 16}),
                            ns.value("classes", Index(10)), seed);
    } else {
      fail("unknown netspec preset '" + preset + "'");
    }
    if (ns.contains("multiplier")) {
      for (LayerSpec& l : spec.layers)
        if (l.reparam.kind == ReparamKind::WeightAlign)
          l.reparam.multiplier = ns.at("multiplier").get<double>();
    }
  } else {
    spec = ns.get<NetworkSpec>();
    spec.seed = seed;
  }
  return spec;
}

template <typename S>
std::pair<Dataset<S>, Dataset<S>> load_experiment_data(const ExperimentConfig& cfg) {
  if (cfg.dataset == "mnist") {
    return load_idx_dir<S>(cfg.dataset_root + "/mnist", cfg.subset, cfg.test_subset);
  }
  if (cfg.dataset == "synthetic-digits") {
    const std::string dir = cfg.dataset_root + "/synthetic-digits";
    ensure_digits_idx<S>(dir, 12000, 2000, 20260809);
    return load_idx_dir<S>(dir, cfg.subset, cfg.test_subset);
  }
  if (cfg.dataset == "cifar10") {
    const std::string dir = cfg.dataset_root + "/cifar-10-batches-bin";
    std::vector<std::string> train_files;
    for (int i = 1; i <= 5; ++i)
      train_files.push_back(dir + "/data_batch_" + std::to_string(i) + ".bin");
    Dataset<S> train = parse_cifar10_bin<S>(train_files, "train");
    Dataset<S> test = parse_cifar10_bin<S>({dir + "/test_batch.bin"}, "test");
    train = subset_dataset(train, cfg.subset);
    test = subset_dataset(test, cfg.test_subset);
    auto [mean, std] = channel_stats(train.images);
    standardize(train, mean, std);
    standardize(test, mean, std);
    return {std::move(train), std::move(test)};
  }
  fail("unknown dataset '" + cfg.dataset + "' (expected mnist, cifar10 or "
       "synthetic-digits)");
}

/// record.jsonl: config header line, one line per epoch, summary line.
inline std::string run_record_jsonl(const RunRecord& rec) {
  std::string out;
  out += nlohmann::json{{"config", rec.config_echo}}.dump() + "\n";
  for (const EpochRecord& e : rec.epochs)
    out += nlohmann::json(e).dump() + "\n";
  out += nlohmann::json{{"summary",
                         {{"diverged", rec.diverged},
                          {"divergence_reason", rec.divergence_reason},
                          {"activation_stat_ops", rec.activation_stat_ops},
                          {"final_test_err", rec.final_test_err()}}}}
             .dump() +
         "\n";
  return out;
}

inline std::string run_summary_csv(const RunRecord& rec) {
  std::string out = "epoch,train_loss,train_err,test_err\n";
  for (const EpochRecord& e : rec.epochs)
    out += std::to_string(e.epoch) + "," + g17(e.train_loss) + "," +
           g17(e.train_err) + "," + g17(e.test_err) + "\n";
  return out;
}

inline void write_meta(const std::string& path, double wall_seconds) {
  const auto now = std::chrono::system_clock::now();
  const std::time_t tt = std::chrono::system_clock::to_time_t(now);
  char stamp[32];
  std::strftime(stamp, sizeof stamp, "%FT%TZ", std::gmtime(&tt));
  write_text(path, nlohmann::json{{"wall_seconds", wall_seconds},
                                  {"written_at", stamp}}
                       .dump(2) +
                       "\n");
}

}  // namespace cli_detail

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

template <typename S>
int cmd_train(const ExperimentConfig& cfg) {
  auto [train_ds, test_ds] = cli_detail::load_experiment_data<S>(cfg);
  Network<S> net = Network<S>::build(cfg.netspec);
  RunRecord rec;
  try {
    rec = train(net, train_ds, test_ds, cfg.train_cfg);
  } catch (const DivergenceError& e) {
    rec.diverged = true;
    rec.divergence_reason = e.what();
  }
  rec.config_echo = cfg.raw;
  rec.config_echo["dataset_meta"] = train_ds.meta;
  fs::create_directories(cfg.out_dir);
  cli_detail::write_text(cfg.out_dir + "/record.jsonl",
                         cli_detail::run_record_jsonl(rec));
  cli_detail::write_text(cfg.out_dir + "/summary.csv",
                         cli_detail::run_summary_csv(rec));
  cli_detail::write_meta(cfg.out_dir + "/meta.json", rec.wall_seconds);
  return rec.diverged ? 2 : 0;
}

template <typename S>
int cmd_analyze(const ExperimentConfig& cfg) {
  if (cfg.variants.empty()) fail("analyze: no variants requested");
  fs::create_directories(cfg.out_dir);
  for (const std::string& name : cfg.variants) {
    const Variant v = parse_variant(name);  // unknown names throw -> exit 1
    NetworkSpec spec = drift_net_spec(v, cfg.drift_channels, cfg.drift_depth,
                                      cfg.drift_input, 10, cfg.seed);
    Network<S> net = Network<S>::build(spec);
    Tensor<S> input =
        synthetic_gaussian<S>(cfg.drift_batch, cfg.drift_input, cfg.seed);
    // Tap the 3rd conv (layer index 4 in the conv/relu stack, or the last
    // conv of a shallower stack) and the classifier.
    const int conv3 = int(std::min<Index>(4, 2 * (cfg.drift_depth - 1)));
    const int classifier = int(spec.layers.size()) - 1;
    StatsReport report = collect_channel_stats(
        net, input, {conv3, classifier}, {0, 1, 2, 3, 4, 5, 6, 7}, Mode::Train);
    report.meta["variant"] = name;
    report.meta["config"] = cfg.raw;
    std::string stem = name;
    for (char& c : stem)
      if (c == '+') c = '_';
    cli_detail::write_text(cfg.out_dir + "/report_" + stem + ".json",
                           nlohmann::json(report).dump(2) + "\n");
    cli_detail::write_text(cfg.out_dir + "/report_" + stem + ".csv",
                           stats_report_csv(report));
  }
  return 0;
}

template <typename S>
int cmd_verify(const ExperimentConfig& cfg) {
  if (cfg.samples < 10000)
    std::cerr << "warning: sample count " << cfg.samples
              << " below 10^4; standard-error gates widen accordingly\n";
  const std::vector<McResult> results = default_verify_suite(cfg.samples, cfg.seed);
  bool all_pass = true;
  std::string csv = "name,estimate,target,stderr,secondary,samples,pass,control\n";
  for (const McResult& r : results) {
    if (!r.control) all_pass = all_pass && r.pass;
    std::cout << (r.pass ? "[pass] " : (r.control ? "[fail, control] " : "[FAIL] "))
              << r.name << ": estimate " << r.estimate << " vs target " << r.target
              << " (stderr " << r.stderr_ << ")\n";
    csv += r.name + "," + cli_detail::g17(r.estimate) + "," +
           cli_detail::g17(r.target) + "," + cli_detail::g17(r.stderr_) + "," +
           cli_detail::g17(r.secondary) + "," + std::to_string(r.samples) + "," +
           (r.pass ? "1" : "0") + "," + (r.control ? "1" : "0") + "\n";
  }
  fs::create_directories(cfg.out_dir);
  nlohmann::json j = {{"config", cfg.raw}, {"results", results}};
  cli_detail::write_text(cfg.out_dir + "/verify.json", j.dump(2) + "\n");
  cli_detail::write_text(cfg.out_dir + "/verify.csv", csv);
  return all_pass ? 0 : 1;
}

template <typename S>
int cmd_sweep(const ExperimentConfig& cfg) {
  if (cfg.arms.empty()) fail("sweep: empty arm list");
  if (cfg.batch_sizes.empty()) fail("sweep: empty batch size list");
  auto [train_ds, test_ds] = cli_detail::load_experiment_data<S>(cfg);

  struct Row {
    std::string method;
    SweepArm arm;
  };
  std::vector<Row> rows;
  std::vector<std::future<std::vector<SweepArm>>> futures;
  const int jobs = std::max(1, cfg.jobs);
  std::vector<std::string> methods;
  for (const std::string& m : cfg.arms) methods.push_back(m);

  for (size_t at = 0; at < methods.size(); at += size_t(jobs)) {
    futures.clear();
    const size_t end = std::min(methods.size(), at + size_t(jobs));
    for (size_t i = at; i < end; ++i) {
      const Variant v = parse_variant(methods[i]);
      NetworkSpec spec = with_variant(cfg.netspec, v);
      futures.push_back(std::async(std::launch::async, [&, spec] {
        return sweep_batch(spec, train_ds, test_ds, cfg.batch_sizes, cfg.train_cfg);
      }));
    }
    for (size_t i = at; i < end; ++i)
      for (SweepArm& arm : futures[i - at].get())
        rows.push_back({methods[i], std::move(arm)});
  }

  fs::create_directories(cfg.out_dir);
  std::string csv = "method,batch_size,final_test_err,diverged,skipped,skip_reason\n";
  for (Row& r : rows) {
    csv += r.method + "," + std::to_string(r.arm.batch_size) + ",";
    csv += r.arm.skipped ? "" : cli_detail::g17(r.arm.record.final_test_err());
    csv += std::string(",") + (r.arm.record.diverged ? "1" : "0") + "," +
           (r.arm.skipped ? "1" : "0") + "," + r.arm.skip_reason + "\n";
    if (!r.arm.skipped) {
      r.arm.record.config_echo = cfg.raw;
      r.arm.record.config_echo["method"] = r.method;
      r.arm.record.config_echo["batch_size"] = r.arm.batch_size;
      cli_detail::write_text(cfg.out_dir + "/record_" + r.method + "_bs" +
                                 std::to_string(r.arm.batch_size) + ".jsonl",
                             cli_detail::run_record_jsonl(r.arm.record));
    }
  }
  cli_detail::write_text(cfg.out_dir + "/sweep.csv", csv);
  cli_detail::write_meta(cfg.out_dir + "/meta.json", 0);
  return 0;
}

template <typename S>
int cmd_ablate(const ExperimentConfig& cfg) {
  if (cfg.multipliers.empty()) fail("ablate: empty multiplier list");
  auto [train_ds, test_ds] = cli_detail::load_experiment_data<S>(cfg);
  NetworkSpec spec = cfg.netspec;
  if (!spec_uses_weight_align(spec))
    spec = with_variant(spec, parse_variant("wa"));
  const std::vector<AblateArm> arms =
      ablate_scale(spec, train_ds, test_ds, cfg.multipliers, cfg.train_cfg);

  fs::create_directories(cfg.out_dir);
  std::string csv = "method,multiplier,final_test_err,diverged\n";
  for (const AblateArm& arm : arms) {
    csv += "wa," + cli_detail::g17(arm.multiplier) + "," +
           cli_detail::g17(arm.record.final_test_err()) + "," +
           (arm.record.diverged ? "1" : "0") + "\n";
    RunRecord rec = arm.record;
    rec.config_echo = cfg.raw;
    rec.config_echo["multiplier"] = arm.multiplier;
    cli_detail::write_text(cfg.out_dir + "/record_mult" +
                               cli_detail::g17(arm.multiplier) + ".jsonl",
                           cli_detail::run_record_jsonl(rec));
  }
  cli_detail::write_text(cfg.out_dir + "/ablate.csv", csv);
  cli_detail::write_meta(cfg.out_dir + "/meta.json", 0);
  return 0;
}

// ---------------------------------------------------------------------------
// Argument parsing
// ---------------------------------------------------------------------------

inline ExperimentConfig resolve_config(const nlohmann::json& doc) {
  ExperimentConfig cfg;
  cfg.seed = doc.value("seed", uint64_t(1));
  cfg.dataset = doc.value("dataset", std::string("synthetic-digits"));
  cfg.subset = doc.value("subset", Index(0));
  cfg.test_subset = doc.value("test_subset", Index(0));
  cfg.out_dir = doc.value("out", std::string("."));
  cfg.jobs = doc.value("jobs", 1);
  cfg.dataset_root = doc.value("dataset_root", std::string("data"));
  if (doc.contains("train")) cfg.train_cfg = doc.at("train").get<TrainConfig>();
  cfg.train_cfg.seed = cfg.seed;
  cfg.netspec = cli_detail::resolve_netspec(doc, cfg.seed);
  if (doc.contains("variants"))
    cfg.variants = doc.at("variants").get<std::vector<std::string>>();
  if (doc.contains("arms")) cfg.arms = doc.at("arms").get<std::vector<std::string>>();
  if (doc.contains("batch_sizes"))
    cfg.batch_sizes = doc.at("batch_sizes").get<std::vector<int>>();
  if (doc.contains("multipliers"))
    cfg.multipliers = doc.at("multipliers").get<std::vector<double>>();
  cfg.samples = doc.value("samples", 1000000L);
  if (doc.contains("drift")) {
    const nlohmann::json& d = doc.at("drift");
    cfg.drift_channels = d.value("channels", Index(16));
    cfg.drift_depth = d.value("depth", Index(7));
    cfg.drift_batch = d.value("batch", Index(128));
    if (d.contains("input")) cfg.drift_input = d.at("input").get<Shape>();
  }

  // Echo the fully resolved document.
  nlohmann::json echo = doc;
  echo["seed"] = cfg.seed;
  echo["dataset"] = cfg.dataset;
  echo["out"] = cfg.out_dir;
  echo["dataset_root"] = cfg.dataset_root;
  echo["netspec_resolved"] = cfg.netspec;
  echo["train_resolved"] = cfg.train_cfg;
  cfg.raw = echo;
  return cfg;
}

namespace cli_detail {

template <typename S>
int dispatch(const std::string& command, const ExperimentConfig& cfg) {
  if (command == "train") return cmd_train<S>(cfg);
  if (command == "analyze") return cmd_analyze<S>(cfg);
  if (command == "verify") return cmd_verify<S>(cfg);
  if (command == "sweep") return cmd_sweep<S>(cfg);
  if (command == "ablate") return cmd_ablate<S>(cfg);
  fail("unknown command '" + command + "'");
}

}  // namespace cli_detail

/// Full CLI: returns the process exit code (0 ok, 1 config error, 2 divergence).
inline int run_cli(const std::vector<std::string>& args);

}  // namespace wa

#include <CLI11.hpp>

namespace wa {

inline int run_cli(const std::vector<std::string>& args) {
  CLI::App app{"WeightAlign experiments: activation normalization by weight "
               "re-parameterization"};
  app.require_subcommand(1);

  std::string config_path, out_dir, dataset_root, precision = "double";
  int64_t seed = -1;
  int jobs = 0;
  long samples = 0;

  const char* subnames[] = {"train", "analyze", "verify", "sweep", "ablate"};
  const char* subdesc[] = {
      "train one network and emit record.jsonl / summary.csv",
      "collect activation distributions of untrained networks per variant",
      "run the Monte-Carlo identity suite",
      "batch-size sweep over method arms, combined CSV",
      "WeightAlign scale-factor ablation, combined CSV"};
  for (int i = 0; i < 5; ++i) {
    CLI::App* sub = app.add_subcommand(subnames[i], subdesc[i]);
    sub->add_option("--config", config_path, "experiment config JSON");
    sub->add_option("--out", out_dir, "output directory");
    sub->add_option("--seed", seed, "seed override");
    sub->add_option("--jobs", jobs, "parallel arms bound");
    sub->add_option("--dataset-root", dataset_root,
                    "dataset directory (or DATA_ROOT env)");
    sub->add_option("--precision", precision, "single or double")
        ->check(CLI::IsMember({"single", "double"}));
    if (std::string(subnames[i]) == "verify")
      sub->add_option("--samples", samples, "Monte-Carlo sample count");
  }

  std::vector<std::string> rev(args.rbegin(), args.rend());
  try {
    app.parse(rev);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  try {
    nlohmann::json doc = nlohmann::json::object();
    if (!config_path.empty()) {
      std::ifstream in(config_path);
      if (!in) fail("cannot open config '" + config_path + "'");
      in >> doc;
    }
    if (seed >= 0) doc["seed"] = uint64_t(seed);
    if (!out_dir.empty()) doc["out"] = out_dir;
    if (jobs > 0) doc["jobs"] = jobs;
    if (samples > 0) doc["samples"] = samples;
    if (!dataset_root.empty())
      doc["dataset_root"] = dataset_root;
    else if (!doc.contains("dataset_root") && std::getenv("DATA_ROOT"))
      doc["dataset_root"] = std::string(std::getenv("DATA_ROOT"));

    const std::string command = app.get_subcommands().front()->get_name();
    const ExperimentConfig cfg = resolve_config(doc);
    if (precision == "single") return cli_detail::dispatch<float>(command, cfg);
    return cli_detail::dispatch<double>(command, cfg);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace wa
