// Copyright 2026 The fedaf Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Command-line front end: subcommands train, unlearn, overlap, sweep and
// report. Exit status 0 on success, 1 on a runtime error, 2 on a usage
// error.

#pragma once

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "fedaf/config.hpp"
#include "fedaf/evaluation.hpp"

namespace fedaf {

inline constexpr const char* kOutputDirEnv = "FEDAF_OUTPUT_DIR";

namespace cli {

struct Options {
  std::string config_path;
  std::string out;
  std::string arm;
  std::string label_kind;
  std::string param;
  std::vector<double> values;
  std::size_t trials = 0;
  std::size_t jobs = 1;
  std::vector<std::string> inputs;
};

// --out, then output_dir from the config, then the environment, then ./fedaf-out.
inline std::filesystem::path output_dir(const Options& o, const ExperimentConfig* c) {
  if (!o.out.empty()) return o.out;
  if (c && !c->output_dir.empty()) return c->output_dir;
  if (const char* env = std::getenv(kOutputDirEnv); env && *env) return env;
  return "fedaf-out";
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error("cannot write " + path.string());
  f << text;
}

struct Context {
  ExperimentConfig config;
  Datasets data;
  Protocol protocol;
  std::filesystem::path out;
  nlohmann::json snapshot;
};

inline Context load(const Options& o) {
  Context ctx;
  ctx.config = parse_config(o.config_path);
  if (!o.label_kind.empty()) ctx.config.label_kind = parse_label_kind(o.label_kind);
  if (o.trials > 0) ctx.config.trials = o.trials;
  if (!o.param.empty()) ctx.config.sweep.param = o.param;
  if (!o.values.empty()) ctx.config.sweep.values = o.values;
  if (o.trials > 0) ctx.config.sweep.trials = o.trials;
  validate(ctx.config);
  ctx.data = load_datasets(ctx.config);
  ctx.protocol = make_protocol(ctx.config, ctx.data.train);
  ctx.out = output_dir(o, &ctx.config);
  std::filesystem::create_directories(ctx.out);
  ctx.snapshot = to_json(ctx.config);
  write_text(ctx.out / "config.json", ctx.snapshot.dump(2) + "\n");
  return ctx;
}

inline std::string pct(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", 100.0 * v);
  return buf;
}

inline std::string pm(const MeanStd& m, bool percent = true) {
  char buf[64];
  if (percent) {
    std::snprintf(buf, sizeof buf, "%.2f ± %.2f", 100.0 * m.mean, 100.0 * m.std);
  } else {
    std::snprintf(buf, sizeof buf, "%.3f ± %.3f", m.mean, m.std);
  }
  return buf;
}

inline int cmd_train(const Options& o, std::ostream& out) {
  auto ctx = load(o);
  const auto& c = ctx.config;
  const auto partition = partition_iid(ctx.data.train, c.federation.client_count, derive_seed(c.seed, {stream::kPartition}));
  FederationConfig fed = c.federation;
  fed.seed = derive_seed(c.seed, {stream::kData});
  std::ostringstream rounds;
  rounds << kRoundsCsvHeader << '\n';
  auto hook = [&](const RoundMetrics& m) {
    rounds << m.round << ',' << m.client << ',' << detail::fmt_double(m.loss) << ',' << detail::fmt_double(m.accuracy)
           << '\n';
  };
  const auto run = timed([&] {
    return run_federated(fed, ctx.protocol.spec, client_batches(ctx.data.train, partition),
                         initial_params(ctx.protocol.spec, fed.seed), hook, o.jobs);
  });
  const double test_acc = accuracy(run.value.global_params, ctx.protocol.spec, ctx.data.test.batch());
  write_text(ctx.out / "rounds.csv", rounds.str());
  nlohmann::json j{{"config", ctx.snapshot},
                   {"test_acc", test_acc},
                   {"per_class_acc", per_class_accuracy(run.value.global_params, ctx.protocol.spec, ctx.data.test)},
                   {"rounds", run.value.round},
                   {"wall_time_s", run.seconds}};
  write_text(ctx.out / "train.json", j.dump(2) + "\n");
  out << "trained " << run.value.round << " rounds, test accuracy " << pct(test_acc) << "%\n";
  out << "wrote " << (ctx.out / "rounds.csv").string() << "\n";
  return 0;
}

inline void print_metrics_summary(const std::vector<MetricsRecord>& records, std::ostream& out) {
  std::map<std::string, std::vector<const MetricsRecord*>> by_arm;
  for (const auto& r : records) by_arm[r.arm].push_back(&r);
  for (const auto& [arm, rs] : by_arm) {
    std::vector<double> bd, test, time;
    for (auto* r : rs) {
      bd.push_back(r->bd_acc_after);
      test.push_back(r->test_acc_after);
      time.push_back(r->wall_time_s);
    }
    out << arm << ": bd_acc_after " << pm(mean_std(bd)) << "%, test_acc_after " << pm(mean_std(test))
        << "%, wall " << pm(mean_std(time), false) << " s (n=" << rs.size() << ")\n";
  }
}

inline int cmd_unlearn(const Options& o, std::ostream& out) {
  auto ctx = load(o);
  std::vector<Arm> arms{Arm::kFedAF, Arm::kFedAFC, Arm::kRetrain};
  if (!o.arm.empty()) arms = {parse_arm(o.arm)};
  const auto records = run_pipeline(ctx.protocol, ctx.data.train, ctx.data.test, ctx.config.seed, ctx.config.trials,
                                    target_classes(ctx.config, ctx.data.train), arms, o.jobs);
  std::ostringstream csv;
  write_metrics_csv(csv, records);
  write_text(ctx.out / "metrics.csv", csv.str());
  write_text(ctx.out / "metrics.json", metrics_json(records, ctx.snapshot).dump(2) + "\n");
  print_metrics_summary(records, out);
  out << "wrote " << (ctx.out / "metrics.csv").string() << "\n";
  return 0;
}

inline int cmd_overlap(const Options& o, std::ostream& out) {
  auto ctx = load(o);
  const auto records = run_overlap(ctx.protocol, ctx.data.train, ctx.data.test, ctx.config.label_kind,
                                   ctx.config.seed, target_classes(ctx.config, ctx.data.train), o.jobs);
  std::ostringstream csv;
  write_overlap_csv(csv, records);
  write_text(ctx.out / "overlap.csv", csv.str());
  write_text(ctx.out / "overlap.json", overlap_json(records, ctx.snapshot).dump(2) + "\n");
  for (const auto& r : records) {
    out << to_string(ctx.config.label_kind) << " class " << r.class_id << ": target " << pct(r.target_acc)
        << "%, non-target " << pct(r.non_target_acc) << "%\n";
  }
  out << "wrote " << (ctx.out / "overlap.csv").string() << "\n";
  return 0;
}

inline int cmd_sweep(const Options& o, std::ostream& out) {
  auto ctx = load(o);
  const auto& c = ctx.config;
  const SweepSpec spec{c.sweep.param, c.sweep.values, c.sweep.trials ? c.sweep.trials : c.trials};
  const auto records = sweep(ctx.protocol, spec, ctx.data.train, ctx.data.test, c.seed,
                             target_classes(c, ctx.data.train), o.jobs);
  std::ostringstream csv;
  write_sweep_csv(csv, records);
  write_text(ctx.out / "sweep.csv", csv.str());
  write_text(ctx.out / "sweep.json", sweep_json(records, ctx.snapshot).dump(2) + "\n");
  for (double v : spec.values) {
    std::vector<double> t, nt;
    for (const auto& r : records) {
      if (r.value == v) {
        t.push_back(r.target_acc);
        nt.push_back(r.non_target_acc);
      }
    }
    out << spec.param << "=" << detail::fmt_double(v) << ": target " << pm(mean_std(t)) << "%, non-target "
        << pm(mean_std(nt)) << "%\n";
  }
  out << "wrote " << (ctx.out / "sweep.csv").string() << "\n";
  return 0;
}

// Minimal CSV reader for the files this tool writes (no quoting).
struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::size_t column(const std::string& name) const {
    for (std::size_t i = 0; i < header.size(); ++i) {
      if (header[i] == name) return i;
    }
    throw Error("CSV has no column '" + name + "'");
  }
};

inline std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, sep)) out.push_back(cell);
  if (!line.empty() && line.back() == sep) out.emplace_back();
  return out;
}

inline Table read_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  Table t;
  std::string line;
  if (!std::getline(in, line)) throw Error(path.string() + ": empty file");
  t.header = split(line, ',');
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto row = split(line, ',');
    if (row.size() != t.header.size()) throw Error(path.string() + ": ragged row");
    t.rows.push_back(std::move(row));
  }
  return t;
}

// Groups rows by the `keys` columns and prints mean ± std of `metrics`.
inline void report_table(const Table& t, const std::vector<std::string>& keys, const std::vector<std::string>& metrics,
                         std::ostream& out) {
  std::vector<std::size_t> kc, mc;
  for (const auto& k : keys) kc.push_back(t.column(k));
  for (const auto& m : metrics) mc.push_back(t.column(m));
  std::map<std::vector<std::string>, std::vector<std::vector<double>>> groups;
  std::vector<std::vector<std::string>> order;
  for (const auto& row : t.rows) {
    std::vector<std::string> key;
    for (auto c : kc) key.push_back(row[c]);
    auto [it, fresh] = groups.try_emplace(key, metrics.size());
    if (fresh) order.push_back(key);
    for (std::size_t m = 0; m < mc.size(); ++m) it->second[m].push_back(std::stod(row[mc[m]]));
  }
  out << "|";
  for (const auto& k : keys) out << ' ' << k << " |";
  for (const auto& m : metrics) out << ' ' << m << " |";
  out << " n |\n|";
  for (std::size_t i = 0; i < keys.size() + metrics.size() + 1; ++i) out << "---|";
  out << "\n";
  for (const auto& key : order) {
    const auto& vals = groups[key];
    out << "|";
    for (const auto& k : key) out << ' ' << k << " |";
    for (std::size_t m = 0; m < vals.size(); ++m) {
      const bool is_time = metrics[m] == "wall_time_s";
      out << ' ' << pm(mean_std(vals[m]), !is_time) << " |";
    }
    out << ' ' << vals[0].size() << " |\n";
  }
}

inline int cmd_report(const Options& o, std::ostream& out) {
  std::vector<std::filesystem::path> files(o.inputs.begin(), o.inputs.end());
  if (files.empty()) {
    const auto dir = output_dir(o, nullptr);
    for (const char* name : {"metrics.csv", "sweep.csv", "overlap.csv"}) {
      if (std::filesystem::exists(dir / name)) files.push_back(dir / name);
    }
    if (files.empty()) throw Error("no CSV files found in " + dir.string());
  }
  for (const auto& f : files) {
    const Table t = read_csv(f);
    out << "## " << f.string() << "\n\n";
    const std::string head = t.header.empty() ? "" : t.header[0];
    if (head == "arm") {
      report_table(t, {"arm"}, {"bd_acc_before", "bd_acc_after", "test_acc_before", "test_acc_after", "wall_time_s"}, out);
      out << "\n";
      report_table(t, {"arm", "class_id"}, {"bd_acc_after", "test_acc_after"}, out);
    } else if (head == "param") {
      report_table(t, {"param", "value"}, {"target_acc", "non_target_acc", "test_acc"}, out);
    } else if (head == "kind") {
      report_table(t, {"kind"}, {"target_acc", "non_target_acc"}, out);
      out << "\n";
      report_table(t, {"kind", "class_id"}, {"target_acc", "non_target_acc"}, out);
    } else {
      throw Error(f.string() + ": unrecognized CSV layout");
    }
    out << "\n";
  }
  return 0;
}

}  // namespace cli

inline int run_cli(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Federated learning simulator with active-forgetting unlearning", "fedaf"};
  app.require_subcommand(1);
  cli::Options o;

  auto common = [&](CLI::App* sub, bool needs_config) {
    auto* opt = sub->add_option("--config", o.config_path, "experiment config (JSON)")->check(CLI::ExistingFile);
    if (needs_config) opt->required();
    sub->add_option("--out", o.out, std::string("output directory (default: config output_dir, $") + kOutputDirEnv +
                                        ", ./fedaf-out)");
    sub->add_option("--jobs", o.jobs, "parallel experiments")->check(CLI::PositiveNumber);
  };
  auto* train = app.add_subcommand("train", "federated training only; writes per-round metrics");
  common(train, true);
  auto* unlearn = app.add_subcommand("unlearn", "train, poison, unlearn and score each arm");
  common(unlearn, true);
  unlearn->add_option("--arm", o.arm, "fedaf | fedaf-c | retrain (default: all)")
      ->check(CLI::IsMember({"fedaf", "fedaf-c", "retrain"}));
  unlearn->add_option("--label-kind", o.label_kind, "uniform | random | teacher | debias")
      ->check(CLI::IsMember({"uniform", "random", "teacher", "debias"}));
  unlearn->add_option("--trials", o.trials, "override trials")->check(CLI::PositiveNumber);
  auto* overlap = app.add_subcommand("overlap", "overlap validation of a fake-label kind over all classes");
  common(overlap, true);
  overlap->add_option("--label-kind", o.label_kind, "uniform | random | teacher | debias")
      ->check(CLI::IsMember({"uniform", "random", "teacher", "debias"}));
  auto* sweep = app.add_subcommand("sweep", "FedAF under several lambda or ewc_epochs values");
  common(sweep, true);
  sweep->add_option("--param", o.param, "lambda | ewc_epochs")->check(CLI::IsMember({"lambda", "ewc_epochs"}));
  sweep->add_option("--values", o.values, "comma-separated values")->delimiter(',');
  sweep->add_option("--trials", o.trials, "trials per value")->check(CLI::PositiveNumber);
  sweep->add_option("--label-kind", o.label_kind, "uniform | random | teacher | debias")
      ->check(CLI::IsMember({"uniform", "random", "teacher", "debias"}));
  auto* report = app.add_subcommand("report", "mean ± std tables from CSV outputs");
  report->add_option("files", o.inputs, "CSV files (default: the output directory's)");
  report->add_option("--out", o.out, "directory to scan when no files are given");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    if (argc <= 1) {
      err << app.help();
    } else {
      app.exit(e, out, err);
    }
    return 2;
  }

  try {
    if (*train) return cli::cmd_train(o, out);
    if (*unlearn) return cli::cmd_unlearn(o, out);
    if (*overlap) return cli::cmd_overlap(o, out);
    if (*sweep) return cli::cmd_sweep(o, out);
    if (*report) return cli::cmd_report(o, out);
  } catch (const std::exception& e) {
    err << "fedaf: error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}

}  // namespace fedaf
