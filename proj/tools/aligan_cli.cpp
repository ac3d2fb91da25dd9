// Command-line entry point.
//
//   aligan synth  --config run.cfg --out data/
//   aligan train  --config run.cfg --out model/
//   aligan run    --config run.cfg --set rounds=5 --out results/
//   aligan report --in results/ [--out tables/]
//
// Exit codes: 0 success, 2 configuration error, 3 training divergence,
// 4 data error, 1 anything else.

#include "aligan/harness.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>

namespace {

using namespace aligan;

constexpr int kExitConfig = 2;
constexpr int kExitDivergence = 3;
constexpr int kExitData = 4;

ExperimentConfig resolve_config(const std::string& path, const std::vector<std::string>& overrides) {
  ExperimentConfig c = path.empty() ? ExperimentConfig{} : load_config(path);
  for (const auto& o : overrides) apply_override(c, o);
  c.validate();
  return c;
}

void print_tables(const RunMetrics& m) {
  std::printf("%-6s", "round");
  for (const auto& arm : m.arms) std::printf(" %14s", arm.c_str());
  std::printf("\n");
  std::vector<std::vector<Real>> cols;
  std::size_t rows = 0;
  for (const auto& arm : m.arms) {
    cols.push_back(m.mean_mse(arm));
    rows = std::max(rows, cols.back().size());
  }
  for (std::size_t t = 0; t < rows; ++t) {
    std::printf("%-6zu", t);
    for (const auto& c : cols) {
      if (t < c.size())
        std::printf(" %14.6g", c[t]);
      else
        std::printf(" %14s", "");
    }
    std::printf("\n");
  }
}

int cmd_synth(const ExperimentConfig& c, const std::filesystem::path& out) {
  const SyntheticWorld w = build_world(c.synthetic);
  save_records_csv(out / "records.csv", w.records);
  LabeledSet labels;
  std::vector<LocationEntry> locations;
  for (const auto& loc : w.labeled_locations) locations.push_back({loc, LocationRole::Labeled});
  for (const auto& loc : w.pool_locations) locations.push_back({loc, LocationRole::Pool});
  std::sort(locations.begin(), locations.end(),
            [](const LocationEntry& a, const LocationEntry& b) { return a.location.id < b.location.id; });
  for (const auto& e : locations) {
    auto window = label_window(w.records, e.location, w.profile, 0);
    labels.insert(labels.end(), window.begin(), window.end());
  }
  save_labels_csv(out / "labels.csv", labels);
  save_locations_csv(out / "locations.csv", locations);
  save_profile_json(out / "profile.json", w.profile);
  std::printf("%zu records, %zu labeled samples, %zu labeled + %zu pool locations -> %s\n", w.records.size(),
              labels.size(), w.labeled_locations.size(), w.pool_locations.size(), out.string().c_str());
  return 0;
}

int cmd_train(const ExperimentConfig& c, const std::filesystem::path& out) {
  const ExperimentData data = load_experiment_data(c);
  const std::uint64_t seed = c.repeat_seeds().front();
  const DatasetSplit split =
      split_dataset(data.labeled, c.synthetic.test_fraction, c.synthetic.validation_fraction, seed);
  ModelConfig mc = c.model;
  mc.input_dim = data.records.front().features.size();
  mc.output_dim = data.labeled.front().label.size();
  TrainingTrace trace;
  const Model model = train_from_scratch(mc, make_batch(split.train), c.train, seed, &trace);
  std::filesystem::create_directories(out);
  save_checkpoint(model, out / "model.ckpt");
  std::ofstream trace_out(out / "trace.csv");
  trace.write_csv(trace_out);
  for (const auto& w : trace.warnings) std::fprintf(stderr, "warning: %s\n", w.c_str());
  std::printf("seed %llu: train %zu, validation %zu, test %zu samples\n", static_cast<unsigned long long>(seed),
              split.train.size(), split.validation.size(), split.test.size());
  std::printf("validation MSE %.6g\n", split.validation.empty() ? 0.0 : compute_mse(model, split.validation));
  std::printf("test MSE %.6g\n", compute_mse(model, split.test));
  return 0;
}

int cmd_run(const ExperimentConfig& c, const std::filesystem::path& out) {
  const RunMetrics m = run_al_igan(c);
  emit_report(m, c, out);
  for (const auto& w : m.warnings) std::fprintf(stderr, "warning: %s\n", w.c_str());
  print_tables(m);
  return 0;
}

int cmd_report(const std::filesystem::path& in, const std::filesystem::path& out) {
  const RunMetrics m = load_metrics(in);
  const ExperimentConfig c = load_config(in / "config.txt");
  emit_report(m, c, out.empty() ? in : out);
  print_tables(m);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Active-learning incremental GAN regression for tunnel geology"};
  app.require_subcommand(1);

  std::string config_path;
  std::vector<std::string> overrides;
  std::string out_dir;
  std::string in_dir;
  auto add_common = [&](CLI::App* sub, bool needs_out) {
    sub->add_option("-c,--config", config_path, "key = value config file")->check(CLI::ExistingFile);
    sub->add_option("-s,--set", overrides, "override, key=value (repeatable)");
    auto* o = sub->add_option("-o,--out", out_dir, "output directory");
    if (needs_out) o->required();
  };
  auto* synth = app.add_subcommand("synth", "generate a synthetic tunnel dataset as CSV");
  add_common(synth, true);
  auto* train = app.add_subcommand("train", "initial training only; writes a checkpoint and loss trace");
  add_common(train, true);
  auto* run = app.add_subcommand("run", "full active-learning loop with report tables");
  add_common(run, true);
  auto* report = app.add_subcommand("report", "re-emit report tables from a finished run");
  report->add_option("-i,--in", in_dir, "run output directory")->required()->check(CLI::ExistingDirectory);
  report->add_option("-o,--out", out_dir, "output directory (defaults to --in)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    if (*report) return cmd_report(in_dir, out_dir);
    const ExperimentConfig c = resolve_config(config_path, overrides);
    if (*synth) return cmd_synth(c, out_dir);
    if (*train) return cmd_train(c, out_dir);
    return cmd_run(c, out_dir);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kExitConfig;
  } catch (const DivergenceError& e) {
    std::fprintf(stderr, "training diverged: %s\n", e.what());
    return kExitDivergence;
  } catch (const DataError& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return kExitData;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}
