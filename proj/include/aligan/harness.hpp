// Active-learning experiment driver: configuration, the query/label/retrain
// loop, metrics, and report files.

#ifndef ALIGAN_HARNESS_HPP
#define ALIGAN_HARNESS_HPP

#include "aligan/active_learning.hpp"
#include "aligan/geodata.hpp"
#include "aligan/training.hpp"

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace aligan {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class DataSource { Synthetic, Csv };

struct CsvDataPaths {
  std::filesystem::path records;
  std::filesystem::path labels;
  std::filesystem::path locations;
  friend bool operator==(const CsvDataPaths&, const CsvDataPaths&) = default;
};

struct ExperimentConfig {
  std::vector<Strategy> strategies{Strategy::Entropy};
  int rounds = 9;
  int repeats = 5;
  std::uint64_t seed = 1;
  std::vector<std::uint64_t> seeds;  // overrides seed + r when nonempty
  // Run the GAN-GP ablation instead of the full model.
  bool gan_gp = false;
  // Run both the full model and the ablation for every strategy.
  bool compare_gan_gp = false;
  int committee_size = 10;
  Real committee_subset = 0.8;
  int workers = 1;  // repeats and committee members trained concurrently
  bool standardize = true;

  ModelConfig model{};
  TrainConfig train{};
  DataSource source = DataSource::Synthetic;
  SyntheticConfig synthetic{};
  CsvDataPaths csv{};

  [[nodiscard]] std::vector<std::uint64_t> repeat_seeds() const;
  void validate() const;  // throws ConfigError
  friend bool operator==(const ExperimentConfig&, const ExperimentConfig&) = default;
};

// Sets lambda = beta = 0 for the incremental stage and marks the run as the
// GAN-GP ablation. Nothing else changes.
ExperimentConfig apply_ablation(ExperimentConfig config);

// `key = value` lines; '#' starts a comment. Unknown keys are errors.
void apply_setting(ExperimentConfig& config, const std::string& key, const std::string& value);
void apply_override(ExperimentConfig& config, const std::string& assignment);  // "key=value"
ExperimentConfig parse_config(std::istream& in, const std::string& source_name = "config");
ExperimentConfig load_config(const std::filesystem::path& path);
// Every key in a fixed order; parse_config(snapshot(c)) == c.
std::string config_snapshot(const ExperimentConfig& config);

Real compute_mse(const Model& model, const LabeledSet& test);
Real perf_gain(Real mse_prev, Real mse_cur);

struct RoundRecord {
  int round = 0;
  Real mse = 0;
  Real gain = 0;  // NaN for round 0
  int location_id = -1;  // -1 for round 0
  Real chainage = 0;
  Real score = 0;
  Real runner_up = 0;
  std::size_t train_size = 0;
  double query_seconds = 0;
  double train_seconds = 0;
};

struct RepeatMetrics {
  int repeat = 0;
  std::uint64_t seed = 0;
  std::string arm;
  std::vector<RoundRecord> rounds;
};

struct RunMetrics {
  std::vector<std::string> arms;
  std::vector<RepeatMetrics> runs;  // ordered by repeat, then arm
  std::vector<std::string> warnings;
  bool has_timings = true;  // false when rebuilt from files

  // Per-round MSE averaged over repeats, truncated to the shortest run.
  [[nodiscard]] std::vector<Real> mean_mse(const std::string& arm) const;
  [[nodiscard]] std::vector<Real> mean_gain(const std::string& arm) const;
};

std::string arm_name(Strategy s, bool gan_gp);

// Data shared by every repeat: records, labeled samples of the training
// locations, pool locations and the drilling oracle.
struct ExperimentData {
  std::vector<OperationalRecord> records;
  LabeledSet labeled;
  std::vector<DrillLocation> pool_locations;
  DrillOracle oracle;
};

ExperimentData load_experiment_data(const ExperimentConfig& config);

RunMetrics run_al_igan(const ExperimentConfig& config);
RunMetrics run_al_igan(const ExperimentConfig& config, const ExperimentData& data);

// Writes mse_table.csv, gain_table.csv, query_log.csv, mse_per_repeat.csv,
// warnings.txt, config.txt and, when available, timings.csv (the only
// non-deterministic file).
void emit_report(const RunMetrics& metrics, const ExperimentConfig& config, const std::filesystem::path& dir);

// Rebuilds metrics from mse_per_repeat.csv and query_log.csv in `dir`.
RunMetrics load_metrics(const std::filesystem::path& dir);

}  // namespace aligan

#endif  // ALIGAN_HARNESS_HPP
