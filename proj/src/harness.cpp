#include "aligan/harness.hpp"

#include "csv_util.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <exception>
#include <fstream>
#include <functional>
#include <limits>
#include <memory>
#include <mutex>
#include <numeric>
#include <set>
#include <sstream>
#include <thread>

namespace aligan {

namespace {

using detail::format_optional;
using detail::format_real;

constexpr Real kNaN = std::numeric_limits<Real>::quiet_NaN();

// --- config values -------------------------------------------------------

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(v);
  while (std::getline(in, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value, const std::string& expected) {
  throw ConfigError("invalid value '" + value + "' for " + key + " (expected " + expected + ")");
}

template <class T>
T parse_value(const std::string& key, const std::string& v);

template <>
bool parse_value<bool>(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  bad_value(key, v, "true or false");
}

template <>
long long parse_value<long long>(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const long long out = std::stoll(v, &used);
    if (used == v.size()) return out;
  } catch (const std::exception&) {
  }
  bad_value(key, v, "an integer");
}

template <>
int parse_value<int>(const std::string& key, const std::string& v) {
  const long long x = parse_value<long long>(key, v);
  if (x < std::numeric_limits<int>::min() || x > std::numeric_limits<int>::max()) bad_value(key, v, "an int");
  return static_cast<int>(x);
}

template <>
long parse_value<long>(const std::string& key, const std::string& v) {
  return static_cast<long>(parse_value<long long>(key, v));
}

template <>
std::uint64_t parse_value<std::uint64_t>(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    if (!v.empty() && v[0] != '-') {
      const auto out = std::stoull(v, &used);
      if (used == v.size()) return out;
    }
  } catch (const std::exception&) {
  }
  bad_value(key, v, "a nonnegative integer");
}

template <>
Real parse_value<Real>(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const Real out = std::stod(v, &used);
    if (used == v.size() && std::isfinite(out)) return out;
  } catch (const std::exception&) {
  }
  bad_value(key, v, "a finite number");
}

template <>
std::filesystem::path parse_value<std::filesystem::path>(const std::string&, const std::string& v) {
  return v;
}

template <>
std::vector<Eigen::Index> parse_value<std::vector<Eigen::Index>>(const std::string& key, const std::string& v) {
  std::vector<Eigen::Index> out;
  for (const auto& item : split_list(v)) out.push_back(parse_value<long>(key, item));
  return out;
}

template <>
std::vector<std::uint64_t> parse_value<std::vector<std::uint64_t>>(const std::string& key, const std::string& v) {
  std::vector<std::uint64_t> out;
  for (const auto& item : split_list(v)) out.push_back(parse_value<std::uint64_t>(key, item));
  return out;
}

template <>
std::vector<Strategy> parse_value<std::vector<Strategy>>(const std::string& key, const std::string& v) {
  std::vector<Strategy> out;
  for (const auto& item : split_list(v)) {
    try {
      out.push_back(parse_strategy(item));
    } catch (const std::invalid_argument&) {
      bad_value(key, item, "RS, EUS or QBC");
    }
  }
  return out;
}

template <>
SensitivityMode parse_value<SensitivityMode>(const std::string& key, const std::string& v) {
  if (v == "fisher") return SensitivityMode::EmpiricalFisher;
  if (v == "hessian") return SensitivityMode::HessianDiagonal;
  bad_value(key, v, "fisher or hessian");
}

template <>
DataSource parse_value<DataSource>(const std::string& key, const std::string& v) {
  if (v == "synthetic") return DataSource::Synthetic;
  if (v == "csv") return DataSource::Csv;
  bad_value(key, v, "synthetic or csv");
}

std::string format_value(bool v) { return v ? "true" : "false"; }
std::string format_value(int v) { return std::to_string(v); }
std::string format_value(long v) { return std::to_string(v); }
std::string format_value(std::uint64_t v) { return std::to_string(v); }
std::string format_value(Real v) { return format_real(v); }
std::string format_value(const std::filesystem::path& v) { return v.string(); }
std::string format_value(SensitivityMode v) { return v == SensitivityMode::EmpiricalFisher ? "fisher" : "hessian"; }
std::string format_value(DataSource v) { return v == DataSource::Synthetic ? "synthetic" : "csv"; }

template <class T>
std::string format_value(const std::vector<T>& v) {
  std::string out;
  for (const auto& x : v) out += (out.empty() ? "" : ",") + format_value(x);
  return out;
}

std::string format_value(const std::vector<Strategy>& v) {
  std::string out;
  for (const auto s : v) out += (out.empty() ? "" : ",") + std::string(strategy_name(s));
  return out;
}

struct Field {
  std::string key;
  std::function<std::string(const ExperimentConfig&)> get;
  std::function<void(ExperimentConfig&, const std::string&)> set;
};

template <class Access>
Field field(std::string key, Access access) {
  return {key,
          [access](const ExperimentConfig& c) { return format_value(access(const_cast<ExperimentConfig&>(c))); },
          [access, key](ExperimentConfig& c, const std::string& v) {
            using T = std::remove_cvref_t<decltype(access(c))>;
            access(c) = parse_value<T>(key, v);
          }};
}

void add_stage(std::vector<Field>& fields, const std::string& prefix, StageConfig TrainConfig::*stage) {
  auto at = [stage](ExperimentConfig& c) -> StageConfig& { return c.train.*stage; };
  fields.push_back(field(prefix + ".iterations", [at](ExperimentConfig& c) -> auto& { return at(c).iterations; }));
  fields.push_back(field(prefix + ".batch_size", [at](ExperimentConfig& c) -> auto& { return at(c).batch_size; }));
  fields.push_back(field(prefix + ".lr_supervised", [at](ExperimentConfig& c) -> auto& { return at(c).lr_supervised; }));
  fields.push_back(field(prefix + ".lr_generative", [at](ExperimentConfig& c) -> auto& { return at(c).lr_generative; }));
  fields.push_back(
      field(prefix + ".lr_discriminative", [at](ExperimentConfig& c) -> auto& { return at(c).lr_discriminative; }));
  fields.push_back(field(prefix + ".lambda_g", [at](ExperimentConfig& c) -> auto& { return at(c).lambda_g; }));
  fields.push_back(field(prefix + ".lambda_d", [at](ExperimentConfig& c) -> auto& { return at(c).lambda_d; }));
  fields.push_back(field(prefix + ".beta_g", [at](ExperimentConfig& c) -> auto& { return at(c).beta_g; }));
  fields.push_back(field(prefix + ".beta_d", [at](ExperimentConfig& c) -> auto& { return at(c).beta_d; }));
}

const std::vector<Field>& fields() {
  static const std::vector<Field> all = [] {
    using C = ExperimentConfig;
    std::vector<Field> f;
    f.push_back(field("strategies", [](C& c) -> auto& { return c.strategies; }));
    f.push_back(field("rounds", [](C& c) -> auto& { return c.rounds; }));
    f.push_back(field("repeats", [](C& c) -> auto& { return c.repeats; }));
    f.push_back(field("seed", [](C& c) -> auto& { return c.seed; }));
    f.push_back(field("seeds", [](C& c) -> auto& { return c.seeds; }));
    f.push_back(field("gan_gp", [](C& c) -> auto& { return c.gan_gp; }));
    f.push_back(field("compare_gan_gp", [](C& c) -> auto& { return c.compare_gan_gp; }));
    f.push_back(field("committee.size", [](C& c) -> auto& { return c.committee_size; }));
    f.push_back(field("committee.subset", [](C& c) -> auto& { return c.committee_subset; }));
    f.push_back(field("workers", [](C& c) -> auto& { return c.workers; }));
    f.push_back(field("model.heads", [](C& c) -> auto& { return c.model.heads; }));
    f.push_back(field("model.head_dim", [](C& c) -> auto& { return c.model.head_dim; }));
    f.push_back(field("model.generator_hidden", [](C& c) -> auto& { return c.model.generator_hidden; }));
    f.push_back(field("model.discriminator_hidden", [](C& c) -> auto& { return c.model.discriminator_hidden; }));
    add_stage(f, "train.pretrain", &TrainConfig::pretrain);
    add_stage(f, "train.initial", &TrainConfig::initial);
    add_stage(f, "train.incremental", &TrainConfig::incremental);
    f.push_back(field("train.adam.beta1", [](C& c) -> auto& { return c.train.adam.beta1; }));
    f.push_back(field("train.adam.beta2", [](C& c) -> auto& { return c.train.adam.beta2; }));
    f.push_back(field("train.adam.epsilon", [](C& c) -> auto& { return c.train.adam.epsilon; }));
    f.push_back(field("train.disc_step_updates_generator",
                      [](C& c) -> auto& { return c.train.disc_step_updates_generator; }));
    f.push_back(field("train.gen_step_updates_discriminator",
                      [](C& c) -> auto& { return c.train.gen_step_updates_discriminator; }));
    f.push_back(field("train.divergence_threshold", [](C& c) -> auto& { return c.train.divergence_threshold; }));
    f.push_back(field("train.sensitivity", [](C& c) -> auto& { return c.train.sensitivity_mode; }));
    f.push_back(field("data.source", [](C& c) -> auto& { return c.source; }));
    f.push_back(field("data.standardize", [](C& c) -> auto& { return c.standardize; }));
    f.push_back(field("data.test_fraction", [](C& c) -> auto& { return c.synthetic.test_fraction; }));
    f.push_back(field("data.validation_fraction", [](C& c) -> auto& { return c.synthetic.validation_fraction; }));
    f.push_back(field("data.seed", [](C& c) -> auto& { return c.synthetic.seed; }));
    f.push_back(field("data.tunnel_length", [](C& c) -> auto& { return c.synthetic.tunnel_length; }));
    f.push_back(field("data.labeled_locations", [](C& c) -> auto& { return c.synthetic.labeled_locations; }));
    f.push_back(field("data.pool_locations", [](C& c) -> auto& { return c.synthetic.pool_locations; }));
    f.push_back(field("data.record_spacing", [](C& c) -> auto& { return c.synthetic.record_spacing; }));
    f.push_back(field("data.noise", [](C& c) -> auto& { return c.synthetic.noise; }));
    f.push_back(field("data.noise_rho", [](C& c) -> auto& { return c.synthetic.noise_rho; }));
    f.push_back(field("data.feature_dim", [](C& c) -> auto& { return c.synthetic.feature_dim; }));
    f.push_back(field("data.type_count", [](C& c) -> auto& { return c.synthetic.type_count; }));
    f.push_back(field("data.active_types", [](C& c) -> auto& { return c.synthetic.active_types; }));
    f.push_back(field("data.records", [](C& c) -> auto& { return c.csv.records; }));
    f.push_back(field("data.labels", [](C& c) -> auto& { return c.csv.labels; }));
    f.push_back(field("data.locations", [](C& c) -> auto& { return c.csv.locations; }));
    return f;
  }();
  return all;
}

// --- running -------------------------------------------------------------

// Runs fn(0..n-1) on up to `workers` threads; the first exception wins.
void parallel_for(std::size_t n, int workers, const std::function<void(std::size_t)>& fn) {
  if (workers <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::mutex mu;
  std::size_t next = 0;
  std::exception_ptr error;
  auto worker = [&] {
    for (;;) {
      std::size_t i;
      {
        std::lock_guard lock(mu);
        if (next >= n || error) return;
        i = next++;
      }
      try {
        fn(i);
      } catch (...) {
        std::lock_guard lock(mu);
        if (!error) error = std::current_exception();
      }
    }
  };
  std::vector<std::thread> threads;
  const auto count = std::min<std::size_t>(n, static_cast<std::size_t>(workers));
  for (std::size_t t = 0; t < count; ++t) threads.emplace_back(worker);
  for (auto& t : threads) t.join();
  if (error) std::rethrow_exception(error);
}

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(salt), static_cast<std::uint32_t>(salt >> 32)};
  std::mt19937_64 rng(seq);
  return rng();
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// One learner in an arm: the main model or a committee member.
struct Learner {
  Model model;
  LabeledSet train;
  std::mt19937_64 rng;
};

void advance(Learner& l, const LabeledSet& added, const TrainConfig& train, bool gan_gp) {
  const Batch previous = make_batch(l.train);
  l.train = rehearsal_merge(l.train, added, l.rng);
  const Batch next = make_batch(l.train);
  if (gan_gp) {
    l.model = adversarial_train(std::move(l.model), next, train.incremental, train, nullptr, l.rng, nullptr,
                                "incremental");
  } else {
    const AnchorState anchor = make_anchor(l.model, previous, train.sensitivity_mode);
    l.model = incremental_train(std::move(l.model), next, anchor, train, l.rng);
  }
}

struct RepeatContext {
  const ExperimentConfig& config;
  const ExperimentData& data;
  int repeat;
  std::uint64_t seed;
};

std::vector<Model> train_committee(const RepeatContext& ctx, const ModelConfig& mc, const LabeledSet& train) {
  const int size = ctx.config.committee_size;
  std::vector<Model> members(static_cast<std::size_t>(size));
  parallel_for(members.size(), ctx.config.workers, [&](std::size_t c) {
    const std::uint64_t member_seed = mix_seed(ctx.seed, 1000 + c);
    std::mt19937_64 pick(member_seed);
    std::vector<std::size_t> idx(train.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::shuffle(idx.begin(), idx.end(), pick);
    const auto keep = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::floor(ctx.config.committee_subset * static_cast<Real>(train.size()))));
    idx.resize(keep);
    std::sort(idx.begin(), idx.end());
    LabeledSet subset;
    for (const auto i : idx) subset.push_back(train[i]);
    members[c] = train_from_scratch(mc, make_batch(subset), ctx.config.train, member_seed);
  });
  return members;
}

RepeatMetrics run_arm(const RepeatContext& ctx, Strategy strategy, bool gan_gp, const Model& initial,
                      const std::vector<Model>& committee0, const DatasetSplit& split, Real mse0,
                      std::vector<std::string>& warnings) {
  const auto& cfg = ctx.config;
  const TrainConfig train = gan_gp ? apply_ablation(cfg).train : cfg.train;
  const auto salt = static_cast<std::uint64_t>(strategy) + 1;

  RepeatMetrics out;
  out.repeat = ctx.repeat;
  out.seed = ctx.seed;
  out.arm = arm_name(strategy, gan_gp);
  out.rounds.push_back({0, mse0, kNaN, -1, kNaN, kNaN, kNaN, split.train.size(), 0, 0});

  std::mt19937_64 query_rng(mix_seed(ctx.seed, 100 + salt));
  Learner main{initial, split.train, std::mt19937_64(mix_seed(ctx.seed, 200 + salt))};
  std::vector<Learner> members;
  if (strategy == Strategy::Committee) {
    for (std::size_t c = 0; c < committee0.size(); ++c)
      members.push_back({committee0[c], split.train, std::mt19937_64(mix_seed(ctx.seed, 300 + 100 * salt + c))});
  }

  Pool pool = build_pool(ctx.data.pool_locations, ctx.data.records);
  Real previous = mse0;
  for (int t = 1; t <= cfg.rounds; ++t) {
    if (pool.empty()) {
      warnings.push_back(out.arm + " seed " + std::to_string(ctx.seed) + ": pool exhausted after round " +
                         std::to_string(t - 1));
      break;
    }
    try {
      auto t0 = std::chrono::steady_clock::now();
      QueryResult q;
      switch (strategy) {
        case Strategy::Random: q = query_random(pool, query_rng); break;
        case Strategy::Entropy: q = query_eus(pool, make_predictor(main.model)); break;
        case Strategy::Committee: {
          std::vector<Predictor> preds;
          for (const auto& m : members) preds.push_back(make_predictor(m.model));
          q = query_qbc(pool, std::span<const Predictor>(preds));
          break;
        }
      }
      const double query_seconds = seconds_since(t0);

      const auto loc = std::find_if(ctx.data.pool_locations.begin(), ctx.data.pool_locations.end(),
                                    [&](const DrillLocation& d) { return d.id == q.location_id; });
      const LabeledSet added = label_window(ctx.data.records, *loc, ctx.data.oracle, t);
      if (added.empty())
        warnings.push_back(out.arm + " seed " + std::to_string(ctx.seed) + " round " + std::to_string(t) +
                           ": empty labeling window at location " + std::to_string(q.location_id));
      pool.remove_location(q.location_id);

      t0 = std::chrono::steady_clock::now();
      advance(main, added, train, gan_gp);
      parallel_for(members.size(), cfg.workers, [&](std::size_t c) { advance(members[c], added, train, gan_gp); });
      const double train_seconds = seconds_since(t0);

      const Real mse = compute_mse(main.model, split.test);
      out.rounds.push_back({t, mse, perf_gain(previous, mse), q.location_id, q.chainage, q.score, q.runner_up,
                            main.train.size(), query_seconds, train_seconds});
      previous = mse;
    } catch (const DivergenceError& e) {
      throw DivergenceError(out.arm + " seed " + std::to_string(ctx.seed) + " round " + std::to_string(t) + ": " +
                            e.what());
    }
  }
  return out;
}

struct ArmSpec {
  Strategy strategy;
  bool gan_gp;
};

std::vector<ArmSpec> arm_specs(const ExperimentConfig& c) {
  std::vector<ArmSpec> out;
  for (const auto s : c.strategies) {
    if (c.compare_gan_gp) {
      out.push_back({s, false});
      out.push_back({s, true});
    } else {
      out.push_back({s, c.gan_gp});
    }
  }
  return out;
}

}  // namespace

// --- config --------------------------------------------------------------

std::vector<std::uint64_t> ExperimentConfig::repeat_seeds() const {
  if (!seeds.empty()) return seeds;
  std::vector<std::uint64_t> out;
  for (int r = 0; r < repeats; ++r) out.push_back(seed + static_cast<std::uint64_t>(r));
  return out;
}

void ExperimentConfig::validate() const {
  if (strategies.empty()) throw ConfigError("at least one strategy is required");
  if (std::set<Strategy>(strategies.begin(), strategies.end()).size() != strategies.size())
    throw ConfigError("strategies must be distinct");
  if (rounds < 0) throw ConfigError("rounds must be >= 0");
  if (repeats < 1) throw ConfigError("repeats must be >= 1");
  if (!seeds.empty() && static_cast<int>(seeds.size()) != repeats)
    throw ConfigError("seeds must list exactly one seed per repeat");
  if (gan_gp && compare_gan_gp) throw ConfigError("gan_gp and compare_gan_gp are mutually exclusive");
  if (committee_size < 1) throw ConfigError("committee size must be >= 1");
  if (!(committee_subset > 0 && committee_subset <= 1)) throw ConfigError("committee subset must be in (0, 1]");
  if (workers < 1) throw ConfigError("workers must be >= 1");
  try {
    train.validate();
    ModelConfig m = model;
    m.input_dim = std::max<Eigen::Index>(m.input_dim, 1);
    m.output_dim = std::max<Eigen::Index>(m.output_dim, 1);
    m.validate();
    if (source == DataSource::Synthetic) synthetic.validate();
    if (!(synthetic.test_fraction >= 0 && synthetic.test_fraction < 1))
      throw std::invalid_argument("test fraction must be in [0, 1)");
    if (!(synthetic.validation_fraction >= 0 && synthetic.validation_fraction < 1))
      throw std::invalid_argument("validation fraction must be in [0, 1)");
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  if (source == DataSource::Synthetic && rounds > synthetic.pool_locations)
    throw ConfigError("rounds exceed the number of pool locations");
  if (source == DataSource::Csv && (csv.records.empty() || csv.labels.empty() || csv.locations.empty()))
    throw ConfigError("csv data needs data.records, data.labels and data.locations");
}

ExperimentConfig apply_ablation(ExperimentConfig config) {
  config.gan_gp = true;
  config.train.incremental.lambda_g = 0;
  config.train.incremental.lambda_d = 0;
  config.train.incremental.beta_g = 0;
  config.train.incremental.beta_d = 0;
  return config;
}

void apply_setting(ExperimentConfig& config, const std::string& key, const std::string& value) {
  for (const auto& f : fields()) {
    if (f.key == key) {
      f.set(config, value);
      return;
    }
  }
  throw ConfigError("unknown config key '" + key + "'");
}

void apply_override(ExperimentConfig& config, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw ConfigError("override '" + assignment + "' is not key=value");
  apply_setting(config, trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
}

ExperimentConfig parse_config(std::istream& in, const std::string& source_name) {
  ExperimentConfig c;
  std::string line;
  int n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    try {
      apply_override(c, line);
    } catch (const ConfigError& e) {
      throw ConfigError(source_name + ":" + std::to_string(n) + ": " + e.what());
    }
  }
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  return parse_config(in, path.string());
}

std::string config_snapshot(const ExperimentConfig& config) {
  std::string out;
  for (const auto& f : fields()) out += f.key + " = " + f.get(config) + "\n";
  return out;
}

// --- metrics -------------------------------------------------------------

Real compute_mse(const Model& model, const LabeledSet& test) {
  if (test.empty()) throw std::invalid_argument("compute_mse on an empty test set");
  const Batch b = make_batch(test);
  const Matrix pred = generator_forward(model, b);
  return (pred - b.y).rowwise().squaredNorm().mean();
}

Real perf_gain(Real mse_prev, Real mse_cur) {
  if (!(mse_prev > 0)) throw std::invalid_argument("performance gain needs a positive previous MSE");
  return (mse_prev - mse_cur) / mse_prev;
}

std::vector<Real> RunMetrics::mean_mse(const std::string& arm) const {
  std::vector<const RepeatMetrics*> runs_of_arm;
  for (const auto& r : runs)
    if (r.arm == arm) runs_of_arm.push_back(&r);
  if (runs_of_arm.empty()) return {};
  std::size_t len = runs_of_arm.front()->rounds.size();
  for (const auto* r : runs_of_arm) len = std::min(len, r->rounds.size());
  std::vector<Real> out(len, 0.0);
  for (std::size_t t = 0; t < len; ++t) {
    Real sum = 0;
    for (const auto* r : runs_of_arm) sum += r->rounds[t].mse;
    out[t] = sum / static_cast<Real>(runs_of_arm.size());
  }
  return out;
}

std::vector<Real> RunMetrics::mean_gain(const std::string& arm) const {
  const auto m = mean_mse(arm);
  std::vector<Real> out;
  for (std::size_t t = 1; t < m.size(); ++t) out.push_back(perf_gain(m[t - 1], m[t]));
  return out;
}

std::string arm_name(Strategy s, bool gan_gp) {
  return std::string(strategy_name(s)) + (gan_gp ? "-GANGP" : "");
}

ExperimentData load_experiment_data(const ExperimentConfig& config) {
  ExperimentData d;
  if (config.source == DataSource::Synthetic) {
    auto world = std::make_shared<SyntheticWorld>(build_world(config.synthetic));
    d.records = world->records;
    if (config.standardize) standardize_features(d.records);
    d.oracle = [world](Real c) { return world->profile.fractions(c); };
    for (const auto& loc : world->labeled_locations) {
      auto window = label_window(d.records, loc, d.oracle, 0);
      d.labeled.insert(d.labeled.end(), window.begin(), window.end());
    }
    d.pool_locations = world->pool_locations;
    return d;
  }
  d.records = load_records_csv(config.csv.records);
  if (config.standardize) standardize_features(d.records);
  const LabeledSet labels = load_labels_csv(config.csv.labels, d.records);
  d.oracle = table_oracle(labels);
  std::set<int> labeled_ids;
  for (const auto& e : load_locations_csv(config.csv.locations)) {
    if (e.role == LocationRole::Pool)
      d.pool_locations.push_back(e.location);
    else
      labeled_ids.insert(e.location.id);
  }
  for (auto s : labels) {
    if (!labeled_ids.contains(s.location_id)) continue;
    s.round = 0;
    s.tau = 0;
    d.labeled.push_back(std::move(s));
  }
  if (d.labeled.empty()) throw DataError("no labeled samples for the labeled locations");
  return d;
}

RunMetrics run_al_igan(const ExperimentConfig& config) {
  config.validate();
  return run_al_igan(config, load_experiment_data(config));
}

RunMetrics run_al_igan(const ExperimentConfig& config, const ExperimentData& data) {
  config.validate();
  if (data.records.empty() || data.labeled.empty()) throw DataError("experiment data is empty");
  if (static_cast<std::size_t>(config.rounds) > data.pool_locations.size())
    throw ConfigError("rounds exceed the number of pool locations");

  ModelConfig mc = config.model;
  mc.input_dim = data.records.front().features.size();
  mc.output_dim = data.labeled.front().label.size();

  const auto specs = arm_specs(config);
  const auto seeds = config.repeat_seeds();
  const bool need_committee = std::any_of(specs.begin(), specs.end(),
                                          [](const ArmSpec& a) { return a.strategy == Strategy::Committee; });

  std::vector<std::vector<RepeatMetrics>> per_repeat(seeds.size());
  std::vector<std::vector<std::string>> per_warnings(seeds.size());
  // Committee training already fans out; run repeats serially in that case.
  const int repeat_workers = need_committee ? 1 : config.workers;
  parallel_for(seeds.size(), repeat_workers, [&](std::size_t r) {
    const RepeatContext ctx{config, data, static_cast<int>(r), seeds[r]};
    const DatasetSplit split = split_dataset(data.labeled, config.synthetic.test_fraction,
                                             config.synthetic.validation_fraction, ctx.seed);
    if (split.train.empty() || split.test.empty()) throw DataError("split left an empty train or test set");
    Model initial;
    try {
      initial = train_from_scratch(mc, make_batch(split.train), config.train, ctx.seed);
    } catch (const DivergenceError& e) {
      throw DivergenceError("initial training, seed " + std::to_string(ctx.seed) + ": " + e.what());
    }
    const Real mse0 = compute_mse(initial, split.test);
    std::vector<Model> committee;
    if (need_committee) committee = train_committee(ctx, mc, split.train);
    for (const auto& spec : specs)
      per_repeat[r].push_back(run_arm(ctx, spec.strategy, spec.gan_gp, initial, committee, split, mse0, per_warnings[r]));
  });

  RunMetrics m;
  for (const auto& spec : specs) m.arms.push_back(arm_name(spec.strategy, spec.gan_gp));
  for (std::size_t r = 0; r < seeds.size(); ++r) {
    for (auto& run : per_repeat[r]) m.runs.push_back(std::move(run));
    for (auto& w : per_warnings[r]) m.warnings.push_back(std::move(w));
  }
  return m;
}

// --- report --------------------------------------------------------------

void emit_report(const RunMetrics& metrics, const ExperimentConfig& config, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);

  std::vector<std::vector<Real>> mse;
  std::size_t rows = 0;
  for (const auto& arm : metrics.arms) {
    mse.push_back(metrics.mean_mse(arm));
    rows = std::max(rows, mse.back().size());
  }
  auto header = [&](std::ostream& out) {
    out << "round";
    for (const auto& arm : metrics.arms) out << ',' << arm;
    out << '\n';
  };
  {
    auto out = detail::open_out(dir / "mse_table.csv");
    header(out);
    for (std::size_t t = 0; t < rows; ++t) {
      out << t;
      for (const auto& col : mse) out << ',' << (t < col.size() ? format_real(col[t]) : "");
      out << '\n';
    }
  }
  {
    auto out = detail::open_out(dir / "gain_table.csv");
    header(out);
    for (std::size_t t = 1; t < rows; ++t) {
      out << t;
      for (const auto& col : mse) out << ',' << (t < col.size() ? format_real(perf_gain(col[t - 1], col[t])) : "");
      out << '\n';
    }
  }
  {
    auto out = detail::open_out(dir / "query_log.csv");
    out << "repeat,seed,arm,round,strategy,location_id,chainage,score,runner_up\n";
    for (const auto& run : metrics.runs) {
      const std::string strategy = run.arm.substr(0, run.arm.find('-'));
      for (const auto& r : run.rounds) {
        if (r.round == 0) continue;
        out << run.repeat << ',' << run.seed << ',' << run.arm << ',' << r.round << ',' << strategy << ','
            << r.location_id << ',' << format_real(r.chainage) << ',' << format_optional(r.score) << ','
            << format_optional(r.runner_up) << '\n';
      }
    }
  }
  {
    auto out = detail::open_out(dir / "mse_per_repeat.csv");
    out << "repeat,seed,arm,round,train_size,mse,gain\n";
    for (const auto& run : metrics.runs)
      for (const auto& r : run.rounds)
        out << run.repeat << ',' << run.seed << ',' << run.arm << ',' << r.round << ',' << r.train_size << ','
            << format_real(r.mse) << ',' << format_optional(r.gain) << '\n';
  }
  if (metrics.has_timings) {
    auto out = detail::open_out(dir / "timings.csv");
    out << "repeat,seed,arm,round,query_seconds,train_seconds\n";
    for (const auto& run : metrics.runs)
      for (const auto& r : run.rounds)
        out << run.repeat << ',' << run.seed << ',' << run.arm << ',' << r.round << ',' << r.query_seconds << ','
            << r.train_seconds << '\n';
  }
  {
    auto out = detail::open_out(dir / "warnings.txt");
    for (const auto& w : metrics.warnings) out << w << '\n';
  }
  {
    auto out = detail::open_out(dir / "config.txt");
    out << config_snapshot(config);
  }
}

RunMetrics load_metrics(const std::filesystem::path& dir) {
  using detail::parse_int;
  using detail::parse_optional;
  using detail::parse_real;
  RunMetrics m;
  m.has_timings = false;
  const auto per_repeat_path = dir / "mse_per_repeat.csv";
  const auto f = detail::read_csv(per_repeat_path, nullptr);
  detail::expect_header(f, {"repeat", "seed", "arm", "round", "train_size", "mse", "gain"}, per_repeat_path, 1);
  for (const auto& [line, text] : f.rows) {
    const auto v = detail::split_fields(text);
    if (v.size() != 7) detail::fail(per_repeat_path, line, "expected 7 fields");
    const int repeat = static_cast<int>(parse_int(v[0], per_repeat_path, line));
    const auto seed = static_cast<std::uint64_t>(parse_int(v[1], per_repeat_path, line));
    const std::string& arm = v[2];
    if (std::find(m.arms.begin(), m.arms.end(), arm) == m.arms.end()) m.arms.push_back(arm);
    if (m.runs.empty() || m.runs.back().repeat != repeat || m.runs.back().arm != arm)
      m.runs.push_back({repeat, seed, arm, {}});
    RoundRecord r;
    r.round = static_cast<int>(parse_int(v[3], per_repeat_path, line));
    r.train_size = static_cast<std::size_t>(parse_int(v[4], per_repeat_path, line));
    r.mse = parse_real(v[5], per_repeat_path, line);
    r.gain = parse_optional(v[6], per_repeat_path, line);
    r.chainage = r.score = r.runner_up = kNaN;
    if (r.round != static_cast<int>(m.runs.back().rounds.size()))
      detail::fail(per_repeat_path, line, "rounds must be consecutive from 0");
    m.runs.back().rounds.push_back(r);
  }

  const auto log_path = dir / "query_log.csv";
  const auto q = detail::read_csv(log_path, nullptr);
  detail::expect_header(q, {"repeat", "seed", "arm", "round", "strategy", "location_id", "chainage", "score", "runner_up"},
                        log_path, 1);
  for (const auto& [line, text] : q.rows) {
    const auto v = detail::split_fields(text);
    if (v.size() != 9) detail::fail(log_path, line, "expected 9 fields");
    const int repeat = static_cast<int>(parse_int(v[0], log_path, line));
    const int round = static_cast<int>(parse_int(v[3], log_path, line));
    auto run = std::find_if(m.runs.begin(), m.runs.end(),
                            [&](const RepeatMetrics& r) { return r.repeat == repeat && r.arm == v[2]; });
    if (run == m.runs.end() || round < 1 || round >= static_cast<int>(run->rounds.size()))
      detail::fail(log_path, line, "query without a matching MSE row");
    auto& r = run->rounds[static_cast<std::size_t>(round)];
    r.location_id = static_cast<int>(parse_int(v[5], log_path, line));
    r.chainage = parse_real(v[6], log_path, line);
    r.score = parse_optional(v[7], log_path, line);
    r.runner_up = parse_optional(v[8], log_path, line);
  }

  std::ifstream warnings(dir / "warnings.txt");
  for (std::string w; std::getline(warnings, w);)
    if (!w.empty()) m.warnings.push_back(w);
  return m;
}

}  // namespace aligan
