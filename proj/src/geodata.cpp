#include "aligan/geodata.hpp"

#include "csv_util.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <map>
#include <memory>
#include <numbers>
#include <numeric>
#include <sstream>

namespace aligan {

namespace {

using namespace detail;

constexpr Real kWindowSlack = 1e-9;
constexpr Real kRealLabelTolerance = 1e-6;
constexpr int kSinusoids = 3;
constexpr int kMaxFaults = 3;

constexpr const char* kRecordsVersion = "# aligan records v1";
constexpr const char* kLabelsVersion = "# aligan labels v1";
constexpr const char* kLocationsVersion = "# aligan locations v1";

// Independent generator streams for each stage of the synthetic pipeline.
enum class Stream : std::uint32_t { Profile = 1, FeatureMap = 2, Noise = 3, Locations = 4 };

std::mt19937_64 stream_rng(std::uint64_t seed, Stream s) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(s)};
  return std::mt19937_64(seq);
}

Real grid_chainage(std::int64_t i, Real spacing) { return static_cast<Real>(i) * spacing; }

// Fixed random lift of a fraction vector into feature space.
struct FeatureMap {
  Matrix lift;  // d_x x d_y
  Vector offset;

  Vector apply(const Vector& y) const {
    Vector z = lift * y + offset;
    return z.array().tanh().matrix();
  }
};

FeatureMap make_feature_map(const SyntheticConfig& c) {
  auto rng = stream_rng(c.seed, Stream::FeatureMap);
  std::normal_distribution<Real> lift(0.0, 1.5);
  std::normal_distribution<Real> offset(0.0, 0.3);
  FeatureMap m;
  m.lift.resize(c.feature_dim, c.type_count);
  for (Eigen::Index i = 0; i < m.lift.size(); ++i) m.lift.data()[i] = lift(rng);
  m.offset.resize(c.feature_dim);
  for (Eigen::Index i = 0; i < m.offset.size(); ++i) m.offset[i] = offset(rng);
  return m;
}

std::vector<std::string> numbered(const std::string& prefix, Eigen::Index count) {
  std::vector<std::string> out;
  for (Eigen::Index i = 1; i <= count; ++i) out.push_back(prefix + std::to_string(i));
  return out;
}

// Infers the numbered column count from a header such as f1..fN.
Eigen::Index count_numbered(const std::vector<std::string>& header, std::size_t start, const std::string& prefix) {
  Eigen::Index n = 0;
  for (std::size_t i = start; i < header.size(); ++i) {
    if (header[i] != prefix + std::to_string(n + 1)) break;
    ++n;
  }
  return n;
}

}  // namespace

const std::vector<RockSoilType>& rock_soil_catalog() {
  static const std::vector<RockSoilType> catalog{
      {"2-3", {17.0, 4.5, 4.0, 0.40, 0.65, 0.003, 10.0}, 7},
      {"4-2", {19.0, 15.0, 15.0, 0.32, 0.50, 0.005, 25.0}, 3},
      {"4-4", {18.0, 8.0, 4.5, 0.42, 0.70, 0.005, 18.0}, 2},
      {"4-10", {20.5, 32.0, 25.0, 0.22, 0.35, 20.0, 55.0}, 9},
      {"7-2-1", {18.5, 20.5, 18.0, 0.30, 0.45, 0.5, 22.0}, 9},
      {"7-2-2", {18.5, 22.5, 20.0, 0.28, 0.55, 0.5, 28.0}, 36},
      {"9-1", {19.5, 25.0, 40.0, 0.25, 0.0, 0.8, 45.0}, 9},
      {"9-2-1", {20.5, 27.5, 90.0, 0.25, 0.0, 2.5, 60.0}, 5},
      {"12-1", {19.5, 27.0, 40.0, 0.25, 0.0, 1.0, 45.0}, 6},
      {"12-2-1", {20.5, 30.0, 90.0, 0.25, 0.0, 2.5, 60.0}, 1},
      {"12-3", {24.5, 55.0, 10000.0, 0.22, 0.0, 1.5, 380.0}, 1},
  };
  return catalog;
}

std::int64_t SyntheticConfig::record_count() const {
  return static_cast<std::int64_t>(std::floor(tunnel_length / record_spacing + kWindowSlack));
}

void SyntheticConfig::validate() const {
  auto bad = [](const std::string& m) { return std::invalid_argument("synthetic config: " + m); };
  if (!(tunnel_length > 0)) throw bad("tunnel length must be positive");
  if (!(record_spacing > 0)) throw bad("record spacing must be positive");
  if (labeled_locations < 0 || pool_locations < 0) throw bad("location counts must be >= 0");
  if (drill_locations() < 1) throw bad("need at least one drill location");
  if (!(noise >= 0)) throw bad("noise must be >= 0");
  if (!(noise_rho >= 0 && noise_rho < 1)) throw bad("noise correlation must be in [0, 1)");
  if (feature_dim < 1) throw bad("feature dimension must be >= 1");
  if (type_count < 1) throw bad("type count must be >= 1");
  if (active_types < 1 || active_types > type_count) throw bad("active types must be in [1, type count]");
  if (!(test_fraction >= 0 && test_fraction < 1)) throw bad("test fraction must be in [0, 1)");
  if (!(validation_fraction >= 0 && validation_fraction < 1)) throw bad("validation fraction must be in [0, 1)");
  const Real cell = (tunnel_length - 2 * kLabelWindow) / drill_locations();
  if (cell < 2 * kLabelWindow + 2 * record_spacing) throw bad("tunnel too short for non-overlapping drill windows");
}

SyntheticConfig SyntheticConfig::full_scale() {
  SyntheticConfig c;
  c.tunnel_length = 2000;
  c.labeled_locations = 60;
  c.pool_locations = 28;
  return c;
}

Real LayerField::raw(Real chainage) const {
  Real v = base;
  for (std::size_t k = 0; k < amplitude.size(); ++k)
    v += amplitude[k] * std::sin(2 * std::numbers::pi * chainage / wavelength[k] + phase[k]);
  for (std::size_t k = 0; k < step_at.size(); ++k)
    if (chainage >= step_at[k]) v += step_height[k];
  return v;
}

Vector GeologyProfile::fractions(Real chainage) const {
  const auto n = static_cast<Eigen::Index>(layers.size());
  Vector raw(n);
  for (Eigen::Index j = 0; j < n; ++j) raw[j] = layers[static_cast<std::size_t>(j)].raw(chainage);
  Vector clipped = raw.cwiseMax(0.0);
  const Real total = clipped.sum();
  if (total > 0) return clipped / total;
  // All layers clipped: fall back to the largest raw value among active layers.
  Eigen::Index top = -1;
  for (Eigen::Index j = 0; j < n; ++j)
    if (!layers[static_cast<std::size_t>(j)].amplitude.empty() && (top < 0 || raw[j] > raw[top])) top = j;
  if (top < 0) raw.maxCoeff(&top);
  Vector one_hot = Vector::Zero(n);
  one_hot[top] = 1;
  return one_hot;
}

GeologyProfile synth_profile(const SyntheticConfig& config) {
  config.validate();
  auto rng = stream_rng(config.seed, Stream::Profile);
  std::uniform_real_distribution<Real> unit(0.0, 1.0);
  std::normal_distribution<Real> step(0.0, 0.5);
  std::uniform_int_distribution<int> faults(0, kMaxFaults);
  const Real L = config.tunnel_length;

  GeologyProfile p;
  p.seed = config.seed;
  p.length = L;
  p.layers.resize(static_cast<std::size_t>(config.type_count));
  for (Eigen::Index j = 0; j < config.type_count; ++j) {
    LayerField& f = p.layers[static_cast<std::size_t>(j)];
    if (j >= config.active_types) {
      f.base = -1;  // never present
      continue;
    }
    f.base = unit(rng) - 0.2;
    for (int k = 0; k < kSinusoids; ++k) {
      f.amplitude.push_back(0.6 * unit(rng));
      f.wavelength.push_back(L / 8 + unit(rng) * (L - L / 8));
      f.phase.push_back(2 * std::numbers::pi * unit(rng));
    }
    const int n_faults = faults(rng);
    for (int k = 0; k < n_faults; ++k) {
      f.step_at.push_back(unit(rng) * L);
      f.step_height.push_back(step(rng));
    }
  }
  return p;
}

std::vector<OperationalRecord> synth_records(const GeologyProfile& profile, const SyntheticConfig& config) {
  config.validate();
  if (static_cast<Eigen::Index>(profile.layers.size()) != config.type_count)
    throw std::invalid_argument("profile type count differs from config");
  const FeatureMap map = make_feature_map(config);
  auto rng = stream_rng(config.seed, Stream::Noise);
  std::normal_distribution<Real> normal(0.0, 1.0);
  const Real innovation = config.noise * std::sqrt(1 - config.noise_rho * config.noise_rho);

  const std::int64_t n = config.record_count();
  std::vector<OperationalRecord> records(static_cast<std::size_t>(n));
  Vector ar(config.feature_dim);
  for (Eigen::Index k = 0; k < ar.size(); ++k) ar[k] = config.noise * normal(rng);
  for (std::int64_t i = 0; i < n; ++i) {
    auto& r = records[static_cast<std::size_t>(i)];
    r.chainage = grid_chainage(i, config.record_spacing);
    r.index = i;
    if (i > 0)
      for (Eigen::Index k = 0; k < ar.size(); ++k) ar[k] = config.noise_rho * ar[k] + innovation * normal(rng);
    r.features = map.apply(profile.fractions(r.chainage)) + ar;
  }
  return records;
}

std::vector<DrillLocation> place_drill_locations(const SyntheticConfig& config) {
  config.validate();
  auto rng = stream_rng(config.seed, Stream::Locations);
  const int n = config.drill_locations();
  const Real start = kLabelWindow;
  const Real cell = (config.tunnel_length - 2 * kLabelWindow) / n;
  // Keep each window inside its cell so windows never overlap.
  const Real margin = kLabelWindow + config.record_spacing;
  std::uniform_real_distribution<Real> within(margin, cell - margin);
  const std::int64_t last = config.record_count() - 1;

  std::vector<DrillLocation> out;
  out.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const Real target = start + i * cell + within(rng);
    const auto grid = std::clamp<std::int64_t>(std::llround(target / config.record_spacing), 0, last);
    out.push_back({i, grid_chainage(grid, config.record_spacing)});
  }
  return out;
}

Vector drill(const GeologyProfile& profile, const DrillLocation& location) {
  if (location.chainage < 0 || location.chainage > profile.length)
    throw std::out_of_range("drill location outside the tunnel");
  return profile.fractions(location.chainage);
}

LabeledSet label_window(std::span<const OperationalRecord> records, const DrillLocation& location,
                        const DrillOracle& oracle, int round, Real window) {
  const Real lo = location.chainage - window - kWindowSlack;
  const Real hi = location.chainage + window + kWindowSlack;
  auto first = std::lower_bound(records.begin(), records.end(), lo,
                                [](const OperationalRecord& r, Real c) { return r.chainage < c; });
  LabeledSet out;
  for (auto it = first; it != records.end() && it->chainage <= hi; ++it) {
    LabeledSample s;
    s.record = *it;
    s.label = oracle(it->chainage);
    s.location_id = location.id;
    s.round = round;
    s.tau = round >= 1 ? 1 : 0;
    out.push_back(std::move(s));
  }
  return out;
}

LabeledSet label_window(std::span<const OperationalRecord> records, const DrillLocation& location,
                        const GeologyProfile& profile, int round, Real window) {
  return label_window(records, location, [&](Real c) { return profile.fractions(c); }, round, window);
}

Pool build_pool(std::span<const DrillLocation> locations, std::span<const OperationalRecord> records) {
  if (records.empty()) throw std::invalid_argument("cannot build a pool without records");
  std::vector<PoolRecord> out;
  out.reserve(locations.size() * kPoolOffsets.size());
  const auto n = static_cast<std::ptrdiff_t>(records.size());
  for (const auto& loc : locations) {
    std::vector<std::ptrdiff_t> taken;
    for (const Real off : kPoolOffsets) {
      const Real target = loc.chainage + off;
      auto it = std::lower_bound(records.begin(), records.end(), target,
                                 [](const OperationalRecord& r, Real c) { return r.chainage < c; });
      std::ptrdiff_t best = std::distance(records.begin(), it);
      if (best == n || (best > 0 && target - records[best - 1].chainage <= records[best].chainage - target)) --best;
      // Walk outward from the nearest record until an unused one is found.
      std::ptrdiff_t chosen = -1;
      for (std::ptrdiff_t d = 0; chosen < 0 && d < n; ++d) {
        const std::ptrdiff_t toward = off < 0 ? best - d : best + d;
        const std::ptrdiff_t away = off < 0 ? best + d : best - d;
        for (const auto c : {toward, away}) {
          if (c >= 0 && c < n && std::find(taken.begin(), taken.end(), c) == taken.end()) {
            chosen = c;
            break;
          }
        }
      }
      if (chosen < 0) throw std::invalid_argument("not enough records for a pool location");
      taken.push_back(chosen);
      out.push_back({records[static_cast<std::size_t>(chosen)], loc.id, off});
    }
  }
  return Pool(std::move(out));
}

DatasetSplit split_dataset(const LabeledSet& labeled, Real test_fraction, Real validation_fraction, std::uint64_t seed) {
  if (!(test_fraction >= 0 && test_fraction < 1)) throw std::invalid_argument("test fraction must be in [0, 1)");
  if (!(validation_fraction >= 0 && validation_fraction < 1))
    throw std::invalid_argument("validation fraction must be in [0, 1)");
  std::vector<int> ids;
  for (const auto& s : labeled) ids.push_back(s.location_id);
  std::sort(ids.begin(), ids.end());
  ids.erase(std::unique(ids.begin(), ids.end()), ids.end());

  std::mt19937_64 rng(seed);
  std::vector<int> order = ids;
  std::shuffle(order.begin(), order.end(), rng);
  const auto n_test = static_cast<std::size_t>(std::llround(test_fraction * static_cast<Real>(ids.size())));
  DatasetSplit out;
  out.test_locations.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_test));
  out.train_locations.assign(order.begin() + static_cast<std::ptrdiff_t>(n_test), order.end());
  std::sort(out.test_locations.begin(), out.test_locations.end());
  std::sort(out.train_locations.begin(), out.train_locations.end());

  std::vector<std::size_t> train_rows;
  for (std::size_t i = 0; i < labeled.size(); ++i) {
    if (std::binary_search(out.test_locations.begin(), out.test_locations.end(), labeled[i].location_id))
      out.test.push_back(labeled[i]);
    else
      train_rows.push_back(i);
  }
  std::shuffle(train_rows.begin(), train_rows.end(), rng);
  const auto n_val = static_cast<std::size_t>(std::llround(validation_fraction * static_cast<Real>(train_rows.size())));
  std::vector<std::size_t> val(train_rows.begin(), train_rows.begin() + static_cast<std::ptrdiff_t>(n_val));
  std::vector<std::size_t> fit(train_rows.begin() + static_cast<std::ptrdiff_t>(n_val), train_rows.end());
  std::sort(val.begin(), val.end());
  std::sort(fit.begin(), fit.end());
  for (const auto i : fit) out.train.push_back(labeled[i]);
  for (const auto i : val) out.validation.push_back(labeled[i]);
  return out;
}

LabeledSet rehearsal_merge(const LabeledSet& previous, const LabeledSet& added, std::mt19937_64& rng) {
  const auto keep = static_cast<std::size_t>(std::floor(kRehearsalFraction * static_cast<Real>(previous.size())));
  std::vector<std::size_t> idx(previous.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::shuffle(idx.begin(), idx.end(), rng);
  idx.resize(keep);
  std::sort(idx.begin(), idx.end());
  LabeledSet out;
  out.reserve(keep + added.size());
  for (const auto i : idx) out.push_back(previous[i]);
  for (auto s : added) {
    s.tau = 1;
    out.push_back(std::move(s));
  }
  return out;
}

SyntheticWorld build_world(const SyntheticConfig& config) {
  config.validate();
  SyntheticWorld w;
  w.config = config;
  w.profile = synth_profile(config);
  w.records = synth_records(w.profile, config);
  auto all = place_drill_locations(config);
  // Pool locations are a seeded random subset of all drill locations.
  auto rng = stream_rng(config.seed ^ 0x9e3779b97f4a7c15ULL, Stream::Locations);
  std::vector<std::size_t> idx(all.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::shuffle(idx.begin(), idx.end(), rng);
  std::vector<bool> in_pool(all.size(), false);
  for (int i = 0; i < config.pool_locations; ++i) in_pool[idx[static_cast<std::size_t>(i)]] = true;
  for (std::size_t i = 0; i < all.size(); ++i) (in_pool[i] ? w.pool_locations : w.labeled_locations).push_back(all[i]);
  return w;
}

void standardize_features(std::vector<OperationalRecord>& records) {
  if (records.empty()) return;
  const Eigen::Index d = records.front().features.size();
  Vector mean = Vector::Zero(d);
  for (const auto& r : records) {
    if (r.features.size() != d) throw DataError("records have differing feature counts");
    mean += r.features;
  }
  mean /= static_cast<Real>(records.size());
  Vector var = Vector::Zero(d);
  for (const auto& r : records) var += (r.features - mean).cwiseAbs2();
  var /= static_cast<Real>(records.size());
  const Vector scale = var.unaryExpr([](Real v) { return v > 0 ? 1 / std::sqrt(v) : 1.0; });
  for (auto& r : records) r.features = (r.features - mean).cwiseProduct(scale);
}

// --- files ---------------------------------------------------------------

void save_records_csv(const std::filesystem::path& path, std::span<const OperationalRecord> records) {
  auto out = open_out(path);
  const Eigen::Index d = records.empty() ? 0 : records.front().features.size();
  out << kRecordsVersion << "\nchainage";
  for (const auto& h : numbered("f", d)) out << ',' << h;
  out << '\n';
  for (const auto& r : records) {
    if (r.features.size() != d) throw DataError("records have differing feature counts");
    out << format_real(r.chainage);
    for (Eigen::Index k = 0; k < d; ++k) out << ',' << format_real(r.features[k]);
    out << '\n';
  }
  if (!out) throw DataError("failed writing " + path.string());
}

std::vector<OperationalRecord> load_records_csv(const std::filesystem::path& path) {
  const CsvFile f = read_csv(path, kRecordsVersion);
  const Eigen::Index d = count_numbered(f.header, 1, "f");
  std::vector<std::string> expected{"chainage"};
  for (const auto& h : numbered("f", d)) expected.push_back(h);
  if (d == 0) fail(path, 2, "header must be 'chainage,f1,...,fN'");
  expect_header(f, expected, path, 2);

  std::vector<OperationalRecord> out;
  out.reserve(f.rows.size());
  for (const auto& [line, text] : f.rows) {
    const auto fields = split_fields(text);
    if (static_cast<Eigen::Index>(fields.size()) != d + 1)
      fail(path, line, "expected " + std::to_string(d + 1) + " fields, got " + std::to_string(fields.size()));
    OperationalRecord r;
    r.chainage = parse_real(fields[0], path, line);
    if (!out.empty() && !(r.chainage > out.back().chainage)) fail(path, line, "chainage must be strictly increasing");
    r.index = static_cast<std::int64_t>(out.size());
    r.features.resize(d);
    for (Eigen::Index k = 0; k < d; ++k) r.features[k] = parse_real(fields[static_cast<std::size_t>(k + 1)], path, line);
    out.push_back(std::move(r));
  }
  return out;
}

void save_labels_csv(const std::filesystem::path& path, std::span<const LabeledSample> samples) {
  auto out = open_out(path);
  const Eigen::Index d = samples.empty() ? 0 : samples.front().label.size();
  out << kLabelsVersion << "\nchainage,location_id,round,tau";
  for (const auto& h : numbered("y", d)) out << ',' << h;
  out << '\n';
  for (const auto& s : samples) {
    if (s.label.size() != d) throw DataError("labels have differing type counts");
    out << format_real(s.record.chainage) << ',' << s.location_id << ',' << s.round << ',' << s.tau;
    for (Eigen::Index k = 0; k < d; ++k) out << ',' << format_real(s.label[k]);
    out << '\n';
  }
  if (!out) throw DataError("failed writing " + path.string());
}

LabeledSet load_labels_csv(const std::filesystem::path& path, std::span<const OperationalRecord> records) {
  const CsvFile f = read_csv(path, kLabelsVersion);
  const Eigen::Index d = count_numbered(f.header, 4, "y");
  std::vector<std::string> expected{"chainage", "location_id", "round", "tau"};
  for (const auto& h : numbered("y", d)) expected.push_back(h);
  if (d == 0) fail(path, 2, "header must be 'chainage,location_id,round,tau,y1,...,yN'");
  expect_header(f, expected, path, 2);

  LabeledSet out;
  out.reserve(f.rows.size());
  for (const auto& [line, text] : f.rows) {
    const auto fields = split_fields(text);
    if (static_cast<Eigen::Index>(fields.size()) != d + 4)
      fail(path, line, "expected " + std::to_string(d + 4) + " fields, got " + std::to_string(fields.size()));
    const Real chainage = parse_real(fields[0], path, line);
    auto it = std::lower_bound(records.begin(), records.end(), chainage,
                               [](const OperationalRecord& r, Real c) { return r.chainage < c; });
    if (it == records.end() || it->chainage != chainage)
      fail(path, line, "no operational record at chainage " + fields[0]);
    LabeledSample s;
    s.record = *it;
    s.location_id = static_cast<int>(parse_int(fields[1], path, line));
    s.round = static_cast<int>(parse_int(fields[2], path, line));
    const auto tau = parse_int(fields[3], path, line);
    if (tau != 0 && tau != 1) fail(path, line, "tau must be 0 or 1");
    s.tau = static_cast<int>(tau);
    s.label.resize(d);
    for (Eigen::Index k = 0; k < d; ++k) s.label[k] = parse_real(fields[static_cast<std::size_t>(k + 4)], path, line);
    if ((s.label.array() < 0).any() || std::abs(s.label.sum() - 1) > kRealLabelTolerance)
      fail(path, line, "label is not a fraction vector summing to 1");
    out.push_back(std::move(s));
  }
  return out;
}

void save_locations_csv(const std::filesystem::path& path, std::span<const LocationEntry> entries) {
  auto out = open_out(path);
  out << kLocationsVersion << "\nlocation_id,chainage,role\n";
  for (const auto& e : entries)
    out << e.location.id << ',' << format_real(e.location.chainage) << ','
        << (e.role == LocationRole::Pool ? "pool" : "labeled") << '\n';
  if (!out) throw DataError("failed writing " + path.string());
}

std::vector<LocationEntry> load_locations_csv(const std::filesystem::path& path) {
  const CsvFile f = read_csv(path, kLocationsVersion);
  expect_header(f, {"location_id", "chainage", "role"}, path, 2);
  std::vector<LocationEntry> out;
  for (const auto& [line, text] : f.rows) {
    const auto fields = split_fields(text);
    if (fields.size() != 3) fail(path, line, "expected 3 fields, got " + std::to_string(fields.size()));
    LocationEntry e;
    e.location.id = static_cast<int>(parse_int(fields[0], path, line));
    e.location.chainage = parse_real(fields[1], path, line);
    if (fields[2] == "pool")
      e.role = LocationRole::Pool;
    else if (fields[2] == "labeled")
      e.role = LocationRole::Labeled;
    else
      fail(path, line, "role must be 'labeled' or 'pool'");
    for (const auto& prev : out)
      if (prev.location.id == e.location.id) fail(path, line, "duplicate location id");
    out.push_back(e);
  }
  return out;
}

void save_profile_json(const std::filesystem::path& path, const GeologyProfile& profile) {
  nlohmann::json j;
  j["schema"] = "aligan-profile";
  j["version"] = 1;
  j["seed"] = profile.seed;
  j["length"] = profile.length;
  j["layers"] = nlohmann::json::array();
  for (const auto& l : profile.layers) {
    j["layers"].push_back({{"base", l.base},
                           {"amplitude", l.amplitude},
                           {"wavelength", l.wavelength},
                           {"phase", l.phase},
                           {"step_at", l.step_at},
                           {"step_height", l.step_height}});
  }
  auto out = open_out(path);
  out << j.dump(2) << '\n';
  if (!out) throw DataError("failed writing " + path.string());
}

GeologyProfile load_profile_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  try {
    const auto j = nlohmann::json::parse(in);
    if (j.at("schema") != "aligan-profile" || j.at("version") != 1)
      throw DataError(path.string() + ": unsupported profile schema");
    GeologyProfile p;
    p.seed = j.at("seed").get<std::uint64_t>();
    p.length = j.at("length").get<Real>();
    for (const auto& l : j.at("layers")) {
      LayerField f;
      f.base = l.at("base").get<Real>();
      f.amplitude = l.at("amplitude").get<std::vector<Real>>();
      f.wavelength = l.at("wavelength").get<std::vector<Real>>();
      f.phase = l.at("phase").get<std::vector<Real>>();
      f.step_at = l.at("step_at").get<std::vector<Real>>();
      f.step_height = l.at("step_height").get<std::vector<Real>>();
      if (f.wavelength.size() != f.amplitude.size() || f.phase.size() != f.amplitude.size() ||
          f.step_height.size() != f.step_at.size())
        throw DataError(path.string() + ": inconsistent layer arrays");
      p.layers.push_back(std::move(f));
    }
    return p;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

DrillOracle table_oracle(const LabeledSet& labels) {
  auto table = std::make_shared<std::map<Real, Vector>>();
  for (const auto& s : labels) table->emplace(s.record.chainage, s.label);
  return [table](Real chainage) -> Vector {
    const auto it = table->find(chainage);
    if (it == table->end()) throw DataError("no drilled label at chainage " + format_real(chainage));
    return it->second;
  };
}

}  // namespace aligan
