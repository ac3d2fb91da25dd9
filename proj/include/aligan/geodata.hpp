// Synthetic tunnel geology used as the drilling oracle, operational record
// synthesis, drill-location labeling and dataset bookkeeping, plus the CSV
// and JSON file formats shared with real data.

#ifndef ALIGAN_GEODATA_HPP
#define ALIGAN_GEODATA_HPP

#include "aligan/active_learning.hpp"

#include <array>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

namespace aligan {

inline constexpr Real kLabelWindow = 0.3;
inline constexpr std::array<Real, 5> kPoolOffsets{-0.3, -0.15, 0.0, 0.15, 0.3};
inline constexpr Real kRehearsalFraction = 0.8;

struct RockSoilType {
  std::string name;
  // unit weight (kN/m^3), friction angle (deg), modulus (MPa), Poisson ratio,
  // SITA, permeability (m/d), foundation bearing (kPa)
  std::array<Real, 7> indicators{};
  int occurrences = 0;  // drill samples containing the type
};

// The eleven rock-soil types and their indicator rows.
const std::vector<RockSoilType>& rock_soil_catalog();

struct SyntheticConfig {
  std::uint64_t seed = 20230401;
  Real tunnel_length = 200;
  int labeled_locations = 40;  // train + test
  int pool_locations = 12;
  Real record_spacing = 0.05;
  Real noise = 0.1;        // stationary std of the AR(1) feature noise
  Real noise_rho = 0.7;
  Eigen::Index feature_dim = 69;
  Eigen::Index type_count = 11;
  Eigen::Index active_types = 11;  // types that can have nonzero thickness
  Real test_fraction = 0.24;       // of labeled locations
  Real validation_fraction = 0.25; // of training samples

  [[nodiscard]] int drill_locations() const { return labeled_locations + pool_locations; }
  [[nodiscard]] std::int64_t record_count() const;
  void validate() const;
  friend bool operator==(const SyntheticConfig&, const SyntheticConfig&) = default;

  static SyntheticConfig full_scale();
};

// Raw thickness of one type along the tunnel: a base level plus a few
// sinusoids plus step changes at fault positions, clipped at zero.
struct LayerField {
  Real base = 0;
  std::vector<Real> amplitude;
  std::vector<Real> wavelength;
  std::vector<Real> phase;
  std::vector<Real> step_at;
  std::vector<Real> step_height;

  [[nodiscard]] Real raw(Real chainage) const;
};

struct GeologyProfile {
  std::uint64_t seed = 0;
  Real length = 0;
  std::vector<LayerField> layers;

  // Thickness fractions at `chainage`; nonnegative and summing to one.
  [[nodiscard]] Vector fractions(Real chainage) const;
};

struct DrillLocation {
  int id = -1;
  Real chainage = 0;
};

using DrillOracle = std::function<Vector(Real chainage)>;

GeologyProfile synth_profile(const SyntheticConfig& config);

// Records at chainages 0, s, 2s, ... with features tanh(A y + b) plus AR(1) noise.
std::vector<OperationalRecord> synth_records(const GeologyProfile& profile, const SyntheticConfig& config);

// Non-overlapping drill locations on the record grid, ids by ascending chainage.
std::vector<DrillLocation> place_drill_locations(const SyntheticConfig& config);

Vector drill(const GeologyProfile& profile, const DrillLocation& location);

// Every record with |chainage - location| <= window, labeled at its own
// chainage and tagged tau = (round >= 1). Records must be chainage-sorted.
LabeledSet label_window(std::span<const OperationalRecord> records, const DrillLocation& location,
                        const DrillOracle& oracle, int round, Real window = kLabelWindow);
LabeledSet label_window(std::span<const OperationalRecord> records, const DrillLocation& location,
                        const GeologyProfile& profile, int round, Real window = kLabelWindow);

// Five records per location, nearest to the offsets in kPoolOffsets.
Pool build_pool(std::span<const DrillLocation> locations, std::span<const OperationalRecord> records);

struct DatasetSplit {
  LabeledSet train;       // used for weight updates
  LabeledSet validation;
  LabeledSet test;
  std::vector<int> train_locations;
  std::vector<int> test_locations;
};

// Location-level train/test split, then a sample-level train/validation split.
DatasetSplit split_dataset(const LabeledSet& labeled, Real test_fraction, Real validation_fraction, std::uint64_t seed);

// floor(0.8 |previous|) random samples of `previous` (tags kept) followed by
// `added` with tau = 1.
LabeledSet rehearsal_merge(const LabeledSet& previous, const LabeledSet& added, std::mt19937_64& rng);

// Everything generated from one SyntheticConfig.
struct SyntheticWorld {
  SyntheticConfig config;
  GeologyProfile profile;
  std::vector<OperationalRecord> records;
  std::vector<DrillLocation> labeled_locations;
  std::vector<DrillLocation> pool_locations;
};

SyntheticWorld build_world(const SyntheticConfig& config);

// Z-scores every feature column over all records in place.
void standardize_features(std::vector<OperationalRecord>& records);

// --- files ---------------------------------------------------------------

void save_records_csv(const std::filesystem::path& path, std::span<const OperationalRecord> records);
std::vector<OperationalRecord> load_records_csv(const std::filesystem::path& path);

void save_labels_csv(const std::filesystem::path& path, std::span<const LabeledSample> samples);
// Joins labels to `records` by exact chainage.
LabeledSet load_labels_csv(const std::filesystem::path& path, std::span<const OperationalRecord> records);

enum class LocationRole { Labeled, Pool };
struct LocationEntry {
  DrillLocation location;
  LocationRole role = LocationRole::Labeled;
};
void save_locations_csv(const std::filesystem::path& path, std::span<const LocationEntry> entries);
std::vector<LocationEntry> load_locations_csv(const std::filesystem::path& path);

void save_profile_json(const std::filesystem::path& path, const GeologyProfile& profile);
GeologyProfile load_profile_json(const std::filesystem::path& path);

// Oracle backed by labeled rows, looked up by exact chainage.
DrillOracle table_oracle(const LabeledSet& labels);

}  // namespace aligan

#endif  // ALIGAN_GEODATA_HPP
