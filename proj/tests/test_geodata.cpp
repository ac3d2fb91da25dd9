#include "aligan/geodata.hpp"

#include <gtest/gtest.h>

#include <fstream>
#include <set>

namespace {

using namespace aligan;
namespace fs = std::filesystem;

class TempDir : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("aligan_geodata_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }
  void write(const std::string& name, const std::string& text) { std::ofstream(dir_ / name) << text; }
  fs::path dir_;
};

// Expects a DataError whose message carries `needle`.
template <typename F>
void expect_data_error(F&& f, const std::string& needle) {
  try {
    f();
    FAIL() << "expected DataError containing '" << needle << "'";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find(needle), std::string::npos) << e.what();
  }
}

TEST(Catalog, ElevenTypes) {
  const auto& cat = rock_soil_catalog();
  ASSERT_EQ(cat.size(), 11u);
  std::set<std::string> names;
  for (const auto& t : cat) names.insert(t.name);
  EXPECT_EQ(names.size(), 11u);
}

TEST(Profile, FractionsAreProbabilityVectors) {
  const GeologyProfile p = synth_profile(SyntheticConfig{});
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<Real> at(0, p.length);
  for (int i = 0; i < 1000; ++i) {
    const Vector f = p.fractions(at(rng));
    EXPECT_NEAR(f.sum(), 1.0, 1e-9);
    EXPECT_GE(f.minCoeff(), 0.0);
  }
}

TEST(Profile, SameSeedSameProfile) {
  const GeologyProfile a = synth_profile(SyntheticConfig{}), b = synth_profile(SyntheticConfig{});
  for (Real c = 0; c < 200; c += 7.3) EXPECT_EQ(a.fractions(c), b.fractions(c));
  SyntheticConfig other;
  other.seed = 99;
  EXPECT_NE(synth_profile(other).fractions(50.0), a.fractions(50.0));
}

TEST(Profile, SingleLayerIsOneHotEverywhere) {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    SyntheticConfig c;
    c.seed = seed;
    c.active_types = 1;
    const GeologyProfile p = synth_profile(c);
    for (Real ch = 0; ch <= c.tunnel_length; ch += 1.7) {
      const Vector f = p.fractions(ch);
      EXPECT_EQ(f[0], 1.0) << "seed " << seed << " chainage " << ch;
      EXPECT_EQ(drill(p, {0, ch}), f);
    }
  }
}

TEST(Profile, InvalidConfigRejected) {
  SyntheticConfig c;
  c.record_spacing = 0;
  EXPECT_THROW((void)synth_profile(c), std::invalid_argument);
  c = SyntheticConfig{};
  c.active_types = 12;
  EXPECT_THROW(c.validate(), std::invalid_argument);
}

TEST(Records, CountAndSpacing) {
  SyntheticConfig c;
  const auto recs = synth_records(synth_profile(c), c);
  EXPECT_EQ(static_cast<std::int64_t>(recs.size()), c.record_count());
  EXPECT_EQ(recs.size(), 4000u);
  EXPECT_EQ(recs[10].index, 10);
  EXPECT_NEAR(recs[10].chainage, 0.5, 1e-12);
  EXPECT_EQ(recs[0].features.size(), 69);
}

TEST(Records, NoiselessMapIsDeterministicInGeology) {
  SyntheticConfig c;
  c.noise = 0;
  c.active_types = 1;  // geology identical everywhere
  const auto recs = synth_records(synth_profile(c), c);
  EXPECT_EQ(recs[5].features, recs[3000].features);
}

TEST(Records, LeastSquaresProbeBeatsMean) {
  SyntheticConfig c;
  c.tunnel_length = 50;
  c.record_spacing = 0.1;  // 500 records
  c.labeled_locations = 4;
  c.pool_locations = 0;
  const GeologyProfile p = synth_profile(c);
  const auto recs = synth_records(p, c);
  ASSERT_EQ(recs.size(), 500u);
  const Eigen::Index n = 500, d = c.feature_dim, k = c.type_count;
  Eigen::MatrixXd x(n, d + 1), y(n, k);
  for (Eigen::Index i = 0; i < n; ++i) {
    x.row(i) << recs[static_cast<std::size_t>(i)].features.transpose(), 1.0;
    y.row(i) = p.fractions(recs[static_cast<std::size_t>(i)].chainage).transpose();
  }
  // Fit on even rows, score on odd rows.
  Eigen::MatrixXd xf(n / 2, d + 1), yf(n / 2, k), xt(n / 2, d + 1), yt(n / 2, k);
  for (Eigen::Index i = 0; i < n / 2; ++i) {
    xf.row(i) = x.row(2 * i);
    yf.row(i) = y.row(2 * i);
    xt.row(i) = x.row(2 * i + 1);
    yt.row(i) = y.row(2 * i + 1);
  }
  const Eigen::MatrixXd w = (xf.transpose() * xf + 1e-3 * Eigen::MatrixXd::Identity(d + 1, d + 1)).ldlt().solve(xf.transpose() * yf);
  const Real probe = (xt * w - yt).rowwise().squaredNorm().mean();
  const Real mean = (yt.rowwise() - yf.colwise().mean()).rowwise().squaredNorm().mean();
  EXPECT_LT(probe, mean);
}

TEST(Locations, InBoundsUniqueOnGridAndSeparated) {
  const SyntheticConfig c;
  const auto locs = place_drill_locations(c);
  ASSERT_EQ(static_cast<int>(locs.size()), c.drill_locations());
  for (std::size_t i = 0; i < locs.size(); ++i) {
    EXPECT_EQ(locs[i].id, static_cast<int>(i));
    EXPECT_GE(locs[i].chainage, 0.0);
    EXPECT_LE(locs[i].chainage, c.tunnel_length);
    const Real steps = locs[i].chainage / c.record_spacing;
    EXPECT_NEAR(steps, std::round(steps), 1e-9);
    if (i > 0) EXPECT_GT(locs[i].chainage - locs[i - 1].chainage, 2 * kLabelWindow);
  }
}

TEST(Drill, OutOfBoundsThrows) {
  const GeologyProfile p = synth_profile(SyntheticConfig{});
  EXPECT_THROW((void)drill(p, {0, -1.0}), std::out_of_range);
  EXPECT_THROW((void)drill(p, {0, 500.0}), std::out_of_range);
  EXPECT_EQ(drill(p, {0, 12.3}), drill(p, {0, 12.3}));
}

TEST(LabelWindow, SevenRecordsAtTenthMeterSpacing) {
  SyntheticConfig c;
  c.record_spacing = 0.1;
  const GeologyProfile p = synth_profile(c);
  const auto recs = synth_records(p, c);
  const auto win = label_window(recs, {3, 50.0}, p, 0);
  ASSERT_EQ(win.size(), 7u);
  for (const auto& s : win) {
    EXPECT_EQ(s.label, p.fractions(s.record.chainage));
    EXPECT_EQ(s.tau, 0);
    EXPECT_EQ(s.location_id, 3);
  }
  const auto later = label_window(recs, {3, 50.0}, p, 2);
  for (const auto& s : later) {
    EXPECT_EQ(s.tau, 1);
    EXPECT_EQ(s.round, 2);
  }
}

TEST(LabelWindow, TruncatedAtTunnelEnd) {
  SyntheticConfig c;
  c.record_spacing = 0.1;
  const GeologyProfile p = synth_profile(c);
  const auto recs = synth_records(p, c);
  const auto win = label_window(recs, {0, 0.0}, p, 0);
  EXPECT_EQ(win.size(), 4u);
  EXPECT_TRUE(label_window(recs, {0, 1000.0}, p, 0).empty());
}

TEST(BuildPool, FullScaleHas140Records) {
  const SyntheticWorld w = build_world(SyntheticConfig::full_scale());
  EXPECT_EQ(w.pool_locations.size(), 28u);
  EXPECT_EQ(w.labeled_locations.size(), 60u);
  const Pool pool = build_pool(w.pool_locations, w.records);
  EXPECT_EQ(pool.size(), 140u);
  std::set<int> pool_ids, labeled_ids;
  for (const auto& l : w.pool_locations) pool_ids.insert(l.id);
  for (const auto& l : w.labeled_locations) labeled_ids.insert(l.id);
  for (const int id : pool_ids) EXPECT_FALSE(labeled_ids.contains(id));
}

TEST(BuildPool, OffsetsSnapWithinHalfSpacing) {
  const SyntheticWorld w = build_world(SyntheticConfig{});
  const Pool pool = build_pool(w.pool_locations, w.records);
  std::map<int, Real> centre;
  for (const auto& l : w.pool_locations) centre[l.id] = l.chainage;
  for (const auto& r : pool.records()) {
    const Real target = centre.at(r.location_id) + r.offset;
    EXPECT_LE(std::abs(r.record.chainage - target), 0.5 * w.config.record_spacing + 1e-9);
  }
}

TEST(BuildPool, DuplicateSnapsResolvedToDistinctRecords) {
  // Spacing 0.2: offsets -0.3/-0.15 and 0.15/0.3 would share records.
  std::vector<OperationalRecord> recs;
  for (int i = 0; i < 50; ++i) recs.push_back({0.2 * i, i, Vector::Zero(1)});
  const Pool pool = build_pool(std::vector<DrillLocation>{{0, 5.0}}, recs);
  ASSERT_EQ(pool.size(), 5u);
  std::set<std::int64_t> used;
  for (const auto& r : pool.records()) used.insert(r.record.index);
  EXPECT_EQ(used.size(), 5u);
  EXPECT_EQ(build_pool(std::vector<DrillLocation>{{0, 5.0}}, recs).records()[0].record.index,
            pool.records()[0].record.index);
}

TEST(Split, ProportionsDisjointAndSeeded) {
  const SyntheticWorld w = build_world(SyntheticConfig{});
  LabeledSet labeled;
  for (const auto& l : w.labeled_locations) {
    auto win = label_window(w.records, l, w.profile, 0);
    labeled.insert(labeled.end(), win.begin(), win.end());
  }
  const DatasetSplit s = split_dataset(labeled, 0.24, 0.25, 5);
  EXPECT_EQ(s.test_locations.size(), static_cast<std::size_t>(std::llround(0.24 * 40)));
  const std::size_t train_pool = s.train.size() + s.validation.size();
  EXPECT_EQ(train_pool + s.test.size(), labeled.size());
  EXPECT_LE(std::abs(static_cast<Real>(s.validation.size()) - 0.25 * static_cast<Real>(train_pool)), 1.0);
  std::set<Real> seen;
  for (const auto* part : {&s.train, &s.validation, &s.test})
    for (const auto& x : *part) EXPECT_TRUE(seen.insert(x.record.chainage).second);
  const std::set<int> test_ids(s.test_locations.begin(), s.test_locations.end());
  for (const auto& x : s.train) EXPECT_FALSE(test_ids.contains(x.location_id));

  const DatasetSplit again = split_dataset(labeled, 0.24, 0.25, 5);
  EXPECT_EQ(again.test_locations, s.test_locations);
  EXPECT_EQ(again.train.size(), s.train.size());
  EXPECT_THROW((void)split_dataset(labeled, 1.0, 0.25, 5), std::invalid_argument);
}

LabeledSet fake_samples(std::size_t n, int tau) {
  LabeledSet out(n);
  for (std::size_t i = 0; i < n; ++i) {
    out[i].record.chainage = static_cast<Real>(i);
    out[i].label = Vector::Ones(1);
    out[i].tau = tau;
  }
  return out;
}

TEST(Rehearsal, CountsAndTags) {
  std::mt19937_64 rng(3);
  std::uniform_int_distribution<std::size_t> size(0, 300);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t np = size(rng), na = size(rng) % 20;
    const LabeledSet merged = rehearsal_merge(fake_samples(np, 0), fake_samples(na, 0), rng);
    ASSERT_EQ(merged.size(), static_cast<std::size_t>(std::floor(0.8 * static_cast<Real>(np))) + na);
    const std::size_t kept = merged.size() - na;
    for (std::size_t i = 0; i < merged.size(); ++i) EXPECT_EQ(merged[i].tau, i < kept ? 0 : 1);
  }
  LabeledSet mixed = fake_samples(10, 0);
  for (std::size_t i = 0; i < 5; ++i) mixed[i].tau = 1;
  const LabeledSet m = rehearsal_merge(mixed, {}, rng);
  EXPECT_EQ(m.size(), 8u);
  for (const auto& s : m) EXPECT_EQ(s.tau, s.record.chainage < 5 ? 1 : 0);
}

TEST_F(TempDir, RecordsRoundTripBitExact) {
  SyntheticConfig c;
  c.tunnel_length = 20;
  c.labeled_locations = 3;
  c.pool_locations = 1;
  const auto recs = synth_records(synth_profile(c), c);
  save_records_csv(dir_ / "nested" / "records.csv", recs);
  const auto back = load_records_csv(dir_ / "nested" / "records.csv");
  ASSERT_EQ(back.size(), recs.size());
  for (std::size_t i = 0; i < recs.size(); ++i) {
    EXPECT_EQ(back[i].chainage, recs[i].chainage);
    EXPECT_EQ(back[i].index, recs[i].index);
    EXPECT_EQ(back[i].features, recs[i].features);
  }
}

TEST_F(TempDir, LabelsAndLocationsRoundTrip) {
  SyntheticConfig c;
  c.tunnel_length = 20;
  c.labeled_locations = 3;
  c.pool_locations = 1;
  const SyntheticWorld w = build_world(c);
  LabeledSet labels = label_window(w.records, w.labeled_locations[0], w.profile, 0);
  auto more = label_window(w.records, w.labeled_locations[1], w.profile, 2);
  labels.insert(labels.end(), more.begin(), more.end());
  save_labels_csv(dir_ / "labels.csv", labels);
  const LabeledSet back = load_labels_csv(dir_ / "labels.csv", w.records);
  ASSERT_EQ(back.size(), labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    EXPECT_EQ(back[i].label, labels[i].label);
    EXPECT_EQ(back[i].tau, labels[i].tau);
    EXPECT_EQ(back[i].round, labels[i].round);
    EXPECT_EQ(back[i].location_id, labels[i].location_id);
    EXPECT_EQ(back[i].record.index, labels[i].record.index);
  }
  const DrillOracle oracle = table_oracle(back);
  EXPECT_EQ(oracle(labels[2].record.chainage), labels[2].label);
  EXPECT_THROW((void)oracle(-5.0), DataError);

  std::vector<LocationEntry> locs{{w.labeled_locations[0], LocationRole::Labeled}, {w.pool_locations[0], LocationRole::Pool}};
  save_locations_csv(dir_ / "locations.csv", locs);
  const auto lback = load_locations_csv(dir_ / "locations.csv");
  ASSERT_EQ(lback.size(), 2u);
  EXPECT_EQ(lback[1].role, LocationRole::Pool);
  EXPECT_EQ(lback[1].location.chainage, w.pool_locations[0].chainage);
}

TEST_F(TempDir, MalformedRowReportsLineNumber) {
  write("records.csv", "# aligan records v1\nchainage,f1,f2\n0,1,2\n0.5,1,oops\n");
  expect_data_error([&] { (void)load_records_csv(dir_ / "records.csv"); }, ":4:");
  write("short.csv", "# aligan records v1\nchainage,f1,f2\n0,1,2\n0.5,1\n");
  expect_data_error([&] { (void)load_records_csv(dir_ / "short.csv"); }, ":4:");
  write("order.csv", "# aligan records v1\nchainage,f1\n1,1\n0.5,1\n");
  expect_data_error([&] { (void)load_records_csv(dir_ / "order.csv"); }, "increasing");
}

TEST_F(TempDir, HeaderAndVersionMismatch) {
  write("records.csv", "# aligan records v1\nchain,f1,f2\n0,1,2\n");
  expect_data_error([&] { (void)load_records_csv(dir_ / "records.csv"); }, ":2:");
  write("v9.csv", "# aligan records v9\nchainage,f1\n0,1\n");
  EXPECT_THROW((void)load_records_csv(dir_ / "v9.csv"), DataError);
  EXPECT_THROW((void)load_records_csv(dir_ / "missing.csv"), DataError);
}

TEST_F(TempDir, LabelsMustBeFractions) {
  const std::vector<OperationalRecord> recs{{0.0, 0, Vector::Zero(1)}, {0.5, 1, Vector::Zero(1)}};
  write("bad_sum.csv", "# aligan labels v1\nchainage,location_id,round,tau,y1,y2\n0,1,0,0,0.5,0.6\n");
  expect_data_error([&] { (void)load_labels_csv(dir_ / "bad_sum.csv", recs); }, ":3:");
  write("bad_tau.csv", "# aligan labels v1\nchainage,location_id,round,tau,y1,y2\n0,1,0,2,0.5,0.5\n");
  expect_data_error([&] { (void)load_labels_csv(dir_ / "bad_tau.csv", recs); }, "tau");
  write("orphan.csv", "# aligan labels v1\nchainage,location_id,round,tau,y1,y2\n0.25,1,0,0,0.5,0.5\n");
  expect_data_error([&] { (void)load_labels_csv(dir_ / "orphan.csv", recs); }, "no operational record");
  write("ok.csv", "# aligan labels v1\nchainage,location_id,round,tau,y1,y2\n0.5,1,0,0,0.25,0.75\n");
  EXPECT_EQ(load_labels_csv(dir_ / "ok.csv", recs).front().record.index, 1);
}

TEST_F(TempDir, ProfileJsonRoundTrip) {
  const GeologyProfile p = synth_profile(SyntheticConfig{});
  save_profile_json(dir_ / "profile.json", p);
  const GeologyProfile back = load_profile_json(dir_ / "profile.json");
  EXPECT_EQ(back.seed, p.seed);
  for (Real c = 0; c < 200; c += 3.1) EXPECT_EQ(back.fractions(c), p.fractions(c));
  write("bad.json", R"({"schema": "other", "version": 1})");
  EXPECT_THROW((void)load_profile_json(dir_ / "bad.json"), DataError);
}

TEST(World, PurePipeline) {
  const SyntheticWorld a = build_world(SyntheticConfig{}), b = build_world(SyntheticConfig{});
  ASSERT_EQ(a.records.size(), b.records.size());
  for (std::size_t i = 0; i < a.records.size(); i += 97) EXPECT_EQ(a.records[i].features, b.records[i].features);
  std::set<int> ids;
  for (const auto& l : a.labeled_locations) ids.insert(l.id);
  for (const auto& l : a.pool_locations) EXPECT_TRUE(ids.insert(l.id).second);
}

TEST(Standardize, ZeroMeanUnitVariance) {
  auto recs = build_world(SyntheticConfig{}).records;
  standardize_features(recs);
  Eigen::MatrixXd x(static_cast<Eigen::Index>(recs.size()), recs[0].features.size());
  for (std::size_t i = 0; i < recs.size(); ++i) x.row(static_cast<Eigen::Index>(i)) = recs[i].features.transpose();
  EXPECT_LT(x.colwise().mean().cwiseAbs().maxCoeff(), 1e-10);
  const Eigen::RowVectorXd var = (x.rowwise() - x.colwise().mean()).colwise().squaredNorm() / static_cast<Real>(x.rows());
  EXPECT_LT((var.array() - 1).abs().maxCoeff(), 1e-8);
}

}  // namespace
