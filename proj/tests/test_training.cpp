#include "aligan/harness.hpp"
#include "support/oracles.hpp"

#include <gtest/gtest.h>

#include <set>
#include <sstream>

namespace {

using namespace aligan;
using aligan::testing::mini_config;
using aligan::testing::random_batch;

TrainConfig short_config(int iterations = 4) {
  TrainConfig c;
  c.pretrain.iterations = iterations;
  c.initial.iterations = iterations;
  c.incremental.iterations = iterations;
  c.initial.batch_size = c.incremental.batch_size = c.pretrain.batch_size = 4;
  return c;
}

// Desk-scale data shared by the slower tests.
struct Desk {
  ExperimentData data;
  DatasetSplit split;
  ModelConfig model;
};

const Desk& desk() {
  static const Desk d = [] {
    ExperimentConfig c;
    Desk out{load_experiment_data(c), {}, c.model};
    out.split = split_dataset(out.data.labeled, c.synthetic.test_fraction, c.synthetic.validation_fraction, 1);
    out.model.input_dim = out.data.records.front().features.size();
    out.model.output_dim = out.data.labeled.front().label.size();
    return out;
  }();
  return d;
}

TEST(MinibatchStream, EpochsCoverEveryIndexOnce) {
  std::mt19937_64 rng(1);
  MinibatchStream s(10, 4, rng);
  for (int epoch = 0; epoch < 3; ++epoch) {
    std::multiset<Eigen::Index> seen;
    std::vector<std::size_t> sizes;
    for (int i = 0; i < 3; ++i) {
      const auto b = s.next();
      sizes.push_back(b.size());
      seen.insert(b.begin(), b.end());
    }
    EXPECT_EQ(sizes, (std::vector<std::size_t>{4, 4, 2}));
    EXPECT_EQ(seen.size(), 10u);
    EXPECT_EQ(std::set<Eigen::Index>(seen.begin(), seen.end()).size(), 10u);
  }
  EXPECT_THROW(MinibatchStream(0, 4, rng), std::invalid_argument);
}

TEST(Training, StepOrderIsSDSGS) {
  const ModelConfig c = mini_config();
  std::mt19937_64 rng(2);
  const Batch b = random_batch(rng, 9, c.input_dim, c.output_dim);
  TrainingTrace trace;
  std::mt19937_64 train_rng(3);
  (void)initial_train(init_model(c, 2), b, short_config(3), train_rng, &trace);
  std::string order;
  for (const auto s : trace.steps) order += static_cast<char>(s);
  EXPECT_EQ(order, "SDSGSSDSGSSDSGS");
  EXPECT_EQ(trace.rows.size(), 3u);

  std::ostringstream csv;
  trace.write_csv(csv);
  EXPECT_EQ(csv.str().substr(0, csv.str().find('\n')), "stage,iteration,loss_s,loss_d,loss_g,ewc_g,ewc_d,loss_is");
}

TEST(Training, ZeroIterationsReturnInputUnchanged) {
  const ModelConfig c = mini_config();
  std::mt19937_64 rng(4);
  const Batch b = random_batch(rng, 5, c.input_dim, c.output_dim);
  const Model m = init_model(c, 4);
  TrainConfig t = short_config(0);
  EXPECT_TRUE(initial_train(m, b, t, rng).weights == m.weights);
  EXPECT_TRUE(pretrain_generator(m, b, t, rng).weights == m.weights);
  EXPECT_TRUE(incremental_train(m, b, make_anchor(m, b), t, rng).weights == m.weights);
}

TEST(Training, ZeroRateLeavesWeightsUnchanged) {
  const ModelConfig c = mini_config();
  std::mt19937_64 rng(5);
  const Batch b = random_batch(rng, 5, c.input_dim, c.output_dim);
  const Model m = init_model(c, 5);
  TrainConfig t = short_config(6);
  t.pretrain.lr_supervised = 0;
  EXPECT_TRUE(pretrain_generator(m, b, t, rng).weights == m.weights);
}

TEST(Training, SameSeedIsBitIdentical) {
  const ModelConfig c = mini_config();
  std::mt19937_64 rng(6);
  const Batch b = random_batch(rng, 12, c.input_dim, c.output_dim);
  const TrainConfig t = short_config(10);
  EXPECT_TRUE(train_from_scratch(c, b, t, 77).weights == train_from_scratch(c, b, t, 77).weights);
  EXPECT_FALSE(train_from_scratch(c, b, t, 77).weights == train_from_scratch(c, b, t, 78).weights);
}

TEST(Training, ConstantLabelConvergence) {
  ModelConfig c;
  c.input_dim = 69;
  std::mt19937_64 rng(7);
  Batch b = random_batch(rng, 10, c.input_dim, c.output_dim);
  const Vector target = aligan::testing::random_simplex(rng, c.output_dim);
  for (Eigen::Index r = 0; r < b.size(); ++r) b.y.row(r) = target.transpose();
  TrainConfig t;
  std::mt19937_64 train_rng(8);
  const Model m = pretrain_generator(init_model(c, 7), b, t, train_rng);
  EXPECT_LT(sup_loss(b, m), 0.01);
}

TEST(Training, DivergenceAborts) {
  const ModelConfig c = mini_config();
  std::mt19937_64 rng(9);
  const Batch b = random_batch(rng, 5, c.input_dim, c.output_dim);
  TrainConfig t = short_config(2);
  t.divergence_threshold = 1e-6;
  EXPECT_THROW((void)initial_train(init_model(c, 9), b, t, rng), DivergenceError);
}

TEST(Training, EmptyDataRejected) {
  std::mt19937_64 rng(10);
  EXPECT_THROW((void)initial_train(init_model(mini_config(), 1), Batch{}, short_config(), rng), std::invalid_argument);
}

TEST(Training, ConfigValidation) {
  TrainConfig t;
  EXPECT_NO_THROW(t.validate());
  t.initial.batch_size = 0;
  EXPECT_ANY_THROW(t.validate());
  t = TrainConfig{};
  t.incremental.lambda_g = -1;
  EXPECT_ANY_THROW(t.validate());
}

TEST(Training, AllOriginalTagsDriveFreshnessHeadToZero) {
  const ModelConfig c = mini_config();
  std::mt19937_64 rng(11);
  Batch b = random_batch(rng, 16, c.input_dim, c.output_dim);
  b.tau.setZero();
  const Model m = init_model(c, 11);
  TrainConfig t = short_config(60);
  t.incremental.lambda_g = t.incremental.lambda_d = 0;
  auto fresh_mean = [&](const Model& model) {
    return discriminator_forward(model, b.x, b.y).col(kFreshOriginalHead).mean();
  };
  const Model after = incremental_train(m, b, make_anchor(m, b), t, rng);
  EXPECT_LT(fresh_mean(after), fresh_mean(m));
  EXPECT_LT(is_loss(b, after), is_loss(b, m));
}

TEST(TrainingDesk, InitialTrainingHalvesTestError) {
  const Desk& d = desk();
  const Model untrained = init_model(d.model, 1);
  const Model trained = train_from_scratch(d.model, make_batch(d.split.train), TrainConfig{}, 1);
  const Real before = compute_mse(untrained, d.split.test);
  const Real after = compute_mse(trained, d.split.test);
  EXPECT_LT(after, 0.5 * before) << "untrained " << before << ", trained " << after;
}

TEST(TrainingDesk, ForgettingGuardOnRetainedSamples) {
  const Desk& d = desk();
  const TrainConfig t;
  const Model initial = train_from_scratch(d.model, make_batch(d.split.train), t, 1);
  const AnchorState anchor = make_anchor(initial, make_batch(d.split.train));
  std::mt19937_64 rng(2);
  const LabeledSet added = label_window(d.data.records, d.data.pool_locations.front(), d.data.oracle, 1);
  const LabeledSet merged = rehearsal_merge(d.split.train, added, rng);
  LabeledSet retained;
  for (const auto& s : merged)
    if (s.tau == 0) retained.push_back(s);
  ASSERT_EQ(retained.size(), d.split.train.size() * 4 / 5);
  const Batch kept = make_batch(retained);
  const Real before = sup_loss(kept, initial);
  const Model next = incremental_train(initial, make_batch(merged), anchor, t, rng);
  EXPECT_LE(sup_loss(kept, next), 1.2 * before);
}

}  // namespace
