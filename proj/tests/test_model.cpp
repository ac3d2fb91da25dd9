#include "aligan/model.hpp"
#include "support/oracles.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <sstream>

namespace {

using namespace aligan;
using aligan::testing::fd_gradient;
using aligan::testing::relative_error;

Matrix probe_input(Eigen::Index d) {
  Matrix x(1, d);
  for (Eigen::Index i = 0; i < d; ++i) x(0, i) = std::sin(0.3 * static_cast<Real>(i));
  return x;
}

// Per-head loop over the stacked projections, written without the graph.
Vector msa_oracle(const Model& m, const Vector& x) {
  const auto& c = m.config;
  const Matrix& wq = m.weights.at("gen.msa.query");
  const Matrix& wk = m.weights.at("gen.msa.key");
  const Matrix& wv = m.weights.at("gen.msa.value");
  Vector concat(c.heads * c.head_dim);
  for (Eigen::Index l = 0; l < c.heads; ++l) {
    const Eigen::Index o = l * c.head_dim;
    const Vector q = wq.middleRows(o, c.head_dim) * x;
    const Vector k = wk.middleRows(o, c.head_dim) * x;
    const Vector v = wv.middleRows(o, c.head_dim) * x;
    Eigen::MatrixXd a = q * k.transpose() / std::sqrt(static_cast<Real>(c.input_dim));
    for (Eigen::Index r = 0; r < a.rows(); ++r) {
      a.row(r) = (a.row(r).array() - a.row(r).maxCoeff()).exp();
      a.row(r) /= a.row(r).sum();
    }
    concat.segment(o, c.head_dim) = a * v;
  }
  return m.weights.at("gen.msa.output") * concat;
}

TEST(PositionEncoding, IndexZero) {
  const Vector pe = pe_encode(0, 7);
  for (Eigen::Index c = 0; c < 7; ++c) EXPECT_EQ(pe[c], c % 2 == 0 ? 0.0 : 1.0);
}

TEST(PositionEncoding, IndexOneDimTwo) {
  const Vector pe = pe_encode(1, 2);
  EXPECT_DOUBLE_EQ(pe[0], std::sin(1.0));
  EXPECT_DOUBLE_EQ(pe[1], std::cos(1.0));
}

TEST(PositionEncoding, ScalarRecomputation) {
  const Vector pe = pe_encode(37, 69);
  for (int k = 0; 2 * k < 69; ++k) {
    const double angle = 37.0 / std::pow(10000.0, 2.0 * k / 69.0);
    EXPECT_NEAR(pe[2 * k], std::sin(angle), 1e-15);
    if (2 * k + 1 < 69) EXPECT_NEAR(pe[2 * k + 1], std::cos(angle), 1e-15);
  }
}

TEST(PositionEncoding, RejectsZeroDim) { EXPECT_THROW((void)pe_encode(3, 0), std::invalid_argument); }

TEST(Msa, ZeroWeightsGiveZero) {
  Model m = init_model(ModelConfig{}, 1);
  for (auto& [n, t] : m.weights) t.setZero();
  EXPECT_TRUE(msa_forward(m, probe_input(69)).isZero());
}

TEST(Msa, SingleScalarHeadIsValueProjection) {
  ModelConfig c;
  c.input_dim = 4;
  c.heads = 1;
  c.head_dim = 1;
  Model m = init_model(c, 2);
  m.weights.at("gen.msa.output") = Matrix::Identity(4, 1);
  const Matrix x = probe_input(4);
  const Real expected = (m.weights.at("gen.msa.value") * x.transpose())(0, 0);
  EXPECT_NEAR(msa_forward(m, x)(0, 0), expected, 1e-15);
}

TEST(Msa, MatchesHandRolledOracle) {
  ModelConfig c;
  c.input_dim = 4;
  c.heads = 2;
  c.head_dim = 2;
  const Model m = init_model(c, 3);
  std::mt19937_64 rng(4);
  std::normal_distribution<Real> n(0, 1);
  Matrix x(3, 4);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = n(rng);
  const Matrix out = msa_forward(m, x);
  for (Eigen::Index r = 0; r < 3; ++r)
    EXPECT_LT((out.row(r).transpose() - msa_oracle(m, x.row(r).transpose())).norm(), 1e-12);
}

TEST(Msa, PermutationSensitive) {
  const Model m = init_model(ModelConfig{}, 5);
  Matrix x = probe_input(69);
  Matrix swapped = x;
  std::swap(swapped(0, 3), swapped(0, 40));
  EXPECT_GT((msa_forward(m, x) - msa_forward(m, swapped)).norm(), 1e-6);
}

TEST(Generator, OutputIsProbabilityVector) {
  const Model m = init_model(ModelConfig{}, 6);
  std::mt19937_64 rng(6);
  std::normal_distribution<Real> n(0, 2);
  for (int trial = 0; trial < 20; ++trial) {
    Matrix x(1, 69);
    for (Eigen::Index i = 0; i < 69; ++i) x(0, i) = n(rng);
    const Matrix p = generator_forward(m, x, pe_encode(trial * 17, 69).transpose());
    EXPECT_NEAR(p.sum(), 1.0, 1e-12);
    EXPECT_GT(p.minCoeff(), 0.0);
  }
}

TEST(Generator, ZeroHeadGivesUniform) {
  Model m = init_model(ModelConfig{}, 7);
  for (auto& [n, t] : m.weights)
    if (n.starts_with("gen.fc")) t.setZero();
  const Matrix p = generator_forward(m, probe_input(69), pe_encode(5, 69).transpose());
  for (Eigen::Index j = 0; j < 11; ++j) EXPECT_NEAR(p(0, j), 1.0 / 11.0, 1e-15);
}

TEST(Generator, GoldenVector) {
  const Model m = init_model(ModelConfig{}, 42);
  const Matrix p = generator_forward(m, probe_input(69), pe_encode(123, 69).transpose());
  const double golden[] = {0.098172907715997057, 0.14290323456665632, 0.056540391021891227, 0.065635396581387548,
                           0.057210209031511972, 0.09484154741226701,  0.074078764846804271, 0.20978657543807744,
                           0.062802703673919838, 0.087268489051014045, 0.050759780660473298};
  for (Eigen::Index j = 0; j < 11; ++j) EXPECT_NEAR(p(0, j), golden[j], 1e-13);
}

TEST(Discriminator, ZeroWeightsGiveHalf) {
  Model m = init_model(ModelConfig{}, 8);
  for (auto& [n, t] : m.weights) t.setZero();
  const Matrix d = discriminator_forward(m, probe_input(69), Matrix::Constant(1, 11, 1.0 / 11));
  EXPECT_EQ(d(0, 0), 0.5);
  EXPECT_EQ(d(0, 1), 0.5);
}

TEST(Discriminator, OutputsInUnitInterval) {
  const Model m = init_model(ModelConfig{}, 9);
  std::mt19937_64 rng(9);
  std::normal_distribution<Real> n(0, 3);
  Matrix x(50, 69), y(50, 11);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = n(rng);
  for (Eigen::Index i = 0; i < y.size(); ++i) y.data()[i] = n(rng);
  const Matrix d = discriminator_forward(m, x, y);
  EXPECT_EQ(d.cols(), 2);
  EXPECT_GT(d.minCoeff(), 0.0);
  EXPECT_LT(d.maxCoeff(), 1.0);
}

TEST(Discriminator, GoldenPair) {
  const Model m = init_model(ModelConfig{}, 42);
  const Matrix x = probe_input(69);
  const Matrix d = discriminator_forward(m, x, generator_forward(m, x, pe_encode(123, 69).transpose()));
  EXPECT_NEAR(d(0, 0), 0.48424508143435979, 1e-13);
  EXPECT_NEAR(d(0, 1), 0.49313561422055957, 1e-13);
}

TEST(Model, Shapes) {
  const Model m = init_model(ModelConfig{}, 10);
  EXPECT_EQ(m.weights.at("gen.msa.query").rows(), 64);
  EXPECT_EQ(m.weights.at("gen.msa.output").cols(), 64);
  EXPECT_EQ(m.weights.at("gen.fc2.weight").rows(), 11);
  EXPECT_EQ(m.weights.at("disc.fc0.weight").cols(), 80);
  EXPECT_EQ(m.weights.at("disc.fc2.weight").rows(), 2);
  EXPECT_FALSE(m.weights.contains("gen.pe"));
}

TEST(Model, NetworkGradientsMatchFiniteDifferences) {
  const ModelConfig c = aligan::testing::mini_config();
  const Model m = init_model(c, 11);
  std::mt19937_64 rng(12);
  const Batch b = aligan::testing::random_batch(rng, 4, c.input_dim, c.output_dim);
  ASSERT_GT(aligan::testing::relu_margin(m, b), 1e-4);
  Graph g;
  const Expr x = g.input("x"), pe = g.input("pe"), y = g.input("y");
  const Expr gen = generator(g, x, pe, c);
  const Expr disc = discriminator(g, x, y, c);
  const Expr lg = ad::sum(gen * g.input("w"));
  const Expr ld = ad::sum(ad::square(disc));
  const Bindings in{{"x", b.x}, {"pe", b.pe}, {"y", b.y}, {"w", b.y}};
  for (const Expr e : {lg, ld}) {
    const ParameterSet analytic = g.backward(g.forward(in, m.weights, {e}), e);
    const ParameterSet numeric =
        fd_gradient([&](const ParameterSet& w) { return g.forward(in, w, {e}).scalar(e); }, m.weights);
    EXPECT_LT(relative_error(analytic, numeric), 1e-4);
  }
}

TEST(Checkpoint, RoundTripIsBitExact) {
  ModelConfig c;
  c.generator_hidden = {13, 5};
  const Model m = init_model(c, 13);
  std::stringstream s;
  write_checkpoint(m, s);
  const Model back = read_checkpoint(s);
  EXPECT_TRUE(back.config == m.config);
  EXPECT_TRUE(back.weights == m.weights);

  const auto path = std::filesystem::temp_directory_path() / "aligan_test_model.ckpt";
  save_checkpoint(m, path);
  EXPECT_TRUE(load_checkpoint(path).weights == m.weights);
  std::filesystem::remove(path);
}

TEST(Checkpoint, RejectsGarbage) {
  std::stringstream s("not a checkpoint\n");
  EXPECT_ANY_THROW((void)read_checkpoint(s));
}

}  // namespace
