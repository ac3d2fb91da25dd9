// Independent reference computations used by the unit and acceptance tests.
// Nothing here calls into the autodiff backward pass.

#ifndef ALIGAN_TESTS_ORACLES_HPP
#define ALIGAN_TESTS_ORACLES_HPP

#include "aligan/losses.hpp"
#include "aligan/model.hpp"

#include <cmath>
#include <functional>
#include <limits>
#include <random>
#include <set>

namespace aligan::testing {

inline ModelConfig mini_config() {
  ModelConfig c;
  c.input_dim = 6;
  c.output_dim = 3;
  c.heads = 2;
  c.head_dim = 2;
  return c;
}

inline Vector random_simplex(std::mt19937_64& rng, Eigen::Index d) {
  std::exponential_distribution<Real> e(1.0);
  Vector v(d);
  for (Eigen::Index i = 0; i < d; ++i) v[i] = e(rng);
  return v / v.sum();
}

// Random labeled batch; tags alternate 0/1 so both classes are present.
inline Batch random_batch(std::mt19937_64& rng, Eigen::Index n, Eigen::Index dx, Eigen::Index dy) {
  std::normal_distribution<Real> normal(0.0, 1.0);
  LabeledSet samples;
  for (Eigen::Index i = 0; i < n; ++i) {
    LabeledSample s;
    s.record.index = 3 * i + 1;
    s.record.chainage = 0.05 * static_cast<Real>(s.record.index);
    s.record.features.resize(dx);
    for (Eigen::Index k = 0; k < dx; ++k) s.record.features[k] = normal(rng);
    s.label = random_simplex(rng, dy);
    s.tau = static_cast<int>(i % 2);
    samples.push_back(std::move(s));
  }
  return make_batch(samples);
}

// Central-difference gradient of f with respect to every entry of w.
inline ParameterSet fd_gradient(const std::function<Real(const ParameterSet&)>& f, ParameterSet w, Real h = 1e-5) {
  ParameterSet g = w.zeros_like();
  for (auto& [name, t] : g) {
    auto& p = w.at(name);
    for (Eigen::Index i = 0; i < p.size(); ++i) {
      const Real w0 = p.data()[i];
      p.data()[i] = w0 + h;
      const Real plus = f(w);
      p.data()[i] = w0 - h;
      const Real minus = f(w);
      p.data()[i] = w0;
      t.data()[i] = (plus - minus) / (2 * h);
    }
  }
  return g;
}

// ||a - b|| / max(||a||, ||b||, floor) over the union of names; a missing
// entry counts as zeros.
inline Real relative_error(const ParameterSet& a, const ParameterSet& b, Real floor = 1e-8) {
  std::set<std::string> names;
  for (const auto& [n, t] : a) names.insert(n);
  for (const auto& [n, t] : b) names.insert(n);
  Real diff = 0, na = 0, nb = 0;
  for (const auto& n : names) {
    const bool ha = a.contains(n), hb = b.contains(n);
    const Matrix& ref = ha ? a.at(n) : b.at(n);
    const Matrix ta = ha ? a.at(n) : Matrix::Zero(ref.rows(), ref.cols());
    const Matrix tb = hb ? b.at(n) : Matrix::Zero(ref.rows(), ref.cols());
    diff += (ta - tb).squaredNorm();
    na += ta.squaredNorm();
    nb += tb.squaredNorm();
  }
  return std::sqrt(diff) / std::max({std::sqrt(na), std::sqrt(nb), floor});
}

// Smallest |pre-activation| over every hidden ReLU unit of both networks
// (real and generated pairs). Finite differences are only trustworthy when
// this is well above the step size.
inline Real relu_margin(const Model& m, const Batch& b) {
  Real margin = std::numeric_limits<Real>::infinity();
  auto walk = [&](std::string_view prefix, Matrix h, std::size_t hidden) {
    for (std::size_t l = 0; l < hidden; ++l) {
      const std::string base = std::string(prefix) + "fc" + std::to_string(l);
      Matrix pre = h * m.weights.at(base + ".weight").transpose();
      pre.rowwise() += m.weights.at(base + ".bias").row(0);
      margin = std::min(margin, pre.cwiseAbs().minCoeff());
      h = pre.cwiseMax(0.0);
    }
  };
  walk(kGeneratorPrefix, msa_forward(m, b.x) + b.pe, m.config.generator_hidden.size());
  const Matrix fake = generator_forward(m, b);
  Matrix real_in(b.size(), b.x.cols() + b.y.cols()), fake_in(b.size(), b.x.cols() + b.y.cols());
  real_in << b.x, b.y;
  fake_in << b.x, fake;
  walk(kDiscriminatorPrefix, real_in, m.config.discriminator_hidden.size());
  walk(kDiscriminatorPrefix, fake_in, m.config.discriminator_hidden.size());
  return margin;
}

// Shannon entropy with 0 log 0 = 0, written out independently.
inline Real entropy_oracle(const Vector& p) {
  Real h = 0;
  for (Eigen::Index j = 0; j < p.size(); ++j)
    if (p[j] != 0) h += -p[j] * std::log(p[j]);
  return h;
}

inline Real vote_entropy_oracle(const std::vector<int>& votes, int classes) {
  Real h = 0;
  for (int j = 0; j < classes; ++j) {
    const auto v = std::count(votes.begin(), votes.end(), j);
    if (v == 0) continue;
    const Real share = static_cast<Real>(v) / static_cast<Real>(votes.size());
    h -= share * std::log(share);
  }
  return h;
}

// Index of the largest score; ties go to the smallest chainage.
inline std::size_t brute_force_argmax(const std::vector<Real>& scores, const std::vector<Real>& chainages) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < scores.size(); ++i) {
    const bool better = scores[i] > scores[best];
    const bool tie_lower = scores[i] == scores[best] && chainages[i] < chainages[best];
    if (better || tie_lower) best = i;
  }
  return best;
}

}  // namespace aligan::testing

#endif  // ALIGAN_TESTS_ORACLES_HPP
