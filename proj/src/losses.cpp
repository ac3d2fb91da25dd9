#include "aligan/losses.hpp"

#include <cmath>

namespace aligan {

namespace {

Expr clamped_log(Expr e) { return ad::clamped_log(e, kProbabilityClamp, 1.0 - kProbabilityClamp); }

Real evaluate(const Batch& batch, const Model& model, const AnchorState* anchor, IncrementalWeights w,
              Expr LossGraph::*which) {
  require_nonempty(batch);
  LossGraph lg(model.config, anchor, w);
  const Expr e = lg.*which;
  return lg.graph.forward(lg.bind(batch), model.weights, {e}).scalar(e);
}

Bindings row_bindings(const Batch& data, Eigen::Index r) {
  Bindings b;
  b.emplace("x", data.x.row(r));
  b.emplace("pe", data.pe.row(r));
  b.emplace("y", data.y.row(r));
  return b;
}

}  // namespace

void require_nonempty(const Batch& batch) {
  if (batch.empty()) throw std::invalid_argument("loss evaluated on an empty batch");
}

void require_tags(const Batch& batch) {
  if (batch.tau.rows() != batch.size() || batch.tau.cols() != 1)
    throw std::invalid_argument("every sample needs a freshness tag");
  for (Eigen::Index r = 0; r < batch.tau.rows(); ++r) {
    const Real t = batch.tau(r, 0);
    if (t != 0 && t != 1) throw std::invalid_argument("freshness tags must be 0 or 1");
  }
}

LossGraph::LossGraph(const ModelConfig& config, const AnchorState* anchor, IncrementalWeights weights) {
  x = graph.input("x");
  pe = graph.input("pe");
  y = graph.input("y");
  tau = graph.input("tau");
  generated = generator(graph, x, pe, config);
  real_score = discriminator(graph, x, y, config);
  fake_score = discriminator(graph, x, generated, config);

  const Expr rg_real = ad::slice_cols(real_score, kRealGeneratedHead, 1);
  const Expr rg_fake = ad::slice_cols(fake_score, kRealGeneratedHead, 1);
  const Expr of_real = ad::slice_cols(real_score, kFreshOriginalHead, 1);
  const Expr of_fake = ad::slice_cols(fake_score, kFreshOriginalHead, 1);

  supervised = ad::mean(ad::row_sum(ad::square(generated - y)));
  discriminative = ad::mean(clamped_log(1.0 - rg_real) + clamped_log(rg_fake));
  generative = ad::mean(clamped_log(1.0 - rg_fake));
  incremental_supervised = 0.5 * ad::mean(ad::square(of_fake - tau)) + 0.5 * ad::mean(ad::square(of_real - tau));

  Expr d_total = discriminative;
  Expr g_total = generative;
  if (anchor != nullptr) {
    ewc_generator = ewc_expression(graph, anchor->weights, anchor->sensitivity.filtered(kGeneratorPrefix));
    ewc_discriminator = ewc_expression(graph, anchor->weights, anchor->sensitivity.filtered(kDiscriminatorPrefix));
    d_total = d_total + weights.lambda_d * *ewc_discriminator;
    g_total = g_total + weights.lambda_g * *ewc_generator;
  }
  discriminative_incremental = d_total + weights.beta_d * incremental_supervised;
  generative_incremental = g_total + weights.beta_g * incremental_supervised;
}

Bindings LossGraph::bind(const Batch& batch) const {
  Bindings b;
  b.emplace("x", batch.x);
  b.emplace("pe", batch.pe);
  b.emplace("y", batch.y);
  if (batch.tau.rows() == batch.size()) b.emplace("tau", batch.tau);
  return b;
}

Real disc_loss(const Batch& batch, const Model& model) {
  return evaluate(batch, model, nullptr, {}, &LossGraph::discriminative);
}

Real gen_loss(const Batch& batch, const Model& model) {
  return evaluate(batch, model, nullptr, {}, &LossGraph::generative);
}

Real sup_loss(const Batch& batch, const Model& model) {
  return evaluate(batch, model, nullptr, {}, &LossGraph::supervised);
}

Real is_loss(const Batch& batch, const Model& model) {
  require_tags(batch);
  return evaluate(batch, model, nullptr, {}, &LossGraph::incremental_supervised);
}

Real gen_loss_incremental(const Batch& batch, const Model& model, const AnchorState& anchor, Real lambda_g, Real beta_g) {
  require_tags(batch);
  return evaluate(batch, model, &anchor, {.lambda_g = lambda_g, .beta_g = beta_g}, &LossGraph::generative_incremental);
}

Real disc_loss_incremental(const Batch& batch, const Model& model, const AnchorState& anchor, Real lambda_d,
                           Real beta_d) {
  require_tags(batch);
  return evaluate(batch, model, &anchor, {.lambda_d = lambda_d, .beta_d = beta_d},
                  &LossGraph::discriminative_incremental);
}

Real ewc_loss(const ParameterSet& current, const ParameterSet& anchor, const SensitivityVector& alpha) {
  Real total = 0;
  for (const auto& [name, a] : alpha) {
    const auto& w = current.at(name);
    const auto& w0 = anchor.at(name);
    if (w.rows() != a.rows() || w.cols() != a.cols() || w0.rows() != a.rows() || w0.cols() != a.cols())
      throw ShapeError("ewc_loss: shape mismatch for '" + name + "'");
    total += (a.array().abs() * (w - w0).array().square()).sum();
  }
  return 0.5 * total;
}

Expr ewc_expression(Graph& g, const ParameterSet& anchor, const SensitivityVector& alpha) {
  std::optional<Expr> total;
  for (const auto& [name, a] : alpha) {
    const auto& w0 = anchor.at(name);
    if (w0.rows() != a.rows() || w0.cols() != a.cols()) throw ShapeError("ewc: shape mismatch for '" + name + "'");
    const Expr term = ad::sum(g.constant(a.cwiseAbs()) * ad::square(g.parameter(name) - g.constant(w0)));
    total = total ? *total + term : term;
  }
  if (!total) return g.constant(Matrix::Zero(1, 1));
  return 0.5 * *total;
}

SensitivityVector sensitivity(const ParameterSet& anchor, std::size_t samples, const SampleGradient& gradient,
                              SensitivityMode mode, Real fd_step) {
  if (samples == 0) throw std::invalid_argument("sensitivity needs a nonempty dataset");
  const Real n = static_cast<Real>(samples);

  if (mode == SensitivityMode::EmpiricalFisher) {
    SensitivityVector alpha;
    for (std::size_t i = 0; i < samples; ++i) {
      const ParameterSet g = gradient(anchor, i);
      if (alpha.empty()) alpha = g.zeros_like();
      for (const auto& [name, t] : g) alpha.at(name) += t.array().square().matrix();
    }
    for (auto& [name, t] : alpha) t /= n;
    return alpha;
  }

  SensitivityVector alpha = gradient(anchor, 0).zeros_like();
  ParameterSet probe = anchor;
  for (auto& [name, a] : alpha) {
    for (Eigen::Index k = 0; k < a.size(); ++k) {
      Real& w = probe.at(name).data()[k];
      const Real w0 = w;
      Real acc = 0;
      for (std::size_t i = 0; i < samples; ++i) {
        w = w0 + fd_step;
        const Real plus = gradient(probe, i).at(name).data()[k];
        w = w0 - fd_step;
        const Real minus = gradient(probe, i).at(name).data()[k];
        acc += (plus - minus) / (2 * fd_step);
      }
      w = w0;
      a.data()[k] = acc / n;
    }
  }
  return alpha;
}

SensitivityVector generator_sensitivity(const Model& model, const Batch& data, SensitivityMode mode) {
  require_nonempty(data);
  Graph g;
  const Expr out = generator(g, g.input("x"), g.input("pe"), model.config);
  const Expr loss = ad::sum(ad::square(out - g.input("y")));
  std::vector<Bindings> rows;
  rows.reserve(static_cast<std::size_t>(data.size()));
  for (Eigen::Index r = 0; r < data.size(); ++r) rows.push_back(row_bindings(data, r));
  auto grad = [&](const ParameterSet& w, std::size_t i) {
    const auto ev = g.forward(rows[i], w, {loss});
    return g.backward(ev, loss).filtered(kGeneratorPrefix);
  };
  return sensitivity(model.weights, rows.size(), grad, mode);
}

SensitivityVector discriminator_sensitivity(const Model& model, const Batch& data, SensitivityMode mode) {
  require_nonempty(data);
  require_tags(data);
  const Matrix fake = generator_forward(model, data);
  Graph g;
  const Expr x = g.input("x");
  const Expr real = discriminator(g, x, g.input("y"), model.config);
  const Expr gen = discriminator(g, x, g.input("fake"), model.config);
  const Expr loss =
      ad::sum(ad::square(real - g.input("target_real"))) + ad::sum(ad::square(gen - g.input("target_fake")));
  std::vector<Bindings> rows;
  rows.reserve(static_cast<std::size_t>(data.size()));
  for (Eigen::Index r = 0; r < data.size(); ++r) {
    Bindings b;
    b.emplace("x", data.x.row(r));
    b.emplace("y", data.y.row(r));
    b.emplace("fake", fake.row(r));
    Matrix t_real(1, 2);
    t_real << 1.0, data.tau(r, 0);
    Matrix t_fake(1, 2);
    t_fake << 0.0, data.tau(r, 0);
    b.emplace("target_real", std::move(t_real));
    b.emplace("target_fake", std::move(t_fake));
    rows.push_back(std::move(b));
  }
  auto grad = [&](const ParameterSet& w, std::size_t i) {
    const auto ev = g.forward(rows[i], w, {loss});
    return g.backward(ev, loss).filtered(kDiscriminatorPrefix);
  };
  return sensitivity(model.weights, rows.size(), grad, mode);
}

AnchorState make_anchor(const Model& model, const Batch& data, SensitivityMode mode) {
  AnchorState a;
  a.weights = model.weights;
  a.sensitivity = merged(generator_sensitivity(model, data, mode), discriminator_sensitivity(model, data, mode));
  return a;
}

}  // namespace aligan
