// Adversarial, supervised and incremental losses of iGAN-GR, and the
// per-weight sensitivity used by the elastic weight consolidation penalty.
//
// Every loss is a mean over the batch rows. Logs of discriminator
// probabilities are taken on inputs clamped to [kProbabilityClamp, 1 - kProbabilityClamp].

#ifndef ALIGAN_LOSSES_HPP
#define ALIGAN_LOSSES_HPP

#include "aligan/model.hpp"

#include <functional>
#include <optional>

namespace aligan {

inline constexpr Real kProbabilityClamp = 1e-7;

// |alpha_p| per weight, keyed like the weights it describes.
using SensitivityVector = ParameterSet;

// Frozen copy of the previous round's networks and their sensitivities.
struct AnchorState {
  ParameterSet weights;
  SensitivityVector sensitivity;
};

struct IncrementalWeights {
  Real lambda_g = 0;
  Real lambda_d = 0;
  Real beta_g = 0;
  Real beta_d = 0;
};

// One graph holding both networks on a batch plus every loss built on them.
// Inputs: "x", "pe", "y", "tau". The incremental expressions exist only when
// an anchor is supplied; without one, ewc_* are absent and the incremental
// losses equal their plain counterparts plus the beta-weighted IS term.
class LossGraph {
 public:
  explicit LossGraph(const ModelConfig& config, const AnchorState* anchor = nullptr, IncrementalWeights weights = {});

  LossGraph(const LossGraph&) = delete;
  LossGraph& operator=(const LossGraph&) = delete;

  [[nodiscard]] Bindings bind(const Batch& batch) const;

  Graph graph;
  Expr x, pe, y, tau;
  Expr generated;   // G[x]
  Expr real_score;  // D[x, y], B x 2
  Expr fake_score;  // D[x, G[x]], B x 2

  Expr supervised;              // L_S
  Expr discriminative;
  Expr generative;
  Expr incremental_supervised;  // L_IS
  std::optional<Expr> ewc_generator;
  std::optional<Expr> ewc_discriminator;
  Expr discriminative_incremental;  // discriminative + lambda_d * EWC(D) + beta_d * IS
  Expr generative_incremental;      // generative + lambda_g * EWC(G) + beta_g * IS
};

// Value-only evaluation on a batch. All throw std::invalid_argument on an
// empty batch; the freshness-aware ones also when tags are missing.
Real disc_loss(const Batch& batch, const Model& model);
Real gen_loss(const Batch& batch, const Model& model);
Real sup_loss(const Batch& batch, const Model& model);
Real is_loss(const Batch& batch, const Model& model);
Real gen_loss_incremental(const Batch& batch, const Model& model, const AnchorState& anchor, Real lambda_g, Real beta_g);
Real disc_loss_incremental(const Batch& batch, const Model& model, const AnchorState& anchor, Real lambda_d, Real beta_d);

// 1/2 sum_p |alpha_p| (w_p - anchor_p)^2 over every entry of `alpha`.
Real ewc_loss(const ParameterSet& current, const ParameterSet& anchor, const SensitivityVector& alpha);

// EWC penalty as a graph expression over the parameters named in `alpha`.
Expr ewc_expression(Graph& g, const ParameterSet& anchor, const SensitivityVector& alpha);

void require_nonempty(const Batch& batch);
void require_tags(const Batch& batch);

enum class SensitivityMode {
  // mean over samples of (d loss_i / d w_p)^2
  EmpiricalFisher,
  // mean over samples of d^2 loss_i / d w_p^2, by central differences of the gradient
  HessianDiagonal,
};

// Gradient of one sample's loss at `weights`, restricted to the network of interest.
using SampleGradient = std::function<ParameterSet(const ParameterSet& weights, std::size_t sample)>;

SensitivityVector sensitivity(const ParameterSet& anchor, std::size_t samples, const SampleGradient& gradient,
                              SensitivityMode mode = SensitivityMode::EmpiricalFisher, Real fd_step = 1e-4);

// Generator sensitivity from the per-sample loss ||G[x] - y||^2.
SensitivityVector generator_sensitivity(const Model& model, const Batch& data,
                                        SensitivityMode mode = SensitivityMode::EmpiricalFisher);

// Discriminator sensitivity from the per-sample squared error of both heads
// against their targets: (1, tau) on the real pair, (0, tau) on the generated pair.
SensitivityVector discriminator_sensitivity(const Model& model, const Batch& data,
                                            SensitivityMode mode = SensitivityMode::EmpiricalFisher);

// Anchor of a trained model on its training data: frozen weights plus |alpha|.
AnchorState make_anchor(const Model& model, const Batch& data, SensitivityMode mode = SensitivityMode::EmpiricalFisher);

}  // namespace aligan

#endif  // ALIGAN_LOSSES_HPP
