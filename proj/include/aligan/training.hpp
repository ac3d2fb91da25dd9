// Optimisation schedules for iGAN-GR: generator pre-training, the initial
// adversarial stage and the incremental stage.
//
// One adversarial iteration is five minibatch Adam steps in a fixed order:
//   S  supervised loss, generator only
//   D  discriminative loss, generator and discriminator
//   S
//   G  generative loss, generator and discriminator
//   S
// Each step draws the next minibatch from a stream that reshuffles once per
// epoch. Adam moments are shared by all steps of a stage (one state per
// network) and reset at the start of every stage.

#ifndef ALIGAN_TRAINING_HPP
#define ALIGAN_TRAINING_HPP

#include "aligan/losses.hpp"

#include <iosfwd>
#include <random>
#include <string>
#include <vector>

namespace aligan {

struct StageConfig {
  int iterations = 0;
  Real lr_generative = 0;    
  Real lr_discriminative = 0;
  Real lr_supervised = 0;    
  int batch_size = 32;
  Real lambda_g = 0;
  Real lambda_d = 0;
  Real beta_g = 0;
  Real beta_d = 0;

  void validate(std::string_view stage) const;
  friend bool operator==(const StageConfig&, const StageConfig&) = default;
};

struct TrainConfig {
  StageConfig pretrain{.iterations = 200, .lr_supervised = 0.005, .batch_size = 32};
  StageConfig initial{.iterations = 300,
                      .lr_generative = 0.0001,
                      .lr_discriminative = 0.0005,
                      .lr_supervised = 0.001,
                      .batch_size = 88};
  StageConfig incremental{.iterations = 100,
                          .lr_generative = 0.0001,
                          .lr_discriminative = 0.0005,
                          .lr_supervised = 0.001,
                          .batch_size = 32,
                          .lambda_g = 500,
                          .lambda_d = 500,
                          .beta_g = 1,
                          .beta_d = 1};
  AdamConfig adam{};
  // The discriminative step also updates the generator, and the generative
  // step also updates the discriminator. Either can be switched off.
  bool disc_step_updates_generator = true;
  bool gen_step_updates_discriminator = true;
  // Losses above this magnitude abort training.
  Real divergence_threshold = 1e6;
  SensitivityMode sensitivity_mode = SensitivityMode::EmpiricalFisher;

  void validate() const;
  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class StepKind : char { Supervised = 'S', Discriminative = 'D', Generative = 'G' };

// Per-iteration loss trace. Components not evaluated in an iteration are NaN.
struct TraceRow {
  std::string stage;
  int iteration = 0;
  Real loss_s = 0;     // last supervised step of the iteration
  Real loss_d = 0;     // discriminative step (plain component)
  Real loss_g = 0;     // generative step (plain component)
  Real ewc_g = 0;
  Real ewc_d = 0;
  Real loss_is = 0;
};

struct TrainingTrace {
  std::vector<TraceRow> rows;
  std::vector<StepKind> steps;
  std::vector<std::string> warnings;

  void write_csv(std::ostream& out) const;
};

// Minibatch index stream: shuffle once per epoch, sequential slices, last
// partial slice kept.
class MinibatchStream {
 public:
  MinibatchStream(Eigen::Index size, int batch_size, std::mt19937_64& rng);
  std::vector<Eigen::Index> next();

 private:
  void reshuffle();
  Eigen::Index size_;
  Eigen::Index batch_;
  Eigen::Index cursor_ = 0;
  std::vector<Eigen::Index> order_;
  std::mt19937_64* rng_;
};

// Minimises L_S over the generator for config.pretrain.iterations steps.
Model pretrain_generator(Model model, const Batch& data, const TrainConfig& config, std::mt19937_64& rng,
                         TrainingTrace* trace = nullptr);

// Adversarial stage on an already pre-trained model.
Model initial_train(Model model, const Batch& data, const TrainConfig& config, std::mt19937_64& rng,
                    TrainingTrace* trace = nullptr);

// Random initialisation, pre-training, then the adversarial stage.
Model train_from_scratch(const ModelConfig& model_config, const Batch& data, const TrainConfig& config,
                         std::uint64_t seed, TrainingTrace* trace = nullptr);

// Incremental stage: adversarial losses replaced by their EWC + IS regularised forms,
// anchored to `anchor` for the whole round.
Model incremental_train(Model model, const Batch& data, const AnchorState& anchor, const TrainConfig& config,
                        std::mt19937_64& rng, TrainingTrace* trace = nullptr);

// Five-step adversarial loop shared by both stages. With `anchor` null the
// plain adversarial losses are minimised.
Model adversarial_train(Model model, const Batch& data, const StageConfig& stage, const TrainConfig& config,
                        const AnchorState* anchor, std::mt19937_64& rng, TrainingTrace* trace,
                        std::string_view stage_name);

}  // namespace aligan

#endif  // ALIGAN_TRAINING_HPP
