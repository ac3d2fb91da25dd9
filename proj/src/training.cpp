#include "aligan/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <ostream>
#include <sstream>

namespace aligan {

namespace {

constexpr Real kNaN = std::numeric_limits<Real>::quiet_NaN();
constexpr int kPretrainWindow = 50;

void require_data(const Batch& data) {
  if (data.empty()) throw std::invalid_argument("training set is empty");
  if (data.y.rows() != data.size()) throw std::invalid_argument("training set has no labels");
}

std::string context(std::string_view stage, int iteration, StepKind step) {
  std::ostringstream s;
  s << stage << " iteration " << iteration << " step " << static_cast<char>(step);
  return s.str();
}

void check_value(Real v, Real threshold, std::string_view what, std::string_view where) {
  if (!std::isfinite(v) || std::abs(v) > threshold) {
    std::ostringstream s;
    s << "divergence in " << where << ": " << what << " = " << v;
    throw DivergenceError(s.str());
  }
}

// Runs one Adam step on the networks selected by `update_gen` / `update_disc`.
class Stepper {
 public:
  Stepper(LossGraph& lg, const TrainConfig& config, std::string_view stage)
      : lg_(lg), config_(config), stage_(stage), gen_adam_(config.adam), disc_adam_(config.adam) {}

  // Returns the evaluation so callers can read loss components.
  Evaluation step(Model& model, const Batch& batch, Expr loss, std::initializer_list<Expr> components, Real lr,
                  bool update_gen, bool update_disc, int iteration, StepKind kind) {
    const auto where = context(stage_, iteration, kind);
    try {
      std::vector<Expr> outputs{loss};
      outputs.insert(outputs.end(), components.begin(), components.end());
      Evaluation ev = lg_.graph.forward(lg_.bind(batch), model.weights, std::span<const Expr>(outputs));
      for (const Expr& c : components) check_value(ev.scalar(c), config_.divergence_threshold, "loss component", where);
      if (!std::isfinite(ev.scalar(loss))) check_value(ev.scalar(loss), config_.divergence_threshold, "loss", where);
      const ParameterSet grads = lg_.graph.backward(ev, loss);
      if (update_gen) gen_adam_.step(model.weights, grads.filtered(kGeneratorPrefix), lr);
      if (update_disc) disc_adam_.step(model.weights, grads.filtered(kDiscriminatorPrefix), lr);
      return ev;
    } catch (const NonFiniteError& e) {
      throw DivergenceError("divergence in " + where + ": " + e.what());
    }
  }

 private:
  LossGraph& lg_;
  const TrainConfig& config_;
  std::string stage_;
  Adam gen_adam_;
  Adam disc_adam_;
};

}  // namespace

void StageConfig::validate(std::string_view stage) const {
  auto bad = [&](const std::string& what) { return std::invalid_argument(std::string(stage) + ": " + what); };
  if (iterations < 0) throw bad("iterations must be >= 0");
  if (batch_size < 1) throw bad("batch size must be >= 1");
  if (lr_generative < 0 || lr_discriminative < 0 || lr_supervised < 0) throw bad("learning rates must be >= 0");
  if (lambda_g < 0 || lambda_d < 0 || beta_g < 0 || beta_d < 0) throw bad("regulariser weights must be >= 0");
}

void TrainConfig::validate() const {
  pretrain.validate("pretrain");
  initial.validate("initial");
  incremental.validate("incremental");
  if (!(divergence_threshold > 0)) throw std::invalid_argument("divergence threshold must be positive");
}

void TrainingTrace::write_csv(std::ostream& out) const {
  out << "stage,iteration,loss_s,loss_d,loss_g,ewc_g,ewc_d,loss_is\n";
  char buf[64];
  auto num = [&](Real v) -> std::string {
    if (std::isnan(v)) return "";
    std::snprintf(buf, sizeof buf, "%.10e", v);
    return buf;
  };
  for (const auto& r : rows) {
    out << r.stage << ',' << r.iteration << ',' << num(r.loss_s) << ',' << num(r.loss_d) << ',' << num(r.loss_g) << ','
        << num(r.ewc_g) << ',' << num(r.ewc_d) << ',' << num(r.loss_is) << '\n';
  }
}

MinibatchStream::MinibatchStream(Eigen::Index size, int batch_size, std::mt19937_64& rng)
    : size_(size), batch_(batch_size), rng_(&rng) {
  if (size < 1) throw std::invalid_argument("minibatch stream over an empty set");
  if (batch_size < 1) throw std::invalid_argument("batch size must be >= 1");
  order_.resize(static_cast<std::size_t>(size));
  reshuffle();
}

void MinibatchStream::reshuffle() {
  std::iota(order_.begin(), order_.end(), Eigen::Index{0});
  std::shuffle(order_.begin(), order_.end(), *rng_);
  cursor_ = 0;
}

std::vector<Eigen::Index> MinibatchStream::next() {
  if (cursor_ >= size_) reshuffle();
  const Eigen::Index end = std::min(size_, cursor_ + batch_);
  std::vector<Eigen::Index> out(order_.begin() + cursor_, order_.begin() + end);
  cursor_ = end;
  return out;
}

Model pretrain_generator(Model model, const Batch& data, const TrainConfig& config, std::mt19937_64& rng,
                         TrainingTrace* trace) {
  require_data(data);
  config.pretrain.validate("pretrain");
  if (config.pretrain.iterations == 0) return model;
  LossGraph lg(model.config);
  Stepper stepper(lg, config, "pretrain");
  MinibatchStream stream(data.size(), config.pretrain.batch_size, rng);

  Real window_sum = 0;
  Real previous_window = std::numeric_limits<Real>::infinity();
  for (int k = 1; k <= config.pretrain.iterations; ++k) {
    const auto rows = stream.next();
    const Batch batch = data.gather(rows);
    const auto ev = stepper.step(model, batch, lg.supervised, {lg.supervised}, config.pretrain.lr_supervised, true,
                                 false, k, StepKind::Supervised);
    const Real ls = ev.scalar(lg.supervised);
    window_sum += ls;
    if (trace) {
      trace->steps.push_back(StepKind::Supervised);
      trace->rows.push_back({"pretrain", k, ls, kNaN, kNaN, kNaN, kNaN, kNaN});
    }
    if (k % kPretrainWindow == 0) {
      const Real mean = window_sum / kPretrainWindow;
      if (mean > previous_window && trace) {
        std::ostringstream s;
        s << "pretrain: mean L_S rose from " << previous_window << " to " << mean << " in iterations "
          << (k - kPretrainWindow + 1) << "-" << k;
        trace->warnings.push_back(s.str());
      }
      previous_window = mean;
      window_sum = 0;
    }
  }
  return model;
}

Model adversarial_train(Model model, const Batch& data, const StageConfig& stage, const TrainConfig& config,
                        const AnchorState* anchor, std::mt19937_64& rng, TrainingTrace* trace,
                        std::string_view stage_name) {
  require_data(data);
  stage.validate(stage_name);
  if (stage.iterations == 0) return model;
  if (anchor != nullptr) require_tags(data);

  const IncrementalWeights weights{stage.lambda_g, stage.lambda_d, stage.beta_g, stage.beta_d};
  LossGraph lg(model.config, anchor, weights);
  Stepper stepper(lg, config, stage_name);
  MinibatchStream stream(data.size(), stage.batch_size, rng);

  const Expr d_loss = anchor ? lg.discriminative_incremental : lg.discriminative;
  const Expr g_loss = anchor ? lg.generative_incremental : lg.generative;

  auto record = [&](StepKind kind) {
    if (trace) trace->steps.push_back(kind);
  };

  for (int k = 1; k <= stage.iterations; ++k) {
    TraceRow row{std::string(stage_name), k, kNaN, kNaN, kNaN, kNaN, kNaN, kNaN};
    auto supervised_step = [&] {
      const auto ev = stepper.step(model, data.gather(stream.next()), lg.supervised, {lg.supervised},
                                   stage.lr_supervised, true, false, k, StepKind::Supervised);
      row.loss_s = ev.scalar(lg.supervised);
      record(StepKind::Supervised);
    };

    supervised_step();

    {
      const Batch batch = data.gather(stream.next());
      if (anchor) {
        const auto ev = stepper.step(model, batch, d_loss,
                                     {lg.discriminative, *lg.ewc_discriminator, lg.incremental_supervised},
                                     stage.lr_discriminative, config.disc_step_updates_generator, true, k,
                                     StepKind::Discriminative);
        row.loss_d = ev.scalar(lg.discriminative);
        row.ewc_d = ev.scalar(*lg.ewc_discriminator);
      } else {
        const auto ev = stepper.step(model, batch, d_loss, {lg.discriminative}, stage.lr_discriminative,
                                     config.disc_step_updates_generator, true, k, StepKind::Discriminative);
        row.loss_d = ev.scalar(lg.discriminative);
      }
      record(StepKind::Discriminative);
    }

    supervised_step();

    {
      const Batch batch = data.gather(stream.next());
      if (anchor) {
        const auto ev =
            stepper.step(model, batch, g_loss, {lg.generative, *lg.ewc_generator, lg.incremental_supervised},
                         stage.lr_generative, true, config.gen_step_updates_discriminator, k, StepKind::Generative);
        row.loss_g = ev.scalar(lg.generative);
        row.ewc_g = ev.scalar(*lg.ewc_generator);
        row.loss_is = ev.scalar(lg.incremental_supervised);
      } else {
        const auto ev = stepper.step(model, batch, g_loss, {lg.generative}, stage.lr_generative, true,
                                     config.gen_step_updates_discriminator, k, StepKind::Generative);
        row.loss_g = ev.scalar(lg.generative);
      }
      record(StepKind::Generative);
    }

    supervised_step();
    if (trace) trace->rows.push_back(std::move(row));
  }
  return model;
}

Model initial_train(Model model, const Batch& data, const TrainConfig& config, std::mt19937_64& rng,
                    TrainingTrace* trace) {
  return adversarial_train(std::move(model), data, config.initial, config, nullptr, rng, trace, "initial");
}

Model train_from_scratch(const ModelConfig& model_config, const Batch& data, const TrainConfig& config,
                         std::uint64_t seed, TrainingTrace* trace) {
  config.validate();
  std::mt19937_64 rng(seed);
  Model model = init_model(model_config, rng());
  model = pretrain_generator(std::move(model), data, config, rng, trace);
  return initial_train(std::move(model), data, config, rng, trace);
}

Model incremental_train(Model model, const Batch& data, const AnchorState& anchor, const TrainConfig& config,
                        std::mt19937_64& rng, TrainingTrace* trace) {
  return adversarial_train(std::move(model), data, config.incremental, config, &anchor, rng, trace, "incremental");
}

}  // namespace aligan
