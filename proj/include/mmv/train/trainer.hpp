#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "mmv/model/model.hpp"
#include "mmv/model/params.hpp"
#include "mmv/train/examples.hpp"

namespace mmv::train {

struct AdamHyper {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Moments of one parameter tensor; zeros before the first step.
template <typename T>
struct AdamSlot {
  std::vector<T> m;
  std::vector<T> v;
};

/// One bias-corrected Adam update of `values` in place; `step` counts from 1.
/// Throws NumericalError naming `name` on a non-finite gradient.
template <typename T>
void adam_step(std::span<T> values, std::span<const T> grads, AdamSlot<T>& slot, std::size_t step,
               const AdamHyper& hyper, const std::string& name = "parameter");

/// Adam over the trainable tensors of a parameter store.
template <typename T>
class Adam {
 public:
  explicit Adam(AdamHyper hyper) : hyper_(hyper) {}
  void step(model::ParamStore<T>& params);
  std::size_t steps() const { return step_; }

 private:
  AdamHyper hyper_;
  std::size_t step_ = 0;
  std::vector<AdamSlot<T>> slots_;
};

/// True when none of the last `patience` epochs beat the running best
/// validation loss by more than `min_delta`.
bool early_stop_check(std::span<const double> val_losses, std::size_t patience, double min_delta);

struct TrainConfig {
  std::size_t batch_size = 4;
  double learning_rate = 1e-4;
  double huber_delta = 1.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::size_t max_epochs = 100;
  std::size_t patience = 10;
  double min_delta = 1e-4;
  std::uint64_t seed = 0;
  bool augment = true;

  /// Throws ConfigError.
  void validate() const;
  AdamHyper adam() const { return {learning_rate, beta1, beta2, adam_eps}; }
  nlohmann::json to_json() const;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double seconds = 0.0;
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
  std::size_t best_epoch = 0;
  std::string stop_reason;

  double best_val_loss() const { return epochs.at(best_epoch).val_loss; }
  /// epoch,train_loss,val_loss,seconds
  void write_csv(const std::filesystem::path& file) const;
};

/// Mean Huber loss over `examples` with gradients off and no augmentation.
double evaluate_loss(const model::Regressor<float>& model, const InputFn& inputs, std::span<const Example> examples,
                     std::size_t batch_size, double delta);

std::vector<double> predict(const model::Regressor<float>& model, const InputFn& inputs,
                            std::span<const Example> examples, std::size_t batch_size);

/// Mini-batch Adam with per-epoch validation and early stopping. Only
/// examples whose cycle is in `train_cycles` may reach a gradient (checked
/// per batch). `on_best` runs whenever validation improves, with the model
/// holding the improved parameters; on return the model holds the best
/// parameters. A non-finite loss restores the best parameters and throws
/// NumericalError.
TrainHistory train(model::Regressor<float>& model, const InputFn& inputs, std::span<const Example> train_set,
                   std::span<const Example> val_set, std::span<const std::size_t> train_cycles,
                   const TrainConfig& config, const std::function<void(const model::Regressor<float>&)>& on_best = {});

/// Repeated steps on a single batch; returns the loss before each step.
std::vector<double> fit_batch(model::Regressor<float>& model, const InputFn& inputs, std::span<const Example> batch,
                              std::size_t steps, const TrainConfig& config);

}  // namespace mmv::train
