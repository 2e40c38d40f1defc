#include "mmv/train/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>

#include "mmv/dataset/io.hpp"
#include "mmv/diffcore/ops.hpp"

namespace mmv::train {

using diff::Tensor;

template <typename T>
void adam_step(std::span<T> values, std::span<const T> grads, AdamSlot<T>& slot, std::size_t step,
               const AdamHyper& h, const std::string& name) {
  if (grads.size() != values.size())
    throw DimensionError("adam: " + name + " has " + std::to_string(values.size()) + " values and " +
                         std::to_string(grads.size()) + " gradients");
  if (step == 0) throw std::invalid_argument("adam: step counts from 1");
  for (std::size_t i = 0; i < grads.size(); ++i)
    if (!std::isfinite(grads[i]))
      throw NumericalError("adam: non-finite gradient in " + name + " at index " + std::to_string(i));
  if (slot.m.empty()) {
    slot.m.assign(values.size(), T(0));
    slot.v.assign(values.size(), T(0));
  }
  const T b1 = static_cast<T>(h.beta1), b2 = static_cast<T>(h.beta2);
  const T c1 = static_cast<T>(1.0 - std::pow(h.beta1, static_cast<double>(step)));
  const T c2 = static_cast<T>(1.0 - std::pow(h.beta2, static_cast<double>(step)));
  const T lr = static_cast<T>(h.learning_rate), eps = static_cast<T>(h.eps);
  for (std::size_t i = 0; i < values.size(); ++i) {
    const T g = grads[i];
    slot.m[i] = b1 * slot.m[i] + (T(1) - b1) * g;
    slot.v[i] = b2 * slot.v[i] + (T(1) - b2) * g * g;
    const T mhat = slot.m[i] / c1;
    const T vhat = slot.v[i] / c2;
    values[i] -= lr * mhat / (std::sqrt(vhat) + eps);
  }
}

template <typename T>
void Adam<T>::step(model::ParamStore<T>& params) {
  if (slots_.empty()) slots_.resize(params.size());
  ++step_;
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor<T> t = params.tensors()[i];
    if (!t.requires_grad()) continue;
    const std::vector<T> g = t.grad();
    adam_step<T>(t.mutable_data(), g, slots_[i], step_, hyper_, params.names()[i]);
  }
}

template void adam_step(std::span<float>, std::span<const float>, AdamSlot<float>&, std::size_t, const AdamHyper&,
                        const std::string&);
template void adam_step(std::span<double>, std::span<const double>, AdamSlot<double>&, std::size_t,
                        const AdamHyper&, const std::string&);
template class Adam<float>;
template class Adam<double>;

bool early_stop_check(std::span<const double> losses, std::size_t patience, double min_delta) {
  if (losses.empty()) return false;
  double best = losses[0];
  std::size_t last_improve = 0;
  for (std::size_t i = 1; i < losses.size(); ++i)
    if (losses[i] < best - min_delta) {
      best = losses[i];
      last_improve = i;
    }
  return (losses.size() - 1) - last_improve >= patience;
}

void TrainConfig::validate() const {
  auto need = [](bool ok, const std::string& what) {
    if (!ok) throw ConfigError("train: " + what);
  };
  need(batch_size >= 1, "batch_size must be positive");
  need(learning_rate > 0.0 && std::isfinite(learning_rate), "learning_rate must be positive");
  need(huber_delta > 0.0, "huber_delta must be positive");
  need(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0, "Adam betas must be in [0,1)");
  need(adam_eps > 0.0, "adam_eps must be positive");
  need(max_epochs >= 1, "max_epochs must be positive");
  need(patience >= 1, "patience must be at least 1");
  need(min_delta >= 0.0, "min_delta must be non-negative");
}

nlohmann::json TrainConfig::to_json() const {
  return {{"batch_size", batch_size}, {"learning_rate", learning_rate}, {"huber_delta", huber_delta},
          {"beta1", beta1},           {"beta2", beta2},                 {"adam_eps", adam_eps},
          {"max_epochs", max_epochs}, {"patience", patience},           {"min_delta", min_delta},
          {"seed", seed},             {"augment", augment}};
}

void TrainHistory::write_csv(const std::filesystem::path& file) const {
  std::ofstream out(file, std::ios::trunc);
  if (!out) throw data::DataError("cannot write " + file.string());
  out << "epoch,train_loss,val_loss,seconds\n";
  for (const auto& e : epochs)
    out << e.epoch << ',' << data::format_real(e.train_loss) << ',' << data::format_real(e.val_loss) << ','
        << data::format_real(e.seconds) << '\n';
  if (!out) throw data::DataError("write failed for " + file.string());
}

namespace {

std::vector<model::ModelInput> materialize(const InputFn& inputs, std::span<const Example> examples,
                                           std::span<const std::size_t> order, std::mt19937_64* augment) {
  std::vector<model::ModelInput> out;
  out.reserve(order.size());
  for (std::size_t i : order) out.push_back(inputs(examples[i], augment));
  return out;
}

std::vector<const model::ModelInput*> pointers(const std::vector<model::ModelInput>& v) {
  std::vector<const model::ModelInput*> p;
  for (const auto& x : v) p.push_back(&x);
  return p;
}

Tensor<float> targets(std::span<const Example> examples, std::span<const std::size_t> order) {
  std::vector<float> y;
  for (std::size_t i : order) y.push_back(static_cast<float>(examples[i].target));
  return Tensor<float>::from({order.size(), 1}, std::move(y));
}

void copy_values(const model::ParamStore<float>& from, model::ParamStore<float>& to) {
  for (std::size_t i = 0; i < from.size(); ++i) {
    const auto src = from.tensors()[i].data();
    Tensor<float> dst = to.tensors()[i];
    std::copy(src.begin(), src.end(), dst.mutable_data().begin());
  }
}

}  // namespace

double evaluate_loss(const model::Regressor<float>& m, const InputFn& inputs, std::span<const Example> examples,
                     std::size_t batch_size, double delta) {
  if (examples.empty()) throw data::DataError("evaluate_loss: no examples");
  diff::NoGradGuard guard;
  double total = 0.0;
  for (std::size_t start = 0; start < examples.size(); start += batch_size) {
    std::vector<std::size_t> order(std::min(batch_size, examples.size() - start));
    std::iota(order.begin(), order.end(), start);
    const auto batch = materialize(inputs, examples, order, nullptr);
    const auto loss = diff::huber_loss(m.forward(pointers(batch)), targets(examples, order), static_cast<float>(delta));
    total += static_cast<double>(loss.item()) * static_cast<double>(order.size());
  }
  return total / static_cast<double>(examples.size());
}

std::vector<double> predict(const model::Regressor<float>& m, const InputFn& inputs, std::span<const Example> examples,
                            std::size_t batch_size) {
  diff::NoGradGuard guard;
  std::vector<double> out;
  for (std::size_t start = 0; start < examples.size(); start += batch_size) {
    std::vector<std::size_t> order(std::min(batch_size, examples.size() - start));
    std::iota(order.begin(), order.end(), start);
    const auto batch = materialize(inputs, examples, order, nullptr);
    const auto scores = m.forward(pointers(batch));
    for (float s : scores.data()) out.push_back(static_cast<double>(s));
  }
  return out;
}

TrainHistory train(model::Regressor<float>& m, const InputFn& inputs, std::span<const Example> train_set,
                   std::span<const Example> val_set, std::span<const std::size_t> train_cycles,
                   const TrainConfig& config, const std::function<void(const model::Regressor<float>&)>& on_best) {
  config.validate();
  if (train_set.empty()) throw data::DataError("train: the training split has no transferred embryos");
  if (val_set.empty()) throw data::DataError("train: the validation split has no transferred embryos");
  if (!std::is_sorted(train_cycles.begin(), train_cycles.end()))
    throw std::invalid_argument("train: train_cycles must be sorted");

  std::mt19937_64 shuffle_rng(config.seed);
  std::mt19937_64 augment_rng(config.seed ^ 0xA5A5A5A5A5A5A5A5ull);
  Adam<float> adam(config.adam());
  TrainHistory history;
  model::ParamStore<float> best = m.params().clone();
  std::vector<double> val_losses;
  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), 0);
  const auto delta = static_cast<float>(config.huber_delta);

  for (std::size_t epoch = 0; epoch < config.max_epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::span<const std::size_t> idx(order.data() + start, std::min(config.batch_size, order.size() - start));
      for (std::size_t i : idx)
        if (!std::binary_search(train_cycles.begin(), train_cycles.end(), train_set[i].cycle))
          throw std::logic_error("train: embryo " + train_set[i].embryo_id + " is outside the training split");
      const auto batch = materialize(inputs, train_set, idx, config.augment ? &augment_rng : nullptr);
      m.params().zero_grad();
      const auto loss = diff::huber_loss(m.forward(pointers(batch)), targets(train_set, idx), delta);
      if (!std::isfinite(loss.item())) {
        copy_values(best, m.params());
        throw NumericalError("train: non-finite training loss at epoch " + std::to_string(epoch) +
                             "; restored the best parameters");
      }
      loss.backward();
      adam.step(m.params());
      loss_sum += static_cast<double>(loss.item()) * static_cast<double>(idx.size());
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(order.size());
    rec.val_loss = evaluate_loss(m, inputs, val_set, config.batch_size, config.huber_delta);
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (!std::isfinite(rec.val_loss)) {
      copy_values(best, m.params());
      throw NumericalError("train: non-finite validation loss at epoch " + std::to_string(epoch) +
                           "; restored the best parameters");
    }
    history.epochs.push_back(rec);
    val_losses.push_back(rec.val_loss);
    if (epoch == 0 || rec.val_loss < history.best_val_loss()) {
      history.best_epoch = epoch;
      copy_values(m.params(), best);
      if (on_best) on_best(m);
    }
    if (early_stop_check(val_losses, config.patience, config.min_delta)) {
      history.stop_reason = "early stop";
      break;
    }
  }
  if (history.stop_reason.empty()) history.stop_reason = "max epochs";
  copy_values(best, m.params());
  return history;
}

std::vector<double> fit_batch(model::Regressor<float>& m, const InputFn& inputs, std::span<const Example> batch_set,
                              std::size_t steps, const TrainConfig& config) {
  config.validate();
  Adam<float> adam(config.adam());
  std::vector<std::size_t> idx(batch_set.size());
  std::iota(idx.begin(), idx.end(), 0);
  const auto batch = materialize(inputs, batch_set, idx, nullptr);
  const auto ptrs = pointers(batch);
  const auto y = targets(batch_set, idx);
  std::vector<double> losses;
  for (std::size_t s = 0; s < steps; ++s) {
    m.params().zero_grad();
    const auto loss = diff::huber_loss(m.forward(ptrs), y, static_cast<float>(config.huber_delta));
    losses.push_back(static_cast<double>(loss.item()));
    loss.backward();
    adam.step(m.params());
  }
  return losses;
}

}  // namespace mmv::train
