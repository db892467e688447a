#include "scenemaker/trainer.hpp"

#include <omp.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <string>

#include "scenemaker/errors.hpp"
#include "scenemaker/rng.hpp"

namespace scenemaker {

double learning_rate_at(int step, const TrainingConfig& c) {
  if (c.warmup_steps > 0 && step < c.warmup_steps) return c.learning_rate * (step + 1) / c.warmup_steps;
  const int span = std::max(1, c.steps - c.warmup_steps);
  const double progress = std::clamp(double(step - c.warmup_steps) / span, 0.0, 1.0);
  const double floor = c.final_lr_fraction;
  return c.learning_rate * (floor + (1 - floor) * 0.5 * (1 + std::cos(M_PI * progress)));
}

TrainResult train_model(PoseDiT<float>& model, std::span<const TrainSample> data, const TrainingConfig& config,
                        std::uint64_t seed, const TrainProgress& progress) {
  if (data.empty()) throw ConfigError("training needs at least one scene");
  const auto start = std::chrono::steady_clock::now();
  const int batch = config.batch_size;
  const int n = static_cast<int>(data.size());
  TrainResult result;
  result.steps_per_epoch = (n + batch - 1) / batch;
  result.steps = config.steps;

  nn::ParameterSet<float>& params = model.parameters();
  nn::Adam<float> adam(params, {0.9, 0.999, 1e-8, config.weight_decay});
  const int threads = std::max(1, omp_get_max_threads());
  std::vector<nn::ParameterSet<float>> local(static_cast<std::size_t>(threads), params.zeros_like());
  nn::ParameterSet<float> grads = params.zeros_like();

  Rng order_rng(derive_seed(seed, "train/order"));
  std::vector<int> order(static_cast<std::size_t>(n));
  std::size_t cursor = order.size();
  auto next_index = [&] {
    if (cursor == order.size()) {
      std::iota(order.begin(), order.end(), 0);
      for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[order_rng.index(i)]);
      cursor = 0;
    }
    return order[cursor++];
  };

  std::vector<int> picks(static_cast<std::size_t>(batch));
  std::vector<double> losses(static_cast<std::size_t>(batch));
  std::vector<std::string> errors(static_cast<std::size_t>(batch));
  for (int step = 0; step < config.steps; ++step) {
    for (int b = 0; b < batch; ++b) picks[static_cast<std::size_t>(b)] = next_index();
    for (auto& g : local) g.set_zero();
#pragma omp parallel for schedule(static)
    for (int b = 0; b < batch; ++b) {
      const auto ub = static_cast<std::size_t>(b);
      try {
        const TrainSample& s = data[static_cast<std::size_t>(picks[ub])];
        Rng rng(derive_seed(seed, "train/step/" + std::to_string(step) + "/" + std::to_string(b)));
        const float t = static_cast<float>(rng.uniform());
        nn::Matrix<float> x0(s.target->rows(), s.target->cols());
        for (nn::Index i = 0; i < x0.size(); ++i) x0.data()[i] = static_cast<float>(rng.normal());
        const FlowBatch<float> fb = FlowBatch<float>::make(x0, *s.target, t);
        losses[ub] = model.loss(*s.input, fb, &local[static_cast<std::size_t>(omp_get_thread_num())]).total;
      } catch (const std::exception& e) {
        errors[ub] = e.what();
      }
    }
    for (const std::string& e : errors) {
      if (!e.empty()) throw NumericalError("training step " + std::to_string(step) + ": " + e);
    }
    grads.set_zero();
    for (const auto& g : local) grads += g;
    grads *= 1.0f / static_cast<float>(batch);
    const double norm = std::sqrt(grads.squared_norm());
    if (!std::isfinite(norm)) throw NumericalError("non-finite gradient at step " + std::to_string(step));
    if (config.grad_clip > 0 && norm > config.grad_clip) grads *= static_cast<float>(config.grad_clip / norm);
    const double lr = learning_rate_at(step, config);
    adam.step(params, grads, lr);

    double mean = 0;
    for (double l : losses) mean += l;
    mean /= batch;
    result.loss.push_back(mean);
    if (progress) progress(step, mean, lr);
  }

  const int window = std::min<int>(result.steps_per_epoch, static_cast<int>(result.loss.size()));
  result.initial_epoch_mean = std::accumulate(result.loss.begin(), result.loss.begin() + window, 0.0) / window;
  result.final_epoch_mean = std::accumulate(result.loss.end() - window, result.loss.end(), 0.0) / window;
  result.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return result;
}

}  // namespace scenemaker
