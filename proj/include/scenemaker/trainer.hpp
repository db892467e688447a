#pragma once

// Flow-matching training loop: Adam with linear warmup and cosine decay,
// global-norm gradient clipping, and per-scene gradients computed in
// parallel into thread-local buffers.

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "scenemaker/config.hpp"
#include "scenemaker/pose_dit.hpp"

namespace scenemaker {

struct TrainSample {
  const ConditionInput* input = nullptr;
  const nn::Matrix<float>* target = nullptr;  // x1 rows, objects x 12
};

struct TrainResult {
  std::vector<double> loss;  // batch mean per step
  int steps = 0;
  int steps_per_epoch = 0;
  // Mean over the first and the last epoch's worth of steps.
  double initial_epoch_mean = 0;
  double final_epoch_mean = 0;
  double seconds = 0;
};

double learning_rate_at(int step, const TrainingConfig& config);

using TrainProgress = std::function<void(int step, double loss, double lr)>;

// Throws NumericalError on a non-finite loss or gradient.
TrainResult train_model(PoseDiT<float>& model, std::span<const TrainSample> data, const TrainingConfig& config,
                        std::uint64_t seed, const TrainProgress& progress = {});

}  // namespace scenemaker
