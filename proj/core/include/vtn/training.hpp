// Copyright 2026 The VTN Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef VTN_TRAINING_HPP_
#define VTN_TRAINING_HPP_

#include <cstdint>
#include <vector>

#include "vtn/losses.hpp"
#include "vtn/model.hpp"
#include "vtn/synth.hpp"

namespace vtn {

// SGD with momentum and L2 weight decay:
//   v <- momentum * v + (g + weight_decay * w);  w <- w - lr * v
template <typename T>
struct OptimState {
  double lr = 0.01;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  std::int64_t steps = 0;
  std::vector<Tensor<T>> velocity;  // one per parameter, same order

  static OptimState init(const std::vector<Parameter<T>*>& params, double lr, double momentum,
                         double weight_decay);
  void step(const std::vector<Parameter<T>*>& params);
};

struct TrainOptions {
  std::int64_t batch_size = 32;
  double lambda = 1.0;  // consistency weight; only models with a warping module use it
  double alpha = 1.0;   // triplet margin
  bool hflip = false;   // random horizontal flips
};

struct EpochMetrics {
  double task_loss = 0;  // mean over samples
  double cons_loss = 0;  // mean over batches that had triplets
  double accuracy = 0;   // in [0, 1]
  std::int64_t samples = 0;
  std::int64_t batches = 0;
  std::int64_t batches_without_triplets = 0;
};

// Step-decay schedule: base_lr, times 0.1 from epoch ceil(2/3 * epochs) on.
double scheduled_lr(double base_lr, std::int64_t epoch, std::int64_t epochs);

// One pass over shuffled minibatches. Deterministic given `epoch_seed`.
// Throws NumericError naming the batch seed if the loss becomes non-finite.
template <typename T>
EpochMetrics train_epoch(Model<T>& model, const Dataset& data, OptimState<T>& optim, const TrainOptions& opt,
                         std::uint64_t epoch_seed);

// Inference-mode pass in index order. The consistency metric uses triplets
// mined with a generator seeded by `seed`.
template <typename T>
EpochMetrics evaluate(Model<T>& model, const Dataset& data, const TrainOptions& opt, std::uint64_t seed);

// Classifier-input features (V) of every sample in inference mode, one row
// of h*w*K values per sample.
template <typename T>
std::vector<std::vector<double>> warped_features(Model<T>& model, const Dataset& data, std::int64_t batch_size);

// Mean Euclidean distance between the feature rows of same-class pairs,
// averaged over all such pairs.
double mean_intra_class_distance(const std::vector<std::vector<double>>& features,
                                 const std::vector<std::int64_t>& labels);

}  // namespace vtn

#endif  // VTN_TRAINING_HPP_
