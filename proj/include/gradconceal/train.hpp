#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "gradconceal/dataset.hpp"
#include "gradconceal/model.hpp"

namespace gc::nn {

struct TrainConfig {
  double learning_rate = 0.05;
  std::size_t epochs = 3;
  std::size_t batch_size = 32;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Called after each epoch with (epoch index from 0, mean training loss).
using EpochCallback = std::function<void(std::size_t, double)>;

/// Minibatch SGD on mean softmax cross-entropy. The sample order is a seeded
/// Fisher-Yates shuffle per epoch, so results are reproducible bit-for-bit.
/// Throws NumericError carrying the epoch index if the loss becomes non-finite.
Model train(Model model, const data::Dataset& data, const TrainConfig& cfg, const EpochCallback& on_epoch = {});

/// Fraction of samples whose prediction matches the label, evaluated in batches.
double evaluate_accuracy(const Classifier& model, const data::Dataset& data, std::size_t batch_size = 256);

}  // namespace gc::nn
