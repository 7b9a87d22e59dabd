#include "gradconceal/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <string>

#include "gradconceal/errors.hpp"

namespace gc::nn {

void TrainConfig::validate() const {
  if (!(learning_rate > 0)) throw ConfigError("learning rate must be positive");
  if (batch_size == 0) throw ConfigError("batch size must be positive");
}

namespace {

Tensor gather_rows(const Tensor& src, std::span<const std::size_t> rows) {
  const std::size_t stride = src.row_size();
  Shape shape = src.shape();
  shape[0] = rows.size();
  std::vector<float> out;
  out.reserve(rows.size() * stride);
  for (std::size_t r : rows) {
    auto row = src.row(r);
    out.insert(out.end(), row.begin(), row.end());
  }
  return Tensor(std::move(shape), std::move(out), Finite::unchecked);
}

}  // namespace

Model train(Model model, const data::Dataset& data, const TrainConfig& cfg, const EpochCallback& on_epoch) {
  cfg.validate();
  if (data.size() == 0) throw ContractError("training set is empty");
  data.validate();
  if (data.num_classes > model.num_classes())
    throw ContractError("dataset has more classes than the model outputs");

  std::mt19937_64 rng(cfg.seed);
  std::vector<std::size_t> order(data.size());
  const float lr = static_cast<float>(cfg.learning_rate);

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    for (std::size_t i = order.size(); i-- > 1;) std::swap(order[i], order[rng() % (i + 1)]);

    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      std::span<const std::size_t> rows(order.data() + start, end - start);
      Tensor x = as_model_input(model, gather_rows(data.images, rows));
      std::vector<int> y;
      y.reserve(rows.size());
      for (std::size_t r : rows) y.push_back(data.labels[r]);

      ad::Tape tape;
      const ad::Var in = tape.constant(std::move(x));
      ad::Var logits;
      try {
        logits = model.forward(tape, in, ParamMode::track);
      } catch (const NumericError& e) {
        throw NumericError("training diverged at epoch " + std::to_string(epoch) + ": " + e.what(),
                           "epoch " + std::to_string(epoch));
      }
      const ad::Var loss = ad::softmax_cross_entropy(tape, logits, y, ad::Reduction::mean);
      const float lv = tape.value(loss).item();
      if (!std::isfinite(lv))
        throw NumericError("training diverged at epoch " + std::to_string(epoch) + ": loss is not finite",
                           "epoch " + std::to_string(epoch));
      loss_sum += lv;
      ++batches;

      const ad::Gradients grads = tape.backward(loss);
      auto& params = model.parameters();
      const auto pg = grads.parameters();
      for (auto& param : params) {
        const auto it = std::find_if(pg.begin(), pg.end(), [&](const auto& e) { return e.first == param.id; });
        if (it == pg.end()) continue;
        const Tensor& g = it->second;
        auto w = param.value.data();
        for (std::size_t i = 0; i < w.size(); ++i) w[i] -= lr * g[i];
      }
    }
    const double mean_loss = loss_sum / static_cast<double>(batches);
    if (!std::isfinite(mean_loss))
      throw NumericError("training diverged at epoch " + std::to_string(epoch), "epoch " + std::to_string(epoch));
    if (on_epoch) on_epoch(epoch, mean_loss);
  }
  return model;
}

double evaluate_accuracy(const Classifier& model, const data::Dataset& data, std::size_t batch_size) {
  if (data.size() == 0) throw ContractError("cannot compute accuracy of an empty dataset");
  std::size_t correct = 0;
  for (std::size_t start = 0; start < data.size(); start += batch_size) {
    const std::size_t end = std::min(data.size(), start + batch_size);
    const auto pred = predict(model, as_model_input(model, data.images.slice_rows(start, end)));
    for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == data.labels[start + i];
  }
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

}  // namespace gc::nn
