// Copyright 2026 The VTN Authors
// SPDX-License-Identifier: Apache-2.0

#include "vtn/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "vtn/hash.hpp"

namespace vtn {

template <typename T>
OptimState<T> OptimState<T>::init(const std::vector<Parameter<T>*>& params, double lr, double momentum,
                                  double weight_decay) {
  if (lr < 0 || momentum < 0 || momentum >= 1 || weight_decay < 0) {
    throw ConfigError("optimizer: need lr >= 0, 0 <= momentum < 1, weight_decay >= 0");
  }
  OptimState s;
  s.lr = lr;
  s.momentum = momentum;
  s.weight_decay = weight_decay;
  for (auto* p : params) s.velocity.emplace_back(p->value.shape());
  return s;
}

template <typename T>
void OptimState<T>::step(const std::vector<Parameter<T>*>& params) {
  if (params.size() != velocity.size()) throw ContractError("optimizer: parameter list changed");
  const T lr_t = static_cast<T>(lr), mu = static_cast<T>(momentum), wd = static_cast<T>(weight_decay);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = *params[i];
    if (p.value.shape() != velocity[i].shape()) {
      throw ContractError("optimizer: shape of " + p.name + " changed");
    }
    T* w = p.value.ptr();
    const T* g = p.grad.ptr();
    T* v = velocity[i].ptr();
    for (std::int64_t k = 0; k < p.value.numel(); ++k) {
      v[k] = mu * v[k] + (g[k] + wd * w[k]);
      w[k] -= lr_t * v[k];
    }
  }
  ++steps;
}

double scheduled_lr(double base_lr, std::int64_t epoch, std::int64_t epochs) {
  const std::int64_t decay_at = (2 * epochs + 2) / 3;
  return epoch >= decay_at ? base_lr * 0.1 : base_lr;
}

namespace {

template <typename T>
struct BatchResult {
  T task = 0, cons = 0;
  bool has_triplets = false;
  std::int64_t correct = 0;
};

template <typename T>
std::int64_t count_correct(const Tensor<T>& logits, std::span<const std::int64_t> labels) {
  const std::int64_t b = logits.dim(0), k = logits.dim(1);
  std::int64_t correct = 0;
  for (std::int64_t i = 0; i < b; ++i) {
    const T* row = logits.ptr() + i * k;
    if (std::max_element(row, row + k) - row == labels[i]) ++correct;
  }
  return correct;
}

// Forward (and optionally backward) of one batch.
template <typename T>
BatchResult<T> run_batch(Model<T>& model, const Dataset& data, std::span<const std::int64_t> idx,
                         const TrainOptions& opt, std::uint64_t batch_seed, bool training) {
  std::vector<std::int64_t> labels(idx.size());
  for (std::size_t i = 0; i < idx.size(); ++i) labels[i] = data.labels[idx[i]];
  Rng rng(batch_seed);
  std::vector<std::uint8_t> flips;
  if (training && opt.hflip) {
    std::bernoulli_distribution coin(0.5);
    for (std::size_t i = 0; i < idx.size(); ++i) flips.push_back(coin(rng) ? 1 : 0);
  }
  Tape<T> tape;
  auto out = model.forward(tape, data.batch<T>(idx, flips), training);
  Var<T> task = cross_entropy(out.logits, labels);
  BatchResult<T> r;
  r.task = task.value().item();
  r.correct = count_correct(out.logits.value(), labels);

  const auto triplets = mine_triplets(labels, rng);
  Var<T> loss = task;
  if (!triplets.empty()) {
    std::vector<std::int64_t> a, p, n;
    for (const auto& t : triplets) {
      a.push_back(t.anchor);
      p.push_back(t.positive);
      n.push_back(t.negative);
    }
    Var<T> cons = consistency_triplet_loss(index_select(out.warped, a), index_select(out.warped, p),
                                           index_select(out.warped, n), static_cast<T>(opt.alpha));
    r.cons = cons.value().item();
    r.has_triplets = true;
    if (training && model.has_warp() && opt.lambda > 0) {
      loss = total_loss(task, cons, static_cast<T>(opt.lambda));
    }
  }
  if (training) {
    if (!std::isfinite(static_cast<double>(loss.value().item()))) {
      throw NumericError("non-finite training loss (batch seed " + hex64(batch_seed) + ")");
    }
    for (auto* prm : model.parameters()) prm->zero_grad();
    tape.backward(loss);
  }
  return r;
}

template <typename T>
void accumulate(EpochMetrics& m, const BatchResult<T>& r, std::size_t batch) {
  m.task_loss += static_cast<double>(r.task) * static_cast<double>(batch);
  m.samples += static_cast<std::int64_t>(batch);
  m.accuracy += static_cast<double>(r.correct);
  ++m.batches;
  if (r.has_triplets) {
    m.cons_loss += static_cast<double>(r.cons);
  } else {
    ++m.batches_without_triplets;
  }
}

void finish(EpochMetrics& m) {
  if (m.samples > 0) {
    m.task_loss /= static_cast<double>(m.samples);
    m.accuracy /= static_cast<double>(m.samples);
  }
  const std::int64_t with = m.batches - m.batches_without_triplets;
  if (with > 0) m.cons_loss /= static_cast<double>(with);
}

void check_batch_size(const TrainOptions& opt) {
  if (opt.batch_size < 1) throw ConfigError("training: batch_size must be >= 1");
}

}  // namespace

template <typename T>
EpochMetrics train_epoch(Model<T>& model, const Dataset& data, OptimState<T>& optim, const TrainOptions& opt,
                         std::uint64_t epoch_seed) {
  check_batch_size(opt);
  if (data.size() == 0) throw DataError("train_epoch: empty dataset");
  std::vector<std::int64_t> order(static_cast<std::size_t>(data.size()));
  std::iota(order.begin(), order.end(), 0);
  Rng shuffle(mix_seed(epoch_seed));
  std::shuffle(order.begin(), order.end(), shuffle);

  EpochMetrics m;
  const auto params = model.parameters();
  for (std::int64_t start = 0, bi = 0; start < data.size(); start += opt.batch_size, ++bi) {
    const std::int64_t end = std::min(data.size(), start + opt.batch_size);
    std::span<const std::int64_t> idx(order.data() + start, static_cast<std::size_t>(end - start));
    const std::uint64_t seed = mix_seed(epoch_seed, static_cast<std::uint64_t>(bi));
    const auto r = run_batch(model, data, idx, opt, seed, true);
    optim.step(params);
    accumulate(m, r, idx.size());
  }
  finish(m);
  return m;
}

template <typename T>
EpochMetrics evaluate(Model<T>& model, const Dataset& data, const TrainOptions& opt, std::uint64_t seed) {
  check_batch_size(opt);
  EpochMetrics m;
  std::vector<std::int64_t> order(static_cast<std::size_t>(data.size()));
  std::iota(order.begin(), order.end(), 0);
  for (std::int64_t start = 0, bi = 0; start < data.size(); start += opt.batch_size, ++bi) {
    const std::int64_t end = std::min(data.size(), start + opt.batch_size);
    std::span<const std::int64_t> idx(order.data() + start, static_cast<std::size_t>(end - start));
    const auto r = run_batch(model, data, idx, opt, mix_seed(seed, static_cast<std::uint64_t>(bi)), false);
    accumulate(m, r, idx.size());
  }
  finish(m);
  return m;
}

template <typename T>
std::vector<std::vector<double>> warped_features(Model<T>& model, const Dataset& data, std::int64_t batch_size) {
  if (batch_size < 1) throw ConfigError("warped_features: batch_size must be >= 1");
  std::vector<std::vector<double>> rows;
  std::vector<std::int64_t> order(static_cast<std::size_t>(data.size()));
  std::iota(order.begin(), order.end(), 0);
  for (std::int64_t start = 0; start < data.size(); start += batch_size) {
    const std::int64_t end = std::min(data.size(), start + batch_size);
    std::span<const std::int64_t> idx(order.data() + start, static_cast<std::size_t>(end - start));
    Tape<T> tape;
    auto out = model.forward(tape, data.batch<T>(idx), false);
    const auto& v = out.warped.value();
    const std::int64_t row = v.numel() / v.dim(0);
    for (std::int64_t i = 0; i < v.dim(0); ++i) {
      rows.emplace_back(v.ptr() + i * row, v.ptr() + (i + 1) * row);
    }
  }
  return rows;
}

double mean_intra_class_distance(const std::vector<std::vector<double>>& features,
                                 const std::vector<std::int64_t>& labels) {
  if (features.size() != labels.size()) throw DimensionError("intra-class distance: size mismatch");
  double total = 0;
  std::int64_t pairs = 0;
  for (std::size_t a = 0; a < features.size(); ++a) {
    for (std::size_t b = a + 1; b < features.size(); ++b) {
      if (labels[a] != labels[b]) continue;
      double d = 0;
      for (std::size_t k = 0; k < features[a].size(); ++k) {
        const double e = features[a][k] - features[b][k];
        d += e * e;
      }
      total += std::sqrt(d);
      ++pairs;
    }
  }
  if (pairs == 0) throw DataError("intra-class distance: no same-class pairs");
  return total / static_cast<double>(pairs);
}

#define VTN_INSTANTIATE_TRAINING(T)                                                                  \
  template struct OptimState<T>;                                                                     \
  template EpochMetrics train_epoch(Model<T>&, const Dataset&, OptimState<T>&, const TrainOptions&,  \
                                    std::uint64_t);                                                  \
  template EpochMetrics evaluate(Model<T>&, const Dataset&, const TrainOptions&, std::uint64_t);     \
  template std::vector<std::vector<double>> warped_features(Model<T>&, const Dataset&, std::int64_t);

VTN_INSTANTIATE_TRAINING(float)
VTN_INSTANTIATE_TRAINING(double)

}  // namespace vtn
