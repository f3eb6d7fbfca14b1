#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ntkprune/data.hpp"
#include "ntkprune/nn.hpp"
#include "ntkprune/prune.hpp"

namespace ntkprune {

struct TrainConfig {
  std::size_t epochs = 10;
  std::size_t batch_size = 32;
  double lr = 0.1;
  double momentum = 0.9;
  std::vector<std::size_t> lr_drop_epochs;  // lr *= lr_drop_factor entering these
  double lr_drop_factor = 0.1;
  double weight_decay = 0.0;  // applied to active weights only, not biases
  LossKind loss = LossKind::cross_entropy;
  std::uint64_t seed = 0;

  void validate() const;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double train_acc = 0.0;
  double test_acc = 0.0;
  double lr = 0.0;
  double density = 0.0;
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
  bool collapsed_at_start = false;
  bool aborted = false;
  std::string abort_reason;
};

// SGD with classical momentum (v = mu*v + g; theta -= lr*v). Gradients and
// velocities are projected by the mask every step, so masked coordinates
// stay exactly zero. Shuffling is a seeded Fisher-Yates per epoch; batches
// are consecutive chunks of the shuffled order, last partial chunk included.
// Metrics are full-dataset evaluations at the end of each epoch. A non-finite
// loss aborts and returns the partial history with `aborted` set.
TrainHistory sgd_train(MaskedNetwork& net, const Dataset& train,
                       const Dataset& test, const TrainConfig& cfg);

struct EvalResult {
  double loss = 0.0;      // mean cross-entropy
  double accuracy = 0.0;  // top-1, argmax ties resolved to the lowest index
};

EvalResult evaluate(const MaskedNetwork& net, const Dataset& data);

// CSV schema: epoch,train_loss,train_acc,test_acc,lr,density
void write_history_csv(const TrainHistory& history, const std::string& path);

}  // namespace ntkprune
