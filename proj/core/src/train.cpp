#include "ntkprune/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

namespace ntkprune {

void TrainConfig::validate() const {
  if (epochs == 0) throw NumericError("train config: epochs must be > 0");
  if (batch_size == 0) {
    throw NumericError("train config: batch_size must be > 0");
  }
  if (!(lr > 0.0)) throw NumericError("train config: lr must be positive");
  if (momentum < 0.0 || momentum >= 1.0) {
    throw NumericError("train config: momentum must be in [0,1)");
  }
  if (!(lr_drop_factor > 0.0) || lr_drop_factor > 1.0) {
    throw NumericError("train config: lr_drop_factor must be in (0,1]");
  }
  if (weight_decay < 0.0) {
    throw NumericError("train config: weight_decay must be >= 0");
  }
}

EvalResult evaluate(const MaskedNetwork& net, const Dataset& data) {
  if (data.size() == 0) throw ShapeError("evaluate: empty dataset");
  constexpr std::size_t kChunk = 256;
  double loss_sum = 0.0;
  std::size_t correct = 0;
  for (std::size_t begin = 0; begin < data.size(); begin += kChunk) {
    const std::size_t count = std::min(kChunk, data.size() - begin);
    const Batch b = take_batch(data, begin, count);
    Tape tape;
    const ForwardResult fwd = forward_masked(net, tape, b.inputs);
    const Tensor& out = tape.value(fwd.output);
    const std::size_t k = out.extent(1);
    for (std::size_t i = 0; i < count; ++i) {
      const double* row = out.data() + i * k;
      double m = row[0];
      std::size_t arg = 0;
      for (std::size_t j = 1; j < k; ++j) {
        if (row[j] > m) {
          m = row[j];
          arg = j;
        }
      }
      if (arg == static_cast<std::size_t>(b.labels[i])) ++correct;
      double denom = 0.0;
      for (std::size_t j = 0; j < k; ++j) denom += std::exp(row[j] - m);
      loss_sum += m + std::log(denom) - row[b.labels[i]];
    }
  }
  EvalResult res;
  res.loss = loss_sum / static_cast<double>(data.size());
  res.accuracy = static_cast<double>(correct) / static_cast<double>(data.size());
  return res;
}

TrainHistory sgd_train(MaskedNetwork& net, const Dataset& train,
                       const Dataset& test, const TrainConfig& cfg) {
  cfg.validate();
  if (train.size() == 0) throw ShapeError("sgd_train: empty training set");
  TrainHistory history;

  if (net.active_count() == 0) {
    throw NumericError("sgd_train: mask density is zero");
  }
  history.collapsed_at_start = layer_collapse_report(net).collapsed;

  // Project weights so masked coordinates start (and stay) exactly zero.
  for (ParamLayer& p : net.params) {
    for (std::size_t i = 0; i < p.weight.size(); ++i) {
      if (p.mask[i] == 0.0) p.weight[i] = 0.0;
    }
  }

  std::vector<Tensor> vel_w(net.params.size());
  std::vector<Tensor> vel_b(net.params.size());
  for (std::size_t li = 0; li < net.params.size(); ++li) {
    vel_w[li] = Tensor(net.params[li].weight.shape());
    vel_b[li] = Tensor(net.params[li].bias.shape());
  }

  const Rng base(cfg.seed);
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  const std::size_t features = shape_size(train.sample_shape());
  double lr = cfg.lr;

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    if (std::find(cfg.lr_drop_epochs.begin(), cfg.lr_drop_epochs.end(),
                  epoch) != cfg.lr_drop_epochs.end()) {
      lr *= cfg.lr_drop_factor;
    }
    Rng shuffle_rng = base.fork(streams::train_shuffle, epoch);
    shuffle_rng.shuffle(order);

    bool failed = false;
    std::string fail_reason;
    for (std::size_t begin = 0; begin < order.size() && !failed;
         begin += cfg.batch_size) {
      const std::size_t count = std::min(cfg.batch_size, order.size() - begin);
      Shape bshape = train.inputs.shape();
      bshape[0] = count;
      Tensor bx(bshape);
      std::vector<int> by(count);
      for (std::size_t i = 0; i < count; ++i) {
        const std::size_t src = order[begin + i];
        by[i] = train.labels[src];
        std::copy(train.inputs.data() + src * features,
                  train.inputs.data() + (src + 1) * features,
                  bx.data() + i * features);
      }
      try {
        Tape tape;
        const ForwardResult fwd = forward_masked(net, tape, bx);
        const NodeId loss = cfg.loss == LossKind::cross_entropy
                                ? tape.softmax_cross_entropy(fwd.output, by)
                                : tape.squared_error(fwd.output, by);
        if (!std::isfinite(tape.value(loss)[0])) {
          throw NumericError("sgd_train: non-finite loss");
        }
        tape.backward(loss);
        for (std::size_t li = 0; li < net.params.size(); ++li) {
          ParamLayer& p = net.params[li];
          const Tensor& gw = tape.grad(fwd.weight_nodes[li]);
          for (std::size_t i = 0; i < p.weight.size(); ++i) {
            if (p.mask[i] == 0.0) continue;
            const double g = gw[i] + cfg.weight_decay * p.weight[i];
            vel_w[li][i] = cfg.momentum * vel_w[li][i] + g;
            p.weight[i] -= lr * vel_w[li][i];
          }
          const Tensor& gb = tape.grad(fwd.bias_nodes[li]);
          for (std::size_t i = 0; i < p.bias.size(); ++i) {
            vel_b[li][i] = cfg.momentum * vel_b[li][i] + gb[i];
            p.bias[i] -= lr * vel_b[li][i];
          }
        }
      } catch (const NumericError& e) {
        failed = true;
        fail_reason = e.what();
      }
    }
    if (failed) {
      history.aborted = true;
      history.abort_reason =
          "epoch " + std::to_string(epoch) + ": " + fail_reason;
      return history;
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.lr = lr;
    rec.density = net.density();
    try {
      const EvalResult on_train = evaluate(net, train);
      rec.train_loss = on_train.loss;
      rec.train_acc = on_train.accuracy;
      rec.test_acc = test.size() > 0 ? evaluate(net, test).accuracy : 0.0;
    } catch (const NumericError& e) {
      history.aborted = true;
      history.abort_reason =
          "epoch " + std::to_string(epoch) + " evaluation: " + e.what();
      return history;
    }
    history.epochs.push_back(rec);
  }
  return history;
}

void write_history_csv(const TrainHistory& history, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("history csv: cannot open " + path);
  out << "epoch,train_loss,train_acc,test_acc,lr,density\n";
  char buf[32];
  for (const EpochRecord& r : history.epochs) {
    out << r.epoch;
    for (double v : {r.train_loss, r.train_acc, r.test_acc, r.lr, r.density}) {
      std::snprintf(buf, sizeof(buf), "%.17g", v);
      out << ',' << buf;
    }
    out << "\n";
  }
  if (!out) throw IoError("history csv: write failed for " + path);
}

}  // namespace ntkprune
