#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <string>
#include <vector>

#include "ntkprune/data.hpp"
#include "ntkprune/nn.hpp"
#include "ntkprune/rng.hpp"
#include "ntkprune/tape.hpp"
#include "ntkprune/train.hpp"
#include "oracles.hpp"

using namespace ntkprune;

namespace {

Dataset xor_dataset() {
  Dataset d;
  d.inputs = Tensor({4, 2}, {-1, -1, -1, 1, 1, -1, 1, 1});
  d.labels = {0, 1, 1, 0};
  d.classes = 2;
  d.split = "train";
  return d;
}

// Plain SGD without any of the masking machinery, for the density-1
// equivalence check. Mirrors the documented update order: lr drop, then
// shuffle (cumulative across epochs), then per batch v = mu*v + g and
// theta -= lr*v, with weight decay on weights only.
void plain_sgd(MaskedNetwork& net, const Dataset& train,
               const TrainConfig& cfg) {
  std::vector<Tensor> vel_w(net.params.size()), vel_b(net.params.size());
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

    for (std::size_t begin = 0; begin < order.size();
         begin += cfg.batch_size) {
      const std::size_t count = std::min(cfg.batch_size, order.size() - begin);
      Tensor bx({count, features});
      std::vector<int> by(count);
      for (std::size_t i = 0; i < count; ++i) {
        const std::size_t src = order[begin + i];
        by[i] = train.labels[src];
        std::copy(train.inputs.data() + src * features,
                  train.inputs.data() + (src + 1) * features,
                  bx.data() + i * features);
      }

      // Hand-built graph for an MLP: leaf weights straight onto the tape.
      Tape tape;
      NodeId cur = tape.constant(bx);
      std::vector<NodeId> wn, bn;
      for (std::size_t li = 0; li < net.params.size(); ++li) {
        wn.push_back(tape.leaf(net.params[li].weight));
        bn.push_back(tape.leaf(net.params[li].bias));
        cur = tape.linear(cur, wn[li], bn[li]);
        if (li + 1 < net.params.size()) cur = tape.relu(cur);
      }
      const NodeId loss = cfg.loss == LossKind::cross_entropy
                              ? tape.softmax_cross_entropy(cur, by)
                              : tape.squared_error(cur, by);
      REQUIRE(std::isfinite(tape.value(loss)[0]));
      tape.backward(loss);

      for (std::size_t li = 0; li < net.params.size(); ++li) {
        ParamLayer& p = net.params[li];
        const Tensor& gw = tape.grad(wn[li]);
        for (std::size_t i = 0; i < p.weight.size(); ++i) {
          const double g = gw[i] + cfg.weight_decay * p.weight[i];
          vel_w[li][i] = cfg.momentum * vel_w[li][i] + g;
          p.weight[i] -= lr * vel_w[li][i];
        }
        const Tensor& gb = tape.grad(bn[li]);
        for (std::size_t i = 0; i < p.bias.size(); ++i) {
          vel_b[li][i] = cfg.momentum * vel_b[li][i] + gb[i];
          p.bias[i] -= lr * vel_b[li][i];
        }
      }
    }
  }
}

std::vector<double> all_biases(const MaskedNetwork& net) {
  std::vector<double> out;
  for (const ParamLayer& p : net.params) {
    out.insert(out.end(), p.bias.values().begin(), p.bias.values().end());
  }
  return out;
}

}  // namespace

TEST_CASE("a dense relu net learns xor to perfect training accuracy") {
  MaskedNetwork net = build_network(mlp_architecture(2, {8}, 2), 1);
  const Dataset d = xor_dataset();
  TrainConfig cfg;
  cfg.epochs = 2000;
  cfg.batch_size = 4;
  cfg.lr = 0.1;
  cfg.momentum = 0.9;
  cfg.seed = 1;
  const TrainHistory h = sgd_train(net, d, d, cfg);
  REQUIRE_FALSE(h.aborted);
  REQUIRE(h.epochs.size() == 2000);
  CHECK(h.epochs.back().train_acc == 1.0);
  CHECK(h.epochs.back().train_loss < 0.05);
}

TEST_CASE("full-batch descent on squared error solves least squares") {
  const std::size_t n = 20;
  Dataset d;
  d.inputs = gaussian_batch({n, 2}, 71);
  for (std::size_t i = 0; i < n; ++i) {
    d.labels.push_back(static_cast<int>(i % 2));
  }
  d.classes = 2;
  d.split = "train";

  MaskedNetwork net = build_network(mlp_architecture(2, {}, 2), 4);
  TrainConfig cfg;
  cfg.epochs = 3000;
  cfg.batch_size = n;
  cfg.lr = 0.1;
  cfg.momentum = 0.9;
  cfg.loss = LossKind::squared_error;
  cfg.seed = 2;
  const TrainHistory h = sgd_train(net, d, d, cfg);
  REQUIRE_FALSE(h.aborted);

  // Per-logit normal equations over the design [x1, x2, 1].
  std::vector<double> X(n * 3);
  for (std::size_t i = 0; i < n; ++i) {
    X[i * 3 + 0] = d.inputs[i * 2];
    X[i * 3 + 1] = d.inputs[i * 2 + 1];
    X[i * 3 + 2] = 1.0;
  }
  for (std::size_t logit = 0; logit < 2; ++logit) {
    std::vector<double> y(n);
    for (std::size_t i = 0; i < n; ++i) {
      y[i] = d.labels[i] == static_cast<int>(logit) ? 1.0 : 0.0;
    }
    const std::vector<double> sol = oracles::least_squares(X, n, 3, y);
    const Tensor& w = net.params[0].weight;
    CHECK(std::abs(w[logit * 2 + 0] - sol[0]) < 1e-6);
    CHECK(std::abs(w[logit * 2 + 1] - sol[1]) < 1e-6);
    CHECK(std::abs(net.params[0].bias[logit] - sol[2]) < 1e-6);
  }
}

TEST_CASE("masked coordinates stay exactly zero through training") {
  const TrainTestSplit split = gen_blobs(2, 15, 5, 2, 0.3, 90);
  MaskedNetwork net = build_network(mlp_architecture(2, {6}, 2), 7);
  std::vector<double> mask(net.prunable_count(), 1.0);
  for (std::size_t i = 0; i < mask.size(); i += 2) mask[i] = 0.0;
  apply_mask_vector(net, mask);
  const double density_before = net.density();

  TrainConfig cfg;
  cfg.epochs = 1;
  cfg.batch_size = 5;
  cfg.lr = 0.05;
  cfg.momentum = 0.9;
  cfg.weight_decay = 1e-3;
  cfg.seed = 3;
  for (int run = 0; run < 3; ++run) {
    const TrainHistory h = sgd_train(net, split.train, split.test, cfg);
    REQUIRE_FALSE(h.aborted);
    const std::vector<double> w = flatten_weights(net);
    for (std::size_t i = 0; i < mask.size(); ++i) {
      if (mask[i] == 0.0) CHECK(w[i] == 0.0);
    }
    CHECK(h.epochs.back().density == density_before);
  }

  cfg.epochs = 5;
  const TrainHistory h = sgd_train(net, split.train, split.test, cfg);
  for (const EpochRecord& rec : h.epochs) {
    CHECK(rec.density == density_before);
  }
  CHECK(net.density() == density_before);
}

TEST_CASE("training an all-ones mask equals plain sgd bit for bit") {
  const TrainTestSplit split = gen_blobs(3, 12, 4, 3, 0.3, 91);
  TrainConfig cfg;
  cfg.epochs = 4;
  cfg.batch_size = 7;  // last batch is partial: 36 = 5*7 + 1
  cfg.lr = 0.05;
  cfg.momentum = 0.9;
  cfg.lr_drop_epochs = {3};
  cfg.lr_drop_factor = 0.5;
  cfg.weight_decay = 1e-3;
  cfg.seed = 8;

  MaskedNetwork masked = build_network(mlp_architecture(3, {5}, 3), 10);
  MaskedNetwork plain = masked;
  const TrainHistory h = sgd_train(masked, split.train, split.test, cfg);
  REQUIRE_FALSE(h.aborted);
  plain_sgd(plain, split.train, cfg);

  CHECK(flatten_weights(masked) == flatten_weights(plain));
  CHECK(all_biases(masked) == all_biases(plain));
}

TEST_CASE("learning rate drops by the configured factor at the given epochs") {
  const TrainTestSplit split = gen_blobs(2, 10, 0, 2, 0.3, 92);
  MaskedNetwork net = build_network(mlp_architecture(2, {4}, 2), 11);
  TrainConfig cfg;
  cfg.epochs = 5;
  cfg.batch_size = 10;
  cfg.lr = 0.1;
  cfg.lr_drop_epochs = {2, 4};
  cfg.lr_drop_factor = 0.5;
  cfg.seed = 4;
  const TrainHistory h = sgd_train(net, split.train, split.train, cfg);
  REQUIRE(h.epochs.size() == 5);
  CHECK(h.epochs[0].lr == 0.1);
  CHECK(h.epochs[1].lr == 0.05);
  CHECK(h.epochs[2].lr == 0.05);
  CHECK(h.epochs[3].lr == 0.025);
  CHECK(h.epochs[4].lr == 0.025);
}

TEST_CASE("evaluate scores a constant network at exactly chance") {
  const TrainTestSplit split = gen_blobs(3, 10, 0, 2, 0.3, 93);
  MaskedNetwork net = build_network(mlp_architecture(2, {}, 3), 12);
  net.params[0].weight.fill(0.0);
  const EvalResult r = evaluate(net, split.train);
  // Equal logits everywhere: argmax resolves to class 0, which holds
  // exactly a third of the class-major dataset.
  CHECK(r.accuracy == 10.0 / 30.0);
  CHECK(r.loss == doctest::Approx(std::log(3.0)).epsilon(1e-12));
}

TEST_CASE("evaluate rejects an empty dataset") {
  MaskedNetwork net = build_network(mlp_architecture(2, {}, 3), 13);
  Dataset empty;
  empty.inputs = Tensor({0, 2});
  empty.classes = 3;
  CHECK_THROWS_AS(evaluate(net, empty), ShapeError);
}

TEST_CASE("diverging training aborts with a partial history") {
  const TrainTestSplit split = gen_blobs(2, 15, 0, 2, 0.3, 94);
  MaskedNetwork net = build_network(mlp_architecture(2, {8}, 2), 14);
  TrainConfig cfg;
  cfg.epochs = 50;
  cfg.batch_size = 8;
  cfg.lr = 1e30;
  cfg.momentum = 0.0;
  cfg.seed = 5;
  const TrainHistory h = sgd_train(net, split.train, split.train, cfg);
  CHECK(h.aborted);
  CHECK(h.abort_reason.rfind("epoch ", 0) == 0);
  CHECK(h.epochs.size() < 50);
}

TEST_CASE("history csv carries the epoch schema") {
  const TrainTestSplit split = gen_blobs(2, 10, 5, 2, 0.3, 95);
  MaskedNetwork net = build_network(mlp_architecture(2, {4}, 2), 15);
  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.batch_size = 5;
  cfg.lr = 0.1;
  cfg.seed = 6;
  const TrainHistory h = sgd_train(net, split.train, split.test, cfg);
  const std::string path =
      (std::filesystem::temp_directory_path() / "ntkprune_hist_test.csv")
          .string();
  write_history_csv(h, path);

  std::ifstream in(path);
  REQUIRE(in.good());
  std::string line;
  REQUIRE(std::getline(in, line));
  CHECK(line == "epoch,train_loss,train_acc,test_acc,lr,density");
  std::size_t rows = 0;
  while (std::getline(in, line)) {
    ++rows;
    CHECK(line.rfind(std::to_string(rows) + ",", 0) == 0);
    // %.17g round-trips: parsing the lr field back must give the stored value.
    std::size_t pos = 0;
    for (int i = 0; i < 4; ++i) pos = line.find(',', pos) + 1;
    const double lr = std::stod(line.substr(pos));
    CHECK(lr == h.epochs[rows - 1].lr);
  }
  CHECK(rows == 3);
  std::filesystem::remove(path);
}

TEST_CASE("train config validation rejects out-of-range settings") {
  TrainConfig cfg;
  cfg.epochs = 0;
  CHECK_THROWS_AS(cfg.validate(), NumericError);
  cfg.epochs = 1;
  cfg.batch_size = 0;
  CHECK_THROWS_AS(cfg.validate(), NumericError);
  cfg.batch_size = 8;
  cfg.lr = 0.0;
  CHECK_THROWS_AS(cfg.validate(), NumericError);
  cfg.lr = 0.1;
  cfg.momentum = 1.0;
  CHECK_THROWS_AS(cfg.validate(), NumericError);
  cfg.momentum = -0.1;
  CHECK_THROWS_AS(cfg.validate(), NumericError);
  cfg.momentum = 0.9;
  cfg.lr_drop_factor = 0.0;
  CHECK_THROWS_AS(cfg.validate(), NumericError);
  cfg.lr_drop_factor = 1.5;
  CHECK_THROWS_AS(cfg.validate(), NumericError);
  cfg.lr_drop_factor = 0.1;
  cfg.weight_decay = -1.0;
  CHECK_THROWS_AS(cfg.validate(), NumericError);
  cfg.weight_decay = 0.0;
  CHECK_NOTHROW(cfg.validate());
}

TEST_CASE("a fully masked layer is flagged at the start of training") {
  const TrainTestSplit split = gen_blobs(2, 10, 0, 2, 0.3, 96);
  MaskedNetwork net = build_network(mlp_architecture(2, {4, 4}, 2), 16);
  std::vector<double> mask = flatten_masks(net);
  // Second hidden layer occupies flat indices 8..23 in [2->4->4->2].
  for (std::size_t i = 8; i < 24; ++i) mask[i] = 0.0;
  apply_mask_vector(net, mask);

  TrainConfig cfg;
  cfg.epochs = 1;
  cfg.batch_size = 10;
  cfg.lr = 0.01;
  cfg.seed = 7;
  const TrainHistory h = sgd_train(net, split.train, split.train, cfg);
  CHECK(h.collapsed_at_start);

  MaskedNetwork healthy = build_network(mlp_architecture(2, {4, 4}, 2), 17);
  const TrainHistory h2 = sgd_train(healthy, split.train, split.train, cfg);
  CHECK_FALSE(h2.collapsed_at_start);

  MaskedNetwork dead = build_network(mlp_architecture(2, {4}, 2), 18);
  apply_mask_vector(dead, std::vector<double>(dead.prunable_count(), 0.0));
  CHECK_THROWS_AS(sgd_train(dead, split.train, split.train, cfg),
                  NumericError);
}
