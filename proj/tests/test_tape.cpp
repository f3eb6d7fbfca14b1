#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <functional>
#include <vector>

#include "ntkprune/rng.hpp"
#include "ntkprune/tape.hpp"
#include "oracles.hpp"

using namespace ntkprune;

namespace {

using Builder = std::function<NodeId(Tape&, const std::vector<NodeId>&)>;

double run_scalar(const Builder& build, const std::vector<Tensor>& inputs) {
  Tape tape;
  std::vector<NodeId> ids;
  for (const auto& in : inputs) ids.push_back(tape.leaf(in));
  return tape.value(build(tape, ids))[0];
}

// Compares every analytic input gradient against a central difference of the
// rebuilt graph. Returns the worst relative error over all coordinates.
double gradcheck(const Builder& build, std::vector<Tensor> inputs,
                 double h = 1e-6) {
  Tape tape;
  std::vector<NodeId> ids;
  for (const auto& in : inputs) ids.push_back(tape.leaf(in));
  tape.backward(build(tape, ids));
  double worst = 0.0;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    const Tensor& g = tape.grad(ids[k]);
    for (std::size_t i = 0; i < inputs[k].size(); ++i) {
      const double keep = inputs[k][i];
      inputs[k][i] = keep + h;
      const double fp = run_scalar(build, inputs);
      inputs[k][i] = keep - h;
      const double fm = run_scalar(build, inputs);
      inputs[k][i] = keep;
      const double fd = (fp - fm) / (2.0 * h);
      worst = std::max(worst, oracles::rel_err(g[i], fd));
    }
  }
  return worst;
}

// Values bounded away from zero so ReLU and abs kinks are never straddled.
Tensor smooth_random(const Shape& shape, Rng& rng) {
  Tensor t(shape);
  for (std::size_t i = 0; i < t.size(); ++i) {
    const double v = rng.normal();
    t[i] = v + (v >= 0.0 ? 0.25 : -0.25);
  }
  return t;
}

constexpr double kTol = 1e-5;

}  // namespace

TEST_CASE("matmul gradient matches finite differences") {
  Rng rng(11);
  const auto build = [](Tape& t, const std::vector<NodeId>& in) {
    return t.sq_l2_norm(t.matmul(in[0], in[1]));
  };
  CHECK(gradcheck(build, {smooth_random({2, 3}, rng),
                          smooth_random({3, 4}, rng)}) < kTol);
}

TEST_CASE("linear gradient matches finite differences") {
  Rng rng(12);
  const auto build = [](Tape& t, const std::vector<NodeId>& in) {
    return t.sq_l2_norm(t.linear(in[0], in[1], in[2]));
  };
  CHECK(gradcheck(build, {smooth_random({4, 3}, rng),
                          smooth_random({2, 3}, rng),
                          smooth_random({2}, rng)}) < kTol);
}

TEST_CASE("elementwise add, sub, mul gradients match finite differences") {
  Rng rng(13);
  const auto build = [](Tape& t, const std::vector<NodeId>& in) {
    return t.sum(t.mul(t.add(in[0], in[1]), t.sub(in[0], in[2])));
  };
  CHECK(gradcheck(build, {smooth_random({3, 3}, rng),
                          smooth_random({3, 3}, rng),
                          smooth_random({3, 3}, rng)}) < kTol);
}

TEST_CASE("relu gradient matches finite differences away from the kink") {
  Rng rng(14);
  const auto build = [](Tape& t, const std::vector<NodeId>& in) {
    return t.sum(t.relu(in[0]));
  };
  CHECK(gradcheck(build, {smooth_random({4, 5}, rng)}) < kTol);
}

TEST_CASE("relu and abs take subgradient zero exactly at zero") {
  Tape tape;
  const NodeId x = tape.leaf(Tensor({3}, {0.0, -2.0, 2.0}));
  const NodeId y = tape.leaf(Tensor({3}, {0.0, -1.0, 3.0}));
  tape.backward(tape.sum(tape.add(tape.relu(x), tape.abs(y))));
  CHECK(tape.grad(x).values() == std::vector<double>{0.0, 0.0, 1.0});
  CHECK(tape.grad(y).values() == std::vector<double>{0.0, -1.0, 1.0});
}

TEST_CASE("abs, scale, sum, sq_l2_norm gradients match finite differences") {
  Rng rng(15);
  const auto build = [](Tape& t, const std::vector<NodeId>& in) {
    return t.add(t.sum(t.abs(t.scale(in[0], -1.7))),
                 t.sq_l2_norm(in[0]));
  };
  CHECK(gradcheck(build, {smooth_random({2, 4}, rng)}) < kTol);
}

TEST_CASE("conv2d with channel bias matches finite differences") {
  Rng rng(16);
  const auto build = [](Tape& t, const std::vector<NodeId>& in) {
    return t.sq_l2_norm(t.channel_bias(t.conv2d(in[0], in[1], 1), in[2]));
  };
  CHECK(gradcheck(build, {smooth_random({2, 2, 4, 4}, rng),
                          smooth_random({3, 2, 3, 3}, rng),
                          smooth_random({3}, rng)}) < kTol);
}

TEST_CASE("conv2d without padding matches finite differences") {
  Rng rng(17);
  const auto build = [](Tape& t, const std::vector<NodeId>& in) {
    return t.sq_l2_norm(t.conv2d(in[0], in[1], 0));
  };
  CHECK(gradcheck(build, {smooth_random({1, 1, 5, 5}, rng),
                          smooth_random({2, 1, 3, 3}, rng)}) < kTol);
}

TEST_CASE("reshape is gradient-transparent") {
  Rng rng(18);
  const auto build = [](Tape& t, const std::vector<NodeId>& in) {
    return t.sq_l2_norm(t.reshape(in[0], {2, 6}));
  };
  CHECK(gradcheck(build, {smooth_random({2, 3, 2}, rng)}) < kTol);
}

TEST_CASE("softmax cross entropy gradient matches finite differences") {
  Rng rng(19);
  const std::vector<int> labels{0, 2, 1};
  const auto build = [&](Tape& t, const std::vector<NodeId>& in) {
    return t.softmax_cross_entropy(in[0], labels);
  };
  CHECK(gradcheck(build, {smooth_random({3, 4}, rng)}) < kTol);
}

TEST_CASE("softmax cross entropy is stable under large logit shifts") {
  Tape tape;
  const NodeId z =
      tape.leaf(Tensor({2, 3}, {1000.0, 1001.0, 999.0, -1000.0, -999.0,
                                -1002.0}));
  const NodeId loss = tape.softmax_cross_entropy(z, {1, 1});
  CHECK(std::isfinite(tape.value(loss)[0]));
  tape.backward(loss);
  for (double g : tape.grad(z).values()) CHECK(std::isfinite(g));
}

TEST_CASE("squared error gradient matches finite differences") {
  Rng rng(20);
  const std::vector<int> labels{2, 0};
  const auto build = [&](Tape& t, const std::vector<NodeId>& in) {
    return t.squared_error(in[0], labels);
  };
  CHECK(gradcheck(build, {smooth_random({2, 3}, rng)}) < kTol);
}

TEST_CASE("squared error value is half the mean distance to the one-hot") {
  Tape tape;
  const NodeId z = tape.leaf(Tensor({1, 2}, {0.25, -0.5}));
  const NodeId loss = tape.squared_error(z, {0});
  // 0.5 * ((0.25-1)^2 + 0.5^2)
  CHECK(tape.value(loss)[0] == doctest::Approx(0.5 * (0.5625 + 0.25)));
}

TEST_CASE("ten random composite graphs pass the gradient check") {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    Rng rng(seed);
    const std::size_t batch = 1 + rng.uniform_index(3);
    const std::size_t in_dim = 2 + rng.uniform_index(4);
    const std::size_t hidden = 2 + rng.uniform_index(5);
    const std::size_t out_dim = 2 + rng.uniform_index(3);
    std::vector<int> labels;
    for (std::size_t i = 0; i < batch; ++i) {
      labels.push_back(static_cast<int>(rng.uniform_index(out_dim)));
    }
    const bool use_ce = rng.uniform() < 0.5;
    const auto build = [&](Tape& t, const std::vector<NodeId>& in) {
      const NodeId h = t.relu(t.linear(in[0], in[1], in[2]));
      const NodeId z = t.linear(h, in[3], in[4]);
      return use_ce ? t.softmax_cross_entropy(z, labels)
                    : t.squared_error(z, labels);
    };
    const double err =
        gradcheck(build, {smooth_random({batch, in_dim}, rng),
                          smooth_random({hidden, in_dim}, rng),
                          smooth_random({hidden}, rng),
                          smooth_random({out_dim, hidden}, rng),
                          smooth_random({out_dim}, rng)});
    INFO("seed ", seed);
    CHECK(err < kTol);
  }
}

TEST_CASE("backward is repeatable on one tape") {
  Rng rng(21);
  Tape tape;
  const NodeId x = tape.leaf(smooth_random({3, 3}, rng));
  const NodeId y = tape.sq_l2_norm(tape.relu(x));
  tape.backward(y);
  const std::vector<double> first = tape.grad(x).values();
  tape.backward(y);
  CHECK(tape.grad(x).values() == first);
}

TEST_CASE("two independent outputs on one tape do not mix adjoints") {
  Tape tape;
  const NodeId x = tape.leaf(Tensor({2}, {1.0, 2.0}));
  const NodeId a = tape.sq_l2_norm(x);            // grad 2x
  const NodeId b = tape.sum(tape.scale(x, 3.0));  // grad 3
  tape.backward(a);
  CHECK(tape.grad(x).values() == std::vector<double>{2.0, 4.0});
  tape.backward(b);
  CHECK(tape.grad(x).values() == std::vector<double>{3.0, 3.0});
}

TEST_CASE("a leaf not reached by the output reports a zero gradient") {
  Tape tape;
  const NodeId used = tape.leaf(Tensor({2}, {1.0, 1.0}));
  const NodeId unused = tape.leaf(Tensor({2}, {5.0, 5.0}));
  tape.backward(tape.sum(used));
  CHECK(tape.grad(unused).values() == std::vector<double>{0.0, 0.0});
}

TEST_CASE("seeded backward extracts one row of the Jacobian") {
  Tape tape;
  const NodeId x = tape.leaf(Tensor({2, 2}, {1.0, 2.0, 3.0, 4.0}));
  const NodeId y = tape.scale(x, 2.0);
  Tensor seed({2, 2});
  seed[2] = 1.0;  // d y[1,0] / d x = 2 e_{1,0}
  tape.backward(y, seed);
  CHECK(tape.grad(x).values() == std::vector<double>{0.0, 0.0, 2.0, 0.0});
}

TEST_CASE("seeded backward rejects a seed of the wrong shape") {
  Tape tape;
  const NodeId x = tape.leaf(Tensor({2, 2}));
  CHECK_THROWS_AS(tape.backward(tape.scale(x, 1.0), Tensor({3})),
                  ShapeError);
}

TEST_CASE("backward without a seed requires a scalar output") {
  Tape tape;
  const NodeId x = tape.leaf(Tensor({2}, {1.0, 2.0}));
  CHECK_THROWS_AS(tape.backward(tape.scale(x, 1.0)), ShapeError);
}

TEST_CASE("linear graphs are exactly homogeneous") {
  Rng rng(22);
  const Tensor x = smooth_random({3, 4}, rng);
  const Tensor w = smooth_random({2, 4}, rng);
  const double alpha = 3.0;

  const auto eval = [&](const Tensor& in) {
    Tape t;
    const NodeId y =
        t.matmul(t.leaf(in), t.reshape(t.leaf(w), {4, 2}));
    return t.value(y);
  };
  Tensor scaled = x;
  for (std::size_t i = 0; i < scaled.size(); ++i) scaled[i] *= alpha;

  const Tensor fx = eval(x);
  const Tensor fax = eval(scaled);
  for (std::size_t i = 0; i < fx.size(); ++i) {
    CHECK(std::abs(fax[i] - alpha * fx[i]) <=
          1e-12 * std::max(1.0, std::abs(fx[i])));
  }
}

TEST_CASE("shape mismatches name both operands") {
  Tape tape;
  const NodeId a = tape.leaf(Tensor({2, 3}));
  const NodeId b = tape.leaf(Tensor({4, 2}));
  CHECK_THROWS_WITH_AS(tape.matmul(a, b),
                       "matmul: shape mismatch (2x3 vs 4x2)", ShapeError);
  CHECK_THROWS_AS(tape.add(a, b), ShapeError);
  CHECK_THROWS_AS(tape.linear(a, b, tape.leaf(Tensor({4}))), ShapeError);
}

TEST_CASE("reshape must preserve the element count") {
  Tape tape;
  const NodeId a = tape.leaf(Tensor({2, 3}));
  CHECK_THROWS_AS(tape.reshape(a, {7}), ShapeError);
}

TEST_CASE("non-finite forward values are rejected at the producing op") {
  Tape tape;
  const NodeId big = tape.leaf(Tensor::full({2}, 1e308));
  CHECK_THROWS_AS(tape.mul(big, big), NumericError);
}

TEST_CASE("gradients of constants are not exposed") {
  Tape tape;
  const NodeId c = tape.constant(Tensor({2}, {1.0, 2.0}));
  const NodeId x = tape.leaf(Tensor({2}, {3.0, 4.0}));
  tape.backward(tape.sum(tape.mul(c, x)));
  CHECK(tape.grad(x).values() == std::vector<double>{1.0, 2.0});
  CHECK_THROWS_AS(tape.grad(c), NumericError);
}
