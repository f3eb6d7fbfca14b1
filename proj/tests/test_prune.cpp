#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <limits>
#include <vector>

#include "ntkprune/data.hpp"
#include "ntkprune/nn.hpp"
#include "ntkprune/prune.hpp"
#include "ntkprune/rng.hpp"
#include "ntkprune/tape.hpp"
#include "oracles.hpp"

using namespace ntkprune;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

Batch labeled_batch(std::size_t n, std::size_t dim, std::size_t classes,
                    std::uint64_t seed) {
  Rng rng(seed);
  Batch b;
  b.inputs = Tensor({n, dim});
  for (std::size_t i = 0; i < b.inputs.size(); ++i) {
    b.inputs[i] = rng.normal();
  }
  for (std::size_t i = 0; i < n; ++i) {
    b.labels.push_back(static_cast<int>(rng.uniform_index(classes)));
  }
  return b;
}

// Mean loss over one batch as a function of the flat weight vector, with
// biases and masks held fixed. Drives the finite-difference oracles.
double loss_at(const MaskedNetwork& net, const Batch& batch,
               const std::vector<double>& flat_w, LossKind loss) {
  std::vector<Tensor> override_w;
  std::size_t off = 0;
  for (const ParamLayer& p : net.params) {
    Tensor w = p.weight;
    for (std::size_t i = 0; i < w.size(); ++i) w[i] = flat_w[off + i];
    off += w.size();
    override_w.push_back(w);
  }
  Tape tape;
  const ForwardResult f = forward_masked(net, tape, batch.inputs, &override_w);
  const NodeId l = loss == LossKind::cross_entropy
                       ? tape.softmax_cross_entropy(f.output, batch.labels)
                       : tape.squared_error(f.output, batch.labels);
  return tape.value(l)[0];
}

}  // namespace

TEST_CASE("keep schedule is the exponential interpolation") {
  CHECK(schedule_keep_fraction(0.36, 1, 2) == doctest::Approx(0.6));
  CHECK(schedule_keep_fraction(0.36, 2, 2) == doctest::Approx(0.36));
  CHECK(schedule_keep_fraction(1.0, 3, 7) == 1.0);
  CHECK(schedule_keep_fraction(0.5, 1, 1) == 0.5);
  CHECK_THROWS_AS(schedule_keep_fraction(0.5, 0, 2), NumericError);
  CHECK_THROWS_AS(schedule_keep_fraction(0.5, 3, 2), NumericError);
  CHECK_THROWS_AS(schedule_keep_fraction(0.0, 1, 1), NumericError);
}

TEST_CASE("threshold_update keeps the top-k by score") {
  const std::vector<double> mask(4, 1.0);
  double threshold = 0.0;
  const std::vector<double> next =
      threshold_update({5, 1, 3, 2}, mask, 0.5, &threshold);
  CHECK(next == std::vector<double>{1, 0, 1, 0});
  CHECK(threshold == 3.0);
}

TEST_CASE("threshold_update breaks ties toward the lower flat index") {
  const std::vector<double> mask(4, 1.0);
  CHECK(threshold_update({7, 7, 7, 7}, mask, 0.5) ==
        std::vector<double>{1, 1, 0, 0});
}

TEST_CASE("threshold_update counts k against all prunable weights") {
  // 6 weights, 4 still active; keep_fraction 0.5 keeps round(3) of them.
  const std::vector<double> mask{1, 0, 1, 1, 0, 1};
  const std::vector<double> next =
      threshold_update({9, 9, 4, 6, 9, 5}, mask, 0.5);
  CHECK(next == std::vector<double>{1, 0, 0, 1, 0, 1});
}

TEST_CASE("threshold_update never resurrects and can hit keep 1.0") {
  const std::vector<double> mask{1, 0, 1, 1};
  CHECK(threshold_update({1, 100, 2, 3}, mask, 0.75) ==
        std::vector<double>{1, 0, 1, 1});
  CHECK_THROWS_AS(threshold_update({1, 100, 2, 3}, mask, 1.0), NumericError);
}

TEST_CASE("threshold_update is invariant to positive score scaling") {
  Rng rng(5);
  std::vector<double> scores(40);
  for (auto& s : scores) s = rng.normal();
  std::vector<double> mask(40, 1.0);
  for (std::size_t i = 0; i < 40; i += 7) mask[i] = 0.0;
  std::vector<double> scaled = scores;
  for (std::size_t i = 0; i < scaled.size(); ++i) {
    scaled[i] = mask[i] == 0.0 ? -kInf : scaled[i] * 17.25;
  }
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (mask[i] == 0.0) scores[i] = -kInf;
  }
  CHECK(threshold_update(scores, mask, 0.4) ==
        threshold_update(scaled, mask, 0.4));
}

TEST_CASE("snip score matches the symbolic one-parameter oracle") {
  // f(x) = w*x, loss 0.5*(w*x - 1)^2, w=2, x=1: dL/dw = 1, score |1*2| = 2.
  MaskedNetwork net = build_network(mlp_architecture(1, {}, 1), 1);
  net.params[0].weight[0] = 2.0;
  net.params[0].bias[0] = 0.0;
  Batch b;
  b.inputs = Tensor({1, 1}, {1.0});
  b.labels = {0};
  const SaliencyVector s = score_snip(net, {b}, LossKind::squared_error);
  REQUIRE(s.size() == 1);
  CHECK(s[0] == doctest::Approx(2.0).epsilon(1e-12));
}

TEST_CASE("zero weights score zero under snip") {
  MaskedNetwork net = build_network(mlp_architecture(2, {3}, 2), 3);
  for (auto& p : net.params) p.weight.fill(0.0);
  const Batch b = labeled_batch(4, 2, 2, 9);
  for (double s : score_snip(net, {b})) CHECK(s == 0.0);
}

TEST_CASE("snip matches finite differences in a relaxed mask") {
  // dL/dm_j at m=1 equals g_j * theta_j; the score is its absolute value.
  MaskedNetwork net = build_network(mlp_architecture(3, {4}, 3), 11);
  const Batch b = labeled_batch(5, 3, 3, 12);
  const SaliencyVector s = score_snip(net, {b});
  const std::vector<double> theta = flatten_weights(net);

  const double h = 1e-5;
  double worst = 0.0;
  for (std::size_t j = 0; j < theta.size(); ++j) {
    // Relaxing m_j around 1 scales theta_j: theta_j * (1 +- h).
    std::vector<double> wp = theta, wm = theta;
    wp[j] = theta[j] * (1.0 + h);
    wm[j] = theta[j] * (1.0 - h);
    const double fd = (loss_at(net, b, wp, LossKind::cross_entropy) -
                       loss_at(net, b, wm, LossKind::cross_entropy)) /
                      (2.0 * h);
    worst = std::max(worst, oracles::rel_err(std::abs(fd), s[j]));
  }
  CHECK(worst < 1e-4);
}

TEST_CASE("snip weights batches by their sample counts") {
  MaskedNetwork net = build_network(mlp_architecture(2, {3}, 2), 21);
  Batch big = labeled_batch(6, 2, 2, 22);
  // Split the same samples 4 + 2; the mean gradient must match the one-shot.
  Batch first, second;
  first.inputs = Tensor({4, 2});
  second.inputs = Tensor({2, 2});
  for (std::size_t i = 0; i < 8; ++i) first.inputs[i] = big.inputs[i];
  for (std::size_t i = 0; i < 4; ++i) second.inputs[i] = big.inputs[8 + i];
  first.labels.assign(big.labels.begin(), big.labels.begin() + 4);
  second.labels.assign(big.labels.begin() + 4, big.labels.end());

  const SaliencyVector whole = score_snip(net, {big});
  const SaliencyVector split = score_snip(net, {first, second});
  CHECK(oracles::max_rel_err(whole, split) < 1e-12);
}

TEST_CASE("grasp reproduces the quadratic-loss oracle") {
  // L = 0.5 * theta' A theta, A = diag(2, 1), theta = (1, 1):
  // g = (2, 1), Hg = (4, 1), scores = -(Hg) * theta = (-4, -1).
  const std::vector<Tensor> theta{Tensor({2}, {1.0, 1.0})};
  const GradFn grad = [](const std::vector<Tensor>& t) {
    return std::vector<Tensor>{
        Tensor({2}, {2.0 * t[0][0], 1.0 * t[0][1]})};
  };
  const std::vector<Tensor> direction{Tensor({2}, {2.0, 1.0})};
  const double rho = 1e-3 / std::max(1.0, std::sqrt(5.0));
  const std::vector<Tensor> hg = hvp_central(grad, theta, direction, rho);
  REQUIRE(hg.size() == 1);
  CHECK(hg[0][0] == doctest::Approx(4.0).epsilon(1e-9));
  CHECK(hg[0][1] == doctest::Approx(1.0).epsilon(1e-9));
  const double s0 = -hg[0][0] * theta[0][0];
  const double s1 = -hg[0][1] * theta[0][1];
  CHECK(s0 == doctest::Approx(-4.0).epsilon(1e-9));
  CHECK(s1 == doctest::Approx(-1.0).epsilon(1e-9));
}

TEST_CASE("grasp matches an explicit finite-difference Hessian") {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    // 2*4 + 4*2 = 16 weights.
    MaskedNetwork net = build_network(mlp_architecture(2, {4}, 2), seed);
    const Batch b = labeled_batch(6, 2, 2, seed + 50);
    const SaliencyVector s = score_grasp(net, {b});
    const std::vector<double> theta = flatten_weights(net);

    const oracles::ScalarFn f = [&](const std::vector<double>& w) {
      return loss_at(net, b, w, LossKind::cross_entropy);
    };
    const std::vector<double> g = oracles::fd_gradient(f, theta);
    const auto hess = oracles::fd_hessian(f, theta);
    double worst = 0.0;
    for (std::size_t j = 0; j < theta.size(); ++j) {
      double hg = 0.0;
      for (std::size_t k = 0; k < theta.size(); ++k) hg += hess[j][k] * g[k];
      worst = std::max(worst, oracles::rel_err(-hg * theta[j], s[j]));
    }
    INFO("seed ", seed);
    CHECK(worst < 1e-3);
  }
}

TEST_CASE("grasp scores stay signed") {
  MaskedNetwork net = build_network(mlp_architecture(3, {5}, 3), 31);
  const Batch b = labeled_batch(8, 3, 3, 32);
  const SaliencyVector s = score_grasp(net, {b});
  bool has_negative = false, has_positive = false;
  for (double v : s) {
    has_negative = has_negative || v < 0.0;
    has_positive = has_positive || v > 0.0;
  }
  CHECK(has_negative);
  CHECK(has_positive);
}

TEST_CASE("synflow matches the two-weight chain oracle") {
  MaskedNetwork net = build_network(mlp_architecture(1, {1}, 1), 1);
  net.params[0].weight[0] = -3.0;
  net.params[1].weight[0] = 0.5;
  const SaliencyVector s = score_synflow(net);
  REQUIRE(s.size() == 2);
  CHECK(s[0] == doctest::Approx(1.5).epsilon(1e-12));
  CHECK(s[1] == doctest::Approx(1.5).epsilon(1e-12));
}

TEST_CASE("synflow is conserved per layer on bias-free networks") {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const std::size_t depth = 2 + (seed - 1) % 5;  // 2..6 weight layers
    std::vector<std::size_t> hidden(depth - 1, 6);
    const MaskedNetwork net =
        build_network(mlp_architecture(4, hidden, 3), seed);
    const SaliencyVector s = score_synflow(net);
    std::vector<double> layer_sum(net.params.size(), 0.0);
    std::size_t off = 0;
    for (std::size_t li = 0; li < net.params.size(); ++li) {
      const std::size_t count = net.params[li].weight.size();
      for (std::size_t i = 0; i < count; ++i) layer_sum[li] += s[off + i];
      off += count;
    }
    for (std::size_t li = 1; li < layer_sum.size(); ++li) {
      INFO("seed ", seed, " layer ", li);
      CHECK(oracles::rel_err(layer_sum[li], layer_sum[0]) < 1e-8);
    }
  }
}

TEST_CASE("foresight contribution matches finite differences in the mask") {
  PruneConfig cfg;
  cfg.method = PruneMethod::ntksap;
  cfg.density = 0.5;
  cfg.batches_per_round = 1;
  cfg.batch_size = 1;
  cfg.epsilon = 1e-4;
  cfg.seed = 77;

  const Architecture arch = mlp_architecture(2, {}, 3);
  const MaskedNetwork net = build_network(arch, 5);
  const std::vector<double> contrib =
      ntksap_batch_contribution(net, cfg, 1, 0, 0, nullptr);

  // Reproduce the round's draws from the documented streams, then evaluate
  // the probe loss under a continuously relaxed mask.
  const Rng base(cfg.seed);
  MaskedNetwork clone = net;
  Rng rw = base.fork(streams::reinit, 1, 0, 0);
  clone.reinitialize(rw);
  Rng rp = base.fork(streams::perturbation, 1, 0, 0);
  std::vector<double> theta0 = flatten_weights(clone);
  std::vector<double> theta2 = theta0;
  const double sd = std::sqrt(cfg.epsilon);
  for (auto& v : theta2) v += sd * rp.normal();
  Rng rn = base.fork(streams::noise_input, 1, 0);
  Batch b;
  b.inputs = gaussian_batch({1, 2}, rn);

  const auto probe = [&](const std::vector<double>& relaxed_mask) {
    std::vector<double> w1(theta0.size()), w2(theta0.size());
    for (std::size_t i = 0; i < theta0.size(); ++i) {
      w1[i] = theta0[i] * relaxed_mask[i];
      w2[i] = theta2[i] * relaxed_mask[i];
    }
    std::vector<Tensor> o1, o2;
    std::size_t off = 0;
    for (const ParamLayer& p : clone.params) {
      Tensor t1 = p.weight, t2 = p.weight;
      for (std::size_t i = 0; i < t1.size(); ++i) {
        t1[i] = w1[off + i];
        t2[i] = w2[off + i];
      }
      off += t1.size();
      o1.push_back(t1);
      o2.push_back(t2);
    }
    Tape tape;
    const ForwardResult f1 = forward_masked(clone, tape, b.inputs, &o1);
    const ForwardResult f2 = forward_masked(clone, tape, b.inputs, &o2);
    return tape.value(tape.sq_l2_norm(tape.sub(f1.output, f2.output)))[0];
  };

  const double h = 1e-5;
  std::vector<double> m(theta0.size(), 1.0);
  double worst = 0.0;
  for (std::size_t j = 0; j < m.size(); ++j) {
    m[j] = 1.0 + h;
    const double fp = probe(m);
    m[j] = 1.0 - h;
    const double fm = probe(m);
    m[j] = 1.0;
    const double fd = (fp - fm) / (2.0 * h);
    worst = std::max(worst, oracles::rel_err(fd, contrib[j]));
  }
  CHECK(worst < 1e-4);
}

TEST_CASE("foresight score is the absolute value of summed contributions") {
  PruneConfig cfg;
  cfg.method = PruneMethod::ntksap;
  cfg.density = 0.5;
  cfg.batches_per_round = 3;
  cfg.batch_size = 4;
  cfg.epsilon = 1e-4;
  cfg.seed = 99;

  const MaskedNetwork net = build_network(mlp_architecture(3, {4}, 2), 8);
  std::vector<double> raw;
  const SaliencyVector s = score_ntksap_round(net, cfg, 1, nullptr, &raw);

  std::vector<double> expect(net.prunable_count(), 0.0);
  for (std::size_t i = 0; i < cfg.batches_per_round; ++i) {
    const std::vector<double> c =
        ntksap_batch_contribution(net, cfg, 1, i, 0, nullptr);
    for (std::size_t j = 0; j < expect.size(); ++j) expect[j] += c[j];
  }
  CHECK(raw == expect);
  for (std::size_t j = 0; j < expect.size(); ++j) {
    CHECK(s[j] == std::abs(expect[j]));
  }
}

TEST_CASE("foresight scoring keeps pruned coordinates at the sentinel") {
  PruneConfig cfg;
  cfg.method = PruneMethod::ntksap;
  cfg.density = 0.5;
  cfg.batches_per_round = 2;
  cfg.batch_size = 4;
  cfg.seed = 13;

  MaskedNetwork net = build_network(mlp_architecture(3, {4}, 2), 8);
  std::vector<double> mask(net.prunable_count(), 1.0);
  mask[2] = mask[9] = 0.0;
  apply_mask_vector(net, mask);

  const SaliencyVector s = score_ntksap_round(net, cfg, 1, nullptr);
  CHECK(s[2] == -kInf);
  CHECK(s[9] == -kInf);
  CHECK(std::isfinite(s[0]));
}

TEST_CASE("dataset-driven foresight averages over reinit groups") {
  const TrainTestSplit split = gen_blobs(2, 8, 0, 3, 0.25, 40);
  PruneConfig cfg;
  cfg.method = PruneMethod::ntksap;
  cfg.density = 0.5;
  cfg.batch_size = 4;
  cfg.reinit_count = 2;
  cfg.input_source = InputSource::dataset;
  cfg.seed = 41;

  const MaskedNetwork net = build_network(mlp_architecture(3, {4}, 2), 42);
  std::vector<double> raw;
  score_ntksap_round(net, cfg, 1, &split.train, &raw);

  // 16 samples / batch 4 = 4 chunks, each averaged over 2 reinit groups.
  std::vector<double> expect(net.prunable_count(), 0.0);
  for (std::size_t i = 0; i < 4; ++i) {
    for (std::size_t r = 0; r < 2; ++r) {
      const std::vector<double> c =
          ntksap_batch_contribution(net, cfg, 1, i, r, &split.train);
      for (std::size_t j = 0; j < expect.size(); ++j) {
        expect[j] += c[j] / 2.0;
      }
    }
  }
  CHECK(oracles::max_rel_err(raw, expect) < 1e-12);
}

TEST_CASE("magnitude scores are absolute weights") {
  MaskedNetwork net = build_network(mlp_architecture(1, {}, 2), 3);
  net.params[0].weight[0] = -3.0;
  net.params[0].weight[1] = 2.0;
  const SaliencyVector s = score_magnitude(net);
  CHECK(s[0] == 3.0);
  CHECK(s[1] == 2.0);
}

TEST_CASE("random scores ignore the mask state of other coordinates") {
  MaskedNetwork dense = build_network(mlp_architecture(3, {4}, 2), 5);
  MaskedNetwork sparse = dense;
  std::vector<double> mask(dense.prunable_count(), 1.0);
  mask[1] = mask[6] = 0.0;
  apply_mask_vector(sparse, mask);

  Rng r1(17), r2(17);
  const SaliencyVector a = score_random(dense, r1);
  const SaliencyVector b = score_random(sparse, r2);
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (mask[i] == 1.0) {
      CHECK(a[i] == b[i]);
    } else {
      CHECK(b[i] == -kInf);
    }
  }
}

TEST_CASE("magnitude pruning favors layers with larger init scale") {
  // fan_in 4 gives sd 0.707, fan_in 64 gives sd 0.177. With equal layer
  // sizes the keep-half threshold t solves P(|Z| > t/sd0) + P(|Z| > t/sd1)
  // = 1, i.e. t/sd0 ~= 0.30, so layer 0 keeps ~76% and layer 1 ~24%.
  double survive0 = 0.0, survive1 = 0.0;
  const std::size_t seeds = 100;
  for (std::uint64_t seed = 1; seed <= seeds; ++seed) {
    MaskedNetwork net = build_network(mlp_architecture(4, {64}, 4), seed);
    PruneConfig cfg;
    cfg.method = PruneMethod::magnitude;
    cfg.density = 0.5;
    cfg.seed = seed;
    prune(net, cfg, nullptr);
    const LayerCollapseReport rep = layer_collapse_report(net);
    survive0 += static_cast<double>(rep.rows[0].active) /
                static_cast<double>(rep.rows[0].total);
    survive1 += static_cast<double>(rep.rows[1].active) /
                static_cast<double>(rep.rows[1].total);
  }
  survive0 /= static_cast<double>(seeds);
  survive1 /= static_cast<double>(seeds);
  CHECK(survive0 > 0.70);
  CHECK(survive1 < 0.30);
  CHECK(survive0 + survive1 == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("prune follows the exponential schedule exactly") {
  const TrainTestSplit split = gen_blobs(2, 10, 0, 4, 0.25, 50);
  for (const char* name :
       {"snip", "iterative_snip", "grasp", "synflow", "ntksap", "magnitude",
        "random"}) {
    for (const double density : {0.36, 0.1}) {
      for (const std::size_t rounds : {std::size_t{1}, std::size_t{4}}) {
        MaskedNetwork net = build_network(mlp_architecture(4, {10}, 2), 7);
        PruneConfig cfg;
        cfg.method = method_from_name(name);
        cfg.density = density;
        cfg.rounds = rounds;
        cfg.batches_per_round = 2;
        cfg.batch_size = 5;
        cfg.input_source = InputSource::dataset;
        cfg.seed = 60;
        const PruneResult res = prune(net, cfg, &split.train);
        const std::size_t p = net.prunable_count();
        const std::size_t t_total = cfg.effective_rounds();
        REQUIRE(res.trace.rounds.size() == t_total);
        for (std::size_t t = 1; t <= t_total; ++t) {
          const std::size_t want = static_cast<std::size_t>(std::llround(
              schedule_keep_fraction(density, t, t_total) *
              static_cast<double>(p)));
          INFO(name, " d=", density, " T=", rounds, " t=", t);
          CHECK(res.trace.rounds[t - 1].active_count == want);
        }
        CHECK(net.active_count() ==
              static_cast<std::size_t>(
                  std::llround(density * static_cast<double>(p))));
      }
    }
  }
}

TEST_CASE("one-shot methods collapse the round count to one") {
  const TrainTestSplit split = gen_blobs(2, 10, 0, 4, 0.25, 51);
  for (const char* name : {"snip", "grasp", "magnitude", "random"}) {
    MaskedNetwork net = build_network(mlp_architecture(4, {6}, 2), 8);
    PruneConfig cfg;
    cfg.method = method_from_name(name);
    cfg.density = 0.5;
    cfg.rounds = 20;
    cfg.batch_size = 5;
    cfg.input_source = InputSource::dataset;
    cfg.seed = 61;
    const PruneResult res = prune(net, cfg, &split.train);
    CHECK(res.trace.rounds.size() == 1);
  }
}

TEST_CASE("iterative snip at one round equals one-shot snip") {
  const TrainTestSplit split = gen_blobs(2, 10, 0, 4, 0.25, 52);
  PruneConfig cfg;
  cfg.density = 0.4;
  cfg.rounds = 1;
  cfg.batch_size = 5;
  cfg.input_source = InputSource::dataset;
  cfg.seed = 62;

  MaskedNetwork a = build_network(mlp_architecture(4, {6}, 2), 9);
  MaskedNetwork b = a;
  cfg.method = PruneMethod::snip;
  prune(a, cfg, &split.train);
  cfg.method = PruneMethod::iterative_snip;
  prune(b, cfg, &split.train);
  CHECK(flatten_masks(a) == flatten_masks(b));
}

TEST_CASE("pruning is deterministic in the seed") {
  PruneConfig cfg;
  cfg.method = PruneMethod::ntksap;
  cfg.density = 0.3;
  cfg.rounds = 3;
  cfg.batches_per_round = 2;
  cfg.batch_size = 4;
  cfg.seed = 70;

  MaskedNetwork a = build_network(mlp_architecture(3, {8}, 2), 10);
  MaskedNetwork b = a;
  prune(a, cfg, nullptr);
  prune(b, cfg, nullptr);
  CHECK(flatten_masks(a) == flatten_masks(b));

  MaskedNetwork c = build_network(mlp_architecture(3, {8}, 2), 10);
  cfg.seed = 71;
  prune(c, cfg, nullptr);
  CHECK(flatten_masks(a) != flatten_masks(c));
}

TEST_CASE("methods that need labels reject noise-only configs") {
  MaskedNetwork net = build_network(mlp_architecture(3, {4}, 2), 11);
  PruneConfig cfg;
  cfg.method = PruneMethod::snip;
  cfg.density = 0.5;
  cfg.batch_size = 4;
  cfg.seed = 72;
  CHECK_THROWS_AS(prune(net, cfg, nullptr), NumericError);
}

TEST_CASE("config validation rejects bad grids") {
  PruneConfig cfg;
  cfg.density = 0.0;
  CHECK_THROWS_AS(cfg.validate(), NumericError);
  cfg.density = 0.5;
  cfg.rounds = 0;
  CHECK_THROWS_AS(cfg.validate(), NumericError);
  cfg.rounds = 1;
  cfg.epsilon = 0.0;
  CHECK_THROWS_AS(cfg.validate(), NumericError);
  cfg.epsilon = 1e-4;
  cfg.batch_size = 0;
  CHECK_THROWS_AS(cfg.validate(), NumericError);
}

TEST_CASE("unknown method names are rejected by name lookup") {
  CHECK_THROWS_AS(method_from_name("optimal_brain_damage"), NumericError);
  CHECK(method_from_name("ntksap") == PruneMethod::ntksap);
  CHECK(method_name(PruneMethod::iterative_snip) == "iterative_snip");
}

TEST_CASE("collapse report lists fully-pruned layers") {
  MaskedNetwork net = build_network(mlp_architecture(3, {4, 4}, 2), 12);
  const LayerCollapseReport healthy = layer_collapse_report(net);
  CHECK_FALSE(healthy.collapsed);
  REQUIRE(healthy.rows.size() == 3);
  CHECK(healthy.rows[0].active == healthy.rows[0].total);

  std::vector<double> mask = flatten_masks(net);
  // Zero the middle layer (indices 12..27 for [3->4->4->2]).
  for (std::size_t i = 12; i < 28; ++i) mask[i] = 0.0;
  apply_mask_vector(net, mask);
  const LayerCollapseReport broken = layer_collapse_report(net);
  CHECK(broken.collapsed);
  REQUIRE(broken.collapsed_layers.size() == 1);
  CHECK(broken.collapsed_layers[0] == 1);
  CHECK(broken.rows[1].active == 0);
}

TEST_CASE("full-density run never reports collapse") {
  MaskedNetwork net = build_network(mlp_architecture(3, {4}, 2), 13);
  PruneConfig cfg;
  cfg.method = PruneMethod::magnitude;
  cfg.density = 1.0;
  cfg.seed = 73;
  const PruneResult res = prune(net, cfg, nullptr);
  CHECK(net.active_count() == net.prunable_count());
  CHECK_FALSE(res.trace.rounds.back().collapsed);
}
