// Microbenchmarks for the hot paths: dense forward/backward, the Gram
// eigensolver and one full foresight scoring round.

#include <cstdint>

#include <benchmark/benchmark.h>

#include "ntkprune/data.hpp"
#include "ntkprune/nn.hpp"
#include "ntkprune/ntk.hpp"
#include "ntkprune/prune.hpp"
#include "ntkprune/rng.hpp"
#include "ntkprune/tape.hpp"

namespace {

using namespace ntkprune;

Tensor random_matrix(std::size_t r, std::size_t c, std::uint64_t seed) {
  Rng rng(seed);
  Tensor t({r, c});
  for (auto& v : t.values()) v = rng.normal();
  return t;
}

void bench_matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const Tensor a = random_matrix(n, n, 1);
  const Tensor b = random_matrix(n, n, 2);
  for (auto _ : state) {
    Tape tape;
    const NodeId out = tape.matmul(tape.constant(a), tape.constant(b));
    benchmark::DoNotOptimize(tape.value(out));
  }
  state.SetComplexityN(static_cast<std::int64_t>(n));
}
BENCHMARK(bench_matmul)->Arg(32)->Arg(64)->Arg(128)->Complexity();

void bench_mlp_backward(benchmark::State& state) {
  const auto width = static_cast<std::size_t>(state.range(0));
  const Architecture arch = mlp_architecture(64, {width, width}, 10);
  const MaskedNetwork net = build_network(arch, 3);
  Rng rng(4);
  const Tensor x = gaussian_batch({32, 64}, rng);
  for (auto _ : state) {
    Tape tape;
    const ForwardResult f = forward_masked(net, tape, x);
    const NodeId loss = tape.sq_l2_norm(f.output);
    tape.backward(loss);
    benchmark::DoNotOptimize(tape.grad(f.weight_nodes[0]));
  }
}
BENCHMARK(bench_mlp_backward)->Arg(64)->Arg(128)->Arg(256);

void bench_jacobi_eigensolver(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const Tensor m = random_matrix(n, n, 5);
  JacobianMatrix j{n, n, m.values()};
  const NTKMatrix gram = fixed_weight_ntk(j);
  for (auto _ : state) {
    const EigenResult r = eigenspectrum(gram);
    benchmark::DoNotOptimize(r.eigenvalues.data());
  }
}
BENCHMARK(bench_jacobi_eigensolver)->Arg(32)->Arg(64)->Arg(128);

void bench_foresight_round(benchmark::State& state) {
  const Architecture arch = mlp_architecture(32, {64, 64}, 10);
  const MaskedNetwork net = build_network(arch, 6);
  PruneConfig cfg;
  cfg.method = PruneMethod::ntksap;
  cfg.density = 0.5;
  cfg.rounds = 1;
  cfg.batches_per_round = 4;
  cfg.batch_size = 16;
  cfg.seed = 7;
  for (auto _ : state) {
    const SaliencyVector s = score_ntksap_round(net, cfg, 1, nullptr);
    benchmark::DoNotOptimize(s.data());
  }
}
BENCHMARK(bench_foresight_round);

}  // namespace

BENCHMARK_MAIN();
