#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "ntkprune/data.hpp"
#include "ntkprune/nn.hpp"
#include "ntkprune/tensor.hpp"

namespace ntkprune {

// Saliency over the flattened weight layout. Coordinates that are already
// masked out carry the sentinel below and can never be resurrected.
using SaliencyVector = std::vector<double>;
constexpr double kPrunedScore = -std::numeric_limits<double>::infinity();

enum class PruneMethod {
  snip,
  iterative_snip,
  grasp,
  synflow,
  ntksap,
  magnitude,
  random,
};

enum class InputSource { dataset, gaussian_noise };

std::string method_name(PruneMethod m);
PruneMethod method_from_name(const std::string& name);
bool method_is_one_shot(PruneMethod m);
bool method_needs_labels(PruneMethod m);

struct PruneConfig {
  PruneMethod method = PruneMethod::ntksap;
  double density = 0.5;              // kept fraction d in (0,1]
  std::size_t rounds = 1;            // T; one-shot methods always run 1
  std::size_t batches_per_round = 1; // B (noise input batches per round)
  std::size_t batch_size = 10;
  double epsilon = 1e-4;             // weight perturbation variance
  std::size_t reinit_count = 1;      // R; >1 only meaningful with dataset input
  InputSource input_source = InputSource::gaussian_noise;
  std::uint64_t seed = 0;

  std::size_t effective_rounds() const {
    return method_is_one_shot(method) ? 1 : rounds;
  }
  void validate() const;
};

struct PruneRound {
  std::size_t round = 0;
  double keep_fraction = 0.0;
  std::size_t active_count = 0;
  double threshold = 0.0;  // smallest kept score this round
  bool collapsed = false;
  std::vector<std::size_t> layer_active;
};

struct PruneTrace {
  std::vector<PruneRound> rounds;
};

// Exponential keep schedule d^(t/T).
double schedule_keep_fraction(double density, std::size_t t, std::size_t T);

enum class LossKind { cross_entropy, squared_error };

// |dL/dtheta_j * theta_j| with the loss gradient taken at theta*mask and
// averaged over all samples in `batches`.
SaliencyVector score_snip(const MaskedNetwork& net,
                          const std::vector<Batch>& batches,
                          LossKind loss = LossKind::cross_entropy);

// -(Hg)_j * theta_j, signed; Hg estimated by central differences of the loss
// gradient with step rho = 1e-3 / max(1, ||g||).
SaliencyVector score_grasp(const MaskedNetwork& net,
                           const std::vector<Batch>& batches,
                           LossKind loss = LossKind::cross_entropy);

// |d(sum of logits)/d|theta_j| * theta_j| on an all-ones input with all
// parameters replaced by their absolute values. Data-free.
SaliencyVector score_synflow(const MaskedNetwork& net);

// One round of the foresight score: B times, reinitialize a copy of the
// network, take a fresh input batch (noise or the fixed dataset chunks),
// draw a single weight perturbation of variance epsilon, and accumulate the
// mask gradient of ||f(x; theta*m) - f(x; (theta+dtheta)*m)||^2. The score
// is the absolute value of the accumulated sum. With dataset input and
// reinit_count R > 1, each chunk is revisited under R reinitializations and
// the contribution averaged.
SaliencyVector score_ntksap_round(const MaskedNetwork& net,
                                  const PruneConfig& cfg, std::size_t round,
                                  const Dataset* pruning_data,
                                  std::vector<double>* raw_accum = nullptr);

// Single (round, batch, group) contribution before abs; exposed so the
// accumulation identity is testable.
std::vector<double> ntksap_batch_contribution(const MaskedNetwork& net,
                                              const PruneConfig& cfg,
                                              std::size_t round,
                                              std::size_t batch_index,
                                              std::size_t group,
                                              const Dataset* pruning_data);

SaliencyVector score_magnitude(const MaskedNetwork& net);
SaliencyVector score_random(const MaskedNetwork& net, Rng& rng);

// Keeps exactly round(keep_fraction * total_prunable) coordinates: the
// highest-scoring active ones, ties broken toward the lower flat index.
// Previously masked coordinates stay masked. Returns the new mask;
// threshold_out, when given, receives the smallest kept score.
std::vector<double> threshold_update(const SaliencyVector& scores,
                                     const std::vector<double>& mask,
                                     double keep_fraction,
                                     double* threshold_out = nullptr);

struct PruneResult {
  std::vector<double> final_mask;
  PruneTrace trace;
};

// Runs the configured method for effective_rounds() rounds, updating the
// network's masks in place. Methods that need labels require pruning_data.
PruneResult prune(MaskedNetwork& net, const PruneConfig& cfg,
                  const Dataset* pruning_data = nullptr);

struct LayerCollapseReport {
  struct Row {
    std::size_t layer = 0;  // ordinal among prunable layers
    std::size_t active = 0;
    std::size_t total = 0;
  };
  std::vector<Row> rows;
  bool collapsed = false;
  std::vector<std::size_t> collapsed_layers;
};

LayerCollapseReport layer_collapse_report(const MaskedNetwork& net);

// Central-difference Hessian-vector product over a list of parameter
// tensors, given a gradient oracle. Used by GraSP and exposed for testing
// against explicit Hessians.
using GradFn =
    std::function<std::vector<Tensor>(const std::vector<Tensor>& theta)>;
std::vector<Tensor> hvp_central(const GradFn& grad_fn,
                                const std::vector<Tensor>& theta,
                                const std::vector<Tensor>& direction,
                                double rho);

// CSV schema: flat_index,layer,position,active  (position is the row-major
// multi-index inside the layer, colon separated).
void write_mask_csv(const MaskedNetwork& net, const std::string& path);
// CSV schema: round,keep_fraction,active_count,threshold,collapsed
void write_trace_csv(const PruneTrace& trace, const std::string& path);
// CSV schema: layer,active,total,collapsed
void write_collapse_csv(const LayerCollapseReport& report,
                        const std::string& path);

}  // namespace ntkprune
